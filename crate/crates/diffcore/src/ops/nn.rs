use std::rc::Rc;

use crate::error::{invalid, shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Weights of one LSTM cell. Gate order along the `4h` axis is
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[in, 4h]`
    pub w_input: Var,
    /// `[h, 4h]`
    pub w_hidden: Var,
    /// `[4h]`
    pub bias: Var,
}

impl<T: Scalar> Tape<T> {
    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout(&self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        self.mul_const(x, Rc::new(mask))
    }

    /// Row-wise log-softmax of `[rows, classes]`.
    pub fn log_softmax(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let &[rows, cols] = v.shape() else {
            return Err(shape_err(
                "log_softmax",
                format!("expected rank 2, got {:?}", v.shape()),
            ));
        };
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&e| (e - max).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&e| e - lse));
        }
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::LogSoftmax(x)))
    }

    /// One LSTM step. `x: [b, in]`, `h`, `c`: `[b, hidden]`; returns `(h', c')`.
    pub fn lstm_cell(&self, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
        let hidden = self.shape(h)[1];
        let gates = self.add(self.matmul(x, w.w_input)?, self.matmul(h, w.w_hidden)?)?;
        if self.shape(gates)[1] != 4 * hidden {
            return Err(shape_err(
                "lstm_cell",
                format!("gate width {} for hidden {hidden}", self.shape(gates)[1]),
            ));
        }
        let gates = self.add_channel_bias(gates, w.bias)?;
        let input = self.sigmoid(self.narrow(gates, 1, 0, hidden)?)?;
        let forget = self.sigmoid(self.narrow(gates, 1, hidden, hidden)?)?;
        let cand = self.tanh(self.narrow(gates, 1, 2 * hidden, hidden)?)?;
        let output = self.sigmoid(self.narrow(gates, 1, 3 * hidden, hidden)?)?;
        let c_next = self.add(self.mul(forget, c)?, self.mul(input, cand)?)?;
        let h_next = self.mul(output, self.tanh(c_next)?)?;
        Ok((h_next, c_next))
    }
}
