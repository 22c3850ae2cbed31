use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x)))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Repeat a one-element tensor to `shape`.
    pub fn broadcast(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != 1 {
            return Err(shape_err("broadcast", format!("{:?} is not a scalar", v.shape())));
        }
        let out = Tensor::full(shape.to_vec(), v.item());
        Ok(self.push(out, Op::Broadcast(x)))
    }

    /// `[rows, cols] -> [rows]`.
    pub fn sum_rows(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let &[rows, cols] = v.shape() else {
            return Err(shape_err("sum_rows", format!("expected rank 2, got {:?}", v.shape())));
        };
        let data = (0..rows)
            .map(|r| v.data()[r * cols..(r + 1) * cols].iter().copied().sum())
            .collect();
        Ok(self.push(Tensor::new(vec![rows], data)?, Op::SumRows(x)))
    }

    /// `[rows] -> [rows, cols]`, repeating each entry along the row.
    pub fn expand_rows(&self, x: Var, cols: usize) -> Result<Var> {
        let v = self.value(x);
        let &[rows] = v.shape() else {
            return Err(shape_err(
                "expand_rows",
                format!("expected rank 1, got {:?}", v.shape()),
            ));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for &e in v.data() {
            data.extend(std::iter::repeat_n(e, cols));
        }
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ExpandRows(x)))
    }

    /// Sum over every axis except axis 1: `[b, c, ...] -> [c]`.
    pub fn reduce_channels(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape();
        if shape.len() < 2 {
            return Err(shape_err("reduce_channels", format!("rank < 2: {shape:?}")));
        }
        let (b, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut out = vec![T::zero(); c];
        for bi in 0..b {
            for (ci, o) in out.iter_mut().enumerate() {
                let base = (bi * c + ci) * inner;
                *o = *o + v.data()[base..base + inner].iter().copied().sum::<T>();
            }
        }
        Ok(self.push(Tensor::new(vec![c], out)?, Op::ReduceChannels(x)))
    }

    /// Broadcast a `[c]` vector along axis 1 of `shape`.
    pub fn expand_channels(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.len() < 2 || v.shape() != [shape[1]] {
            return Err(shape_err("expand_channels", format!("{:?} into {shape:?}", v.shape())));
        }
        let (b, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut data = Vec::with_capacity(b * c * inner);
        for _ in 0..b {
            for &e in v.data() {
                data.extend(std::iter::repeat_n(e, inner));
            }
        }
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::ExpandChannels(x)))
    }

    /// Adds a per-channel bias `[c]` to `x` of shape `[b, c, ...]`.
    pub fn add_channel_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x);
        let b = self.expand_channels(bias, &shape)?;
        self.add(x, b)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let out = (*v).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// `[b, ...] -> [b, prod(...)]`.
    pub fn flatten(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let rest = shape[1..].iter().product();
        self.reshape(x, &[shape[0], rest])
    }

    /// Mean over the last axis of a rank-3 tensor: `[b, c, l] -> [b, c]`.
    pub fn mean_last(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let &[b, c, l] = shape.as_slice() else {
            return Err(shape_err("mean_last", format!("expected rank 3, got {shape:?}")));
        };
        let flat = self.reshape(x, &[b * c, l])?;
        let s = self.sum_rows(flat)?;
        let s = self.reshape(s, &[b, c])?;
        self.scale(s, T::one() / T::lit(l as f64))
    }
}
