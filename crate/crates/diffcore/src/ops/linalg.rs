use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (va.shape(), vb.shape()) else {
            return Err(shape_err(
                "matmul",
                format!("expected rank 2 operands, got {:?} and {:?}", va.shape(), vb.shape()),
            ));
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} · {:?}", va.shape(), vb.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            va.data(),
            k as isize,
            1,
            vb.data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let &[r, c] = v.shape() else {
            return Err(shape_err("transpose", format!("expected rank 2, got {:?}", v.shape())));
        };
        let src = v.data();
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            out.extend((0..r).map(|i| src[i * c + j]));
        }
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x)))
    }

    /// Fully-connected layer: `x [b, in] · w [in, out] + bias [out]`.
    pub fn linear(&self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_channel_bias(y, bias)
    }
}
