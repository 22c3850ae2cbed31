use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    fn zip_with(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let nodes = self.nodes();
        let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let nodes = self.nodes();
        let v = &nodes[x.0].value;
        let data = v.data().iter().map(|&e| f(e)).collect();
        Tensor::new(v.shape().to_vec(), data).expect("map keeps shape")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: T, shift: T) -> Result<Var> {
        let out = self.map(x, |e| scale * e + shift);
        Ok(self.push(out, Op::Affine(x, scale)))
    }

    pub fn scale(&self, x: Var, s: T) -> Result<Var> {
        self.affine(x, s, T::zero())
    }

    pub fn neg(&self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::zero())
    }

    pub fn square(&self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Elementwise product with a tensor that is not differentiated.
    pub fn mul_const(&self, x: Var, mask: Rc<Vec<T>>) -> Result<Var> {
        let out = {
            let nodes = self.nodes();
            let v = &nodes[x.0].value;
            if v.len() != mask.len() {
                return Err(shape_err(
                    "mul_const",
                    format!("{:?} vs mask of {}", v.shape(), mask.len()),
                ));
            }
            let data = v.data().iter().zip(mask.iter()).map(|(&a, &m)| a * m).collect();
            Tensor::new(v.shape().to_vec(), data)?
        };
        Ok(self.push(out, Op::MulConst(x, mask)))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        let out = self.map(x, |e| {
            if e >= T::zero() {
                T::one() / (T::one() + (-e).exp())
            } else {
                let z = e.exp();
                z / (T::one() + z)
            }
        });
        Ok(self.push(out, Op::Sigmoid(x)))
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        let out = self.map(x, |e| e.tanh());
        Ok(self.push(out, Op::Tanh(x)))
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        let out = self.map(x, |e| e.exp());
        Ok(self.push(out, Op::Exp(x)))
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        let out = self.map(x, |e| e.ln());
        Ok(self.push(out, Op::Log(x)))
    }

    pub fn sqrt(&self, x: Var) -> Result<Var> {
        let out = self.map(x, |e| e.sqrt());
        Ok(self.push(out, Op::Sqrt(x)))
    }

    /// `1 / x`, defined as 0 where `x == 0` so that norms of zero vectors
    /// have a zero (sub)gradient instead of an infinite one.
    pub fn recip(&self, x: Var) -> Result<Var> {
        let out = self.map(x, |e| if e == T::zero() { T::zero() } else { T::one() / e });
        Ok(self.push(out, Op::Recip(x)))
    }

    pub fn leaky_relu(&self, x: Var, slope: T) -> Result<Var> {
        let mask: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&e| if e > T::zero() { T::one() } else { slope })
            .collect();
        self.mul_const(x, Rc::new(mask))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.leaky_relu(x, T::zero())
    }

    pub fn abs(&self, x: Var) -> Result<Var> {
        let mask: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&e| {
                if e > T::zero() {
                    T::one()
                } else if e < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        self.mul_const(x, Rc::new(mask))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Result<Var> {
        let v = self.value(x);
        let mask: Vec<T> = v
            .data()
            .iter()
            .map(|&e| if e < lo || e > hi { T::zero() } else { T::one() })
            .collect();
        let offset: Vec<T> = v
            .data()
            .iter()
            .map(|&e| {
                if e < lo {
                    lo
                } else if e > hi {
                    hi
                } else {
                    T::zero()
                }
            })
            .collect();
        let inside = self.mul_const(x, Rc::new(mask))?;
        let offset = self.constant(Tensor::new(v.shape().to_vec(), offset)?);
        self.add(inside, offset)
    }
}
