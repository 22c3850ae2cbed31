//! Central finite-difference check of tape gradients.
//!
//! The numeric side only evaluates the function forward, so it is
//! independent of every derivative rule it checks. Outputs of any shape are
//! reduced to a scalar through a fixed random projection.

pub mod suite;

use std::rc::Rc;

use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    /// Step is `h_scale · max(1, |x|)`.
    pub h_scale: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-3,
            atol: 1e-5,
            h_scale: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    /// `(input, flat index, analytic, numeric)` of the worst violation.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compare analytic and numeric gradients of `f` at `inputs`.
///
/// `f` may call [`Tape::grad_of`] with `create_graph = true` internally, in
/// which case this checks second derivatives.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, tol: Tolerance, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>], proj: Option<&Rc<Vec<f64>>>| -> Result<(Tape<f64>, Vec<Var>, Var, Rc<Vec<f64>>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let proj = match proj {
            Some(p) => Rc::clone(p),
            None => {
                let mut rng = Rng::new(seed);
                let n = tape.value(out).len();
                Rc::new((0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect())
            }
        };
        let loss = tape.sum(tape.mul_const(out, Rc::clone(&proj))?)?;
        Ok((tape, vars, loss, proj))
    };

    let (tape, vars, loss, proj) = eval(inputs, None)?;
    let analytic: Vec<Vec<f64>> = {
        let g = tape.grad_of(loss, &vars, false)?;
        g.grads.iter().map(|v| tape.value(*v).data().to_vec()).collect()
    };

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        max_abs_err: 0.0,
        worst: None,
    };
    let mut worst_excess = 0.0;
    let mut xs = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x0 = input.data()[j];
            let h = tol.h_scale * x0.abs().max(1.0);
            xs[i].data_mut()[j] = x0 + h;
            let (t, _, l, _) = eval(&xs, Some(&proj))?;
            let up = t.item(l);
            xs[i].data_mut()[j] = x0 - h;
            let (t, _, l, _) = eval(&xs, Some(&proj))?;
            let down = t.item(l);
            xs[i].data_mut()[j] = x0;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i][j];
            let err = (a - numeric).abs();
            let bound = tol.atol + tol.rtol * numeric.abs();
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if !(err <= bound) {
                report.failures += 1;
                if err - bound > worst_excess || report.worst.is_none() {
                    worst_excess = err - bound;
                    report.worst = Some((i, j, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
