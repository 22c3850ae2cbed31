//! Training objectives: critic loss with gradient penalty and domain
//! cross-entropy, generator loss, and the stage-specific classifier losses.

use std::rc::Rc;

use diffcore::{Bound, Rng, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::Discriminator;

/// Predictions are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside the
/// binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Hs,
    Rul,
}

/// Sign applied to the critic term of the generator loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticSign {
    /// `+E[D_R(G(x))]`.
    #[default]
    Plus,
    /// `−E[D_R(G(x))]`, the usual Wasserstein generator objective.
    Minus,
}

impl CriticSign {
    pub fn value(self) -> f64 {
        match self {
            CriticSign::Plus => 1.0,
            CriticSign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_d: f64,
    pub lambda_g: f64,
    pub lambda_mae: f64,
    pub lambda_rmse: f64,
    pub lambda_mape: f64,
    pub eps_mape: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            lambda_d: 1.0,
            lambda_g: 50.0,
            lambda_mae: 100.0,
            lambda_rmse: 50.0,
            lambda_mape: 20.0,
            eps_mape: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.lambda_d,
            self.lambda_g,
            self.lambda_mae,
            self.lambda_rmse,
            self.lambda_mape,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("loss weights must be finite and nonnegative"));
        }
        if !(self.eps_mape > 0.0 && self.eps_mape.is_finite()) {
            return Err(invalid("eps_mape must be positive"));
        }
        Ok(())
    }
}

fn constant<T: Scalar>(tape: &Tape<T>, shape: Vec<usize>, values: impl IntoIterator<Item = f64>) -> Result<Var> {
    let data = values.into_iter().map(T::lit).collect();
    Ok(tape.constant(Tensor::new(shape, data)?))
}

fn weights_of<T: Scalar>(values: impl IntoIterator<Item = f64>) -> Rc<Vec<T>> {
    Rc::new(values.into_iter().map(T::lit).collect())
}

/// Rows `rows` of a batch-major tensor.
pub fn select_rows<T: Scalar>(tape: &Tape<T>, x: Var, rows: &[usize]) -> Result<Var> {
    let mut shape = tape.shape(x);
    let row_len: usize = shape[1..].iter().product();
    let idx: Vec<usize> = rows.iter().flat_map(|&r| (r * row_len)..((r + 1) * row_len)).collect();
    shape[0] = rows.len();
    Ok(tape.gather(x, Rc::new(idx), &shape)?)
}

/// `ε·real + (1 − ε)·fake` with one `ε` per batch row.
pub fn interpolate<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>, eps: &[f64]) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(invalid(format!(
            "gradient_penalty: real {:?} and fake {:?} differ",
            real.shape(),
            fake.shape()
        )));
    }
    let b = real.shape()[0];
    if eps.len() != b {
        return Err(invalid(format!(
            "gradient_penalty: {} weights for batch of {b}",
            eps.len()
        )));
    }
    let row = real.len() / b.max(1);
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let e = T::lit(eps[i / row]);
            e * r + (T::one() - e) * f
        })
        .collect();
    Ok(Tensor::new(real.shape().to_vec(), data)?)
}

/// Mean over rows of `(‖∇ critic(x̂)‖₂ − 1)²` at the given points; stays
/// differentiable in the critic's parameters.
pub fn penalty_at<T: Scalar>(tape: &Tape<T>, critic: impl Fn(Var) -> Result<Var>, x_hat: Tensor<T>) -> Result<Var> {
    let b = x_hat.shape()[0];
    let x_hat = tape.leaf(x_hat, true);
    let score = tape.sum(critic(x_hat)?)?;
    let grad = tape.grad_of(score, &[x_hat], true)?.grads[0];
    let rows = tape.reshape(grad, &[b, tape.value(grad).len() / b])?;
    let norm = tape.sqrt(tape.sum_rows(tape.square(rows)?)?)?;
    let dev = tape.affine(norm, T::one(), -T::one())?;
    Ok(tape.mean(tape.square(dev)?)?)
}

/// Penalty at uniformly drawn interpolates between `real` and `fake`.
pub fn gradient_penalty<T: Scalar>(
    tape: &Tape<T>,
    critic: impl Fn(Var) -> Result<Var>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    rng: &mut Rng,
) -> Result<Var> {
    let eps: Vec<f64> = (0..real.shape()[0]).map(|_| rng.uniform()).collect();
    penalty_at(tape, critic, interpolate(real, fake, &eps)?)
}

/// Mean cross-entropy of `logits [b, c]` against class indices.
pub fn cross_entropy<T: Scalar>(tape: &Tape<T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape.len() != 2 || shape[0] != targets.len() || targets.iter().any(|&t| t >= shape[1]) {
        return Err(invalid(format!(
            "cross_entropy: logits {shape:?} against {} targets",
            targets.len()
        )));
    }
    let c = shape[1];
    let idx = targets.iter().enumerate().map(|(i, &t)| i * c + t).collect();
    let picked = tape.gather(tape.log_softmax(logits)?, Rc::new(idx), &[targets.len()])?;
    Ok(tape.neg(tape.mean(picked)?)?)
}

/// Mean binary cross-entropy of predictions in `(0, 1)`.
pub fn bce<T: Scalar>(tape: &Tape<T>, pred: Var, targets: &[f64]) -> Result<Var> {
    if tape.value(pred).len() != targets.len() {
        return Err(invalid(format!(
            "bce: {} predictions, {} targets",
            tape.value(pred).len(),
            targets.len()
        )));
    }
    let p = tape.clamp(pred, T::lit(BCE_CLAMP), T::lit(1.0 - BCE_CLAMP))?;
    let pos = tape.mul_const(tape.log(p)?, weights_of(targets.iter().copied()))?;
    let q = tape.log(tape.affine(p, -T::one(), T::one())?)?;
    let neg = tape.mul_const(q, weights_of(targets.iter().map(|y| 1.0 - y)))?;
    Ok(tape.neg(tape.mean(tape.add(pos, neg)?)?)?)
}

/// Weighted sum of MAE, RMSE and MAPE; the MAPE denominator is
/// `max(target, eps_mape)`.
pub fn rul_loss<T: Scalar>(tape: &Tape<T>, pred: Var, targets: &[f64], w: &LossWeights) -> Result<Var> {
    let shape = tape.shape(pred);
    if tape.value(pred).len() != targets.len() {
        return Err(invalid(format!(
            "rul_loss: {} predictions, {} targets",
            tape.value(pred).len(),
            targets.len()
        )));
    }
    let diff = tape.sub(pred, constant(tape, shape, targets.iter().copied())?)?;
    let abs = tape.abs(diff)?;
    let mae = tape.mean(abs)?;
    let rmse = tape.sqrt(tape.mean(tape.square(diff)?)?)?;
    let mape = tape.mean(tape.mul_const(abs, weights_of(targets.iter().map(|y| 1.0 / y.max(w.eps_mape))))?)?;
    let total = tape.add(
        tape.scale(mae, T::lit(w.lambda_mae))?,
        tape.scale(rmse, T::lit(w.lambda_rmse))?,
    )?;
    Ok(tape.add(total, tape.scale(mape, T::lit(w.lambda_mape))?)?)
}

pub fn classifier_loss<T: Scalar>(
    tape: &Tape<T>,
    stage: Stage,
    pred: Var,
    targets: &[f64],
    w: &LossWeights,
) -> Result<Var> {
    match stage {
        Stage::Hs => bce(tape, pred, targets),
        Stage::Rul => rul_loss(tape, pred, targets, w),
    }
}

/// Components of the discriminator objective; `total` is the one to
/// differentiate.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorLoss {
    pub total: Var,
    pub wasserstein: Var,
    pub penalty: Var,
    pub domain: Var,
}

/// `−E[D_R(x)] + E[D_R(G(x))] + α·GP + λ_D·CE(D_D(x), d)`; the domain term
/// sees real inputs only. `real` and `fake` enter as constants.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss<T: Scalar>(
    tape: &Tape<T>,
    disc: &Discriminator,
    p: &Bound,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    domains: &[usize],
    w: &LossWeights,
    rng: &mut Rng,
) -> Result<DiscriminatorLoss> {
    let xr = tape.constant(real.clone());
    let xf = tape.constant(fake.clone());
    let (critic_real, logits) = disc.forward(tape, p, xr)?;
    let critic_fake = disc.critic(tape, p, xf)?;
    let wasserstein = tape.sub(tape.mean(critic_fake)?, tape.mean(critic_real)?)?;
    let penalty = gradient_penalty(tape, |x| disc.critic(tape, p, x), real, fake, rng)?;
    let domain = cross_entropy(tape, logits, domains)?;
    let total = tape.add(wasserstein, tape.scale(penalty, T::lit(w.alpha))?)?;
    let total = tape.add(total, tape.scale(domain, T::lit(w.lambda_d))?)?;
    Ok(DiscriminatorLoss {
        total,
        wasserstein,
        penalty,
        domain,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub critic: Var,
    /// Absent when the batch holds no labelled rows.
    pub classifier: Option<Var>,
    pub domain: Var,
}

/// Labelled subset of a batch: row indices and their targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Labelled {
    pub rows: Vec<usize>,
    pub targets: Vec<f64>,
}

impl Labelled {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `sign·E[D_R(G(x))] + λ_G·L_C(C(G(x)), y) − λ_D·CE(D_D(G(x)), d)`, with
/// `L_C` over the labelled rows only.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss<T: Scalar>(
    tape: &Tape<T>,
    disc: &Discriminator,
    dp: &Bound,
    fake: Var,
    domains: &[usize],
    labelled: &Labelled,
    classifier: impl Fn(Var) -> Result<Var>,
    stage: Stage,
    w: &LossWeights,
    sign: CriticSign,
) -> Result<GeneratorLoss> {
    let (critic_fake, logits) = disc.forward(tape, dp, fake)?;
    let critic = tape.scale(tape.mean(critic_fake)?, T::lit(sign.value()))?;
    let domain = cross_entropy(tape, logits, domains)?;
    let mut total = tape.sub(critic, tape.scale(domain, T::lit(w.lambda_d))?)?;
    let classifier_term = if labelled.is_empty() {
        None
    } else {
        let pred = classifier(select_rows(tape, fake, &labelled.rows)?)?;
        let lc = classifier_loss(tape, stage, pred, &labelled.targets, w)?;
        total = tape.add(total, tape.scale(lc, T::lit(w.lambda_g))?)?;
        Some(lc)
    };
    Ok(GeneratorLoss {
        total,
        critic,
        classifier: classifier_term,
        domain,
    })
}
