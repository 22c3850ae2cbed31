use diffcore::{ParamStore, Rng, Scalar, Tape, Tensor};
use serde::Serialize;

use crate::dataset::{hs_label, rul_label, RunToFailureSeries};
use crate::error::{invalid, GmfeError, Result};
use crate::losses::{classifier_loss, discriminator_loss, generator_loss, select_rows, Labelled, LossWeights, Stage};
use crate::models::{Classifier1D, Discriminator, GeneratorConfig, ModelConfig, Phase};

use super::features::record_tensor;
use super::TrainingConfig;

/// Depths of the three multiscale generators.
pub const LEVELS: [usize; 3] = [3, 4, 5];

/// Network shapes of one adversarial stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub generators: [GeneratorConfig; 3],
    pub discriminator: Discriminator,
    pub classifier: Classifier1D,
    pub init_std: f64,
}

impl Architecture {
    pub fn new(model: &ModelConfig, n_samples: usize, n_domains: usize) -> Self {
        Self {
            generators: LEVELS.map(|k| model.generator(k)),
            discriminator: model.discriminator(n_samples, n_domains),
            classifier: model.classifier(),
            init_std: model.init_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialModels<T> {
    pub generators: [ParamStore<T>; 3],
    pub discriminator: ParamStore<T>,
    pub classifier: ParamStore<T>,
}

impl<T: Scalar> AdversarialModels<T> {
    /// `(name, store)` pairs in a fixed order, for checkpointing.
    pub fn named(&self) -> [(&'static str, &ParamStore<T>); 5] {
        [
            ("g3", &self.generators[0]),
            ("g4", &self.generators[1]),
            ("g5", &self.generators[2]),
            ("d", &self.discriminator),
            ("c", &self.classifier),
        ]
    }
}

pub fn init_adversarial<T: Scalar>(arch: &Architecture, seed: u64) -> Result<AdversarialModels<T>> {
    let root = Rng::new(seed);
    let std = arch.init_std;
    let g = |i: usize| arch.generators[i].init(std, &mut root.fork(LEVELS[i] as u64));
    Ok(AdversarialModels {
        generators: [g(0)?, g(1)?, g(2)?],
        discriminator: arch.discriminator.init(std, &mut root.fork(10))?,
        classifier: arch.classifier.init(std, &mut root.fork(11))?,
    })
}

/// One standardized record with its domain and optional stage label.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSample {
    /// `[2, n]` row-major: horizontal then vertical.
    pub data: Vec<f64>,
    pub domain: usize,
    pub target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSet {
    pub n_samples: usize,
    pub n_domains: usize,
    pub samples: Vec<AdversarialSample>,
}

impl AdversarialSet {
    fn build(series: &[RunToFailureSeries], label: impl Fn(usize, usize, usize) -> Option<f64>) -> Result<Self> {
        let first = series.first().ok_or_else(|| invalid("no training series"))?;
        let n_samples = first.n_samples();
        let mut samples = Vec::new();
        for (d, s) in series.iter().enumerate() {
            if s.n_samples() != n_samples {
                return Err(invalid(format!(
                    "{} has {} samples per record, {} has {n_samples}",
                    s.bearing_id,
                    s.n_samples(),
                    first.bearing_id
                )));
            }
            let x = record_tensor::<f64>(&s.records.iter().collect::<Vec<_>>());
            let row = 2 * n_samples;
            for (i, chunk) in x.data().chunks(row).enumerate() {
                samples.push(AdversarialSample {
                    data: chunk.to_vec(),
                    domain: d,
                    target: label(d, i, s.len()),
                });
            }
        }
        Ok(Self {
            n_samples,
            n_domains: series.len(),
            samples,
        })
    }

    /// Health-stage labels on the first and last `p` fraction of each series.
    pub fn hs(series: &[RunToFailureSeries], p: f64) -> Result<Self> {
        for s in series {
            crate::dataset::assign_hs_labels(s, p)?;
        }
        Self::build(series, |_, i, n| hs_label(i, n, p).map(|l| l.target()))
    }

    /// RUL labels from each series' first predicting time onward.
    pub fn rul(series: &[RunToFailureSeries], fpts: &[usize]) -> Result<Self> {
        if fpts.len() != series.len() {
            return Err(invalid(format!("{} FPTs for {} series", fpts.len(), series.len())));
        }
        for (s, &t) in series.iter().zip(fpts) {
            crate::dataset::assign_rul_labels(s, t)?;
        }
        Self::build(series, |d, i, n| rul_label(i, n, fpts[d]))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Batch tensor `[b, 2, n]`, domains, and the labelled rows.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>, Labelled) {
        let mut data = Vec::with_capacity(idx.len() * 2 * self.n_samples);
        let mut domains = Vec::with_capacity(idx.len());
        let mut labelled = Labelled::default();
        for (row, &i) in idx.iter().enumerate() {
            let s = &self.samples[i];
            data.extend(s.data.iter().map(|&v| T::lit(v)));
            domains.push(s.domain);
            if let Some(t) = s.target {
                labelled.rows.push(row);
                labelled.targets.push(t);
            }
        }
        let x = Tensor::new(vec![idx.len(), 2, self.n_samples], data).expect("batch shape");
        (x, domains, labelled)
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRow {
    pub step: usize,
    pub l_d: f64,
    pub l_g: f64,
    pub l_c: Option<f64>,
    pub penalty: f64,
}

/// Loss values of one discriminator/generator/classifier triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub d: f64,
    pub penalty: f64,
    pub g: f64,
    pub c: Option<f64>,
}

fn finite_or(value: f64, what: &str, level: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(GmfeError::NonFinite(format!(
            "{what} = {value} at generator G{}",
            LEVELS[level]
        )))
    }
}

fn apply<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &std::collections::BTreeMap<String, Tensor<T>>,
    lr: f64,
    cfg: &TrainingConfig,
) -> Result<()> {
    let report = store.adam_step(grads, &cfg.adam(lr))?;
    if !report.rejected.is_empty() {
        log::warn!("rejected non-finite gradients for {:?}", report.rejected);
    }
    Ok(())
}

/// Critic update against `G_level(x)` with the generator frozen. Returns
/// `(L_D, penalty)`.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step<T: Scalar>(
    arch: &Architecture,
    models: &mut AdversarialModels<T>,
    level: usize,
    real: &Tensor<T>,
    domains: &[usize],
    weights: &LossWeights,
    cfg: &TrainingConfig,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let gp = models.generators[level].bind(&tape, false);
    let x = tape.constant(real.clone());
    let fake = arch.generators[level].forward(&tape, &gp, x, &mut Phase::Train(rng))?;
    let fake = (*tape.value(fake)).clone();
    let dp = models.discriminator.bind(&tape, true);
    let loss = discriminator_loss(&tape, &arch.discriminator, &dp, real, &fake, domains, weights, rng)?;
    let l_d = finite_or(tape.item(loss.total).as_f64(), "L_D", level)?;
    let penalty = tape.item(loss.penalty).as_f64();
    let grads = dp.gradients(&tape, loss.total)?;
    apply(&mut models.discriminator, &grads, cfg.lr_discriminator, cfg)?;
    Ok((l_d, penalty))
}

/// Generator update through the frozen critic, domain head and classifier.
/// Returns `(L_G, L_C)` where `L_C` is the classifier term inside `L_G`.
#[allow(clippy::too_many_arguments)]
pub fn generator_step<T: Scalar>(
    stage: Stage,
    arch: &Architecture,
    models: &mut AdversarialModels<T>,
    level: usize,
    real: &Tensor<T>,
    domains: &[usize],
    labelled: &Labelled,
    weights: &LossWeights,
    cfg: &TrainingConfig,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>)> {
    let tape = Tape::new();
    let gp = models.generators[level].bind(&tape, true);
    let dp = models.discriminator.bind(&tape, false);
    let cp = models.classifier.bind(&tape, false);
    let x = tape.constant(real.clone());
    let fake = arch.generators[level].forward(&tape, &gp, x, &mut Phase::Train(rng))?;
    let loss = generator_loss(
        &tape,
        &arch.discriminator,
        &dp,
        fake,
        domains,
        labelled,
        |f| arch.classifier.forward(&tape, &cp, f),
        stage,
        weights,
        cfg.critic_sign,
    )?;
    let l_g = finite_or(tape.item(loss.total).as_f64(), "L_G", level)?;
    let grads = gp.gradients(&tape, loss.total)?;
    apply(&mut models.generators[level], &grads, cfg.lr_generator, cfg)?;
    Ok((l_g, loss.classifier.map(|v| tape.item(v).as_f64())))
}

/// Classifier update on the labelled rows of `G_level(x)`, generator in
/// evaluation mode. `None` when nothing in the batch is labelled.
#[allow(clippy::too_many_arguments)]
pub fn classifier_step<T: Scalar>(
    stage: Stage,
    arch: &Architecture,
    models: &mut AdversarialModels<T>,
    level: usize,
    real: &Tensor<T>,
    labelled: &Labelled,
    weights: &LossWeights,
    cfg: &TrainingConfig,
) -> Result<Option<f64>> {
    if labelled.is_empty() {
        return Ok(None);
    }
    let tape = Tape::new();
    let gp = models.generators[level].bind(&tape, false);
    let cp = models.classifier.bind(&tape, true);
    let x = tape.constant(real.clone());
    let fake = arch.generators[level].forward(&tape, &gp, x, &mut Phase::Eval)?;
    let fake = tape.constant((*tape.value(select_rows(&tape, fake, &labelled.rows)?)).clone());
    let pred = arch.classifier.forward(&tape, &cp, fake)?;
    let loss = classifier_loss(&tape, stage, pred, &labelled.targets, weights)?;
    let l_c = finite_or(tape.item(loss).as_f64(), "L_C", level)?;
    let grads = cp.gradients(&tape, loss)?;
    apply(&mut models.classifier, &grads, cfg.lr_classifier, cfg)?;
    Ok(Some(l_c))
}

/// For each generator depth in turn: critic step, generator step,
/// classifier step.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_iteration<T: Scalar>(
    stage: Stage,
    arch: &Architecture,
    models: &mut AdversarialModels<T>,
    real: &Tensor<T>,
    domains: &[usize],
    labelled: &Labelled,
    weights: &LossWeights,
    cfg: &TrainingConfig,
    rng: &mut Rng,
) -> Result<[StepLosses; 3]> {
    let mut out = [StepLosses {
        d: 0.0,
        penalty: 0.0,
        g: 0.0,
        c: None,
    }; 3];
    for (level, slot) in out.iter_mut().enumerate() {
        let (d, penalty) = discriminator_step(arch, models, level, real, domains, weights, cfg, rng)?;
        let (g, _) = generator_step(stage, arch, models, level, real, domains, labelled, weights, cfg, rng)?;
        let c = classifier_step(stage, arch, models, level, real, labelled, weights, cfg)?;
        *slot = StepLosses { d, penalty, g, c };
    }
    Ok(out)
}

/// Full adversarial stage. Each epoch visits every sample once in shuffled
/// batches of `cfg.batch_size`.
pub fn train_adversarial_stage<T: Scalar>(
    stage: Stage,
    set: &AdversarialSet,
    arch: &Architecture,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<(AdversarialModels<T>, Vec<LossRow>)> {
    if set.is_empty() {
        return Err(invalid("adversarial stage: empty training set"));
    }
    let mut weights = match stage {
        Stage::Hs => cfg.hs_weights.clone(),
        Stage::Rul => cfg.rul_weights.clone(),
    };
    if set.n_domains < 2 && weights.lambda_d > 0.0 {
        log::warn!("single training domain: domain loss disabled");
        weights.lambda_d = 0.0;
    }
    let root = Rng::new(seed);
    let mut models = init_adversarial(arch, root.fork(1).seed())?;
    let mut order_rng = root.fork(2);
    let mut rng = root.fork(3);
    let mut rows = Vec::new();
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..cfg.adversarial_epochs {
        order_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let (real, domains, labelled) = set.batch::<T>(batch);
            let losses = adversarial_iteration(
                stage,
                arch,
                &mut models,
                &real,
                &domains,
                &labelled,
                &weights,
                cfg,
                &mut rng,
            )
            .map_err(|e| match e {
                GmfeError::NonFinite(m) => {
                    GmfeError::NonFinite(format!("{stage:?} stage, epoch {epoch}, step {}: {m}", rows.len()))
                }
                other => other,
            })?;
            for l in losses {
                rows.push(LossRow {
                    step: rows.len(),
                    l_d: l.d,
                    l_g: l.g,
                    l_c: l.c,
                    penalty: l.penalty,
                });
            }
        }
        if let Some(last) = rows.last() {
            log::info!(
                "{stage:?} epoch {}/{}: L_D {:.4} L_G {:.4} penalty {:.4}",
                epoch + 1,
                cfg.adversarial_epochs,
                last.l_d,
                last.l_g,
                last.penalty
            );
        }
    }
    Ok((models, rows))
}
