use std::path::Path;

use diffcore::{checkpoint, ParamStore, Rng, Scalar, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{assign_hs_labels, RunToFailureSeries};
use crate::error::{io_err, Result};
use crate::losses::Stage;
use crate::models::{CnnHs, CnnLstmRul, ModelConfig};
use crate::nsp::{NspConfig, NspImage};

use super::adversarial::{train_adversarial_stage, AdversarialModels, AdversarialSet, Architecture, LossRow};
use super::features::{build_nsp_dataset, generate_features};
use super::supervised::{hs_scores, predict_rul, train_cnn_hs, train_cnn_lstm, RulPrediction, SupervisedTrace};
use super::{determine_fpt, FptResult, TrainingConfig};

/// Everything that shapes a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub nsp: NspConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.nsp.validate()
    }
}

fn save_stores<T: Scalar>(dir: &Path, stores: &[(&str, &ParamStore<T>)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, store) in stores {
        checkpoint::save(store, &dir.join(format!("{name}.ckpt")))?;
    }
    Ok(())
}

fn load_store<T: Scalar>(dir: &Path, name: &str) -> Result<ParamStore<T>> {
    Ok(checkpoint::load(&dir.join(format!("{name}.ckpt")))?)
}

fn load_adversarial<T: Scalar>(dir: &Path) -> Result<AdversarialModels<T>> {
    Ok(AdversarialModels {
        generators: [load_store(dir, "g3")?, load_store(dir, "g4")?, load_store(dir, "g5")?],
        discriminator: load_store(dir, "d")?,
        classifier: load_store(dir, "c")?,
    })
}

/// Health-stage half of the pipeline.
#[derive(Clone, Debug)]
pub struct Stage1<T> {
    pub arch: Architecture,
    pub models: AdversarialModels<T>,
    pub cnn_hs: CnnHs,
    pub cnn_hs_params: ParamStore<T>,
}

/// RUL half of the pipeline.
#[derive(Clone, Debug)]
pub struct Stage2<T> {
    pub arch: Architecture,
    pub models: AdversarialModels<T>,
    pub cnn_lstm: CnnLstmRul,
    pub cnn_lstm_params: ParamStore<T>,
}

/// A fitted stage with its training diagnostics.
#[derive(Clone, Debug)]
pub struct FitOutput<S> {
    pub stage: S,
    pub losses: Vec<LossRow>,
    pub supervised: SupervisedTrace,
}

fn stage_seeds(seed: u64, stage: Stage) -> (u64, u64) {
    let root = Rng::new(seed).fork(match stage {
        Stage::Hs => 1,
        Stage::Rul => 2,
    });
    (root.fork(1).seed(), root.fork(2).seed())
}

/// Adversarial HS stage followed by CNN-HS on the labelled head and tail
/// images of every training series.
pub fn fit_stage1<T: Scalar>(
    train: &[RunToFailureSeries],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<FitOutput<Stage1<T>>> {
    cfg.validate()?;
    let t = &cfg.training;
    let set = AdversarialSet::hs(train, t.p)?;
    let arch = Architecture::new(&cfg.model, set.n_samples, train.len());
    let (adv_seed, cnn_seed) = stage_seeds(seed, Stage::Hs);
    let (models, losses) = train_adversarial_stage(Stage::Hs, &set, &arch, t, adv_seed)?;
    let mut images = Vec::with_capacity(train.len());
    for s in train {
        images.push(build_nsp_dataset(s, &arch, &models, &cfg.nsp)?);
    }
    let mut labelled = Vec::new();
    for (s, imgs) in train.iter().zip(&images) {
        for (i, target) in assign_hs_labels(s, t.p)?.labelled() {
            labelled.push((&imgs[i], target));
        }
    }
    let cnn_hs = cfg.model.cnn_hs(cfg.nsp.grid);
    let (cnn_hs_params, supervised) = train_cnn_hs(&cnn_hs, &labelled, t, cfg.model.init_std, cnn_seed)?;
    Ok(FitOutput {
        stage: Stage1 {
            arch,
            models,
            cnn_hs,
            cnn_hs_params,
        },
        losses,
        supervised,
    })
}

impl<T: Scalar> Stage1<T> {
    pub fn images(&self, series: &RunToFailureSeries, nsp: &NspConfig) -> Result<Vec<NspImage>> {
        build_nsp_dataset(series, &self.arch, &self.models, nsp)
    }

    pub fn detect(&self, series: &RunToFailureSeries, cfg: &PipelineConfig) -> Result<FptResult> {
        let images = self.images(series, &cfg.nsp)?;
        let scores = hs_scores(&self.cnn_hs, &self.cnn_hs_params, &images)?;
        Ok(FptResult {
            bearing_id: series.bearing_id.clone(),
            t_fpt: determine_fpt(&scores, cfg.training.trigger_k, cfg.training.trigger_threshold),
            scores,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut stores = self.models.named().to_vec();
        stores.push(("cnn_hs", &self.cnn_hs_params));
        save_stores(dir, &stores)
    }

    pub fn load(dir: &Path, cfg: &PipelineConfig, n_samples: usize, n_domains: usize) -> Result<Self> {
        Ok(Self {
            arch: Architecture::new(&cfg.model, n_samples, n_domains),
            models: load_adversarial(dir)?,
            cnn_hs: cfg.model.cnn_hs(cfg.nsp.grid),
            cnn_hs_params: load_store(dir, "cnn_hs")?,
        })
    }
}

/// Adversarial RUL stage on labels from each series' FPT, then CNN-LSTM on
/// the resulting image sequences.
pub fn fit_stage2<T: Scalar>(
    train: &[RunToFailureSeries],
    fpts: &[usize],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<FitOutput<Stage2<T>>> {
    cfg.validate()?;
    let t = &cfg.training;
    let set = AdversarialSet::rul(train, fpts)?;
    let arch = Architecture::new(&cfg.model, set.n_samples, train.len());
    let (adv_seed, cnn_seed) = stage_seeds(seed, Stage::Rul);
    let (models, losses) = train_adversarial_stage(Stage::Rul, &set, &arch, t, adv_seed)?;
    let mut images = Vec::with_capacity(train.len());
    for s in train {
        images.push(build_nsp_dataset(s, &arch, &models, &cfg.nsp)?);
    }
    let series: Vec<(&[NspImage], usize)> = images.iter().map(Vec::as_slice).zip(fpts.iter().copied()).collect();
    let cnn_lstm = cfg.model.cnn_lstm(cfg.nsp.grid, t.seq_len);
    let (cnn_lstm_params, supervised) =
        train_cnn_lstm(&cnn_lstm, &series, t, &t.rul_weights, cfg.model.init_std, cnn_seed)?;
    Ok(FitOutput {
        stage: Stage2 {
            arch,
            models,
            cnn_lstm,
            cnn_lstm_params,
        },
        losses,
        supervised,
    })
}

impl<T: Scalar> Stage2<T> {
    pub fn images(&self, series: &RunToFailureSeries, nsp: &NspConfig) -> Result<Vec<NspImage>> {
        build_nsp_dataset(series, &self.arch, &self.models, nsp)
    }

    pub fn predict(&self, series: &RunToFailureSeries, t_fpt: usize, nsp: &NspConfig) -> Result<RulPrediction> {
        predict_rul(&self.cnn_lstm, &self.cnn_lstm_params, &self.images(series, nsp)?, t_fpt)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut stores = self.models.named().to_vec();
        stores.push(("cnn_lstm", &self.cnn_lstm_params));
        save_stores(dir, &stores)
    }

    pub fn load(dir: &Path, cfg: &PipelineConfig, n_samples: usize, n_domains: usize) -> Result<Self> {
        Ok(Self {
            arch: Architecture::new(&cfg.model, n_samples, n_domains),
            models: load_adversarial(dir)?,
            cnn_lstm: cfg.model.cnn_lstm(cfg.nsp.grid, cfg.training.seq_len),
            cnn_lstm_params: load_store(dir, "cnn_lstm")?,
        })
    }
}

/// RUL from the in-loop 1-D classifier, averaged over the three generator
/// scales, for records `t_fpt..n`.
pub fn one_d_rul<T: Scalar>(stage: &Stage2<T>, series: &RunToFailureSeries, t_fpt: usize) -> Result<RulPrediction> {
    let features = generate_features(series, &stage.arch, &stage.models)?;
    let n = series.n_samples();
    let count = series.len() - t_fpt;
    let mut sum = vec![0.0; count];
    for rows in &features {
        for (start, chunk) in rows[t_fpt..].chunks(32).enumerate().map(|(c, ch)| (c * 32, ch)) {
            let data = chunk.iter().flatten().map(|&v| T::lit(v)).collect();
            let tape = Tape::new();
            let p = stage.models.classifier.bind(&tape, false);
            let x = tape.constant(Tensor::new(vec![chunk.len(), 2, n], data)?);
            let y = stage.arch.classifier.forward(&tape, &p, x)?;
            for (j, v) in tape.value(y).data().iter().enumerate() {
                sum[start + j] += v.as_f64();
            }
        }
    }
    Ok(RulPrediction {
        t_fpt,
        predicted: sum.into_iter().map(|s| s / features.len() as f64).collect(),
    })
}
