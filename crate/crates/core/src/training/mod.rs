//! Two-stage training: adversarial feature learning, NSP construction,
//! health-stage scoring with FPT detection, and sequence RUL regression.

mod adversarial;
mod features;
mod pipeline;
mod supervised;

pub use adversarial::{
    adversarial_iteration, classifier_step, discriminator_step, generator_step, init_adversarial,
    train_adversarial_stage, AdversarialModels, AdversarialSample, AdversarialSet, Architecture, LossRow, StepLosses,
    LEVELS,
};
pub use features::{build_nsp_dataset, generate_features, record_tensor};
pub use pipeline::{fit_stage1, fit_stage2, one_d_rul, FitOutput, PipelineConfig, Stage1, Stage2};
pub use supervised::{
    hs_scores, predict_rul, rul_sequences, train_cnn_hs, train_cnn_lstm, window, RulPrediction, SequenceSample,
    SupervisedTrace,
};

use diffcore::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::losses::{CriticSign, LossWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_classifier: f64,
    /// Learning rate of CNN-HS and CNN-LSTM.
    pub lr_cnn: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub adversarial_epochs: usize,
    pub hs_epochs: usize,
    pub rul_epochs: usize,
    pub hs_weights: LossWeights,
    pub rul_weights: LossWeights,
    pub critic_sign: CriticSign,
    /// Fraction of each series labelled healthy and unhealthy.
    pub p: f64,
    pub seq_len: usize,
    pub trigger_k: usize,
    pub trigger_threshold: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 40,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            lr_classifier: 1e-4,
            lr_cnn: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            eps_adam: 1e-8,
            adversarial_epochs: 50,
            hs_epochs: 100,
            rul_epochs: 100,
            hs_weights: LossWeights::default(),
            rul_weights: LossWeights {
                lambda_g: 1.0,
                ..LossWeights::default()
            },
            critic_sign: CriticSign::Plus,
            p: 0.05,
            seq_len: 5,
            trigger_k: 3,
            trigger_threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.seq_len == 0 || self.trigger_k == 0 {
            return Err(invalid("batch_size, seq_len and trigger_k must be ≥ 1"));
        }
        if !(self.p > 0.0 && self.p <= 0.5) {
            return Err(invalid(format!("p = {} outside (0, 0.5]", self.p)));
        }
        let rates = [
            self.lr_generator,
            self.lr_discriminator,
            self.lr_classifier,
            self.lr_cnn,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_adam > 0.0) {
            return Err(invalid("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.hs_weights.validate()?;
        self.rul_weights.validate()
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }
}

/// Health-stage scores of one series and the detected first predicting time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FptResult {
    pub bearing_id: String,
    pub t_fpt: Option<usize>,
    pub scores: Vec<f64>,
}

/// First index starting a run of `k` consecutive scores above `threshold`.
pub fn determine_fpt(scores: &[f64], k: usize, threshold: f64) -> Option<usize> {
    let mut run = 0;
    for (i, &s) in scores.iter().enumerate() {
        run = if s > threshold { run + 1 } else { 0 };
        if run == k {
            return Some(i + 1 - k);
        }
    }
    None
}
