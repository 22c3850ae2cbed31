//! Run configuration read from `--config`.

use std::path::{Path, PathBuf};

use gmfe::dataset::{load_femto, load_series_dir, load_xjtu, RunToFailureSeries, SyntheticBearing};
use gmfe::eval::EvalMode;
use gmfe::models::ModelConfig;
use gmfe::nsp::NspConfig;
use gmfe::training::{PipelineConfig, TrainingConfig};
use gmfe::{GmfeError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Dataset {
    /// One directory of `acc_*.csv` files per bearing.
    Femto {
        paths: Vec<PathBuf>,
        #[serde(default)]
        test: Vec<String>,
    },
    /// One directory of numbered CSV files per bearing.
    Xjtu {
        paths: Vec<PathBuf>,
        #[serde(default)]
        test: Vec<String>,
    },
    /// Generated by `synth` into `<out>/data`.
    Synthetic {
        bearings: Vec<SyntheticBearing>,
        #[serde(default)]
        test: Vec<String>,
    },
}

impl Dataset {
    /// Bearings held out of `train-hs` and `train-rul` and used by `predict`.
    pub fn test_ids(&self) -> &[String] {
        match self {
            Dataset::Femto { test, .. } | Dataset::Xjtu { test, .. } | Dataset::Synthetic { test, .. } => test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Dataset,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub nsp: NspConfig,
    #[serde(default = "default_mode")]
    pub mode: EvalMode,
    /// Trial seeds for `evaluate`; empty means `[training.seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_mode() -> EvalMode {
    EvalMode::Full
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| GmfeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| GmfeError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        let ids = self.bearing_ids();
        if ids.is_empty() {
            return Err(GmfeError::Config("dataset lists no bearings".into()));
        }
        if let Dataset::Synthetic { bearings, .. } = &self.dataset {
            for b in bearings {
                b.spec.validate()?;
            }
            let mut sorted = ids.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != ids.len() {
                return Err(GmfeError::Config("duplicate bearing ids".into()));
            }
        }
        if let Some(unknown) = self.dataset.test_ids().iter().find(|t| !ids.contains(t)) {
            if !matches!(self.dataset, Dataset::Femto { .. } | Dataset::Xjtu { .. }) {
                return Err(GmfeError::Config(format!(
                    "test bearing `{unknown}` is not in the dataset"
                )));
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            model: self.model.clone(),
            training: self.training.clone(),
            nsp: self.nsp.clone(),
        }
    }

    /// Ids known without touching the disk: synthetic ids, or the final
    /// path component of each real-data directory.
    pub fn bearing_ids(&self) -> Vec<String> {
        match &self.dataset {
            Dataset::Synthetic { bearings, .. } => bearings.iter().map(|b| b.bearing_id.clone()).collect(),
            Dataset::Femto { paths, .. } | Dataset::Xjtu { paths, .. } => paths
                .iter()
                .map(|p| {
                    p.file_name()
                        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
                })
                .collect(),
        }
    }

    /// Every bearing, in configuration order. Synthetic series come from
    /// the `synth` output under `run_dir`.
    pub fn load_all(&self, run_dir: &Path) -> Result<Vec<RunToFailureSeries>> {
        match &self.dataset {
            Dataset::Femto { paths, .. } => paths.iter().map(|p| load_femto(p)).collect(),
            Dataset::Xjtu { paths, .. } => paths.iter().map(|p| load_xjtu(p)).collect(),
            Dataset::Synthetic { bearings, .. } => bearings
                .iter()
                .map(|b| {
                    let dir = run_dir.join("data").join(&b.bearing_id);
                    if !dir.join("spec.json").is_file() {
                        return Err(GmfeError::Prerequisite("synth"));
                    }
                    let (series, stored) = load_series_dir(&dir)?;
                    if stored != *b {
                        return Err(GmfeError::Config(format!(
                            "{} was synthesized from a different spec; run synth again",
                            b.bearing_id
                        )));
                    }
                    Ok(series)
                })
                .collect(),
        }
    }

    pub fn split<'a>(
        &self,
        all: &'a [RunToFailureSeries],
    ) -> (Vec<&'a RunToFailureSeries>, Vec<&'a RunToFailureSeries>) {
        let test = self.dataset.test_ids();
        all.iter().partition(|s| !test.contains(&s.bearing_id))
    }
}
