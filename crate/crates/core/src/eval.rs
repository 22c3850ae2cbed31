//! Metrics, leave-one-bearing-out evaluation and reports.

use std::fmt::Write as _;
use std::path::Path;

use diffcore::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rul_label, RunToFailureSeries};
use crate::error::{invalid, io_err, Result};
use crate::training::{fit_stage1, fit_stage2, one_d_rul, PipelineConfig, Stage1};

fn check_pair(act: &[f64], pre: &[f64], what: &str) -> Result<()> {
    if act.is_empty() || act.len() != pre.len() {
        return Err(invalid(format!(
            "{what}: lengths {} and {} must be equal and nonzero",
            act.len(),
            pre.len()
        )));
    }
    Ok(())
}

pub fn mae(act: &[f64], pre: &[f64]) -> Result<f64> {
    check_pair(act, pre, "mae")?;
    Ok(act.iter().zip(pre).map(|(a, p)| (a - p).abs()).sum::<f64>() / act.len() as f64)
}

pub fn rmse(act: &[f64], pre: &[f64]) -> Result<f64> {
    check_pair(act, pre, "rmse")?;
    Ok((act.iter().zip(pre).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / act.len() as f64).sqrt())
}

/// Mean absolute percentage error as a fraction, over samples with nonzero
/// actual value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    pub excluded: usize,
}

pub fn mape(act: &[f64], pre: &[f64]) -> Result<Mape> {
    check_pair(act, pre, "mape")?;
    let kept: Vec<f64> = act
        .iter()
        .zip(pre)
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, p)| ((a - p) / a).abs())
        .collect();
    if kept.is_empty() {
        return Err(invalid("mape: every actual value is zero"));
    }
    Ok(Mape {
        value: kept.iter().sum::<f64>() / kept.len() as f64,
        excluded: act.len() - kept.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Full,
    NoFpt,
    OneDGan,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Full => "full",
            EvalMode::NoFpt => "no_fpt",
            EvalMode::OneDGan => "one_d_gan",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = crate::GmfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(EvalMode::Full),
            "no_fpt" => Ok(EvalMode::NoFpt),
            "one_d_gan" => Ok(EvalMode::OneDGan),
            other => Err(invalid(format!("unknown mode `{other}` (full, no_fpt, one_d_gan)"))),
        }
    }
}

/// One held-out bearing under one trial seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub bearing_id: String,
    pub trial: usize,
    pub seed: u64,
    pub mode: EvalMode,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub mape_excluded: usize,
    /// Start of the evaluated range.
    pub t_fpt: usize,
    /// False when no FPT was found and evaluation fell back to index 0.
    pub fpt_detected: bool,
    /// `(bearing, T_FPT, detected)` used for the training series.
    pub train_fpts: Vec<(String, usize, bool)>,
    pub hs_scores: Vec<f64>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub bearing_id: String,
    pub mae: MeanStd,
    pub rmse: MeanStd,
    pub mape: MeanStd,
}

impl Aggregate {
    fn over(bearing_id: String, folds: &[&FoldReport]) -> Self {
        let pick = |f: fn(&FoldReport) -> f64| MeanStd::of(&folds.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            bearing_id,
            mae: pick(|r| r.mae),
            rmse: pick(|r| r.rmse),
            mape: pick(|r| r.mape),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub seeds: Vec<u64>,
    pub config: PipelineConfig,
    pub folds: Vec<FoldReport>,
    /// Mean ± std over trials, per held-out bearing.
    pub per_bearing: Vec<Aggregate>,
    /// Mean ± std over every fold.
    pub overall: Aggregate,
}

impl EvalReport {
    /// Aggregates from folds; independent of trial order.
    pub fn assemble(mode: EvalMode, seeds: &[u64], config: PipelineConfig, mut folds: Vec<FoldReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(invalid("report without folds"));
        }
        for f in &folds {
            let nonneg = f.mae >= 0.0 && f.rmse >= 0.0 && f.mape >= 0.0;
            if !nonneg || f.mae > f.rmse * (1.0 + 1e-12) {
                return Err(invalid(format!(
                    "fold {} seed {}: inconsistent metrics MAE {} RMSE {} MAPE {}",
                    f.bearing_id, f.seed, f.mae, f.rmse, f.mape
                )));
            }
        }
        folds.sort_by(|a, b| (&a.bearing_id, a.seed).cmp(&(&b.bearing_id, b.seed)));
        let mut ids: Vec<String> = folds.iter().map(|f| f.bearing_id.clone()).collect();
        ids.dedup();
        let per_bearing = ids
            .into_iter()
            .map(|id| {
                let mine: Vec<&FoldReport> = folds.iter().filter(|f| f.bearing_id == id).collect();
                Aggregate::over(id, &mine)
            })
            .collect();
        let overall = Aggregate::over("all".into(), &folds.iter().collect::<Vec<_>>());
        let mut seeds = seeds.to_vec();
        seeds.sort_unstable();
        Ok(Self {
            mode,
            seeds,
            config,
            folds,
            per_bearing,
            overall,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `bearing,trial,mode,MAE,RMSE,MAPE,T_FPT`, one row per fold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bearing,trial,mode,MAE,RMSE,MAPE,T_FPT\n");
        for f in &self.folds {
            let t = if f.fpt_detected {
                f.t_fpt.to_string()
            } else {
                "none".into()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.bearing_id,
                f.trial,
                f.mode.as_str(),
                f.mae,
                f.rmse,
                f.mape,
                t
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(io_err(&json))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(io_err(&csv))
    }
}

/// Start of the unhealthy labelled region, used when no FPT is detected on
/// a training series.
pub fn fallback_fpt(n: usize, p: f64) -> usize {
    n - (n as f64 * p).floor() as usize
}

/// FPTs of the training series from a fitted HS stage, with fallback.
pub fn training_fpts<T: Scalar>(
    stage1: &Stage1<T>,
    train: &[RunToFailureSeries],
    cfg: &PipelineConfig,
) -> Result<Vec<(String, usize, bool)>> {
    train
        .iter()
        .map(|s| {
            let r = stage1.detect(s, cfg)?;
            Ok(match r.t_fpt {
                Some(t) => (s.bearing_id.clone(), t, true),
                None => {
                    let t = fallback_fpt(s.len(), cfg.training.p);
                    log::warn!("no FPT detected on training series {}; using {t}", s.bearing_id);
                    (s.bearing_id.clone(), t, false)
                }
            })
        })
        .collect()
}

/// Train on `train`, evaluate on `test`.
pub fn run_fold<T: Scalar>(
    train: &[RunToFailureSeries],
    test: &RunToFailureSeries,
    cfg: &PipelineConfig,
    mode: EvalMode,
    (trial, seed): (usize, u64),
    checkpoints: Option<&Path>,
) -> Result<FoldReport> {
    let (train_fpts, t_fpt, fpt_detected, hs_scores) = match mode {
        EvalMode::NoFpt => (
            train.iter().map(|s| (s.bearing_id.clone(), 0, true)).collect(),
            0,
            true,
            Vec::new(),
        ),
        EvalMode::Full | EvalMode::OneDGan => {
            let s1 = fit_stage1::<T>(train, cfg, seed)?.stage;
            if let Some(dir) = checkpoints {
                s1.save(&dir.join("stage1"))?;
            }
            let fpts = training_fpts(&s1, train, cfg)?;
            let r = s1.detect(test, cfg)?;
            if r.t_fpt.is_none() {
                log::warn!(
                    "no FPT detected on held-out {}; evaluating from index 0",
                    test.bearing_id
                );
            }
            (fpts, r.t_fpt.unwrap_or(0), r.t_fpt.is_some(), r.scores)
        }
    };
    let fpts: Vec<usize> = train_fpts.iter().map(|f| f.1).collect();
    let s2 = fit_stage2::<T>(train, &fpts, cfg, seed)?.stage;
    if let Some(dir) = checkpoints {
        s2.save(&dir.join("stage2"))?;
    }
    let prediction = match mode {
        EvalMode::OneDGan => one_d_rul(&s2, test, t_fpt)?,
        _ => s2.predict(test, t_fpt, &cfg.nsp)?,
    };
    let n = test.len();
    let actual: Vec<f64> = (t_fpt..n).map(|i| rul_label(i, n, t_fpt).expect("in range")).collect();
    let predicted = prediction.predicted;
    let m = mape(&actual, &predicted)?;
    Ok(FoldReport {
        bearing_id: test.bearing_id.clone(),
        trial,
        seed,
        mode,
        mae: mae(&actual, &predicted)?,
        rmse: rmse(&actual, &predicted)?,
        mape: m.value,
        mape_excluded: m.excluded,
        t_fpt,
        fpt_detected,
        train_fpts,
        hs_scores,
        actual,
        predicted,
    })
}

/// Each bearing held out in turn, once per trial seed. Folds run in
/// parallel; the report does not depend on scheduling.
pub fn leave_one_out<T: Scalar>(
    series: &[RunToFailureSeries],
    cfg: &PipelineConfig,
    mode: EvalMode,
    seeds: &[u64],
    checkpoints: Option<&Path>,
) -> Result<EvalReport> {
    if series.len() < 3 {
        return Err(invalid(format!(
            "leave-one-out needs ≥ 3 bearings, got {}",
            series.len()
        )));
    }
    if seeds.is_empty() {
        return Err(invalid("leave-one-out needs at least one trial seed"));
    }
    cfg.validate()?;
    let jobs: Vec<(usize, usize, u64)> = (0..series.len())
        .flat_map(|j| seeds.iter().enumerate().map(move |(t, &s)| (j, t, s)))
        .collect();
    let folds = jobs
        .par_iter()
        .map(|&(j, trial, seed)| {
            let test = &series[j];
            let train: Vec<RunToFailureSeries> = series
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, s)| s.clone())
                .collect();
            let dir = checkpoints.map(|d| d.join(mode.as_str()).join(format!("seed{seed}")).join(&test.bearing_id));
            log::info!("fold {} seed {seed} ({})", test.bearing_id, mode.as_str());
            run_fold::<T>(&train, test, cfg, mode, (trial, seed), dir.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::assemble(mode, seeds, cfg.clone(), folds)
}
