use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gmfe::dataset::{rul_label, save_series_dir, synthesize_bearing, RunToFailureSeries};
use gmfe::eval::{fallback_fpt, leave_one_out, mae, rmse, EvalMode};
use gmfe::nsp::render_png;
use gmfe::training::{fit_stage1, fit_stage2, one_d_rul, LossRow, SupervisedTrace};
use gmfe::{GmfeError, HsStage, Real, Result, RulStage};
use serde::{Deserialize, Serialize};

use crate::config::Dataset;
use crate::plot;
use crate::Run;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> GmfeError + '_ {
    move |source| GmfeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(path, contents).map_err(io(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, prerequisite: &'static str) -> Result<T> {
    if !path.is_file() {
        return Err(GmfeError::Prerequisite(prerequisite));
    }
    let text = fs::read_to_string(path).map_err(io(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_config(run: &Run) -> Result<()> {
    write_json(&run.dir.join("config.json"), &run.cfg)
}

/// Sidecar describing a trained stage, needed to rebuild its architecture.
#[derive(Debug, Serialize, Deserialize)]
struct StageMeta {
    n_samples: usize,
    n_domains: usize,
    seed: u64,
    mode: EvalMode,
    train: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FptEntry {
    bearing_id: String,
    t_fpt: Option<usize>,
    scores: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct PredictEntry {
    bearing_id: String,
    status: &'static str,
    t_fpt: Option<usize>,
    mae: Option<f64>,
    rmse: Option<f64>,
}

fn training_set(run: &Run) -> Result<Vec<RunToFailureSeries>> {
    let all = run.cfg.load_all(&run.dir)?;
    let (train, _) = run.cfg.split(&all);
    if train.is_empty() {
        return Err(GmfeError::Config("every bearing is listed under dataset.test".into()));
    }
    Ok(train.into_iter().cloned().collect())
}

/// Bearings that `predict` reports on: the test split, else everything.
fn targets(run: &Run, all: &[RunToFailureSeries]) -> Vec<RunToFailureSeries> {
    let (_, test) = run.cfg.split(all);
    if test.is_empty() {
        all.to_vec()
    } else {
        test.into_iter().cloned().collect()
    }
}

fn write_stage_logs(dir: &Path, stage: &str, losses: &[LossRow], trace: &SupervisedTrace) -> Result<()> {
    let mut adv = String::from("stage,step,l_d,l_g,l_c,penalty\n");
    for r in losses {
        let l_c = r.l_c.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(adv, "{stage},{},{},{},{l_c},{}", r.step, r.l_d, r.l_g, r.penalty);
    }
    write(&dir.join("losses.csv"), adv)?;
    let mut cnn = String::from("epoch,loss\n");
    for (e, l) in trace.epoch_losses.iter().enumerate() {
        let _ = writeln!(cnn, "{e},{l}");
    }
    write(&dir.join("cnn_losses.csv"), cnn)
}

/// `<run>/losses.csv` concatenates the per-stage adversarial logs present.
fn merge_losses(run: &Run) -> Result<()> {
    let mut out = String::from("stage,step,l_d,l_g,l_c,penalty\n");
    for stage in ["stage1", "stage2"] {
        let path = run.dir.join(stage).join("losses.csv");
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(io(&path))?;
            out.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    write(&run.dir.join("losses.csv"), out)
}

fn load_stage1(run: &Run) -> Result<HsStage> {
    let dir = run.dir.join("stage1");
    let meta: StageMeta = read_json(&dir.join("meta.json"), "train-hs")?;
    HsStage::load(&dir, &run.cfg.pipeline(), meta.n_samples, meta.n_domains)
}

fn load_stage2(run: &Run) -> Result<RulStage> {
    let dir = run.dir.join("stage2");
    let meta: StageMeta = read_json(&dir.join("meta.json"), "train-rul")?;
    if meta.mode != run.cfg.mode {
        return Err(GmfeError::Config(format!(
            "stage2 was trained in mode {}, not {}; rerun train-rul",
            meta.mode.as_str(),
            run.cfg.mode.as_str()
        )));
    }
    RulStage::load(&dir, &run.cfg.pipeline(), meta.n_samples, meta.n_domains)
}

fn read_fpts(run: &Run) -> Result<Vec<FptEntry>> {
    read_json(&run.dir.join("fpt.json"), "fpt")
}

fn lookup<'a>(fpts: &'a [FptEntry], id: &str) -> Result<&'a FptEntry> {
    fpts.iter()
        .find(|f| f.bearing_id == id)
        .ok_or_else(|| GmfeError::Config(format!("fpt.json has no entry for {id}; rerun fpt")))
}

pub fn synth(run: &Run) -> Result<()> {
    let Dataset::Synthetic { bearings, .. } = &run.cfg.dataset else {
        return Err(GmfeError::Config("synth needs dataset.kind = synthetic".into()));
    };
    for b in bearings {
        let series = synthesize_bearing(b)?;
        let dir = run.dir.join("data").join(&b.bearing_id);
        save_series_dir(&series, b, &dir)?;
        log::info!("{}: {} records in {}", b.bearing_id, series.len(), dir.display());
    }
    Ok(())
}

pub fn train_hs(run: &Run) -> Result<()> {
    let train = training_set(run)?;
    let seed = run.cfg.training.seed;
    log::info!("HS stage on {} bearings", train.len());
    let fit = fit_stage1::<Real>(&train, &run.cfg.pipeline(), seed)?;
    let dir = run.dir.join("stage1");
    fit.stage.save(&dir)?;
    write_json(
        &dir.join("meta.json"),
        &StageMeta {
            n_samples: train[0].n_samples(),
            n_domains: train.len(),
            seed,
            mode: run.cfg.mode,
            train: train.iter().map(|s| s.bearing_id.clone()).collect(),
        },
    )?;
    write_stage_logs(&dir, "hs", &fit.losses, &fit.supervised)?;
    merge_losses(run)
}

pub fn fpt(run: &Run) -> Result<()> {
    let stage = load_stage1(run)?;
    let cfg = run.cfg.pipeline();
    let mut entries = Vec::new();
    let mut csv = String::from("bearing_id,T_FPT\n");
    for s in run.cfg.load_all(&run.dir)? {
        let r = stage.detect(&s, &cfg)?;
        match r.t_fpt {
            Some(t) => log::info!("{}: FPT at record {t}", s.bearing_id),
            None => log::info!("{}: healthy throughout", s.bearing_id),
        }
        let t = r.t_fpt.map_or_else(|| "none".to_string(), |t| t.to_string());
        let _ = writeln!(csv, "{},{t}", s.bearing_id);
        entries.push(FptEntry {
            bearing_id: s.bearing_id,
            t_fpt: r.t_fpt,
            scores: r.scores,
        });
    }
    write(&run.dir.join("fpt.csv"), csv)?;
    write_json(&run.dir.join("fpt.json"), &entries)
}

pub fn train_rul(run: &Run) -> Result<()> {
    let train = training_set(run)?;
    let cfg = run.cfg.pipeline();
    let fpts: Vec<usize> = match run.cfg.mode {
        EvalMode::NoFpt => vec![0; train.len()],
        EvalMode::Full | EvalMode::OneDGan => {
            let entries = read_fpts(run)?;
            train
                .iter()
                .map(|s| {
                    Ok(lookup(&entries, &s.bearing_id)?.t_fpt.unwrap_or_else(|| {
                        let t = fallback_fpt(s.len(), cfg.training.p);
                        log::warn!("no FPT on training series {}; using {t}", s.bearing_id);
                        t
                    }))
                })
                .collect::<Result<_>>()?
        }
    };
    let seed = run.cfg.training.seed;
    log::info!("RUL stage on {} bearings ({})", train.len(), run.cfg.mode.as_str());
    let fit = fit_stage2::<Real>(&train, &fpts, &cfg, seed)?;
    let dir = run.dir.join("stage2");
    fit.stage.save(&dir)?;
    write_json(
        &dir.join("meta.json"),
        &StageMeta {
            n_samples: train[0].n_samples(),
            n_domains: train.len(),
            seed,
            mode: run.cfg.mode,
            train: train.iter().map(|s| s.bearing_id.clone()).collect(),
        },
    )?;
    write_stage_logs(&dir, "rul", &fit.losses, &fit.supervised)?;
    merge_losses(run)
}

pub fn predict(run: &Run) -> Result<()> {
    let stage = load_stage2(run)?;
    let all = run.cfg.load_all(&run.dir)?;
    let entries = match run.cfg.mode {
        EvalMode::NoFpt => Vec::new(),
        _ => read_fpts(run)?,
    };
    let out = run.dir.join("rul");
    let mut summary = Vec::new();
    for s in targets(run, &all) {
        let t_fpt = match run.cfg.mode {
            EvalMode::NoFpt => Some(0),
            _ => lookup(&entries, &s.bearing_id)?.t_fpt,
        };
        let Some(t) = t_fpt else {
            log::info!("{}: healthy throughout; no RUL prediction", s.bearing_id);
            summary.push(PredictEntry {
                bearing_id: s.bearing_id.clone(),
                status: "healthy throughout",
                t_fpt: None,
                mae: None,
                rmse: None,
            });
            continue;
        };
        let prediction = match run.cfg.mode {
            EvalMode::OneDGan => one_d_rul(&stage, &s, t)?,
            _ => stage.predict(&s, t, &run.cfg.nsp)?,
        };
        let n = s.len();
        let actual: Vec<f64> = (t..n).map(|i| rul_label(i, n, t).expect("index past FPT")).collect();
        let mut csv = String::from("index,actual,predicted\n");
        for (k, (a, p)) in actual.iter().zip(&prediction.predicted).enumerate() {
            let _ = writeln!(csv, "{},{a},{p}", s.records[t + k].index);
        }
        write(&out.join(format!("{}.csv", s.bearing_id)), csv)?;
        let xs: Vec<f64> = (t..n).map(|i| s.records[i].index as f64).collect();
        plot::rul_curve(
            &xs,
            &actual,
            &prediction.predicted,
            &out.join(format!("{}.png", s.bearing_id)),
        )?;
        let (m, r) = (
            mae(&actual, &prediction.predicted)?,
            rmse(&actual, &prediction.predicted)?,
        );
        log::info!("{}: FPT {t}, MAE {m:.4}, RMSE {r:.4}", s.bearing_id);
        summary.push(PredictEntry {
            bearing_id: s.bearing_id.clone(),
            status: "predicted",
            t_fpt: Some(t),
            mae: Some(m),
            rmse: Some(r),
        });
    }
    write_json(&out.join("summary.json"), &summary)
}

pub fn render_nsp(run: &Run) -> Result<()> {
    let stage = load_stage1(run)?;
    for s in run.cfg.load_all(&run.dir)? {
        let dir = run.dir.join("nsp").join(&s.bearing_id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        for (record, image) in s.records.iter().zip(stage.images(&s, &run.cfg.nsp)?) {
            render_png(&image, &dir.join(format!("{:05}.png", record.index)))?;
        }
        log::info!("{}: {} images in {}", s.bearing_id, s.len(), dir.display());
    }
    Ok(())
}

pub fn evaluate(run: &Run) -> Result<()> {
    let all = run.cfg.load_all(&run.dir)?;
    let mode = run.cfg.mode;
    let ckpt = run.dir.join("eval").join("checkpoints");
    let report = leave_one_out::<Real>(&all, &run.cfg.pipeline(), mode, &run.cfg.seeds, Some(&ckpt))?;
    let dir = run.dir.join("eval").join(mode.as_str());
    report.write(&dir)?;
    log::info!(
        "{}: MAE {:.4} ± {:.4}, RMSE {:.4} ± {:.4}",
        mode.as_str(),
        report.overall.mae.mean,
        report.overall.mae.std,
        report.overall.rmse.mean,
        report.overall.rmse.std
    );
    Ok(())
}
