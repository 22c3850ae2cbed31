//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any gating criterion fails. Criterion 9 needs FEMTO data
//! (set `GMFE_FEMTO_DIR` to a directory holding `Bearing1_*` folders) and
//! never gates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use diffcore::gradcheck::{self, suite, Tolerance};
use diffcore::{Rng, Tape, Tensor, Var};
use gmfe::dataset::*;
use gmfe::eval::{leave_one_out, mae, mape, rmse, run_fold, EvalMode, EvalReport};
use gmfe::losses::penalty_at;
use gmfe::models::{ModelConfig, Phase};
use gmfe::nsp::{bin_counts, encode_png, merge_rgb, to_nested_clusters, to_rgb, NspConfig};
use gmfe::training::PipelineConfig;
use sha2::{Digest, Sha256};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, t: Instant) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let results = match suite::run(100, 7, Tolerance::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let bad: Vec<String> = results
        .iter()
        .filter(|r| r.1 > 0)
        .map(|(name, failed, _)| format!("{name} ({failed} draws)"))
        .collect();
    let (fast, time) = within(Duration::from_secs(120), t);
    let detail = format!("{} ops × 100 draws, {time}; failing: {bad:?}", results.len());
    outcome(bad.is_empty() && fast, detail)
}

fn second_order() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(3);
    let normal = |shape: Vec<usize>, rng: &mut Rng| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| 0.7 * rng.normal()).collect()).unwrap()
    };
    let mut worst_fd = true;
    for _ in 0..5 {
        let params = [
            normal(vec![6, 5], &mut rng),
            normal(vec![5], &mut rng),
            normal(vec![5, 1], &mut rng),
        ];
        let x = normal(vec![3, 6], &mut rng);
        let report = gradcheck::check(
            &params,
            |tape, v| {
                let zero = tape.constant(Tensor::zeros(vec![1]));
                let critic = |xv: Var| -> gmfe::Result<Var> {
                    let h = tape.tanh(tape.linear(xv, v[0], v[1])?)?;
                    Ok(tape.reshape(tape.linear(h, v[2], zero)?, &[3])?)
                };
                penalty_at(tape, critic, x.clone()).map_err(|e| diffcore::DiffError::Invalid {
                    op: "penalty",
                    detail: e.to_string(),
                })
            },
            Tolerance::default(),
            11,
        );
        worst_fd &= report.is_ok_and(|r| r.passed());
    }
    let w = {
        let raw: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.into_iter().map(|v| v / n).collect::<Vec<_>>()
    };
    let tape = Tape::new();
    let x = normal(vec![4, 8], &mut rng);
    let mask = std::rc::Rc::new(w.iter().cycle().take(32).copied().collect::<Vec<_>>());
    let linear = |xv: Var| -> gmfe::Result<Var> { Ok(tape.sum_rows(tape.mul_const(xv, mask.clone())?)?) };
    let unit = tape.item(penalty_at(&tape, linear, x).unwrap());
    let (fast, time) = within(Duration::from_secs(60), t);
    outcome(
        worst_fd && unit.abs() < 1e-12 && fast,
        format!(
            "finite differences {}, unit-norm penalty {unit:e}, {time}",
            if worst_fd { "agree" } else { "disagree" }
        ),
    )
}

fn series_of(n: usize) -> RunToFailureSeries {
    let records = (0..n)
        .map(|i| VibrationRecord::new(i, vec![0.0, 1.0], vec![1.0, 0.0]).unwrap())
        .collect();
    RunToFailureSeries::new("L", 1, records).unwrap()
}

fn labels() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(17);
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = 20 + rng.below(400);
        let p = (1.0 / n as f64).max(0.001) + rng.uniform() * (0.5 - (1.0 / n as f64).max(0.001));
        let s = series_of(n);
        let hs = assign_hs_labels(&s, p).unwrap();
        let k = (n as f64 * p).floor() as usize;
        for i in 0..n {
            let expect = if i < k {
                Some(HsLabel::Healthy)
            } else if i >= n - k {
                Some(HsLabel::Unhealthy)
            } else {
                None
            };
            mismatches += usize::from(hs.labels[i] != expect);
        }
        let t_fpt = rng.below(n);
        let rul = assign_rul_labels(&s, t_fpt).unwrap();
        for i in 0..n {
            let expect = (i >= t_fpt).then(|| (n - i) as f64 / (n - t_fpt) as f64);
            mismatches += usize::from(rul.value(i) != expect);
        }
    }
    let (fast, time) = within(Duration::from_secs(10), t);
    outcome(
        mismatches == 0 && fast,
        format!("500 draws, {mismatches} mismatches, {time}"),
    )
}

fn metrics() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(23);
    let (mut worst, mut ordering) = (0.0f64, 0);
    for _ in 0..1000 {
        let n = 1 + rng.below(100);
        let act: Vec<f64> = (0..n).map(|_| 0.01 + rng.uniform()).collect();
        let pre: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let (mut sa, mut ss, mut sp) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let d = act[i] - pre[i];
            sa += d.abs();
            ss += d * d;
            sp += (d / act[i]).abs();
        }
        let nf = n as f64;
        let (m, r) = (mae(&act, &pre).unwrap(), rmse(&act, &pre).unwrap());
        worst = worst
            .max((m - sa / nf).abs())
            .max((r - (ss / nf).sqrt()).abs())
            .max((mape(&act, &pre).unwrap().value - sp / nf).abs());
        ordering += usize::from(m > r);
    }
    let (fast, time) = within(Duration::from_secs(10), t);
    outcome(
        worst <= 1e-12 && ordering == 0 && fast,
        format!("1000 pairs, max deviation {worst:e}, MAE>RMSE in {ordering}, {time}"),
    )
}

fn nsp() -> Outcome {
    let t = Instant::now();
    let cfg = NspConfig::default();
    let mut rng = Rng::new(31);
    let mut counts_ok = true;
    for _ in 0..50 {
        let n = 1 + rng.below(4096);
        let h: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
        let v: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
        counts_ok &= bin_counts(&h, &v, &cfg).iter().sum::<u64>() == n as u64;
    }
    let zeros = vec![0.0; 2048];
    let point = to_nested_clusters(&zeros, &zeros, &cfg);
    let point_ok = point.iter().filter(|&&x| x != 0.0).count() == 1 && point.iter().any(|&x| x == 1.0);
    let hash = || {
        let mut r = Rng::new(5);
        let mk = |r: &mut Rng| {
            let h: Vec<f64> = (0..2048).map(|_| r.normal()).collect();
            let v: Vec<f64> = (0..2048).map(|_| r.normal()).collect();
            to_nested_clusters(&h, &v, &cfg)
        };
        let img = merge_rgb(mk(&mut r), mk(&mut r), mk(&mut r)).unwrap();
        Sha256::digest(encode_png(&to_rgb(&img)).unwrap())
    };
    let deterministic = hash() == hash();
    let (fast, time) = within(Duration::from_secs(10), t);
    outcome(
        counts_ok && point_ok && deterministic && fast,
        format!("counts {counts_ok}, point mass {point_ok}, hashes equal {deterministic}, {time}"),
    )
}

fn shapes() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig::default();
    let mut rng = Rng::new(41);
    let mut failures = Vec::new();
    for n in [1024, 2048, 2560] {
        let x = Tensor::new(vec![1, 2, n], (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        for k in [3, 4, 5] {
            let g = cfg.generator(k);
            let p = g.init::<f64>(cfg.init_std, &mut rng).unwrap();
            let tape = Tape::new();
            let b = p.bind(&tape, false);
            match g.forward(&tape, &b, tape.constant(x.clone()), &mut Phase::Eval) {
                Ok(y) if tape.shape(y) == vec![1, 2, n] => {}
                other => failures.push(format!("G{k} N={n}: {:?}", other.map(|y| tape.shape(y)))),
            }
        }
        let d = cfg.discriminator(n, 3);
        let dp = d.init::<f64>(cfg.init_std, &mut rng).unwrap();
        let c = cfg.classifier();
        let cp = c.init::<f64>(cfg.init_std, &mut rng).unwrap();
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        match d.forward(&tape, &dp.bind(&tape, false), xv) {
            Ok((cr, lg)) if tape.shape(cr) == vec![1] && tape.shape(lg) == vec![1, 3] => {}
            _ => failures.push(format!("discriminator N={n}")),
        }
        match c.forward(&tape, &cp.bind(&tape, false), xv) {
            Ok(y) if tape.shape(y) == vec![1] => {}
            _ => failures.push(format!("classifier N={n}")),
        }
    }
    let grid = NspConfig::default().grid;
    let img = Tensor::<f64>::zeros(vec![2, 3, grid, grid]);
    let hs = cfg.cnn_hs(grid);
    let hp = hs.init::<f64>(cfg.init_std, &mut rng).unwrap();
    let tape = Tape::new();
    if !hs
        .forward(&tape, &hp.bind(&tape, false), tape.constant(img))
        .is_ok_and(|y| tape.shape(y) == vec![2])
    {
        failures.push("cnn_hs".into());
    }
    let lstm = cfg.cnn_lstm(grid, 5);
    let lp = lstm.init::<f64>(cfg.init_std, &mut rng).unwrap();
    let seq = Tensor::<f64>::zeros(vec![2, 5, 3, grid, grid]);
    if !lstm
        .forward(&tape, &lp.bind(&tape, false), tape.constant(seq))
        .is_ok_and(|y| tape.shape(y) == vec![2])
    {
        failures.push("cnn_lstm".into());
    }
    let (fast, time) = within(Duration::from_secs(60), t);
    outcome(failures.is_empty() && fast, format!("failures {failures:?}, {time}"))
}

const N_RECORDS: usize = 100;
const ONSET: f64 = 0.6;

fn fixture() -> Vec<RunToFailureSeries> {
    (0..4)
        .map(|i| {
            synthesize_bearing(&SyntheticBearing {
                bearing_id: format!("S{}", i + 1),
                condition_id: 1,
                spec: SyntheticSpec {
                    n_records: N_RECORDS,
                    n_samples: 512,
                    onset_fraction: ONSET,
                    fault_amplitude_growth: 0.3,
                    base_noise_std: 1.0,
                    fault_frequency: 16.0 + i as f64,
                    seed: 100 + i as u64,
                },
            })
            .unwrap()
        })
        .collect()
}

fn fixture_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.model.generator_base_channels = 4;
    cfg.model.discriminator_channels = vec![4, 8, 8, 8];
    cfg.model.classifier_channels = vec![4, 8];
    cfg.model.cnn_channels = vec![4, 8, 8];
    cfg.model.cnn_hidden = 16;
    cfg.model.lstm_hidden = 16;
    cfg.nsp.grid = 32;
    cfg.training.adversarial_epochs = 3;
    cfg.training.hs_epochs = 200;
    cfg.training.rul_epochs = 80;
    cfg.training.lr_cnn = 2e-3;
    cfg
}

const SEEDS: [u64; 1] = [7];

/// Both modes on the fixture, with checkpoints and reports under `dir`.
fn synthetic_run(dir: &Path) -> gmfe::Result<(EvalReport, EvalReport)> {
    let series = fixture();
    let cfg = fixture_config();
    let mut out = Vec::new();
    for mode in [EvalMode::Full, EvalMode::NoFpt] {
        let report = leave_one_out::<f64>(&series, &cfg, mode, &SEEDS, Some(dir))?;
        report.write(&dir.join(mode.as_str()))?;
        out.push(report);
    }
    let no_fpt = out.pop().expect("two reports");
    Ok((out.pop().expect("two reports"), no_fpt))
}

fn end_to_end(dir: &Path) -> Outcome {
    let t = Instant::now();
    let (full, no_fpt) = match synthetic_run(dir) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let onset = (ONSET * N_RECORDS as f64).ceil() as i64;
    let tol = (0.1 * N_RECORDS as f64) as i64;
    let fpts: Vec<(String, usize, bool)> = full
        .folds
        .iter()
        .map(|f| (f.bearing_id.clone(), f.t_fpt, f.fpt_detected))
        .collect();
    let fpt_ok = full
        .folds
        .iter()
        .all(|f| f.fpt_detected && (f.t_fpt as i64 - onset).abs() <= tol);
    let (m_full, m_no) = (full.overall.mae.mean, no_fpt.overall.mae.mean);
    let (fast, time) = within(Duration::from_secs(30 * 60), t);
    let pass = fpt_ok && m_full < 0.25 && m_full <= m_no && fast;
    outcome(
        pass,
        format!(
            "(a) T_FPT {fpts:?} vs onset {onset} ± {tol}: {}; (b) MAE {m_full:.4} < 0.25: {}; (c) full {m_full:.4} ≤ no_fpt {m_no:.4}: {}; {time}",
            fpt_ok,
            m_full < 0.25,
            m_full <= m_no
        ),
    )
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    if let Err(e) = synthetic_run(second) {
        return outcome(false, format!("rerun failed: {e}"));
    }
    let (a, b) = (files_under(first), files_under(second));
    let ckpts = a.keys().filter(|p| p.extension().is_some_and(|e| e == "ckpt")).count();
    let reports = a
        .keys()
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("report")))
        .count();
    let differing: Vec<&PathBuf> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let same_set = a.keys().eq(b.keys());
    outcome(
        same_set && differing.is_empty() && ckpts > 0 && reports == 4,
        format!("{ckpts} checkpoints and {reports} report files compared; differing {differing:?}"),
    )
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn femto(root: &Path) -> Outcome {
    let mut dirs: Vec<PathBuf> = match std::fs::read_dir(root) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with("Bearing1_"))
            })
            .collect(),
        Err(e) => return outcome(false, format!("{}: {e}", root.display())),
    };
    dirs.sort();
    if dirs.len() < 3 {
        return outcome(false, format!("need ≥ 3 Bearing1_* folders under {}", root.display()));
    }
    let series: gmfe::Result<Vec<_>> = dirs.iter().map(|d| load_femto(d)).collect();
    let series = match series {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("load failed: {e}")),
    };
    let (test, train) = series.split_last().expect("≥ 3 series");
    let mut cfg = PipelineConfig::default();
    cfg.training.adversarial_epochs = 1;
    cfg.training.hs_epochs = 20;
    cfg.training.rul_epochs = 20;
    cfg.training.lr_cnn = 1e-3;
    match run_fold::<f64>(train, test, &cfg, EvalMode::Full, (0, 1), None) {
        Ok(f) => {
            let rho = spearman(&f.actual, &f.predicted);
            outcome(
                rho > 0.5,
                format!(
                    "{}: T_FPT {}, Spearman {rho:.3}, MAE {:.4}",
                    test.bearing_id, f.t_fpt, f.mae
                ),
            )
        }
        Err(e) => outcome(false, format!("fold failed ({}): {e}", e.kind())),
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let first = dir.path().join("run1");
    let second = dir.path().join("run2");
    let gating: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("1 gradient correctness", Box::new(gradients)),
        ("2 second-order correctness", Box::new(second_order)),
        ("3 labeling oracles", Box::new(labels)),
        ("4 metric oracles", Box::new(metrics)),
        ("5 NSP properties", Box::new(nsp)),
        ("6 shape invariants", Box::new(shapes)),
        ("7 end-to-end synthetic run", Box::new(|| end_to_end(&first))),
        ("8 determinism", Box::new(|| determinism(&first, &second))),
    ];
    let mut failed = 0;
    for (name, check) in gating {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    match std::env::var_os("GMFE_FEMTO_DIR") {
        Some(root) => {
            let o = femto(Path::new(&root));
            println!(
                "criterion 9 FEMTO fold (optional): {} ({})",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
        }
        None => println!("criterion 9 FEMTO fold (optional): SKIPPED (GMFE_FEMTO_DIR not set)"),
    }
    if failed > 0 {
        eprintln!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
