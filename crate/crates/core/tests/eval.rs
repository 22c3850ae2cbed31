use diffcore::Rng;
use gmfe::eval::*;
use gmfe::training::PipelineConfig;
use proptest::prelude::*;

fn mae_oracle(a: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += if a[i] > p[i] { a[i] - p[i] } else { p[i] - a[i] };
    }
    s / a.len() as f64
}

fn rmse_oracle(a: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - p[i];
        s += d * d;
    }
    (s / a.len() as f64).sqrt()
}

fn mape_oracle(a: &[f64], p: &[f64]) -> (f64, usize) {
    let (mut s, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for i in 0..a.len() {
        if a[i] == 0.0 {
            skipped += 1;
        } else {
            s += ((a[i] - p[i]) / a[i]).abs();
            n += 1;
        }
    }
    (s / n as f64, skipped)
}

#[test]
fn metric_examples() {
    let act = [1.0, 0.5];
    let pre = [0.8, 0.5];
    assert!((mae(&act, &pre).unwrap() - 0.1).abs() < 1e-15);
    assert!((rmse(&act, &pre).unwrap() - 0.02f64.sqrt()).abs() < 1e-15);
    assert!((mape(&act, &pre).unwrap().value - 0.1).abs() < 1e-15);
    assert_eq!(mae(&act, &act).unwrap(), 0.0);
    assert_eq!(rmse(&act, &act).unwrap(), 0.0);
    assert_eq!(mape(&act, &act).unwrap().value, 0.0);
}

#[test]
fn metric_errors_and_exclusions() {
    assert!(mae(&[], &[]).is_err());
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    assert!(mape(&[0.0, 0.0], &[0.1, 0.2]).is_err());
    let m = mape(&[1.0, 0.0, 0.5], &[0.5, 0.3, 0.5]).unwrap();
    assert_eq!(m.excluded, 1);
    assert!((m.value - 0.25).abs() < 1e-15);
}

#[test]
fn metrics_match_oracles_over_random_pairs() {
    let mut rng = Rng::new(2024);
    for draw in 0..1000 {
        let n = 1 + rng.below(50);
        let act: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < 0.1 { 0.0 } else { rng.uniform() })
            .collect();
        let pre: Vec<f64> = (0..n).map(|_| rng.uniform() * 1.2 - 0.1).collect();
        let (m, r) = (mae(&act, &pre).unwrap(), rmse(&act, &pre).unwrap());
        assert!((m - mae_oracle(&act, &pre)).abs() < 1e-12, "draw {draw}");
        assert!((r - rmse_oracle(&act, &pre)).abs() < 1e-12, "draw {draw}");
        assert!(m <= r, "draw {draw}: MAE {m} > RMSE {r}");
        if act.iter().any(|&a| a != 0.0) {
            let (v, skipped) = mape_oracle(&act, &pre);
            let got = mape(&act, &pre).unwrap();
            assert!((got.value - v).abs() < 1e-12 * v.max(1.0), "draw {draw}");
            assert_eq!(got.excluded, skipped);
        }
    }
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(
        pairs in prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 2..30),
        seed in any::<u64>(),
    ) {
        let act: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let pre: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mut order: Vec<usize> = (0..act.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let a2: Vec<f64> = order.iter().map(|&i| act[i]).collect();
        let p2: Vec<f64> = order.iter().map(|&i| pre[i]).collect();
        prop_assert!((mae(&act, &pre).unwrap() - mae(&a2, &p2).unwrap()).abs() < 1e-12);
        prop_assert!((rmse(&act, &pre).unwrap() - rmse(&a2, &p2).unwrap()).abs() < 1e-12);
        prop_assert!((mape(&act, &pre).unwrap().value - mape(&a2, &p2).unwrap().value).abs() < 1e-12);
    }
}

fn fold(bearing: &str, seed: u64, trial: usize, mae_v: f64) -> FoldReport {
    let actual = vec![1.0, 0.5, 0.0];
    let predicted: Vec<f64> = actual.iter().map(|a| a + mae_v).collect();
    FoldReport {
        bearing_id: bearing.into(),
        trial,
        seed,
        mode: EvalMode::Full,
        mae: mae(&actual, &predicted).unwrap(),
        rmse: rmse(&actual, &predicted).unwrap(),
        mape: mape(&actual, &predicted).unwrap().value,
        mape_excluded: 1,
        t_fpt: 7,
        fpt_detected: true,
        train_fpts: vec![("B2".into(), 5, true), ("B3".into(), 95, false)],
        hs_scores: vec![0.1, 1.0 / 3.0],
        actual,
        predicted,
    }
}

#[test]
fn mean_std_uses_sample_deviation() {
    let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m.mean, 2.5);
    assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(MeanStd::of(&[0.3]).std, 0.0);
}

#[test]
fn report_round_trips_through_json() {
    let folds = vec![
        fold("B1", 1, 0, 0.1),
        fold("B1", 2, 1, 0.3),
        fold("B2", 1, 0, 0.2 / 3.0),
    ];
    let r = EvalReport::assemble(EvalMode::Full, &[1, 2], PipelineConfig::default(), folds).unwrap();
    let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.per_bearing.len(), 2);
    assert!((r.per_bearing[0].mae.mean - 0.2).abs() < 1e-12);
}

#[test]
fn aggregate_ignores_trial_order() {
    let folds = vec![fold("B1", 1, 0, 0.1), fold("B1", 2, 1, 0.3), fold("B1", 3, 2, 0.25)];
    let mut rev = folds.clone();
    rev.reverse();
    let a = EvalReport::assemble(EvalMode::Full, &[1, 2, 3], PipelineConfig::default(), folds).unwrap();
    let b = EvalReport::assemble(EvalMode::Full, &[3, 2, 1], PipelineConfig::default(), rev).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_csv_and_files() {
    let mut undetected = fold("B2", 4, 0, 0.2);
    undetected.fpt_detected = false;
    let r = EvalReport::assemble(
        EvalMode::Full,
        &[4],
        PipelineConfig::default(),
        vec![fold("B1", 4, 0, 0.1), undetected],
    )
    .unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bearing,trial,mode,MAE,RMSE,MAPE,T_FPT");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("B1,0,full,"));
    assert!(lines[1].ends_with(",7"));
    assert!(lines[2].ends_with(",none"));
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(EvalReport::from_json(&json).unwrap(), r);
    assert_eq!(std::fs::read_to_string(dir.path().join("report.csv")).unwrap(), csv);
}

#[test]
fn assemble_rejects_empty_and_inconsistent_folds() {
    assert!(EvalReport::assemble(EvalMode::Full, &[1], PipelineConfig::default(), vec![]).is_err());
    let mut bad = fold("B1", 1, 0, 0.1);
    bad.rmse = bad.mae / 2.0;
    assert!(EvalReport::assemble(EvalMode::Full, &[1], PipelineConfig::default(), vec![bad]).is_err());
}

#[test]
fn modes_parse() {
    for m in [EvalMode::Full, EvalMode::NoFpt, EvalMode::OneDGan] {
        assert_eq!(m.as_str().parse::<EvalMode>().unwrap(), m);
    }
    assert!("fast".parse::<EvalMode>().is_err());
}

#[test]
fn fallback_fpt_is_first_unhealthy_index() {
    assert_eq!(fallback_fpt(100, 0.05), 95);
    assert_eq!(fallback_fpt(30, 0.1), 27);
}
