use std::rc::Rc;

use diffcore::{Rng, Tape, Tensor, Var};
use gmfe::losses::*;
use gmfe::models::ModelConfig;
use proptest::prelude::*;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// `x ↦ x·w` per row, as a tape closure.
fn linear_critic<'a>(tape: &'a Tape<f64>, w: &[f64]) -> impl Fn(Var) -> gmfe::Result<Var> + 'a {
    let w = w.to_vec();
    move |x| {
        let b = tape.shape(x)[0];
        let mask = Rc::new(w.iter().cycle().take(b * w.len()).copied().collect::<Vec<_>>());
        Ok(tape.sum_rows(tape.mul_const(x, mask)?)?)
    }
}

#[test]
fn linear_unit_norm_critic_has_zero_penalty() {
    let mut rng = Rng::new(1);
    let raw: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    for scale in [1.0, 3.0] {
        let w: Vec<f64> = raw.iter().map(|v| scale * v / norm).collect();
        let tape = Tape::new();
        let real = random(&[4, 6], &mut rng);
        let fake = random(&[4, 6], &mut rng);
        let gp = gradient_penalty(&tape, linear_critic(&tape, &w), &real, &fake, &mut rng).unwrap();
        let expected = (scale - 1.0) * (scale - 1.0);
        assert!(
            (tape.item(gp) - expected).abs() < 1e-12,
            "scale {scale}: {}",
            tape.item(gp)
        );
    }
}

#[test]
fn penalty_grows_with_critic_scale_above_unit_norm() {
    let w0 = [0.6, 0.8];
    let real = Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
    let fake = Tensor::new(vec![2, 2], vec![0.0, 1.0, 3.0, -2.0]).unwrap();
    let mut last = -1.0;
    for s in [1.0, 1.5, 2.0, 4.0, 10.0] {
        let w: Vec<f64> = w0.iter().map(|v| v * s).collect();
        let tape = Tape::new();
        let gp = gradient_penalty(&tape, linear_critic(&tape, &w), &real, &fake, &mut Rng::new(0)).unwrap();
        let v = tape.item(gp);
        assert!(v > last, "scale {s}: {v} ≤ {last}");
        last = v;
    }
}

struct TwoLayer {
    d: usize,
    h: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    v: Vec<f64>,
}

impl TwoLayer {
    fn random(d: usize, h: usize, rng: &mut Rng) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| 0.7 * rng.normal()).collect::<Vec<_>>();
        Self {
            d,
            h,
            w: draw(d * h),
            b: draw(h),
            v: draw(h),
        }
    }

    /// Penalty at `x` computed from the closed-form input gradient
    /// `Wᵀ(v ⊙ (1 − tanh²(Wx + b)))`.
    fn penalty_oracle(&self, x: &[f64]) -> f64 {
        let rows = x.len() / self.d;
        let mut total = 0.0;
        for r in 0..rows {
            let xr = &x[r * self.d..(r + 1) * self.d];
            let mut g = vec![0.0; self.d];
            for j in 0..self.h {
                let z: f64 = (0..self.d).map(|i| xr[i] * self.w[i * self.h + j]).sum::<f64>() + self.b[j];
                let s = self.v[j] * (1.0 - z.tanh().powi(2));
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi += self.w[i * self.h + j] * s;
                }
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += (norm - 1.0).powi(2);
        }
        total / rows as f64
    }

    fn flat(&self) -> Vec<f64> {
        [self.w.clone(), self.b.clone(), self.v.clone()].concat()
    }

    fn from_flat(&self, p: &[f64]) -> Self {
        let (w, rest) = p.split_at(self.w.len());
        let (b, v) = rest.split_at(self.b.len());
        Self {
            d: self.d,
            h: self.h,
            w: w.to_vec(),
            b: b.to_vec(),
            v: v.to_vec(),
        }
    }
}

#[test]
fn penalty_parameter_gradient_matches_finite_differences() {
    let mut rng = Rng::new(42);
    for trial in 0..5 {
        let net = TwoLayer::random(5, 4, &mut rng);
        let x = random(&[3, 5], &mut rng);
        let tape = Tape::new();
        let w = tape.leaf(Tensor::new(vec![5, 4], net.w.clone()).unwrap(), true);
        let b = tape.leaf(Tensor::new(vec![4], net.b.clone()).unwrap(), true);
        let v = tape.leaf(Tensor::new(vec![4, 1], net.v.clone()).unwrap(), true);
        let zero = tape.constant(Tensor::zeros(vec![1]));
        let critic = |x: Var| -> gmfe::Result<Var> {
            let hdn = tape.tanh(tape.linear(x, w, b)?)?;
            let rows = tape.shape(x)[0];
            Ok(tape.reshape(tape.linear(hdn, v, zero)?, &[rows])?)
        };
        let gp = penalty_at(&tape, critic, x.clone()).unwrap();
        assert!((tape.item(gp) - net.penalty_oracle(x.data())).abs() < 1e-12);
        let grads = tape.grad_of(gp, &[w, b, v], false).unwrap();
        let analytic: Vec<f64> = grads
            .grads
            .iter()
            .flat_map(|g| tape.value(*g).data().to_vec())
            .collect();
        let theta = net.flat();
        let h = 1e-6;
        for (k, &a) in analytic.iter().enumerate() {
            let mut up = theta.clone();
            up[k] += h;
            let mut dn = theta.clone();
            dn[k] -= h;
            let fd =
                (net.from_flat(&up).penalty_oracle(x.data()) - net.from_flat(&dn).penalty_oracle(x.data())) / (2.0 * h);
            assert!(
                (a - fd).abs() <= 1e-3 * fd.abs().max(a.abs()) + 1e-7,
                "trial {trial} θ[{k}]: {a} vs {fd}"
            );
        }
    }
}

#[test]
fn penalty_is_symmetric_under_swapping_real_and_fake() {
    let net = TwoLayer::random(3, 3, &mut Rng::new(7));
    let mut rng = Rng::new(8);
    let real = random(&[1, 3], &mut rng);
    let fake = random(&[1, 3], &mut rng);
    let draws = 10_000;
    let sample = |a: &Tensor<f64>, b: &Tensor<f64>, rng: &mut Rng| -> Vec<f64> {
        (0..draws)
            .map(|_| {
                let e = rng.uniform();
                let x = interpolate(a, b, &[e]).unwrap();
                net.penalty_oracle(x.data())
            })
            .collect()
    };
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let (m1, se1) = stats(&sample(&real, &fake, &mut Rng::new(100)));
    let (m2, se2) = stats(&sample(&fake, &real, &mut Rng::new(200)));
    assert!((m1 - m2).abs() <= 3.0 * (se1 + se2).sqrt(), "{m1} vs {m2}");
}

#[test]
fn interpolate_swaps_exactly() {
    let mut rng = Rng::new(3);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[3, 4], &mut rng);
    let e = [0.0, 0.25, 1.0];
    let x = interpolate(&a, &b, &e).unwrap();
    let y = interpolate(&b, &a, &e.map(|v| 1.0 - v)).unwrap();
    for (p, q) in x.data().iter().zip(y.data()) {
        assert!((p - q).abs() < 1e-14);
    }
    assert_eq!(&x.data()[..4], &b.data()[..4]);
    assert_eq!(&x.data()[8..], &a.data()[8..]);
    assert!(interpolate(&a, &random(&[2, 4], &mut rng), &e).is_err());
}

fn small_disc(n: usize, domains: usize) -> gmfe::models::Discriminator {
    ModelConfig {
        discriminator_channels: vec![3, 4],
        ..ModelConfig::default()
    }
    .discriminator(n, domains)
}

#[test]
fn constant_critic_gives_alpha() {
    let d = small_disc(32, 3);
    let p0 = d.init::<f64>(0.1, &mut Rng::new(0)).unwrap();
    let mut p = diffcore::ParamStore::new();
    for (k, v) in p0.iter() {
        p.insert_zeros(k, v.shape());
    }
    let w = LossWeights {
        lambda_d: 0.0,
        ..LossWeights::default()
    };
    let mut rng = Rng::new(1);
    let real = random(&[4, 2, 32], &mut rng);
    let fake = random(&[4, 2, 32], &mut rng);
    let tape = Tape::new();
    let b = p.bind(&tape, true);
    let l = discriminator_loss(&tape, &d, &b, &real, &fake, &[0, 1, 2, 0], &w, &mut rng).unwrap();
    assert_eq!(tape.item(l.total), w.alpha);
    assert_eq!(tape.item(l.domain), 3f64.ln());
}

#[test]
fn wasserstein_terms_cancel_when_real_equals_fake() {
    let d = small_disc(32, 2);
    let mut rng = Rng::new(2);
    let p = d.init::<f64>(0.3, &mut rng).unwrap();
    let x = random(&[3, 2, 32], &mut rng);
    let tape = Tape::new();
    let b = p.bind(&tape, true);
    let l = discriminator_loss(&tape, &d, &b, &x, &x, &[0, 1, 1], &LossWeights::default(), &mut rng).unwrap();
    assert_eq!(tape.item(l.wasserstein), 0.0);
}

/// Cross-entropy from raw logits, computed directly.
fn ce_oracle(logits: &[f64], c: usize, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits[r * c..(r + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total / targets.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn discriminator_loss_matches_term_oracle() {
    let d = small_disc(32, 3);
    let mut rng = Rng::new(5);
    let p = d.init::<f64>(0.3, &mut rng).unwrap();
    let real = random(&[4, 2, 32], &mut rng);
    let fake = random(&[4, 2, 32], &mut rng);
    let domains = [2, 0, 1, 2];
    let w = LossWeights {
        alpha: 7.0,
        lambda_d: 0.3,
        ..LossWeights::default()
    };
    let tape = Tape::new();
    let b = p.bind(&tape, true);
    let l = discriminator_loss(&tape, &d, &b, &real, &fake, &domains, &w, &mut Rng::new(9)).unwrap();

    let oracle = Tape::new();
    let ob = p.bind(&oracle, false);
    let (cr, logits) = d.forward(&oracle, &ob, oracle.constant(real.clone())).unwrap();
    let cf = d.critic(&oracle, &ob, oracle.constant(fake.clone())).unwrap();
    let mut erng = Rng::new(9);
    let eps: Vec<f64> = (0..4).map(|_| erng.uniform()).collect();
    let gp = penalty_at(
        &oracle,
        |x| d.critic(&oracle, &ob, x),
        interpolate(&real, &fake, &eps).unwrap(),
    )
    .unwrap();
    let wass = mean(oracle.value(cf).data()) - mean(oracle.value(cr).data());
    let ce = ce_oracle(oracle.value(logits).data(), 3, &domains);
    let expected = wass + w.alpha * oracle.item(gp) + w.lambda_d * ce;
    assert!(
        (tape.item(l.total) - expected).abs() < 1e-12,
        "{} vs {expected}",
        tape.item(l.total)
    );
    assert!((tape.item(l.domain) - ce).abs() < 1e-12);
}

fn bce_oracle(p: &[f64], y: &[f64]) -> f64 {
    let terms: Vec<f64> = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .collect();
    mean(&terms)
}

fn rul_oracle(p: &[f64], y: &[f64], w: &LossWeights) -> f64 {
    let n = p.len() as f64;
    let mae = p.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    let mape = p
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs() / b.max(w.eps_mape))
        .sum::<f64>()
        / n;
    w.lambda_mae * mae + w.lambda_rmse * rmse + w.lambda_mape * mape
}

fn eval_on<F: Fn(&Tape<f64>, Var) -> Var>(pred: &[f64], f: F) -> f64 {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![pred.len()], pred.to_vec()).unwrap());
    tape.item(f(&tape, x))
}

#[test]
fn bce_examples() {
    let v = eval_on(&[0.5], |t, x| bce(t, x, &[1.0]).unwrap());
    assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    let v = eval_on(&[0.0, 1.0], |t, x| bce(t, x, &[0.0, 1.0]).unwrap());
    assert!(v <= 1e-6);
    let v = eval_on(&[0.0], |t, x| bce(t, x, &[1.0]).unwrap());
    assert!(v.is_finite() && (v + BCE_CLAMP.ln()).abs() < 1e-9);
}

#[test]
fn rul_loss_examples() {
    let w = LossWeights::default();
    let v = eval_on(&[0.4], |t, x| rul_loss(t, x, &[0.5], &w).unwrap());
    assert!((v - 19.0).abs() < 1e-12, "{v}");
    let y = [0.9, 0.5, 0.0];
    let v = eval_on(&y, |t, x| rul_loss(t, x, &y, &w).unwrap());
    assert_eq!(v, 0.0);
}

proptest! {
    #[test]
    fn bce_matches_formula(pairs in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..20)) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let y: Vec<f64> = pairs.iter().map(|x| f64::from(u8::from(x.1))).collect();
        let v = eval_on(&p, |t, x| bce(t, x, &y).unwrap());
        prop_assert!((v - bce_oracle(&p, &y)).abs() < 1e-12);
    }

    #[test]
    fn rul_loss_matches_metric_oracle(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..20)) {
        let w = LossWeights::default();
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let y: Vec<f64> = pairs.iter().map(|x| x.1).collect();
        let v = eval_on(&p, |t, x| rul_loss(t, x, &y, &w).unwrap());
        let o = rul_oracle(&p, &y, &w);
        prop_assert!((v - o).abs() <= 1e-12 * o.max(1.0));
    }
}

#[test]
fn cross_entropy_matches_oracle_and_checks_targets() {
    let mut rng = Rng::new(4);
    let logits = random(&[5, 4], &mut rng);
    let t = [0, 3, 1, 1, 2];
    let tape = Tape::new();
    let l = tape.constant(logits.clone());
    let ce = cross_entropy(&tape, l, &t).unwrap();
    assert!((tape.item(ce) - ce_oracle(logits.data(), 4, &t)).abs() < 1e-12);
    assert!(cross_entropy(&tape, l, &[0, 4, 1, 1, 2]).is_err());
    assert!(cross_entropy(&tape, l, &[0]).is_err());
}

fn mean_classifier(tape: &Tape<f64>) -> impl Fn(Var) -> gmfe::Result<Var> + '_ {
    |x| {
        let b = tape.shape(x)[0];
        let flat = tape.reshape(x, &[b, tape.value(x).len() / b])?;
        let m = tape.scale(tape.sum_rows(flat)?, 1.0 / (tape.value(x).len() / b) as f64)?;
        Ok(tape.sigmoid(m)?)
    }
}

#[test]
fn generator_loss_reduces_to_critic_when_weights_are_zero() {
    let d = small_disc(32, 2);
    let mut rng = Rng::new(6);
    let p = d.init::<f64>(0.3, &mut rng).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, true);
    let fake = tape.leaf(random(&[3, 2, 32], &mut rng), true);
    let labelled = Labelled {
        rows: vec![0, 2],
        targets: vec![1.0, 0.0],
    };
    let w = LossWeights {
        lambda_d: 0.0,
        lambda_g: 0.0,
        ..LossWeights::default()
    };
    for sign in [CriticSign::Plus, CriticSign::Minus] {
        let l = generator_loss(
            &tape,
            &d,
            &b,
            fake,
            &[0, 1, 0],
            &labelled,
            mean_classifier(&tape),
            Stage::Hs,
            &w,
            sign,
        )
        .unwrap();
        let critic = mean(tape.value(d.critic(&tape, &b, fake).unwrap()).data());
        assert!((tape.item(l.total) - sign.value() * critic).abs() < 1e-15);
    }
}

#[test]
fn generator_loss_matches_term_oracle() {
    let d = small_disc(32, 3);
    let mut rng = Rng::new(7);
    let p = d.init::<f64>(0.3, &mut rng).unwrap();
    let x = random(&[4, 2, 32], &mut rng);
    let domains = [1, 2, 0, 1];
    let w = LossWeights {
        lambda_d: 0.7,
        lambda_g: 3.0,
        ..LossWeights::default()
    };
    for (stage, targets) in [(Stage::Hs, vec![1.0, 0.0]), (Stage::Rul, vec![0.8, 0.3])] {
        let labelled = Labelled {
            rows: vec![3, 1],
            targets: targets.clone(),
        };
        let tape = Tape::new();
        let b = p.bind(&tape, true);
        let fake = tape.leaf(x.clone(), true);
        let l = generator_loss(
            &tape,
            &d,
            &b,
            fake,
            &domains,
            &labelled,
            mean_classifier(&tape),
            stage,
            &w,
            CriticSign::Plus,
        )
        .unwrap();

        let (c, logits) = d.forward(&tape, &b, fake).unwrap();
        let critic = mean(tape.value(c).data());
        let ce = ce_oracle(tape.value(logits).data(), 3, &domains);
        let row_mean = |r: usize| mean(&x.data()[r * 64..(r + 1) * 64]);
        let pred: Vec<f64> = labelled
            .rows
            .iter()
            .map(|&r| 1.0 / (1.0 + (-row_mean(r)).exp()))
            .collect();
        let lc = match stage {
            Stage::Hs => bce_oracle(&pred, &targets),
            Stage::Rul => rul_oracle(&pred, &targets, &w),
        };
        let expected = critic + w.lambda_g * lc - w.lambda_d * ce;
        assert!(
            (tape.item(l.total) - expected).abs() < 1e-12,
            "{stage:?}: {} vs {expected}",
            tape.item(l.total)
        );
        assert!((tape.item(l.classifier.unwrap()) - lc).abs() < 1e-12);
    }
}

#[test]
fn unlabelled_batch_skips_classifier_term() {
    let d = small_disc(32, 2);
    let mut rng = Rng::new(8);
    let p = d.init::<f64>(0.3, &mut rng).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, true);
    let fake = tape.leaf(random(&[2, 2, 32], &mut rng), true);
    let l = generator_loss(
        &tape,
        &d,
        &b,
        fake,
        &[0, 1],
        &Labelled::default(),
        mean_classifier(&tape),
        Stage::Rul,
        &LossWeights::default(),
        CriticSign::Plus,
    )
    .unwrap();
    assert!(l.classifier.is_none());
    assert!(tape.item(l.total).is_finite());
}

#[test]
fn losses_have_finite_gradients_across_seeds() {
    let d = small_disc(32, 2);
    for seed in 0..100 {
        let mut rng = Rng::new(seed);
        let p = d.init::<f64>(0.5, &mut rng).unwrap();
        let real = random(&[3, 2, 32], &mut rng);
        let fake_t = random(&[3, 2, 32], &mut rng);
        let tape = Tape::new();
        let b = p.bind(&tape, true);
        let ld = discriminator_loss(
            &tape,
            &d,
            &b,
            &real,
            &fake_t,
            &[0, 1, 1],
            &LossWeights::default(),
            &mut rng,
        )
        .unwrap();
        for (_, g) in b.gradients(&tape, ld.total).unwrap() {
            assert!(g.is_finite(), "seed {seed}: discriminator gradient");
        }
        let fake = tape.leaf(fake_t, true);
        let labelled = Labelled {
            rows: vec![1],
            targets: vec![0.5],
        };
        let lg = generator_loss(
            &tape,
            &d,
            &b,
            fake,
            &[1, 0, 0],
            &labelled,
            mean_classifier(&tape),
            Stage::Rul,
            &LossWeights::default(),
            CriticSign::Plus,
        )
        .unwrap();
        let g = tape.grad_of(lg.total, &[fake], false).unwrap();
        assert!(tape.value(g.grads[0]).is_finite(), "seed {seed}: generator gradient");
    }
}

#[test]
fn loss_weight_validation() {
    assert!(LossWeights::default().validate().is_ok());
    assert!(LossWeights {
        alpha: -1.0,
        ..LossWeights::default()
    }
    .validate()
    .is_err());
    assert!(LossWeights {
        lambda_g: f64::NAN,
        ..LossWeights::default()
    }
    .validate()
    .is_err());
    assert!(LossWeights {
        eps_mape: 0.0,
        ..LossWeights::default()
    }
    .validate()
    .is_err());
}
