//! Randomised gradient checks for every tape operation.
//!
//! Each case draws fresh small shapes and values per draw. Inputs to
//! piecewise-linear operations are drawn away from their kinks (and with
//! distinct values inside pooling windows) so that the finite-difference
//! step never crosses one.

use crate::error::Result;
use crate::gradcheck::{check, GradCheckReport, Tolerance};
use crate::ops::nn::LstmWeights;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

type Build = Box<dyn Fn(&Tape<f64>, &[Var]) -> Result<Var>>;

pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    pub f: Build,
}

fn between(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn uniform(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
}

/// Magnitudes in `[0.1, 1)` with random sign.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = 0.1 + 0.9 * rng.uniform();
            if rng.uniform() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| 0.5 + rng.uniform()).collect()).unwrap()
}

/// A shuffled grid with spacing 0.05: all values distinct by far more than
/// the finite-difference step.
fn distinct(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    rng.shuffle(&mut data);
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn case(inputs: Vec<Tensor<f64>>, f: impl Fn(&Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Case {
    Case { inputs, f: Box::new(f) }
}

/// Names of all cases in [`draw`].
pub const OPS: &[&str] = &[
    "conv1d",
    "conv1d_back_input",
    "conv1d_back_weight",
    "conv2d",
    "conv2d_back_input",
    "conv2d_back_weight",
    "upsample1d",
    "max_pool1d",
    "max_pool2d",
    "linear",
    "matmul",
    "transpose",
    "leaky_relu",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "recip",
    "abs",
    "clamp",
    "dropout",
    "concat",
    "add",
    "sub",
    "mul",
    "affine",
    "mean",
    "sum",
    "l2_norm",
    "sum_rows",
    "expand_rows",
    "reduce_channels",
    "expand_channels",
    "mean_last",
    "reshape",
    "narrow",
    "reflect_pad1d",
    "gather",
    "scatter",
    "log_softmax",
    "lstm_cell",
];

/// A random instance of operation `name`.
pub fn draw(name: &str, rng: &mut Rng) -> Case {
    let b = between(rng, 1, 3);
    match name {
        "conv1d" => {
            let (ci, co, k) = (between(rng, 1, 3), between(rng, 1, 3), between(rng, 1, 5));
            let l = between(rng, k.max(2), 9);
            let pad = rng.below(k / 2 + 1);
            case(
                vec![uniform(rng, &[b, ci, l]), uniform(rng, &[co, ci, k])],
                move |t, v| t.conv1d(v[0], v[1], pad),
            )
        }
        "conv1d_back_input" => {
            let (ci, co, k) = (between(rng, 1, 3), between(rng, 1, 3), between(rng, 1, 5));
            let l = between(rng, k.max(2), 9);
            let pad = rng.below(k / 2 + 1);
            let lo = l + 2 * pad - k + 1;
            case(
                vec![uniform(rng, &[b, co, lo]), uniform(rng, &[co, ci, k])],
                move |t, v| t.conv1d_back_input(v[0], v[1], pad, l),
            )
        }
        "conv1d_back_weight" => {
            let (ci, co, k) = (between(rng, 1, 3), between(rng, 1, 3), between(rng, 1, 5));
            let l = between(rng, k.max(2), 9);
            let pad = rng.below(k / 2 + 1);
            let lo = l + 2 * pad - k + 1;
            case(
                vec![uniform(rng, &[b, ci, l]), uniform(rng, &[b, co, lo])],
                move |t, v| t.conv1d_back_weight(v[0], v[1], pad, k),
            )
        }
        "conv2d" => {
            let (ci, co, k) = (between(rng, 1, 2), between(rng, 1, 2), between(rng, 1, 3));
            let (h, w) = (between(rng, k.max(2), 5), between(rng, k.max(2), 5));
            let pad = rng.below(k / 2 + 1);
            case(
                vec![uniform(rng, &[b, ci, h, w]), uniform(rng, &[co, ci, k, k])],
                move |t, v| t.conv2d(v[0], v[1], pad),
            )
        }
        "conv2d_back_input" => {
            let (ci, co, k) = (between(rng, 1, 2), between(rng, 1, 2), between(rng, 1, 3));
            let (h, w) = (between(rng, k.max(2), 5), between(rng, k.max(2), 5));
            let pad = rng.below(k / 2 + 1);
            let (ho, wo) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
            case(
                vec![uniform(rng, &[b, co, ho, wo]), uniform(rng, &[co, ci, k, k])],
                move |t, v| t.conv2d_back_input(v[0], v[1], pad, (h, w)),
            )
        }
        "conv2d_back_weight" => {
            let (ci, co, k) = (between(rng, 1, 2), between(rng, 1, 2), between(rng, 1, 3));
            let (h, w) = (between(rng, k.max(2), 5), between(rng, k.max(2), 5));
            let pad = rng.below(k / 2 + 1);
            let (ho, wo) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
            case(
                vec![uniform(rng, &[b, ci, h, w]), uniform(rng, &[b, co, ho, wo])],
                move |t, v| t.conv2d_back_weight(v[0], v[1], pad, k),
            )
        }
        "upsample1d" => {
            let (c, l, f) = (between(rng, 1, 3), between(rng, 1, 6), between(rng, 1, 3));
            case(vec![uniform(rng, &[b, c, l])], move |t, v| t.upsample1d(v[0], f))
        }
        "max_pool1d" => {
            let (c, size) = (between(rng, 1, 3), between(rng, 1, 3));
            let l = size * between(rng, 1, 4) + rng.below(size);
            case(vec![distinct(rng, &[b, c, l])], move |t, v| t.max_pool1d(v[0], size))
        }
        "max_pool2d" => {
            let (c, size) = (between(rng, 1, 2), between(rng, 1, 2));
            let (h, w) = (size * between(rng, 1, 3), size * between(rng, 1, 3));
            case(vec![distinct(rng, &[b, c, h, w])], move |t, v| t.max_pool2d(v[0], size))
        }
        "linear" => {
            let (i, o) = (between(rng, 1, 5), between(rng, 1, 5));
            case(
                vec![uniform(rng, &[b, i]), uniform(rng, &[i, o]), uniform(rng, &[o])],
                |t, v| t.linear(v[0], v[1], v[2]),
            )
        }
        "matmul" => {
            let (m, k, n) = (between(rng, 1, 4), between(rng, 1, 4), between(rng, 1, 4));
            case(vec![uniform(rng, &[m, k]), uniform(rng, &[k, n])], |t, v| {
                t.matmul(v[0], v[1])
            })
        }
        "transpose" => {
            let (r, c) = (between(rng, 1, 4), between(rng, 1, 4));
            case(vec![uniform(rng, &[r, c])], |t, v| t.transpose(v[0]))
        }
        "leaky_relu" => {
            let n = between(rng, 1, 12);
            case(vec![away_from_zero(rng, &[b, n])], |t, v| t.leaky_relu(v[0], 0.2))
        }
        "relu" => {
            let n = between(rng, 1, 12);
            case(vec![away_from_zero(rng, &[b, n])], |t, v| t.relu(v[0]))
        }
        "sigmoid" => {
            let n = between(rng, 1, 12);
            case(vec![uniform(rng, &[b, n])], |t, v| t.sigmoid(v[0]))
        }
        "tanh" => {
            let n = between(rng, 1, 12);
            case(vec![uniform(rng, &[b, n])], |t, v| t.tanh(v[0]))
        }
        "exp" => {
            let n = between(rng, 1, 12);
            case(vec![uniform(rng, &[b, n])], |t, v| t.exp(v[0]))
        }
        "log" => {
            let n = between(rng, 1, 12);
            case(vec![positive(rng, &[b, n])], |t, v| t.log(v[0]))
        }
        "sqrt" => {
            let n = between(rng, 1, 12);
            case(vec![positive(rng, &[b, n])], |t, v| t.sqrt(v[0]))
        }
        "recip" => {
            let n = between(rng, 1, 12);
            case(vec![away_from_zero(rng, &[b, n])], |t, v| t.recip(v[0]))
        }
        "abs" => {
            let n = between(rng, 1, 12);
            case(vec![away_from_zero(rng, &[b, n])], |t, v| t.abs(v[0]))
        }
        "clamp" => {
            let n = between(rng, 1, 12);
            // keep values clear of the kinks at ±0.5
            let x = away_from_zero(rng, &[b, n]);
            let x = Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .map(|e| if (e.abs() - 0.5).abs() < 0.01 { e * 1.1 } else { *e })
                    .collect(),
            )
            .unwrap();
            case(vec![x], |t, v| t.clamp(v[0], -0.5, 0.5))
        }
        "dropout" => {
            let n = between(rng, 1, 12);
            let seed = rng.below(1 << 30) as u64;
            case(vec![uniform(rng, &[b, n])], move |t, v| {
                t.dropout(v[0], 0.5, true, &mut Rng::new(seed))
            })
        }
        "concat" => {
            let (c1, c2, l) = (between(rng, 1, 3), between(rng, 1, 3), between(rng, 1, 4));
            case(vec![uniform(rng, &[b, c1, l]), uniform(rng, &[b, c2, l])], |t, v| {
                t.concat(&[v[0], v[1]])
            })
        }
        "add" | "sub" | "mul" => {
            let n = between(rng, 1, 8);
            let x = vec![uniform(rng, &[b, n]), uniform(rng, &[b, n])];
            match name {
                "add" => case(x, |t, v| t.add(v[0], v[1])),
                "sub" => case(x, |t, v| t.sub(v[0], v[1])),
                _ => case(x, |t, v| t.mul(v[0], v[1])),
            }
        }
        "affine" => {
            let n = between(rng, 1, 8);
            let (s, c) = (rng.uniform() * 4.0 - 2.0, rng.uniform());
            case(vec![uniform(rng, &[b, n])], move |t, v| t.affine(v[0], s, c))
        }
        "mean" => {
            let n = between(rng, 1, 8);
            case(vec![uniform(rng, &[b, n])], |t, v| t.mean(v[0]))
        }
        "sum" => {
            let n = between(rng, 1, 8);
            case(vec![uniform(rng, &[b, n])], |t, v| t.sum(v[0]))
        }
        "l2_norm" => {
            let n = between(rng, 1, 8);
            case(vec![away_from_zero(rng, &[b, n])], |t, v| {
                t.sqrt(t.sum_rows(t.square(v[0])?)?)
            })
        }
        "sum_rows" => {
            let n = between(rng, 1, 8);
            case(vec![uniform(rng, &[b, n])], |t, v| t.sum_rows(v[0]))
        }
        "expand_rows" => {
            let n = between(rng, 1, 5);
            case(vec![uniform(rng, &[b])], move |t, v| t.expand_rows(v[0], n))
        }
        "reduce_channels" => {
            let (c, l) = (between(rng, 1, 4), between(rng, 1, 4));
            case(vec![uniform(rng, &[b, c, l])], |t, v| t.reduce_channels(v[0]))
        }
        "expand_channels" => {
            let (c, l) = (between(rng, 1, 4), between(rng, 1, 4));
            case(vec![uniform(rng, &[c])], move |t, v| {
                t.expand_channels(v[0], &[b, c, l])
            })
        }
        "mean_last" => {
            let (c, l) = (between(rng, 1, 4), between(rng, 1, 6));
            case(vec![uniform(rng, &[b, c, l])], |t, v| t.mean_last(v[0]))
        }
        "reshape" => {
            let (c, l) = (between(rng, 1, 4), between(rng, 1, 4));
            case(vec![uniform(rng, &[b, c, l])], move |t, v| t.reshape(v[0], &[b * l, c]))
        }
        "narrow" => {
            let (c, l) = (between(rng, 2, 5), between(rng, 1, 4));
            let start = rng.below(c);
            let len = between(rng, 1, c - start);
            case(vec![uniform(rng, &[b, c, l])], move |t, v| {
                t.narrow(v[0], 1, start, len)
            })
        }
        "reflect_pad1d" => {
            let (c, l) = (between(rng, 1, 3), between(rng, 2, 7));
            let (left, right) = (rng.below(l), rng.below(l));
            case(vec![uniform(rng, &[b, c, l])], move |t, v| {
                t.reflect_pad1d(v[0], left, right)
            })
        }
        "gather" => {
            let n = between(rng, 1, 8);
            let m = between(rng, 1, 10);
            let idx: Vec<usize> = (0..m).map(|_| rng.below(n)).collect();
            let idx = std::rc::Rc::new(idx);
            case(vec![uniform(rng, &[n])], move |t, v| t.gather(v[0], idx.clone(), &[m]))
        }
        "scatter" => {
            let n = between(rng, 1, 8);
            let m = between(rng, 1, 10);
            let idx: Vec<usize> = (0..m).map(|_| rng.below(n)).collect();
            let idx = std::rc::Rc::new(idx);
            case(vec![uniform(rng, &[m])], move |t, v| t.scatter(v[0], idx.clone(), &[n]))
        }
        "log_softmax" => {
            let n = between(rng, 1, 6);
            case(vec![uniform(rng, &[b, n])], |t, v| t.log_softmax(v[0]))
        }
        "lstm_cell" => {
            let (i, h) = (between(rng, 1, 4), between(rng, 1, 3));
            case(
                vec![
                    uniform(rng, &[b, i]),
                    uniform(rng, &[b, h]),
                    uniform(rng, &[b, h]),
                    uniform(rng, &[i, 4 * h]),
                    uniform(rng, &[h, 4 * h]),
                    uniform(rng, &[4 * h]),
                ],
                |t, v| {
                    let w = LstmWeights {
                        w_input: v[3],
                        w_hidden: v[4],
                        bias: v[5],
                    };
                    let (h, c) = t.lstm_cell(v[0], v[1], v[2], &w)?;
                    t.concat(&[h, c])
                },
            )
        }
        other => panic!("unknown op case `{other}`"),
    }
}

/// Check every operation in [`OPS`] at `draws` random instances each.
pub fn run(draws: usize, seed: u64, tol: Tolerance) -> Result<Vec<(&'static str, usize, GradCheckReport)>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(OPS.len());
    for &name in OPS {
        let mut failed_draws = 0;
        let mut agg = GradCheckReport {
            checked: 0,
            failures: 0,
            max_abs_err: 0.0,
            worst: None,
        };
        for d in 0..draws {
            let c = draw(name, &mut rng);
            let r = check(&c.inputs, c.f, tol, seed ^ d as u64)?;
            if !r.passed() {
                failed_draws += 1;
                agg.worst = r.worst;
            }
            agg.checked += r.checked;
            agg.failures += r.failures;
            agg.max_abs_err = agg.max_abs_err.max(r.max_abs_err);
        }
        out.push((name, failed_draws, agg));
    }
    Ok(out)
}
