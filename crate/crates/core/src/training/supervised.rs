use diffcore::{ParamStore, Rng, Scalar, Tape, Tensor};
use serde::Serialize;

use crate::dataset::rul_label;
use crate::error::{invalid, GmfeError, Result};
use crate::losses::{bce, rul_loss, LossWeights};
use crate::models::{CnnHs, CnnLstmRul};
use crate::nsp::NspImage;

use super::TrainingConfig;

const EVAL_CHUNK: usize = 32;

fn images_tensor<T: Scalar>(images: &[&NspImage], shape_prefix: &[usize]) -> Result<Tensor<T>> {
    let g = images.first().map_or(0, |i| i.grid);
    if images.iter().any(|i| i.grid != g) {
        return Err(invalid("images of different grid sizes in one batch"));
    }
    let data = images.iter().flat_map(|i| i.flat()).map(T::lit).collect();
    let mut shape = shape_prefix.to_vec();
    shape.extend([3, g, g]);
    Ok(Tensor::new(shape, data)?)
}

/// Mean training loss per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SupervisedTrace {
    pub epoch_losses: Vec<f64>,
}

/// Shuffled minibatch loop shared by both image models.
fn fit<T: Scalar>(
    params: &mut ParamStore<T>,
    n: usize,
    epochs: usize,
    cfg: &TrainingConfig,
    rng: &mut Rng,
    mut loss_of: impl FnMut(&Tape<T>, &diffcore::Bound, &[usize]) -> Result<diffcore::Var>,
) -> Result<SupervisedTrace> {
    let adam = cfg.adam(cfg.lr_cnn);
    let mut trace = SupervisedTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let p = params.bind(&tape, true);
            let loss = loss_of(&tape, &p, batch)?;
            let value = tape.item(loss).as_f64();
            if !value.is_finite() {
                return Err(GmfeError::NonFinite(format!(
                    "supervised loss {value} in epoch {epoch}"
                )));
            }
            total += value * batch.len() as f64;
            let grads = p.gradients(&tape, loss)?;
            params.adam_step(&grads, &adam)?;
        }
        trace.epoch_losses.push(total / n as f64);
    }
    Ok(trace)
}

/// Trains CNN-HS on `(image, target)` pairs with binary cross-entropy.
pub fn train_cnn_hs<T: Scalar>(
    model: &CnnHs,
    data: &[(&NspImage, f64)],
    cfg: &TrainingConfig,
    std: f64,
    seed: u64,
) -> Result<(ParamStore<T>, SupervisedTrace)> {
    if data.is_empty() {
        return Err(invalid("CNN-HS: no labelled images"));
    }
    let root = Rng::new(seed);
    let mut params = model.init(std, &mut root.fork(1))?;
    let mut rng = root.fork(2);
    let trace = fit(
        &mut params,
        data.len(),
        cfg.hs_epochs,
        cfg,
        &mut rng,
        |tape, p, batch| {
            let imgs: Vec<&NspImage> = batch.iter().map(|&i| data[i].0).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| data[i].1).collect();
            let x = tape.constant(images_tensor(&imgs, &[imgs.len()])?);
            bce(tape, model.forward(tape, p, x)?, &targets)
        },
    )?;
    Ok((params, trace))
}

/// Evaluation-mode CNN-HS score of every image.
pub fn hs_scores<T: Scalar>(model: &CnnHs, params: &ParamStore<T>, images: &[NspImage]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let imgs: Vec<&NspImage> = chunk.iter().collect();
        let x = tape.constant(images_tensor(&imgs, &[imgs.len()])?);
        out.extend(
            tape.value(model.forward(&tape, &p, x)?)
                .data()
                .iter()
                .map(|v| v.as_f64()),
        );
    }
    Ok(out)
}

/// Image indices of the length-`len` window ending at `i`; positions before
/// the series start repeat image 0.
pub fn window(i: usize, len: usize) -> Vec<usize> {
    (0..len).map(|t| (i + t + 1).saturating_sub(len)).collect()
}

/// One training sequence: series `bearing`, window ending at `index`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceSample {
    pub bearing: usize,
    pub index: usize,
    pub target: f64,
}

/// Every window ending at or after each series' first predicting time.
pub fn rul_sequences(lengths_and_fpts: &[(usize, usize)]) -> Vec<SequenceSample> {
    lengths_and_fpts
        .iter()
        .enumerate()
        .flat_map(|(b, &(n, t))| {
            (t..n).map(move |i| SequenceSample {
                bearing: b,
                index: i,
                target: rul_label(i, n, t).expect("index within labelled range"),
            })
        })
        .collect()
}

fn sequence_tensor<T: Scalar>(images: &[NspImage], ends: &[usize], len: usize) -> Result<Tensor<T>> {
    let frames: Vec<&NspImage> = ends.iter().flat_map(|&i| window(i, len)).map(|j| &images[j]).collect();
    images_tensor(&frames, &[ends.len(), len])
}

/// Trains CNN-LSTM on sliding windows of each series from its first
/// predicting time onward.
pub fn train_cnn_lstm<T: Scalar>(
    model: &CnnLstmRul,
    series: &[(&[NspImage], usize)],
    cfg: &TrainingConfig,
    weights: &LossWeights,
    std: f64,
    seed: u64,
) -> Result<(ParamStore<T>, SupervisedTrace)> {
    let samples = rul_sequences(&series.iter().map(|(imgs, t)| (imgs.len(), *t)).collect::<Vec<_>>());
    if samples.is_empty() {
        return Err(invalid("CNN-LSTM: no post-FPT records"));
    }
    let root = Rng::new(seed);
    let mut params = model.init(std, &mut root.fork(1))?;
    let mut rng = root.fork(2);
    let l = model.seq_len;
    let trace = fit(
        &mut params,
        samples.len(),
        cfg.rul_epochs,
        cfg,
        &mut rng,
        |tape, p, batch| {
            let frames: Vec<&NspImage> = batch
                .iter()
                .flat_map(|&k| {
                    let s = samples[k];
                    window(s.index, l).into_iter().map(move |j| &series[s.bearing].0[j])
                })
                .collect();
            let targets: Vec<f64> = batch.iter().map(|&k| samples[k].target).collect();
            let x = tape.constant(images_tensor(&frames, &[batch.len(), l])?);
            rul_loss(tape, model.forward(tape, p, x)?, &targets, weights)
        },
    )?;
    Ok((params, trace))
}

/// Predicted RUL fractions for records `t_fpt..n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RulPrediction {
    pub t_fpt: usize,
    pub predicted: Vec<f64>,
}

pub fn predict_rul<T: Scalar>(
    model: &CnnLstmRul,
    params: &ParamStore<T>,
    images: &[NspImage],
    t_fpt: usize,
) -> Result<RulPrediction> {
    if t_fpt >= images.len() {
        return Err(invalid(format!("T_FPT {t_fpt} ≥ series length {}", images.len())));
    }
    let ends: Vec<usize> = (t_fpt..images.len()).collect();
    let mut predicted = Vec::with_capacity(ends.len());
    for chunk in ends.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let x = tape.constant(sequence_tensor(images, chunk, model.seq_len)?);
        predicted.extend(
            tape.value(model.forward(&tape, &p, x)?)
                .data()
                .iter()
                .map(|v| v.as_f64()),
        );
    }
    Ok(RulPrediction { t_fpt, predicted })
}
