use diffcore::{ParamStore, Scalar, Tape, Tensor};
use rayon::prelude::*;

use crate::dataset::{standardize, standardize_signal, RunToFailureSeries, VibrationRecord};
use crate::error::Result;
use crate::models::{GeneratorConfig, Phase};
use crate::nsp::{merge_rgb, to_nested_clusters, NspConfig, NspImage};

use super::adversarial::{AdversarialModels, Architecture};

/// Records processed per generator pass.
const CHUNK: usize = 16;

/// Standardized records as a `[b, 2, n]` batch.
pub fn record_tensor<T: Scalar>(records: &[&VibrationRecord]) -> Tensor<T> {
    let n = records.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(records.len() * 2 * n);
    for r in records {
        let s = standardize(r);
        data.extend(s.horizontal.iter().chain(&s.vertical).map(|&v| T::lit(v)));
    }
    Tensor::new(vec![records.len(), 2, n], data).expect("records share a length")
}

fn generate<T: Scalar>(gen: &GeneratorConfig, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let out = gen.forward(&tape, &p, tape.constant(x.clone()), &mut Phase::Eval)?;
    Ok((*tape.value(out)).clone())
}

/// Evaluation-mode outputs of the three generators for every record, as
/// `[level][record]` rows of `2·n` values.
pub fn generate_features<T: Scalar>(
    series: &RunToFailureSeries,
    arch: &Architecture,
    models: &AdversarialModels<T>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let chunks: Vec<Vec<&VibrationRecord>> = series.records.chunks(CHUNK).map(|c| c.iter().collect()).collect();
    let per_chunk = chunks
        .par_iter()
        .map(|chunk| {
            let x = record_tensor::<T>(chunk);
            (0..3)
                .map(|l| {
                    let y = generate(&arch.generators[l], &models.generators[l], &x)?;
                    let row = y.len() / chunk.len();
                    Ok(y.data()
                        .chunks(row)
                        .map(|r| r.iter().map(|v| v.as_f64()).collect())
                        .collect())
                })
                .collect::<Result<Vec<Vec<Vec<f64>>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::with_capacity(series.len()); 3];
    for chunk in per_chunk {
        for (level, rows) in chunk.into_iter().enumerate() {
            out[level].extend(rows);
        }
    }
    Ok(out)
}

/// One NSP image per record. Each generator output channel is standardized
/// before binning so the clip range means the same thing at every scale.
pub fn build_nsp_dataset<T: Scalar>(
    series: &RunToFailureSeries,
    arch: &Architecture,
    models: &AdversarialModels<T>,
    cfg: &NspConfig,
) -> Result<Vec<NspImage>> {
    let features = generate_features(series, arch, models)?;
    let n = series.n_samples();
    (0..series.len())
        .into_par_iter()
        .map(|i| {
            let [d3, d4, d5] = [0, 1, 2].map(|l| {
                let row = &features[l][i];
                let h = standardize_signal(&row[..n]);
                let v = standardize_signal(&row[n..]);
                to_nested_clusters(&h, &v, cfg)
            });
            merge_rgb(d3, d4, d5)
        })
        .collect()
}
