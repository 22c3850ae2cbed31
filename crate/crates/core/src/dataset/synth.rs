use std::f64::consts::TAU;

use diffcore::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RunToFailureSeries, VibrationRecord, MIN_RECORDS};
use crate::error::{invalid, Result};

/// Parameters of a synthetic degrading bearing.
///
/// Records before `onset_fraction · n_records` are white noise. From there a
/// rotating fault tone (sine on the horizontal channel, cosine on the
/// vertical) is added with an amplitude growing linearly with the distance
/// past onset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub n_samples: usize,
    pub onset_fraction: f64,
    pub fault_amplitude_growth: f64,
    pub base_noise_std: f64,
    /// Tone cycles per record.
    pub fault_frequency: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_records: 200,
            n_samples: 2048,
            onset_fraction: 0.6,
            fault_amplitude_growth: 0.075,
            base_noise_std: 1.0,
            fault_frequency: 64.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.onset_fraction,
            self.fault_amplitude_growth,
            self.base_noise_std,
            self.fault_frequency,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("synthetic spec: non-finite parameter"));
        }
        if self.n_records < MIN_RECORDS {
            return Err(invalid(format!("synthetic spec: n_records must be ≥ {MIN_RECORDS}")));
        }
        if self.n_samples == 0 {
            return Err(invalid("synthetic spec: n_samples must be positive"));
        }
        if !(self.onset_fraction > 0.1 && self.onset_fraction < 0.9) {
            return Err(invalid("synthetic spec: onset_fraction must lie in (0.1, 0.9)"));
        }
        if self.fault_amplitude_growth < 0.0 {
            return Err(invalid("synthetic spec: fault_amplitude_growth must be ≥ 0"));
        }
        if self.base_noise_std <= 0.0 {
            return Err(invalid("synthetic spec: base_noise_std must be > 0"));
        }
        if self.fault_frequency < 0.0 {
            return Err(invalid("synthetic spec: fault_frequency must be ≥ 0"));
        }
        Ok(())
    }

    /// First record index carrying the fault tone.
    pub fn onset_index(&self) -> usize {
        (self.onset_fraction * self.n_records as f64).ceil() as usize
    }

    /// Fault amplitude of record `i`.
    pub fn amplitude(&self, i: usize) -> f64 {
        let onset = self.onset_fraction * self.n_records as f64;
        if (i as f64) < onset {
            0.0
        } else {
            (i as f64 - onset) * self.fault_amplitude_growth
        }
    }
}

/// Deterministic part of sample `t` of record `i`, as `(horizontal, vertical)`.
pub fn fault_component(spec: &SyntheticSpec, i: usize, t: usize) -> (f64, f64) {
    let a = spec.amplitude(i);
    let phase = TAU * spec.fault_frequency * t as f64 / spec.n_samples as f64;
    (a * phase.sin(), a * phase.cos())
}

/// Identity plus generator parameters of one synthetic bearing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBearing {
    pub bearing_id: String,
    #[serde(default = "default_condition")]
    pub condition_id: u32,
    pub spec: SyntheticSpec,
}

fn default_condition() -> u32 {
    1
}

pub fn synthesize_bearing(bearing: &SyntheticBearing) -> Result<RunToFailureSeries> {
    let spec = &bearing.spec;
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let records = (0..spec.n_records)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.fork(i as u64);
            let mut h = Vec::with_capacity(spec.n_samples);
            let mut v = Vec::with_capacity(spec.n_samples);
            for t in 0..spec.n_samples {
                let (fh, fv) = fault_component(spec, i, t);
                h.push(spec.base_noise_std * rng.normal() + fh);
                v.push(spec.base_noise_std * rng.normal() + fv);
            }
            VibrationRecord::new(i, h, v)
        })
        .collect::<Result<Vec<_>>>()?;
    RunToFailureSeries::new(bearing.bearing_id.clone(), bearing.condition_id, records)
}
