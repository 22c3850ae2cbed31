//! Run-to-failure vibration series: ingestion, synthesis, labels.

mod labels;
mod load;
mod synth;

pub use labels::{assign_hs_labels, assign_rul_labels, hs_label, rul_label, HsLabel, HsLabelSet, RulLabelSet};
pub use load::{load_femto, load_series_dir, load_xjtu, save_series_dir, FEMTO_SAMPLES, XJTU_SAMPLES};
pub use synth::{fault_component, synthesize_bearing, SyntheticBearing, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Minimum series length the labelling and sequence stages accept.
pub const MIN_RECORDS: usize = 20;

/// One two-channel acquisition snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VibrationRecord {
    pub index: usize,
    pub horizontal: Vec<f64>,
    pub vertical: Vec<f64>,
}

impl VibrationRecord {
    pub fn new(index: usize, horizontal: Vec<f64>, vertical: Vec<f64>) -> Result<Self> {
        if horizontal.is_empty() || horizontal.len() != vertical.len() {
            return Err(invalid(format!(
                "record {index}: channel lengths {} and {} must be equal and nonzero",
                horizontal.len(),
                vertical.len()
            )));
        }
        if !horizontal.iter().chain(&vertical).all(|v| v.is_finite()) {
            return Err(invalid(format!("record {index}: non-finite sample")));
        }
        Ok(Self {
            index,
            horizontal,
            vertical,
        })
    }

    pub fn len(&self) -> usize {
        self.horizontal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.horizontal.is_empty()
    }
}

/// Complete history of one bearing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunToFailureSeries {
    pub bearing_id: String,
    pub condition_id: u32,
    /// Domain index among the bearings of one training set.
    pub domain: usize,
    pub records: Vec<VibrationRecord>,
}

impl RunToFailureSeries {
    pub fn new(bearing_id: impl Into<String>, condition_id: u32, records: Vec<VibrationRecord>) -> Result<Self> {
        let bearing_id = bearing_id.into();
        if records.len() < MIN_RECORDS {
            return Err(invalid(format!(
                "{bearing_id}: {} records, at least {MIN_RECORDS} required",
                records.len()
            )));
        }
        let n_samples = records[0].len();
        for (i, r) in records.iter().enumerate() {
            if r.index != i {
                return Err(invalid(format!(
                    "{bearing_id}: record at position {i} has index {}",
                    r.index
                )));
            }
            if r.len() != n_samples {
                return Err(invalid(format!(
                    "{bearing_id}: record {i} has {} samples, expected {n_samples}",
                    r.len()
                )));
            }
        }
        Ok(Self {
            bearing_id,
            condition_id,
            domain: 0,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.records[0].len()
    }
}

/// Zero mean, unit population variance; all zeros when (nearly) constant.
pub fn standardize_signal(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Zero mean and unit (population) variance per channel; a constant channel
/// becomes all zeros.
pub fn standardize(record: &VibrationRecord) -> VibrationRecord {
    VibrationRecord {
        index: record.index,
        horizontal: standardize_signal(&record.horizontal),
        vertical: standardize_signal(&record.vertical),
    }
}
