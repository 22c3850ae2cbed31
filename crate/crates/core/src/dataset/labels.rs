use serde::{Deserialize, Serialize};

use super::RunToFailureSeries;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HsLabel {
    Healthy,
    Unhealthy,
}

impl HsLabel {
    pub fn target(self) -> f64 {
        match self {
            HsLabel::Healthy => 0.0,
            HsLabel::Unhealthy => 1.0,
        }
    }
}

/// Label of record `i` (0-based) in a series of `n`: the first and last
/// `floor(n·p)` records are labelled, everything between is not.
pub fn hs_label(i: usize, n: usize, p: f64) -> Option<HsLabel> {
    let m = (n as f64 * p).floor() as usize;
    if i < m {
        Some(HsLabel::Healthy)
    } else if i >= n - m {
        Some(HsLabel::Unhealthy)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HsLabelSet {
    pub labels: Vec<Option<HsLabel>>,
}

impl HsLabelSet {
    pub fn count(&self, label: HsLabel) -> usize {
        self.labels.iter().filter(|l| **l == Some(label)).count()
    }

    /// `(index, target)` for every labelled record.
    pub fn labelled(&self) -> Vec<(usize, f64)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l.target())))
            .collect()
    }
}

pub fn assign_hs_labels(series: &RunToFailureSeries, p: f64) -> Result<HsLabelSet> {
    let n = series.len();
    if !(p > 0.0 && p <= 0.5) {
        return Err(invalid(format!("p = {p} outside (0, 0.5]")));
    }
    if (n as f64 * p) < 1.0 {
        return Err(invalid(format!("n·p = {} < 1 for {}", n as f64 * p, series.bearing_id)));
    }
    Ok(HsLabelSet {
        labels: (0..n).map(|i| hs_label(i, n, p)).collect(),
    })
}

/// `(n − i)/(n − t_fpt)` for `t_fpt ≤ i ≤ n`.
pub fn rul_label(i: usize, n: usize, t_fpt: usize) -> Option<f64> {
    (t_fpt..=n).contains(&i).then(|| (n - i) as f64 / (n - t_fpt) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RulLabelSet {
    pub n: usize,
    pub t_fpt: usize,
}

impl RulLabelSet {
    pub fn value(&self, i: usize) -> Option<f64> {
        rul_label(i, self.n, self.t_fpt)
    }

    /// Labels of records `t_fpt..n`.
    pub fn values(&self) -> Vec<f64> {
        (self.t_fpt..self.n)
            .map(|i| rul_label(i, self.n, self.t_fpt).expect("in range"))
            .collect()
    }
}

pub fn assign_rul_labels(series: &RunToFailureSeries, t_fpt: usize) -> Result<RulLabelSet> {
    let n = series.len();
    if t_fpt >= n {
        return Err(invalid(format!("T_FPT {t_fpt} ≥ series length {n}")));
    }
    Ok(RulLabelSet { n, t_fpt })
}
