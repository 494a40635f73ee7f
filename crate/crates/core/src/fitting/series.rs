use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered `(t, y)` observations, optionally weighted.
///
/// `sem` carries per-point standard errors when the series is an
/// aggregate; it is metadata and does not affect fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSeries {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sem: Option<Vec<f64>>,
}

impl DataSeries {
    /// Builds a series with distinct, non-negative `t` values and at least
    /// three points.
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let s = Self::from_observations(t, y)?;
        let mut sorted = s.t.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DegenerateData("t values must be distinct".into()));
        }
        Ok(s)
    }

    /// Like [`DataSeries::new`] but allows repeated `t` (raw per-trial data).
    pub fn from_observations(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::DegenerateData(format!("{} t values but {} responses", t.len(), y.len())));
        }
        if t.len() < 3 {
            return Err(Error::DegenerateData(format!("need at least 3 points, got {}", t.len())));
        }
        if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::DegenerateData("t values must be finite and non-negative".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("responses must be finite".into()));
        }
        Ok(Self { t, y, weights: None, sem: None })
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.t.len() || w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::DegenerateData("weights must be positive, one per point".into()));
        }
        self.weights = Some(w);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    /// Total sum of squares about the mean.
    pub fn tss(&self) -> f64 {
        let m = self.mean_y();
        self.y.iter().map(|v| (v - m) * (v - m)).sum()
    }
}

/// One subject's values on a shared grid; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSeries {
    pub t: Vec<f64>,
    pub y: Vec<Option<f64>>,
}

impl From<&DataSeries> for GridSeries {
    fn from(s: &DataSeries) -> Self {
        GridSeries { t: s.t.clone(), y: s.y.iter().copied().map(Some).collect() }
    }
}

/// Averages a cohort point-wise. Each output point is the mean over the
/// subjects observed at that `t`; the SEM (sample SD / sqrt(n), zero for a
/// single observation) is attached as `sem`.
pub fn aggregate_series(cohort: &[GridSeries]) -> Result<DataSeries> {
    let first = cohort.first().ok_or_else(|| Error::DegenerateData("empty cohort".into()))?;
    if cohort.iter().any(|s| s.t != first.t || s.y.len() != first.t.len()) {
        return Err(Error::DegenerateData("cohort series are not on a common grid".into()));
    }
    let mut mean = Vec::with_capacity(first.t.len());
    let mut sem = Vec::with_capacity(first.t.len());
    for (i, &t) in first.t.iter().enumerate() {
        let vals: Vec<f64> = cohort.iter().filter_map(|s| s.y[i]).collect();
        if vals.is_empty() {
            return Err(Error::EmptyCell(t));
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        mean.push(m);
        sem.push(if vals.len() > 1 {
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        });
    }
    let mut out = DataSeries::new(first.t.clone(), mean)?;
    out.sem = Some(sem);
    Ok(out)
}
