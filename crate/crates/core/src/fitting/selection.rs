use serde::{Deserialize, Serialize};

use super::{DataSeries, FitResult, ModelFamily};
use crate::error::{Error, Result};

/// BIC differences below this are treated as no evidence; the simpler model wins.
pub const BIC_MARGIN: f64 = 2.0;
const BIC_TIE: f64 = 1e-9;

/// Gaussian-MLE BIC with the additive constant dropped:
/// `n ln(rss/n) + k ln(n)`.
///
/// A zero RSS yields `-inf` with a warning.
pub fn bic(rss: f64, n: usize, k: usize) -> Result<f64> {
    if n <= k {
        return Err(Error::Domain(format!("BIC needs n > k, got n = {n}, k = {k}")));
    }
    if !(rss >= 0.0) || !rss.is_finite() {
        return Err(Error::Domain(format!("rss must be finite and non-negative, got {rss}")));
    }
    if rss == 0.0 {
        log::warn!("zero residual sum of squares; BIC is -inf");
        return Ok(f64::NEG_INFINITY);
    }
    let n = n as f64;
    Ok(n * (rss / n).ln() + k as f64 * n.ln())
}

/// `1 - RSS/TSS`.
pub fn r_squared(data: &DataSeries, predictions: &[f64]) -> Result<f64> {
    if predictions.len() != data.len() {
        return Err(Error::DegenerateData(format!(
            "{} predictions for {} points",
            predictions.len(),
            data.len()
        )));
    }
    let tss = data.tss();
    if tss <= 0.0 {
        return Err(Error::DegenerateData("zero total sum of squares".into()));
    }
    let rss: f64 = data.y.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - rss / tss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub candidates: Vec<FitResult>,
    pub selected: usize,
    /// BIC of the simplest candidate minus the lowest BIC.
    pub delta_bic: f64,
}

impl ModelComparison {
    pub fn selected_fit(&self) -> &FitResult {
        &self.candidates[self.selected]
    }
}

fn complexity_rank(fit: &FitResult, order: &[ModelFamily]) -> (usize, usize) {
    let pos = order.iter().position(|f| f.name() == fit.model.name()).unwrap_or(order.len());
    (pos, fit.k)
}

/// Selects the minimum-BIC fit, except that the simplest candidate within
/// `BIC_MARGIN` of the minimum is preferred. `complexity_order` lists
/// families from simplest to most complex; unlisted families rank last,
/// then by parameter count.
pub fn compare_models(fits: &[FitResult], complexity_order: &[ModelFamily]) -> Result<ModelComparison> {
    if fits.len() < 2 {
        return Err(Error::DegenerateData("model comparison needs at least two fits".into()));
    }
    let n = fits[0].n;
    if let Some(f) = fits.iter().find(|f| f.n != n) {
        return Err(Error::MismatchedData(n, f.n));
    }

    let best_bic = fits.iter().map(|f| f.bic).fold(f64::INFINITY, f64::min);
    let simplest = (0..fits.len()).min_by_key(|&i| complexity_rank(&fits[i], complexity_order)).unwrap_or(0);
    let selected = (0..fits.len())
        .filter(|&i| {
            let d = fits[i].bic - best_bic;
            d < BIC_MARGIN || d.abs() < BIC_TIE || fits[i].bic == best_bic
        })
        .min_by_key(|&i| complexity_rank(&fits[i], complexity_order))
        .unwrap_or(0);

    let delta_bic = if fits[simplest].bic == best_bic { 0.0 } else { fits[simplest].bic - best_bic };
    Ok(ModelComparison { candidates: fits.to_vec(), selected, delta_bic })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    /// Sample SD / sqrt(n); missing for a single fit.
    pub sem: Option<f64>,
}

impl ParamSummary {
    pub fn from_values(name: &str, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sem = (values.len() > 1).then(|| {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Some(Self { name: name.to_string(), mean, sem })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageSummary {
    pub model: Option<ModelFamily>,
    pub params: Vec<ParamSummary>,
    pub r2: Option<ParamSummary>,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Averages per-subject estimates of one family. Non-converged fits, and
/// fits of a different family than the first converged one, are excluded
/// and counted. Subjective-time fits with differing exponents count as one
/// family.
pub fn two_stage(per_subject: &[FitResult]) -> TwoStageSummary {
    let Some(model) = per_subject.iter().find(|f| f.converged).map(|f| f.model) else {
        return TwoStageSummary { model: None, params: vec![], r2: None, n_used: 0, n_excluded: per_subject.len() };
    };
    let used: Vec<&FitResult> = per_subject.iter().filter(|f| f.converged && f.model.name() == model.name()).collect();
    let params = model
        .param_names()
        .iter()
        .enumerate()
        .filter_map(|(i, name)| {
            let vals: Vec<f64> = used.iter().map(|f| f.params[i].value).collect();
            ParamSummary::from_values(name, &vals)
        })
        .collect();
    let r2s: Vec<f64> = used.iter().map(|f| f.r2).collect();
    TwoStageSummary {
        model: Some(model),
        params,
        r2: ParamSummary::from_values("r2", &r2s),
        n_used: used.len(),
        n_excluded: per_subject.len() - used.len(),
    }
}
