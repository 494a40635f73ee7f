use serde::{Deserialize, Serialize};

use super::series::DataSeries;
use crate::models::{general_hyperbolic, DiscountParams, PsychParams, H_EPSILON};

const RATE_BOUNDS: (f64, f64) = (1e-6, 5.0);
const H_BOUNDS: (f64, f64) = (0.0, 10.0);
const BETA_BOUNDS: (f64, f64) = (0.05, 3.0);
const SLOPE_BOUNDS: (f64, f64) = (1e-9, 1e4);
const INTERCEPT_BOUNDS: (f64, f64) = (-500.0, 500.0);

/// Fittable model families. The subjective general hyperbolic variant
/// carries its time exponent `c`, which is held fixed during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelFamily {
    Linear,
    Power,
    Exponential,
    ProportionalHyperbolic,
    GeneralHyperbolic,
    SubjectiveGeneralHyperbolic { c: f64 },
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Linear => "linear",
            ModelFamily::Power => "power",
            ModelFamily::Exponential => "exponential",
            ModelFamily::ProportionalHyperbolic => "proportional_hyperbolic",
            ModelFamily::GeneralHyperbolic => "general_hyperbolic",
            ModelFamily::SubjectiveGeneralHyperbolic { .. } => "subjective_general_hyperbolic",
        }
    }

    /// Parses a family name; the subjective variant needs `c` supplied.
    pub fn from_name(name: &str, c: Option<f64>) -> Option<Self> {
        Some(match name {
            "linear" => ModelFamily::Linear,
            "power" => ModelFamily::Power,
            "exponential" => ModelFamily::Exponential,
            "proportional_hyperbolic" | "proportional" => ModelFamily::ProportionalHyperbolic,
            "general_hyperbolic" | "general" => ModelFamily::GeneralHyperbolic,
            "subjective_general_hyperbolic" | "subjective" => ModelFamily::SubjectiveGeneralHyperbolic { c: c? },
            _ => return None,
        })
    }

    pub fn is_discount(&self) -> bool {
        !matches!(self, ModelFamily::Linear | ModelFamily::Power)
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelFamily::Linear => &["c", "a"],
            ModelFamily::Power => &["c", "a", "beta"],
            ModelFamily::Exponential | ModelFamily::ProportionalHyperbolic => &["delta"],
            ModelFamily::GeneralHyperbolic | ModelFamily::SubjectiveGeneralHyperbolic { .. } => &["h", "r"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            ModelFamily::Linear => vec![INTERCEPT_BOUNDS, SLOPE_BOUNDS],
            ModelFamily::Power => vec![INTERCEPT_BOUNDS, SLOPE_BOUNDS, BETA_BOUNDS],
            ModelFamily::Exponential | ModelFamily::ProportionalHyperbolic => vec![RATE_BOUNDS],
            ModelFamily::GeneralHyperbolic | ModelFamily::SubjectiveGeneralHyperbolic { .. } => {
                vec![H_BOUNDS, RATE_BOUNDS]
            }
        }
    }

    /// Whether a parameter is better explored on a log scale by multi-start.
    pub(crate) fn log_scaled(&self, i: usize) -> bool {
        matches!(
            (self, i),
            (ModelFamily::Exponential | ModelFamily::ProportionalHyperbolic, 0)
                | (ModelFamily::GeneralHyperbolic | ModelFamily::SubjectiveGeneralHyperbolic { .. }, 1)
        )
    }

    fn time(&self, t: f64) -> f64 {
        match *self {
            ModelFamily::SubjectiveGeneralHyperbolic { c } => t.powf(c),
            _ => t,
        }
    }

    pub fn predict(&self, p: &[f64], t: f64) -> f64 {
        match self {
            ModelFamily::Linear => p[0] + p[1] * t,
            ModelFamily::Power => p[0] + p[1] * t.powf(p[2]),
            ModelFamily::Exponential => (-p[0] * t).exp(),
            ModelFamily::ProportionalHyperbolic => 1.0 / (1.0 + p[0] * t),
            ModelFamily::GeneralHyperbolic | ModelFamily::SubjectiveGeneralHyperbolic { .. } => {
                general_hyperbolic(p[0], p[1], self.time(t))
            }
        }
    }

    /// Analytic gradient of the prediction with respect to the parameters.
    pub fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]) {
        match self {
            ModelFamily::Linear => {
                out[0] = 1.0;
                out[1] = t;
            }
            ModelFamily::Power => {
                let tb = t.powf(p[2]);
                out[0] = 1.0;
                out[1] = tb;
                out[2] = if t > 0.0 { p[1] * tb * t.ln() } else { 0.0 };
            }
            ModelFamily::Exponential => out[0] = -t * (-p[0] * t).exp(),
            ModelFamily::ProportionalHyperbolic => {
                let d = 1.0 + p[0] * t;
                out[0] = -t / (d * d);
            }
            ModelFamily::GeneralHyperbolic | ModelFamily::SubjectiveGeneralHyperbolic { .. } => {
                let (h, r) = (p[0], p[1]);
                let s = self.time(t);
                let v = general_hyperbolic(h, r, s);
                out[0] = v * r * s * s * gh_h_kernel(h * s);
                out[1] = if h < H_EPSILON { -s * v } else { -v * (h * s).ln_1p() / h };
            }
        }
    }

    /// Deterministic data-driven starting point.
    pub fn heuristic_start(&self, data: &DataSeries) -> Vec<f64> {
        let start = match self {
            ModelFamily::Linear => {
                let (a, b) = ols(&data.t, &data.y);
                vec![a, b]
            }
            ModelFamily::Power => {
                let ymin = data.y.iter().copied().fold(f64::INFINITY, f64::min);
                let ymax = data.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let c0 = if ymin > 0.0 { 0.0 } else { ymin - 1e-3 * (ymax - ymin).max(1.0) };
                let (lx, ly): (Vec<f64>, Vec<f64>) = data
                    .t
                    .iter()
                    .zip(&data.y)
                    .filter(|(t, _)| **t > 0.0)
                    .map(|(t, y)| (t.ln(), (y - c0).ln()))
                    .unzip();
                let (la, beta) = ols(&lx, &ly);
                vec![c0, la.exp(), beta]
            }
            ModelFamily::Exponential => {
                let num: f64 = data.t.iter().zip(&data.y).map(|(t, y)| t * y.max(1e-6).ln()).sum();
                let den: f64 = data.t.iter().map(|t| t * t).sum();
                vec![-num / den]
            }
            ModelFamily::ProportionalHyperbolic => vec![proportional_moment(&data.t, &data.y)],
            ModelFamily::GeneralHyperbolic | ModelFamily::SubjectiveGeneralHyperbolic { .. } => {
                let s: Vec<f64> = data.t.iter().map(|&t| self.time(t)).collect();
                let d = proportional_moment(&s, &data.y);
                vec![d, d]
            }
        };
        let bounds = self.bounds();
        start
            .into_iter()
            .zip(bounds)
            .map(|(v, (lo, hi))| if v.is_finite() { v.clamp(lo, hi) } else { 0.5 * (lo + hi) })
            .collect()
    }

    pub fn to_discount(&self, p: &[f64]) -> Option<DiscountParams> {
        Some(match *self {
            ModelFamily::Exponential => DiscountParams::Exponential { delta: p[0] },
            ModelFamily::ProportionalHyperbolic => DiscountParams::ProportionalHyperbolic { delta: p[0] },
            ModelFamily::GeneralHyperbolic => DiscountParams::GeneralHyperbolic { h: p[0], r: p[1] },
            ModelFamily::SubjectiveGeneralHyperbolic { c } => {
                DiscountParams::SubjectiveGeneralHyperbolic { h: p[0], r: p[1], c }
            }
            _ => return None,
        })
    }

    pub fn to_psych(&self, p: &[f64]) -> Option<PsychParams> {
        Some(match self {
            ModelFamily::Linear => PsychParams::Linear { c: p[0], a: p[1] },
            ModelFamily::Power => PsychParams::Power { c: p[0], a: p[1], beta: p[2] },
            _ => return None,
        })
    }
}

/// `(ln(1+x) - x/(1+x)) / x^2`, the `h`-sensitivity kernel of the general
/// hyperbolic function. Uses the series `sum_k (-1)^k (k-1)/k x^(k-2)` near 0.
fn gh_h_kernel(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        0.5 - 2.0 * x / 3.0 + 0.75 * x * x - 0.8 * x * x * x
    } else {
        (x.ln_1p() - x / (1.0 + x)) / (x * x)
    }
}

/// Least-squares slope of `1/y - 1` on `t` through the origin.
fn proportional_moment(t: &[f64], y: &[f64]) -> f64 {
    let num: f64 = t.iter().zip(y).map(|(t, y)| t * (1.0 / y.max(1e-6) - 1.0)).sum();
    let den: f64 = t.iter().map(|t| t * t).sum();
    num / den
}

/// Ordinary least squares `y = a + b x`, returns `(a, b)`.
fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}
