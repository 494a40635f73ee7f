//! Least-squares / Gaussian maximum-likelihood fitting with seeded
//! multi-start, plus BIC-based model comparison and cohort summaries.

mod family;
mod lm;
mod selection;
mod series;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use family::ModelFamily;
pub use selection::{bic, compare_models, BIC_MARGIN, r_squared, two_stage, ModelComparison, ParamSummary, TwoStageSummary};
pub use series::{aggregate_series, DataSeries, GridSeries};

use crate::error::{Error, Result};
use lm::{LmOptions, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub seed: u64,
    /// Total starts, including the heuristic one.
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative RSS change that ends a start.
    pub rtol: f64,
    /// Parameter step (relative to the parameter norm) that ends a start.
    pub xtol: f64,
    /// RSS used for likelihood and BIC is floored at
    /// `n * (rss_floor_rel * rms(y))^2`, the precision limit of the optimizer.
    pub rss_floor_rel: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { seed: 0, n_starts: 8, max_iter: 500, rtol: 1e-10, xtol: 1e-9, rss_floor_rel: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelFamily,
    pub params: Vec<ParamEstimate>,
    pub rss: f64,
    pub loglik: f64,
    pub bic: f64,
    pub r2: f64,
    pub n: usize,
    /// Free parameters including the residual variance.
    pub k: usize,
    pub converged: bool,
    pub starts_tried: usize,
    pub iterations: usize,
}

impl FitResult {
    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn predict(&self, t: f64) -> f64 {
        self.model.predict(&self.values(), t)
    }
}

struct SeriesProblem<'a> {
    family: ModelFamily,
    data: &'a DataSeries,
}

impl Problem for SeriesProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.data.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let w = self.data.weight(i).sqrt();
            *o = w * (self.family.predict(p, self.data.t[i]) - self.data.y[i]);
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let mut g = vec![0.0; p.len()];
        for i in 0..self.data.len() {
            let w = self.data.weight(i).sqrt();
            self.family.gradient(p, self.data.t[i], &mut g);
            for (j, gj) in g.iter().enumerate() {
                out[(i, j)] = w * gj;
            }
        }
    }
}

/// Draws `count` Latin-hypercube points inside the family's bounds.
fn latin_hypercube(family: ModelFamily, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let bounds = family.bounds();
    let mut points = vec![vec![0.0; bounds.len()]; count];
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (i, point) in points.iter_mut().enumerate() {
            let u = (strata[i] as f64 + rng.random::<f64>()) / count as f64;
            point[j] = if family.log_scaled(j) {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp()
            } else {
                lo + u * (hi - lo)
            };
        }
    }
    points
}

/// Fits `family` to `data` by bounded Levenberg-Marquardt from one
/// heuristic start plus `n_starts - 1` seeded Latin-hypercube starts and
/// keeps the lowest-RSS converged solution.
pub fn fit_model(family: ModelFamily, data: &DataSeries, config: &FitConfig) -> Result<FitResult> {
    let n = data.len();
    let np = family.n_params();
    let k = np + 1;
    if n < k + 1 {
        return Err(Error::DegenerateData(format!("{n} points cannot support {k} free parameters")));
    }
    let tss = data.tss();
    if tss <= 0.0 {
        return Err(Error::DegenerateData("responses have zero variance".into()));
    }
    if let ModelFamily::SubjectiveGeneralHyperbolic { c } = family {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Domain(format!("time exponent must be positive, got {c}")));
        }
    }

    let bounds = family.bounds();
    let problem = SeriesProblem { family, data };
    let opts = LmOptions { max_iter: config.max_iter, rtol: config.rtol, xtol: config.xtol };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![family.heuristic_start(data)];
    starts.extend(latin_hypercube(family, config.n_starts.saturating_sub(1), &mut rng));

    let mut best: Option<lm::LmOutcome> = None;
    let mut iterations = 0;
    for start in &starts {
        let out = lm::minimize(&problem, start, &bounds, opts);
        iterations += out.iterations;
        if !out.converged || !out.rss.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| out.rss < b.rss) {
            best = Some(out);
        }
    }
    let best = best.ok_or(Error::NonConvergence { starts: starts.len() })?;

    let params = standard_errors(&problem, &best.params, best.rss, n)
        .into_iter()
        .zip(family.param_names())
        .zip(&best.params)
        .map(|((se, name), &value)| ParamEstimate { name: (*name).to_string(), value, se })
        .collect();

    let rms = (data.y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let floor = n as f64 * (config.rss_floor_rel * rms).powi(2);
    let rss_eff = best.rss.max(floor);
    let nf = n as f64;
    let loglik = -0.5 * nf * ((2.0 * std::f64::consts::PI * rss_eff / nf).ln() + 1.0);

    // r2 uses the unweighted residuals so that it stays comparable across weightings
    let rss_plain: f64 =
        data.t.iter().zip(&data.y).map(|(&t, &y)| (family.predict(&best.params, t) - y).powi(2)).sum();

    Ok(FitResult {
        model: family,
        params,
        rss: best.rss,
        loglik,
        bic: bic(rss_eff, n, k)?,
        r2: 1.0 - rss_plain / tss,
        n,
        k,
        converged: true,
        starts_tried: starts.len(),
        iterations,
    })
}

/// Asymptotic standard errors from `s^2 (J'J)^-1` with `s^2 = rss/(n-p)`.
fn standard_errors(problem: &SeriesProblem<'_>, p: &[f64], rss: f64, n: usize) -> Vec<Option<f64>> {
    let np = p.len();
    if n <= np {
        return vec![None; np];
    }
    let mut jac = DMatrix::zeros(n, np);
    problem.jacobian(p, &mut jac);
    let s2 = rss / (n - np) as f64;
    match (jac.transpose() * &jac).try_inverse() {
        Some(inv) => (0..np)
            .map(|i| {
                let v = inv[(i, i)] * s2;
                (v.is_finite() && v >= 0.0).then(|| v.sqrt())
            })
            .collect(),
        None => vec![None; np],
    }
}
