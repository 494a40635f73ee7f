//! Per-subject classification, screening and remapping, plus the cohort
//! report built on top of them.

mod bayes;
mod report;

use serde::{Deserialize, Serialize};

pub use bayes::{integrate, noncentral_t_pdf, paired_bayes_factor, t_pdf, BayesConfig, PairedBayesFactor, DEFAULT_PRIOR_SCALE};
pub use report::{build_cohort_report, figure_csvs, render_text, ClassCounts, CohortReport, DiPoint, RemapAggregate, SubjectRemap, SubjectSummary, TableColumn};

use crate::error::Result;
use crate::fitting::{compare_models, fit_model, DataSeries, FitConfig, FitResult, ModelFamily, BIC_MARGIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreeningConfig {
    pub outlier_z: f64,
    pub invariant_range: f64,
    pub invariant_cv: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self { outlier_z: 3.0, invariant_range: 0.15, invariant_cv: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub fit: FitConfig,
    pub screening: ScreeningConfig,
    /// Remap linear-mapped subjects with their fitted exponent instead of 1.
    pub remap_linear_with_beta: bool,
    pub bayes: BayesConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            screening: ScreeningConfig::default(),
            remap_linear_with_beta: false,
            bayes: BayesConfig::default(),
        }
    }
}

/// One subject's per-interval DVs and mean line responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectData {
    pub id: String,
    pub dv: DataSeries,
    pub magnitude: DataSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMapping {
    Linear,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountClass {
    Exponential,
    ProportionalHyperbolic,
    GeneralHyperbolic,
}

impl DiscountClass {
    pub fn is_hyperbolic(self) -> bool {
        self != DiscountClass::Exponential
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMappingFit {
    pub class: TimeMapping,
    pub linear: FitResult,
    pub power: FitResult,
    /// `BIC_linear - BIC_power`.
    pub delta_bic: f64,
}

impl TimeMappingFit {
    pub fn beta(&self) -> f64 {
        self.power.param("beta").unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountFit {
    pub class: DiscountClass,
    pub exponential: FitResult,
    pub proportional: FitResult,
    pub general: FitResult,
    /// `BIC_exponential - BIC_general`.
    pub general_vs_exponential: f64,
}

impl DiscountFit {
    /// Whether the general hyperbolic fit beats the exponential by the
    /// BIC margin, which is the remapping criterion.
    pub fn general_beats_exponential(&self) -> bool {
        self.general_vs_exponential >= BIC_MARGIN
    }

    fn fit_for(&self, class: DiscountClass) -> &FitResult {
        match class {
            DiscountClass::Exponential => &self.exponential,
            DiscountClass::ProportionalHyperbolic => &self.proportional,
            DiscountClass::GeneralHyperbolic => &self.general,
        }
    }
}

/// Power wins only when it improves BIC over linear by at least the margin.
pub fn classify_time_mapping(magnitude: &DataSeries, cfg: &FitConfig) -> Result<TimeMappingFit> {
    let linear = fit_model(ModelFamily::Linear, magnitude, cfg)?;
    let power = fit_model(ModelFamily::Power, magnitude, cfg)?;
    let cmp = compare_models(&[linear.clone(), power.clone()], &[ModelFamily::Linear, ModelFamily::Power])?;
    let class = if cmp.selected_fit().model == ModelFamily::Power { TimeMapping::Power } else { TimeMapping::Linear };
    let delta_bic = linear.bic - power.bic;
    Ok(TimeMappingFit { class, linear, power, delta_bic })
}

/// Selects among exponential, proportional and general hyperbolic. A
/// hyperbolic winner that does not beat the exponential by the margin is
/// reported as exponential.
pub fn classify_discounting(dv: &DataSeries, cfg: &FitConfig) -> Result<DiscountFit> {
    let order = [ModelFamily::Exponential, ModelFamily::ProportionalHyperbolic, ModelFamily::GeneralHyperbolic];
    let exponential = fit_model(ModelFamily::Exponential, dv, cfg)?;
    let proportional = fit_model(ModelFamily::ProportionalHyperbolic, dv, cfg)?;
    let general = fit_model(ModelFamily::GeneralHyperbolic, dv, cfg)?;
    let cmp = compare_models(&[exponential.clone(), proportional.clone(), general.clone()], &order)?;
    let mut class = match cmp.selected_fit().model {
        ModelFamily::ProportionalHyperbolic => DiscountClass::ProportionalHyperbolic,
        ModelFamily::GeneralHyperbolic => DiscountClass::GeneralHyperbolic,
        _ => DiscountClass::Exponential,
    };
    let fit = DiscountFit { class, general_vs_exponential: exponential.bic - general.bic, exponential, proportional, general };
    if class.is_hyperbolic() && fit.exponential.bic - fit.fit_for(class).bic < BIC_MARGIN {
        class = DiscountClass::Exponential;
    }
    Ok(DiscountFit { class, ..fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemapResult {
    pub c: f64,
    pub objective: FitResult,
    pub subjective: FitResult,
    /// Exponential fitted against `t^c`.
    pub subjective_exponential: FitResult,
}

impl RemapResult {
    pub fn h_objective(&self) -> f64 {
        self.objective.param("h").unwrap_or(f64::NAN)
    }

    pub fn h_subjective(&self) -> f64 {
        self.subjective.param("h").unwrap_or(f64::NAN)
    }

    /// Whether the subjective-time general hyperbolic still beats an
    /// exponential on the same subjective axis by the BIC margin.
    pub fn still_hyperbolic(&self) -> bool {
        self.subjective_exponential.bic - self.subjective.bic >= BIC_MARGIN
    }
}

/// Exponent used to remap a subject: the fitted power exponent for
/// power-mapped subjects, otherwise 1 unless configured to use the fitted
/// exponent regardless.
pub fn remap_exponent(mapping: &TimeMappingFit, cfg: &AnalysisConfig) -> f64 {
    match mapping.class {
        TimeMapping::Power => mapping.beta(),
        TimeMapping::Linear if cfg.remap_linear_with_beta => mapping.beta(),
        TimeMapping::Linear => 1.0,
    }
}

/// Refits the DVs with the general hyperbolic on objective and on
/// subjective (`t^c`) time.
pub fn remap_and_refit(dv: &DataSeries, c: f64, cfg: &FitConfig) -> Result<RemapResult> {
    let objective = fit_model(ModelFamily::GeneralHyperbolic, dv, cfg)?;
    let subjective = fit_model(ModelFamily::SubjectiveGeneralHyperbolic { c }, dv, cfg)?;
    let warped = DataSeries { t: dv.t.iter().map(|t| t.powf(c)).collect(), ..dv.clone() };
    let subjective_exponential = fit_model(ModelFamily::Exponential, &warped, cfg)?;
    Ok(RemapResult { c, objective, subjective, subjective_exponential })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Exclusion {
    Invariant { range: f64, cv: f64 },
    Outlier { parameter: String, z: f64 },
    FitFailed { message: String },
}

/// DVs that barely move across intervals.
pub fn invariance(dv: &DataSeries, cfg: &ScreeningConfig) -> Option<Exclusion> {
    let max = dv.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = dv.y.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    let mean = dv.mean_y();
    let n = dv.len() as f64;
    let sd = if dv.len() > 1 { (dv.y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let cv = if mean != 0.0 { sd / mean.abs() } else { f64::INFINITY };
    (range < cfg.invariant_range && cv < cfg.invariant_cv).then_some(Exclusion::Invariant { range, cv })
}

/// Mean and sample SD of one parameter across the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

impl ParamStats {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { name: name.to_string(), mean, sd }
    }
}

/// Parameters screened for outliers, as `(label, family, parameter)`.
pub const SCREENED_PARAMS: [(&str, ModelFamily, &str); 4] = [
    ("exponential.delta", ModelFamily::Exponential, "delta"),
    ("proportional_hyperbolic.delta", ModelFamily::ProportionalHyperbolic, "delta"),
    ("general_hyperbolic.h", ModelFamily::GeneralHyperbolic, "h"),
    ("general_hyperbolic.r", ModelFamily::GeneralHyperbolic, "r"),
];

pub fn screened_values(fit: &DiscountFit) -> Vec<(String, f64)> {
    SCREENED_PARAMS
        .iter()
        .map(|(label, family, p)| {
            let f = match family {
                ModelFamily::Exponential => &fit.exponential,
                ModelFamily::ProportionalHyperbolic => &fit.proportional,
                _ => &fit.general,
            };
            (label.to_string(), f.param(p).unwrap_or(f64::NAN))
        })
        .collect()
}

/// Flags invariant DVs and any screened parameter more than `outlier_z`
/// cohort SDs from the cohort mean.
pub fn screen_subject(dv: &DataSeries, params: &[(String, f64)], cohort: &[ParamStats], cfg: &ScreeningConfig) -> Vec<Exclusion> {
    let mut out: Vec<Exclusion> = invariance(dv, cfg).into_iter().collect();
    for (name, value) in params {
        let Some(stats) = cohort.iter().find(|s| &s.name == name) else { continue };
        if stats.sd > 0.0 {
            let z = (value - stats.mean) / stats.sd;
            if z.abs() > cfg.outlier_z {
                out.push(Exclusion::Outlier { parameter: name.clone(), z });
            }
        }
    }
    out
}
