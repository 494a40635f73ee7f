//! Discount functions, psychophysical time mappings and the decreasing
//! impatience metric.
//!
//! Everything here is pure evaluation. Time is measured in calendar months
//! and discount values are fractions of the immediate reward.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Below this `h` the general hyperbolic form is replaced by its
/// exponential limit `exp(-r t)`.
pub const H_EPSILON: f64 = 1e-8;

/// A discount function family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DiscountParams {
    Exponential { delta: f64 },
    QuasiHyperbolic { y: f64, delta: f64 },
    ProportionalHyperbolic { delta: f64 },
    GeneralHyperbolic { h: f64, r: f64 },
    SubjectiveGeneralHyperbolic { h: f64, r: f64, c: f64 },
}

/// A psychophysical mapping from an interval to a response magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PsychParams {
    Linear { c: f64, a: f64 },
    Power { c: f64, a: f64, beta: f64 },
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        domain(format!("time must be finite and non-negative, got {t}"))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        domain(format!("{name} must be positive, got {v}"))
    }
}

fn check_non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        domain(format!("{name} must be non-negative, got {v}"))
    }
}

/// `exp(-delta t)`.
pub fn eval_exponential(delta: f64, t: f64) -> Result<f64> {
    check_positive("delta", delta)?;
    check_time(t)?;
    Ok((-delta * t).exp())
}

/// `1` at `t = 0`, otherwise `y delta^t` (real `t` allowed).
pub fn eval_quasi_hyperbolic(y: f64, delta: f64, t: f64) -> Result<f64> {
    if !(y > 0.0 && y <= 1.0) {
        return domain(format!("y must lie in (0, 1], got {y}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    check_time(t)?;
    Ok(quasi_hyperbolic(y, delta, t))
}

/// `1 / (1 + delta t)`.
pub fn eval_proportional_hyperbolic(delta: f64, t: f64) -> Result<f64> {
    check_positive("delta", delta)?;
    check_time(t)?;
    Ok(1.0 / (1.0 + delta * t))
}

/// `(1 + h t)^(-r/h)`, with the exponential limit for `h < H_EPSILON`.
pub fn eval_general_hyperbolic(h: f64, r: f64, t: f64) -> Result<f64> {
    check_non_negative("h", h)?;
    check_positive("r", r)?;
    check_time(t)?;
    Ok(general_hyperbolic(h, r, t))
}

/// `(1 + h t^c)^(-r/h)`: the general hyperbolic function on the
/// subjective time scale `t^c`.
pub fn eval_subjective_general_hyperbolic(h: f64, r: f64, c: f64, t: f64) -> Result<f64> {
    check_non_negative("h", h)?;
    check_positive("r", r)?;
    check_positive("c", c)?;
    check_time(t)?;
    Ok(general_hyperbolic(h, r, t.powf(c)))
}

/// Prelec's decreasing impatience for the general hyperbolic model,
/// `h / (1 + h t)`.
pub fn decreasing_impatience(h: f64, t: f64) -> Result<f64> {
    check_non_negative("h", h)?;
    check_time(t)?;
    Ok(h / (1.0 + h * t))
}

/// Evaluates a psychophysical mapping. No clamping is applied, so a
/// negative intercept can produce negative predictions.
pub fn eval_psych(params: PsychParams, t: f64) -> Result<f64> {
    check_time(t)?;
    if let PsychParams::Power { beta, .. } = params {
        check_positive("beta", beta)?;
    }
    Ok(params.value_at(t))
}

pub(crate) fn quasi_hyperbolic(y: f64, delta: f64, t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        y * delta.powf(t)
    }
}

pub(crate) fn general_hyperbolic(h: f64, r: f64, t: f64) -> f64 {
    if h < H_EPSILON {
        (-r * t).exp()
    } else {
        (-(r / h) * (h * t).ln_1p()).exp()
    }
}

impl DiscountParams {
    /// Checks the family's parameter constraints.
    pub fn validate(&self) -> Result<()> {
        match *self {
            DiscountParams::Exponential { delta } => check_positive("delta", delta),
            DiscountParams::QuasiHyperbolic { y, delta } => eval_quasi_hyperbolic(y, delta, 0.0).map(|_| ()),
            DiscountParams::ProportionalHyperbolic { delta } => check_positive("delta", delta),
            DiscountParams::GeneralHyperbolic { h, r } => {
                check_non_negative("h", h)?;
                check_positive("r", r)
            }
            DiscountParams::SubjectiveGeneralHyperbolic { h, r, c } => {
                check_non_negative("h", h)?;
                check_positive("r", r)?;
                check_positive("c", c)
            }
        }
    }

    /// Validated evaluation.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.validate()?;
        check_time(t)?;
        Ok(self.value_at(t))
    }

    /// Unchecked evaluation for already-validated parameters.
    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            DiscountParams::Exponential { delta } => (-delta * t).exp(),
            DiscountParams::QuasiHyperbolic { y, delta } => quasi_hyperbolic(y, delta, t),
            DiscountParams::ProportionalHyperbolic { delta } => 1.0 / (1.0 + delta * t),
            DiscountParams::GeneralHyperbolic { h, r } => general_hyperbolic(h, r, t),
            DiscountParams::SubjectiveGeneralHyperbolic { h, r, c } => general_hyperbolic(h, r, t.powf(c)),
        }
    }

    /// Analytic d/dt of the discount function for `t > 0`.
    pub fn slope_at(&self, t: f64) -> f64 {
        let v = self.value_at(t);
        match *self {
            DiscountParams::Exponential { delta } => -delta * v,
            DiscountParams::QuasiHyperbolic { delta, .. } => v * delta.ln(),
            DiscountParams::ProportionalHyperbolic { delta } => -delta * v * v,
            DiscountParams::GeneralHyperbolic { h, r } => -r * v / (1.0 + h * t),
            DiscountParams::SubjectiveGeneralHyperbolic { h, r, c } => {
                let s = t.powf(c);
                -r * v / (1.0 + h * s) * c * t.powf(c - 1.0)
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            DiscountParams::Exponential { .. } => "exponential",
            DiscountParams::QuasiHyperbolic { .. } => "quasi_hyperbolic",
            DiscountParams::ProportionalHyperbolic { .. } => "proportional_hyperbolic",
            DiscountParams::GeneralHyperbolic { .. } => "general_hyperbolic",
            DiscountParams::SubjectiveGeneralHyperbolic { .. } => "subjective_general_hyperbolic",
        }
    }
}

impl PsychParams {
    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            PsychParams::Linear { c, a } => c + a * t,
            PsychParams::Power { c, a, beta } => c + a * t.powf(beta),
        }
    }

    /// The exponent of the mapping; 1 for linear.
    pub fn exponent(&self) -> f64 {
        match *self {
            PsychParams::Linear { .. } => 1.0,
            PsychParams::Power { beta, .. } => beta,
        }
    }
}
