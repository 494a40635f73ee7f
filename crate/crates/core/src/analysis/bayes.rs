//! One-sided paired-samples Bayes factors.
//!
//! The standardized effect `d` of the paired differences gets a Cauchy
//! prior of scale `r` truncated to one sign. The likelihood of the observed
//! t statistic under effect `d` is the noncentral t density with
//! noncentrality `d sqrt(n)`, evaluated by quadrature over the chi-distributed
//! scale variable.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const DEFAULT_PRIOR_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesConfig {
    pub prior_scale: f64,
    pub rel_tol: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self { prior_scale: DEFAULT_PRIOR_SCALE, rel_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedBayesFactor {
    pub n: usize,
    pub t: f64,
    /// Mean of `objective - subjective`.
    pub mean_difference: f64,
    /// Evidence for `h_objective < h_subjective` against its complement.
    pub bf_objective_lower: f64,
    /// Evidence for `h_objective >= h_subjective` against its complement.
    pub bf_objective_not_lower: f64,
    /// Each one-sided alternative against the point null.
    pub bf_negative_vs_null: f64,
    pub bf_positive_vs_null: f64,
}

// 15-point Kronrod nodes on [0, 1] symmetric half plus weights; the 7-point
// Gauss rule uses every other node.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut segments = vec![(a, b, gauss_kronrod(&f, a, b))];
    for _ in 0..2000 {
        let total: f64 = segments.iter().map(|s| s.2 .0).sum();
        let err: f64 = segments.iter().map(|s| s.2 .1).sum();
        if err <= rel_tol * total.abs() || err < 1e-300 {
            break;
        }
        let (i, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .expect("non-empty");
        let (lo, hi, _) = segments.swap_remove(i);
        let mid = 0.5 * (lo + hi);
        segments.push((lo, mid, gauss_kronrod(&f, lo, mid)));
        segments.push((mid, hi, gauss_kronrod(&f, mid, hi)));
    }
    segments.iter().map(|s| s.2 .0).sum()
}

/// Log density of `S = sqrt(W / nu)` with `W ~ chi^2(nu)`.
pub(crate) fn ln_scale_density(s: f64, nu: f64) -> f64 {
    if s <= 0.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + nu.ln() + s.ln() + (0.5 * nu - 1.0) * (nu * s * s).ln()
        - 0.5 * nu * s * s
        - 0.5 * nu * std::f64::consts::LN_2
        - ln_gamma(0.5 * nu)
}

/// Integrand of the noncentral t density over the scale variable,
/// `s phi(t s - lambda) p_S(s)`.
pub(crate) fn noncentral_t_integrand(s: f64, t: f64, nu: f64, lambda: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let z = t * s - lambda;
    (s.ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() + ln_scale_density(s, nu)).exp()
}

/// Noncentral t density by quadrature over `s = x / (1 - x)`.
pub fn noncentral_t_pdf(t: f64, nu: f64, lambda: f64, rel_tol: f64) -> f64 {
    // the scale variable is concentrated near 1 with spread ~ 1/sqrt(2 nu);
    // split there so the adaptive rule sees the peak
    let g = |x: f64| {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        let s = x / (1.0 - x);
        noncentral_t_integrand(s, t, nu, lambda) / ((1.0 - x) * (1.0 - x))
    };
    integrate(g, 0.0, 0.5, rel_tol) + integrate(g, 0.5, 1.0, rel_tol)
}

/// Central t density in closed form.
pub fn t_pdf(t: f64, nu: f64) -> f64 {
    (ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (1.0 + t * t / nu).ln())
    .exp()
}

/// Marginal likelihood of `t` when the effect has a half-Cauchy prior on
/// the given side; `sign` is +1 or -1. Uses `d = r tan(theta)`, under which
/// the truncated prior becomes uniform on `theta` with density `2/pi`.
fn one_sided_marginal(t: f64, n: usize, sign: f64, cfg: &BayesConfig) -> f64 {
    let nu = (n - 1) as f64;
    let root_n = (n as f64).sqrt();
    let f = |theta: f64| {
        if theta >= std::f64::consts::FRAC_PI_2 {
            return 0.0;
        }
        let lambda = sign * root_n * cfg.prior_scale * theta.tan();
        noncentral_t_pdf(t, nu, lambda, cfg.rel_tol * 0.1)
    };
    std::f64::consts::FRAC_2_PI * integrate(f, 0.0, std::f64::consts::FRAC_PI_2, cfg.rel_tol)
}

/// Paired one-sided Bayes factors for `h_objective` vs `h_subjective`.
pub fn paired_bayes_factor(h_objective: &[f64], h_subjective: &[f64], cfg: &BayesConfig) -> Result<PairedBayesFactor> {
    if h_objective.len() != h_subjective.len() {
        return Err(Error::DegenerateData("paired lists differ in length".into()));
    }
    let n = h_objective.len();
    if n < 2 {
        return Err(Error::DegenerateData(format!("paired test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = h_objective.iter().zip(h_subjective).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateData("paired differences have zero variance".into()));
    }
    let t = mean / (var / nf).sqrt();
    let null = t_pdf(t, nf - 1.0);
    let m_pos = one_sided_marginal(t, n, 1.0, cfg);
    let m_neg = one_sided_marginal(t, n, -1.0, cfg);
    Ok(PairedBayesFactor {
        n,
        t,
        mean_difference: mean,
        bf_objective_lower: m_neg / m_pos,
        bf_objective_not_lower: m_pos / m_neg,
        bf_negative_vs_null: m_neg / null,
        bf_positive_vs_null: m_pos / null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, StudentsT};

    #[test]
    fn quadrature_on_known_integrals() {
        let v = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
        let v = integrate(|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-12);
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn scale_density_integrates_to_one() {
        for nu in [1.0, 5.0, 13.0, 40.0] {
            let v = integrate(|s| ln_scale_density(s, nu).exp(), 0.0, 20.0, 1e-12);
            assert!((v - 1.0).abs() < 1e-9, "nu = {nu}: {v}");
        }
    }

    #[test]
    fn zero_noncentrality_matches_student_t() {
        for nu in [3.0, 13.0, 23.0] {
            let dist = StudentsT::new(0.0, 1.0, nu).unwrap();
            for t in [-3.0, -0.4, 0.0, 1.2, 7.5] {
                let q = noncentral_t_pdf(t, nu, 0.0, 1e-10);
                assert!((q / dist.pdf(t) - 1.0).abs() < 1e-8, "nu {nu} t {t}: {q} vs {}", dist.pdf(t));
                assert!((t_pdf(t, nu) / dist.pdf(t) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noncentral_density_reflects() {
        let a = noncentral_t_pdf(1.7, 9.0, 2.0, 1e-10);
        let b = noncentral_t_pdf(-1.7, 9.0, -2.0, 1e-10);
        assert!((a - b).abs() < 1e-14);
        let total = integrate(|t| noncentral_t_pdf(t, 9.0, 2.0, 1e-10), -30.0, 60.0, 1e-9);
        assert!((total - 1.0).abs() < 1e-7, "{total}");
    }

    #[test]
    fn n_one_is_degenerate() {
        assert!(matches!(
            paired_bayes_factor(&[0.1], &[0.2], &BayesConfig::default()),
            Err(Error::DegenerateData(_))
        ));
        assert!(matches!(
            paired_bayes_factor(&[0.1, 0.2], &[0.1, 0.2], &BayesConfig::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn directional_factors_are_reciprocal() {
        let obj = [0.3, 0.25, 0.4, 0.1, 0.22, 0.31];
        let subj = [0.2, 0.3, 0.35, 0.12, 0.1, 0.2];
        let bf = paired_bayes_factor(&obj, &subj, &BayesConfig::default()).unwrap();
        assert!((bf.bf_objective_lower * bf.bf_objective_not_lower - 1.0).abs() < 1e-12);
        assert!(bf.t > 0.0);
        assert!(bf.bf_objective_not_lower > 1.0);
    }
}
