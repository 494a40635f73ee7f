//! Synthetic participants for both tasks, cohort generators and a
//! parameter-recovery harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::{build_cohort_report, AnalysisConfig, CohortReport, DiscountClass, SubjectData, TimeMapping};
use crate::error::{Error, Result};
use crate::magnitude::{MagnitudeAnswer, MagnitudeConfig, MagnitudeSession, MagnitudeTrial};
use crate::models::{DiscountParams, PsychParams};
use crate::staircase::{Choice, ChoiceSession, ChoiceTrial, SessionStatus, StaircaseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChoiceNoise {
    Deterministic,
    /// `P(later) = 1 / (1 + exp(-(later_value - now_amount) / temperature))`.
    Logistic { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub discount: DiscountParams,
    pub choice_noise: ChoiceNoise,
    /// Discounting is applied to `t^time_map_c`.
    #[serde(default = "one")]
    pub time_map_c: f64,
    pub magnitude: PsychParams,
    /// Gaussian noise on line responses, in pixels.
    pub response_sd: f64,
    #[serde(default)]
    pub timeout_rate: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

// Distinct streams derived from one agent seed.
const CHOICE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const MAGNITUDE_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        self.discount.validate()?;
        if !(self.time_map_c > 0.0) || !self.time_map_c.is_finite() {
            return Err(Error::InvalidConfig(format!("time_map_c must be positive, got {}", self.time_map_c)));
        }
        if !(self.response_sd >= 0.0) || !self.response_sd.is_finite() {
            return Err(Error::InvalidConfig(format!("response_sd must be non-negative, got {}", self.response_sd)));
        }
        if !(0.0..=1.0).contains(&self.timeout_rate) {
            return Err(Error::InvalidConfig(format!("timeout_rate must lie in [0, 1], got {}", self.timeout_rate)));
        }
        if let ChoiceNoise::Logistic { temperature } = self.choice_noise {
            if !(temperature > 0.0) || !temperature.is_finite() {
                return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
            }
        }
        Ok(())
    }

    /// Present value of the later option.
    pub fn later_value(&self, trial: &ChoiceTrial) -> f64 {
        trial.later_amount * self.discount.value_at((trial.interval as f64).powf(self.time_map_c))
    }

    pub fn choose<R: Rng>(&self, trial: &ChoiceTrial, rng: &mut R) -> Choice {
        let diff = self.later_value(trial) - trial.now_amount;
        let later = match self.choice_noise {
            ChoiceNoise::Deterministic => diff > 0.0,
            ChoiceNoise::Logistic { temperature } => {
                let p = 1.0 / (1.0 + (-diff / temperature).exp());
                rng.random::<f64>() < p
            }
        };
        if later {
            Choice::Later
        } else {
            Choice::Now
        }
    }

    /// Line response, clamped to the line; the flag reports clamping.
    pub fn respond<R: Rng>(&self, trial: &MagnitudeTrial, line_max_px: u32, rng: &mut R) -> (MagnitudeAnswer, bool) {
        if self.timeout_rate > 0.0 && rng.random::<f64>() < self.timeout_rate {
            return (MagnitudeAnswer::Timeout, false);
        }
        let mean = self.magnitude.value_at(trial.interval as f64);
        let noise = if self.response_sd > 0.0 {
            Normal::new(0.0, self.response_sd).expect("validated sd").sample(rng)
        } else {
            0.0
        };
        let raw = (mean + noise).round();
        let clamped = raw.clamp(0.0, line_max_px as f64);
        (MagnitudeAnswer::Line(clamped as u32), clamped != raw)
    }

    pub fn choice_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ CHOICE_STREAM)
    }

    pub fn magnitude_rng(&self, seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed ^ MAGNITUDE_STREAM)
    }
}

/// Runs the staircase until it stops, whether complete or capped.
pub fn run_choice_session(agent: &AgentSpec, config: StaircaseConfig) -> Result<ChoiceSession> {
    agent.validate()?;
    let mut session = ChoiceSession::new(agent.seed, config)?;
    let mut rng = agent.choice_rng();
    while session.status() == SessionStatus::Running {
        let trial = session.next_trial()?;
        session.record_choice(&trial, agent.choose(&trial, &mut rng), None)?;
    }
    Ok(session)
}

/// Runs the staircase to completion with the agent's seed.
pub fn simulate_choice_session(agent: &AgentSpec, config: StaircaseConfig) -> Result<ChoiceSession> {
    let session = run_choice_session(agent, config)?;
    match session.status() {
        SessionStatus::CapExceeded { interval } => {
            Err(Error::CapExceeded { interval, cap: session.config().max_trials_per_interval })
        }
        _ => Ok(session),
    }
}

#[derive(Debug, Clone)]
pub struct MagnitudeRun {
    pub session: MagnitudeSession,
    /// Responses clamped at either end of the line.
    pub clamp_events: usize,
    /// The subset clamped at the right end.
    pub ceiling_clamps: usize,
}

pub fn simulate_magnitude_session(agent: &AgentSpec, seed: u64, config: MagnitudeConfig) -> Result<MagnitudeRun> {
    agent.validate()?;
    let mut session = MagnitudeSession::new(seed, config)?;
    let mut rng = agent.magnitude_rng(seed);
    let (mut clamp_events, mut ceiling_clamps) = (0, 0);
    let max = session.config().line_max_px;
    while session.status() == SessionStatus::Running {
        let trial = session.next_trial()?;
        let (answer, clamped) = agent.respond(&trial, max, &mut rng);
        clamp_events += usize::from(clamped);
        ceiling_clamps += usize::from(clamped && answer == MagnitudeAnswer::Line(max));
        let latency = match answer {
            MagnitudeAnswer::Timeout => None,
            MagnitudeAnswer::Line(_) => Some(1.0 + rng.random::<f64>() * 3.0),
        };
        session.record_magnitude(&trial, answer, latency)?;
    }
    Ok(MagnitudeRun { session, clamp_events, ceiling_clamps })
}

/// Ranges used by the synthetic cohort generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n: usize,
    /// Share of agents with a compressive (power) time mapping.
    pub power_share: f64,
    /// Share of agents discounting hyperbolically in calendar time.
    pub hyperbolic_share: f64,
    pub beta_range: (f64, f64),
    /// Median exponential rate per month and log-scale spread.
    pub exponential_rate: (f64, f64),
    pub h_range: (f64, f64),
    pub hyperbolic_rate: (f64, f64),
    pub temperature: f64,
    pub response_sd: f64,
    /// Range of the mean line response at the longest interval.
    pub top_response_px: (f64, f64),
    pub timeout_rate: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n: 24,
            power_share: 16.0 / 24.0,
            hyperbolic_share: 15.0 / 24.0,
            beta_range: (0.4, 0.85),
            exponential_rate: (0.09, 0.25),
            h_range: (0.2, 0.6),
            hyperbolic_rate: (0.45, 0.25),
            temperature: 2.0,
            response_sd: 18.0,
            top_response_px: (420.0, 600.0),
            timeout_rate: 0.0,
        }
    }
}

fn psych_for(rng: &mut ChaCha8Rng, spec: &CohortSpec, power: bool, longest: f64) -> PsychParams {
    let c = rng.random_range(5.0..30.0);
    let top = rng.random_range(spec.top_response_px.0..spec.top_response_px.1);
    if power {
        let beta = rng.random_range(spec.beta_range.0..spec.beta_range.1);
        PsychParams::Power { c, a: (top - c) / longest.powf(beta), beta }
    } else {
        PsychParams::Linear { c, a: (top - c) / longest }
    }
}

/// Mixed cohort with stratified class counts: `round(n * share)` agents
/// get a power mapping and, independently shuffled, `round(n * share)`
/// discount hyperbolically. All discount in calendar time.
pub fn default_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<AgentSpec>> {
    if spec.n == 0 {
        return Err(Error::InvalidConfig("cohort size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_power = (spec.n as f64 * spec.power_share).round() as usize;
    let n_hyper = (spec.n as f64 * spec.hyperbolic_share).round() as usize;
    let mut power: Vec<bool> = (0..spec.n).map(|i| i < n_power).collect();
    let mut hyper: Vec<bool> = (0..spec.n).map(|i| i < n_hyper).collect();
    for v in [&mut power, &mut hyper] {
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
    }
    let exp_rate = LogNormal::new(spec.exponential_rate.0.ln(), spec.exponential_rate.1)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let hyp_rate = LogNormal::new(spec.hyperbolic_rate.0.ln(), spec.hyperbolic_rate.1)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let longest = crate::staircase::default_intervals().into_iter().max().unwrap_or(36) as f64;
    (0..spec.n)
        .map(|i| {
            let discount = if hyper[i] {
                DiscountParams::GeneralHyperbolic {
                    h: rng.random_range(spec.h_range.0..spec.h_range.1),
                    r: hyp_rate.sample(&mut rng).clamp(0.02, 2.0),
                }
            } else {
                DiscountParams::Exponential { delta: exp_rate.sample(&mut rng).clamp(0.01, 1.0) }
            };
            let agent = AgentSpec {
                id: format!("s{:02}", i + 1),
                discount,
                choice_noise: ChoiceNoise::Logistic { temperature: spec.temperature },
                time_map_c: 1.0,
                magnitude: psych_for(&mut rng, spec, power[i], longest),
                response_sd: spec.response_sd,
                timeout_rate: spec.timeout_rate,
                seed: rng.random(),
            };
            agent.validate()?;
            Ok(agent)
        })
        .collect()
}

/// Agents that discount exponentially in subjective time `t^c` and whose
/// line responses follow a power law with exponent `c`.
pub fn subjective_time_cohort(spec: &CohortSpec, c: f64, seed: u64) -> Result<Vec<AgentSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp_rate = LogNormal::new(spec.exponential_rate.0.ln(), spec.exponential_rate.1)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let longest = crate::staircase::default_intervals().into_iter().max().unwrap_or(36) as f64;
    (0..spec.n)
        .map(|i| {
            let c0 = rng.random_range(5.0..30.0);
            let top = rng.random_range(spec.top_response_px.0..spec.top_response_px.1);
            let agent = AgentSpec {
                id: format!("s{:02}", i + 1),
                discount: DiscountParams::Exponential { delta: exp_rate.sample(&mut rng).clamp(0.01, 1.0) },
                choice_noise: ChoiceNoise::Logistic { temperature: spec.temperature },
                time_map_c: c,
                magnitude: PsychParams::Power { c: c0, a: (top - c0) / longest.powf(c), beta: c },
                response_sd: spec.response_sd,
                timeout_rate: spec.timeout_rate,
                seed: rng.random(),
            };
            agent.validate()?;
            Ok(agent)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub staircase: StaircaseConfig,
    pub magnitude: MagnitudeConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { staircase: StaircaseConfig::default(), magnitude: MagnitudeConfig::default(), analysis: AnalysisConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub agent_id: String,
    /// `None` when the staircase hit its trial cap.
    pub choice_trials: Option<usize>,
    pub clamp_events: usize,
    pub ceiling_clamps: usize,
    pub true_time_mapping: TimeMapping,
    pub true_beta: f64,
    pub classified_time_mapping: Option<TimeMapping>,
    pub estimated_beta: Option<f64>,
    /// Generating family in calendar time, if it is one of the classified ones.
    pub true_discount_class: Option<DiscountClass>,
    pub classified_discount_class: Option<DiscountClass>,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    pub mean_choice_trials: f64,
    pub time_mapping_accuracy: f64,
    pub discount_accuracy: f64,
    pub mean_abs_beta_error: f64,
    pub cohort: CohortReport,
}

/// Simulated data for one agent, ready for analysis.
pub struct SimulatedSubject {
    pub agent: AgentSpec,
    pub choice: ChoiceSession,
    pub magnitude: MagnitudeRun,
}

impl SimulatedSubject {
    pub fn subject_data(&self) -> Result<SubjectData> {
        Ok(SubjectData {
            id: self.agent.id.clone(),
            dv: self.choice.dv_series()?,
            magnitude: self.magnitude.session.magnitude_series()?,
        })
    }
}

/// Simulates both tasks for every agent; agents whose staircase hits the
/// cap are reported separately by id.
pub fn simulate_cohort(agents: &[AgentSpec], cfg: &PipelineConfig) -> Result<(Vec<SimulatedSubject>, Vec<String>)> {
    let mut done = vec![];
    let mut capped = vec![];
    for agent in agents {
        match simulate_choice_session(agent, cfg.staircase.clone()) {
            Ok(choice) => {
                let magnitude = simulate_magnitude_session(agent, agent.seed, cfg.magnitude.clone())?;
                done.push(SimulatedSubject { agent: agent.clone(), choice, magnitude });
            }
            Err(Error::CapExceeded { interval, .. }) => {
                log::warn!("agent {} hit the trial cap at {interval} months", agent.id);
                capped.push(agent.id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((done, capped))
}

fn true_class(agent: &AgentSpec) -> Option<DiscountClass> {
    if agent.time_map_c != 1.0 {
        return None;
    }
    match agent.discount {
        DiscountParams::Exponential { .. } => Some(DiscountClass::Exponential),
        DiscountParams::ProportionalHyperbolic { .. } => Some(DiscountClass::ProportionalHyperbolic),
        DiscountParams::GeneralHyperbolic { .. } => Some(DiscountClass::GeneralHyperbolic),
        _ => None,
    }
}

/// Simulates, analyses and compares classifications with the generating
/// parameters. Hyperbolic classes are compared as one group.
pub fn run_recovery(agents: &[AgentSpec], cfg: &PipelineConfig) -> Result<RecoveryReport> {
    let (subjects, _) = simulate_cohort(agents, cfg)?;
    let data: Vec<SubjectData> = subjects.iter().map(SimulatedSubject::subject_data).collect::<Result<_>>()?;
    let cohort = build_cohort_report(&data, &cfg.analysis)?;

    let rows: Vec<RecoveryRow> = agents
        .iter()
        .map(|agent| {
            let sim = subjects.iter().find(|s| s.agent.id == agent.id);
            let summary = cohort.subjects.iter().find(|s| s.id == agent.id);
            let (true_time_mapping, true_beta) = match agent.magnitude {
                PsychParams::Power { beta, .. } if beta != 1.0 => (TimeMapping::Power, beta),
                _ => (TimeMapping::Linear, 1.0),
            };
            RecoveryRow {
                agent_id: agent.id.clone(),
                choice_trials: sim.map(|s| s.choice.total_trials()),
                clamp_events: sim.map_or(0, |s| s.magnitude.clamp_events),
                ceiling_clamps: sim.map_or(0, |s| s.magnitude.ceiling_clamps),
                true_time_mapping,
                true_beta,
                classified_time_mapping: summary.and_then(|s| s.time_mapping),
                estimated_beta: summary.and_then(|s| s.beta),
                true_discount_class: true_class(agent),
                classified_discount_class: summary.and_then(|s| s.discount_class),
                included: summary.is_some_and(|s| s.included()),
            }
        })
        .collect();

    let trials: Vec<f64> = rows.iter().filter_map(|r| r.choice_trials).map(|t| t as f64).collect();
    let mean_choice_trials = trials.iter().sum::<f64>() / trials.len().max(1) as f64;
    let frac = |hits: usize, total: usize| if total == 0 { f64::NAN } else { hits as f64 / total as f64 };
    let mapped: Vec<&RecoveryRow> = rows.iter().filter(|r| r.classified_time_mapping.is_some()).collect();
    let time_mapping_accuracy =
        frac(mapped.iter().filter(|r| r.classified_time_mapping == Some(r.true_time_mapping)).count(), mapped.len());
    let disc: Vec<&RecoveryRow> =
        rows.iter().filter(|r| r.true_discount_class.is_some() && r.classified_discount_class.is_some()).collect();
    let discount_accuracy = frac(
        disc.iter()
            .filter(|r| r.true_discount_class.map(|c| c.is_hyperbolic()) == r.classified_discount_class.map(|c| c.is_hyperbolic()))
            .count(),
        disc.len(),
    );
    let beta_errs: Vec<f64> = mapped.iter().filter_map(|r| r.estimated_beta.map(|b| (b - r.true_beta).abs())).collect();
    let mean_abs_beta_error = beta_errs.iter().sum::<f64>() / beta_errs.len().max(1) as f64;

    Ok(RecoveryReport { rows, mean_choice_trials, time_mapping_accuracy, discount_accuracy, mean_abs_beta_error, cohort })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(noise: ChoiceNoise) -> AgentSpec {
        AgentSpec {
            id: "a".into(),
            discount: DiscountParams::Exponential { delta: 0.05 },
            choice_noise: noise,
            time_map_c: 1.0,
            magnitude: PsychParams::Linear { c: 10.0, a: 15.0 },
            response_sd: 0.0,
            timeout_rate: 0.0,
            seed: 42,
        }
    }

    #[test]
    fn deterministic_agent_recovers_its_discount_function() {
        let s = simulate_choice_session(&agent(ChoiceNoise::Deterministic), StaircaseConfig::default()).unwrap();
        let dv = s.dv_series().unwrap();
        for (t, y) in dv.t.iter().zip(&dv.y) {
            let truth = (-0.05 * t).exp();
            // the staircase resolves the indifference point to one step
            assert!((y - truth).abs() / truth < 0.11, "t {t}: {y} vs {truth}");
        }
    }

    #[test]
    fn tiny_temperature_matches_deterministic() {
        let a = simulate_choice_session(&agent(ChoiceNoise::Deterministic), StaircaseConfig::default()).unwrap();
        let b = simulate_choice_session(&agent(ChoiceNoise::Logistic { temperature: 1e-9 }), StaircaseConfig::default()).unwrap();
        assert_eq!(a.dv_series().unwrap(), b.dv_series().unwrap());
    }

    #[test]
    fn simulation_is_seeded() {
        let mut ag = agent(ChoiceNoise::Logistic { temperature: 3.0 });
        ag.response_sd = 10.0;
        let a = simulate_choice_session(&ag, StaircaseConfig::default()).unwrap();
        let b = simulate_choice_session(&ag, StaircaseConfig::default()).unwrap();
        assert_eq!(a.events(), b.events());
        let m1 = simulate_magnitude_session(&ag, 7, MagnitudeConfig::default()).unwrap();
        let m2 = simulate_magnitude_session(&ag, 7, MagnitudeConfig::default()).unwrap();
        assert_eq!(m1.session.events(), m2.session.events());
    }

    #[test]
    fn noiseless_magnitude_matches_mapping() {
        let m = simulate_magnitude_session(&agent(ChoiceNoise::Deterministic), 1, MagnitudeConfig::default()).unwrap();
        let s = m.session.magnitude_series().unwrap();
        for (t, y) in s.t.iter().zip(&s.y) {
            assert_eq!(*y, (10.0 + 15.0 * t).round());
        }
        assert_eq!(m.clamp_events, 0);
    }

    #[test]
    fn clamping_is_counted() {
        let mut ag = agent(ChoiceNoise::Deterministic);
        ag.magnitude = PsychParams::Linear { c: 0.0, a: 30.0 };
        let m = simulate_magnitude_session(&ag, 1, MagnitudeConfig::default()).unwrap();
        assert!(m.clamp_events > 0);
        assert_eq!(m.ceiling_clamps, m.clamp_events);
        assert!(m.session.responses().iter().all(|r| r.line_px.unwrap() <= 685));
    }

    #[test]
    fn timeouts_are_missing() {
        let mut ag = agent(ChoiceNoise::Deterministic);
        ag.timeout_rate = 0.3;
        let m = simulate_magnitude_session(&ag, 3, MagnitudeConfig::default()).unwrap();
        assert!(m.session.responses().iter().any(|r| r.line_px.is_none()));
    }

    #[test]
    fn invalid_agent_is_rejected() {
        let mut ag = agent(ChoiceNoise::Logistic { temperature: 0.0 });
        assert!(simulate_choice_session(&ag, StaircaseConfig::default()).is_err());
        ag.choice_noise = ChoiceNoise::Deterministic;
        ag.time_map_c = -1.0;
        assert!(ag.validate().is_err());
    }

    #[test]
    fn cohort_strata_are_exact() {
        let agents = default_cohort(&CohortSpec::default(), 5).unwrap();
        assert_eq!(agents.len(), 24);
        let power = agents.iter().filter(|a| matches!(a.magnitude, PsychParams::Power { .. })).count();
        let hyper = agents.iter().filter(|a| matches!(a.discount, DiscountParams::GeneralHyperbolic { .. })).count();
        assert_eq!((power, hyper), (16, 15));
    }

    #[test]
    fn indifference_at_twelve_months() {
        let cases = [
            (DiscountParams::Exponential { delta: 0.05 }, 100.0 / (-0.6f64).exp()),
            (DiscountParams::GeneralHyperbolic { h: 0.133, r: 0.094 }, 100.0 / 0.509545713813518),
        ];
        for (discount, analytic) in cases {
            let mut ag = agent(ChoiceNoise::Deterministic);
            ag.discount = discount;
            let s = simulate_choice_session(&ag, StaircaseConfig::default()).unwrap();
            let ep = s.equivalence_point(12).unwrap().ep;
            assert!(ep / analytic < 1.1 && analytic / ep < 1.1, "{ep} vs {analytic}");
        }
    }

    #[test]
    fn noiseless_line_values() {
        let mut ag = agent(ChoiceNoise::Deterministic);
        let mut rng = ag.magnitude_rng(0);
        let trial = |interval| MagnitudeTrial { trial_index: 0, interval, repetition: 1, is_training: false };
        ag.magnitude = PsychParams::Power { c: 0.0, a: 60.0, beta: 0.67 };
        assert_eq!(ag.respond(&trial(36), 685, &mut rng), (MagnitudeAnswer::Line(662), false));
        ag.magnitude = PsychParams::Linear { c: 0.0, a: 10.0 };
        assert_eq!(ag.respond(&trial(12), 685, &mut rng), (MagnitudeAnswer::Line(120), false));
    }

    #[test]
    fn certain_timeouts_leave_every_cell_empty() {
        let mut ag = agent(ChoiceNoise::Deterministic);
        ag.timeout_rate = 1.0;
        let m = simulate_magnitude_session(&ag, 3, MagnitudeConfig::default()).unwrap();
        assert!(m.session.responses().iter().all(|r| r.line_px.is_none()));
        assert!(matches!(m.session.magnitude_series(), Err(Error::EmptyCell(_))));
    }
}
