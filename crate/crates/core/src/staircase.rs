//! Adaptive staircase for the intertemporal choice task.
//!
//! Each interval runs its own staircase: the later amount starts at 150 and
//! is multiplied by 1.1 after a Now choice and by 0.9 after a Later choice
//! on that interval. Intervals are presented in a fresh seeded permutation
//! each block. An interval terminates once it has three choice inversions
//! whose second trial has within-interval index 11 or later; the session
//! completes when every interval has terminated.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{DataSeries, GridSeries};

/// The 12-interval grid {3, 6, ..., 36} months.
pub fn default_intervals() -> Vec<u32> {
    (1..=12).map(|i| 3 * i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaircaseConfig {
    pub intervals: Vec<u32>,
    pub now_amount: f64,
    pub start_later_amount: f64,
    /// Multiplicative step; the later amount moves by `1 ± step`.
    pub step: f64,
    /// Inversions count only when their second trial index exceeds this.
    pub burn_in_trials: usize,
    pub required_inversions: usize,
    pub max_trials_per_interval: usize,
    /// Remove terminated intervals from later blocks. Off by default: every
    /// block presents all intervals until the whole session terminates.
    pub drop_completed_intervals: bool,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        Self {
            intervals: default_intervals(),
            now_amount: 100.0,
            start_later_amount: 150.0,
            step: 0.10,
            burn_in_trials: 10,
            required_inversions: 3,
            max_trials_per_interval: 60,
            drop_completed_intervals: false,
        }
    }
}

impl StaircaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::InvalidConfig("no intervals".into()));
        }
        let mut sorted = self.intervals.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.intervals.len() {
            return Err(Error::InvalidConfig("duplicate intervals".into()));
        }
        if !(self.step > 0.0 && self.step < 1.0) {
            return Err(Error::InvalidConfig(format!("step must lie in (0, 1), got {}", self.step)));
        }
        if !(self.now_amount > 0.0 && self.start_later_amount > 0.0) {
            return Err(Error::InvalidConfig("amounts must be positive".into()));
        }
        if self.required_inversions == 0 || self.max_trials_per_interval <= self.burn_in_trials {
            return Err(Error::InvalidConfig("termination rule cannot be met".into()));
        }
        Ok(())
    }

    /// Later amount after `n_now` Now and `n_later` Later choices.
    pub fn later_amount(&self, n_now: usize, n_later: usize) -> f64 {
        self.start_later_amount * (1.0 + self.step).powi(n_now as i32) * (1.0 - self.step).powi(n_later as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Now,
    Later,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceTrial {
    pub interval: u32,
    pub now_amount: f64,
    pub later_amount: f64,
    pub trial_index_global: u64,
    /// 1-based position within this interval's staircase.
    pub trial_index_within_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub trial: ChoiceTrial,
    pub choice: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Complete,
    /// An unterminated interval reached the per-interval trial cap.
    CapExceeded { interval: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChoiceEvent {
    TrialIssued {
        trial: ChoiceTrial,
    },
    ResponseRecorded {
        trial_index: u64,
        choice: Choice,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response_time: Option<f64>,
    },
    StatusChanged {
        status: SessionStatus,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalencePoint {
    pub interval: u32,
    pub ep: f64,
    pub dv: f64,
    /// The inversion midpoints averaged into `ep`.
    pub inversion_points: [f64; 3],
}

/// One participant's choice task.
#[derive(Debug, Clone)]
pub struct ChoiceSession {
    config: StaircaseConfig,
    seed: u64,
    rng: ChaCha8Rng,
    histories: BTreeMap<u32, Vec<ChoiceRecord>>,
    block: VecDeque<u32>,
    blocks_started: usize,
    outstanding: Option<ChoiceTrial>,
    next_global: u64,
    status: SessionStatus,
    events: Vec<ChoiceEvent>,
}

/// 1-based indices (within the history) of trials whose choice differs
/// from the previous trial's.
pub fn inversion_indices(choices: &[Choice]) -> Vec<usize> {
    choices.windows(2).enumerate().filter(|(_, w)| w[0] != w[1]).map(|(i, _)| i + 2).collect()
}

impl ChoiceSession {
    pub fn new(seed: u64, config: StaircaseConfig) -> Result<Self> {
        config.validate()?;
        let histories = config.intervals.iter().map(|&t| (t, Vec::new())).collect();
        let mut s = Self {
            config,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            histories,
            block: VecDeque::new(),
            blocks_started: 0,
            outstanding: None,
            next_global: 0,
            status: SessionStatus::Running,
            events: Vec::new(),
        };
        s.start_block();
        Ok(s)
    }

    pub fn config(&self) -> &StaircaseConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn is_complete(&self) -> bool {
        self.status == SessionStatus::Complete
    }

    pub fn events(&self) -> &[ChoiceEvent] {
        &self.events
    }

    pub fn history(&self, interval: u32) -> Result<&[ChoiceRecord]> {
        self.histories.get(&interval).map(Vec::as_slice).ok_or(Error::UnknownInterval(interval))
    }

    pub fn total_trials(&self) -> usize {
        self.histories.values().map(Vec::len).sum()
    }

    pub fn blocks_started(&self) -> usize {
        self.blocks_started
    }

    pub fn outstanding(&self) -> Option<&ChoiceTrial> {
        self.outstanding.as_ref()
    }

    fn active_intervals(&self) -> Vec<u32> {
        self.config
            .intervals
            .iter()
            .copied()
            .filter(|&t| {
                let h = &self.histories[&t];
                h.len() < self.config.max_trials_per_interval
                    && !(self.config.drop_completed_intervals && self.terminated(h))
            })
            .collect()
    }

    fn start_block(&mut self) {
        let mut order = self.active_intervals();
        order.shuffle(&mut self.rng);
        self.block = order.into();
        self.blocks_started += 1;
    }

    fn count_qualifying(&self, history: &[ChoiceRecord]) -> usize {
        let choices: Vec<Choice> = history.iter().map(|r| r.choice).collect();
        inversion_indices(&choices).into_iter().filter(|&k| k > self.config.burn_in_trials).count()
    }

    fn terminated(&self, history: &[ChoiceRecord]) -> bool {
        self.count_qualifying(history) >= self.config.required_inversions
    }

    /// Whether `interval` meets the termination rule.
    pub fn interval_complete(&self, interval: u32) -> Result<bool> {
        Ok(self.terminated(self.history(interval)?))
    }

    /// Returns the outstanding trial, issuing a new one if none is pending.
    /// Repeated calls without a response return the same trial.
    pub fn next_trial(&mut self) -> Result<ChoiceTrial> {
        if self.status != SessionStatus::Running {
            return Err(Error::SessionComplete);
        }
        if let Some(t) = &self.outstanding {
            return Ok(t.clone());
        }
        let interval = loop {
            if self.block.is_empty() {
                self.start_block();
                if self.block.is_empty() {
                    return Err(Error::SessionComplete);
                }
            }
            let t = self.block.pop_front().expect("non-empty block");
            if self.histories[&t].len() < self.config.max_trials_per_interval {
                break t;
            }
        };
        let history = &self.histories[&interval];
        let n_now = history.iter().filter(|r| r.choice == Choice::Now).count();
        let trial = ChoiceTrial {
            interval,
            now_amount: self.config.now_amount,
            later_amount: self.config.later_amount(n_now, history.len() - n_now),
            trial_index_global: self.next_global,
            trial_index_within_interval: history.len() + 1,
        };
        self.next_global += 1;
        self.outstanding = Some(trial.clone());
        self.events.push(ChoiceEvent::TrialIssued { trial: trial.clone() });
        Ok(trial)
    }

    /// Records the response to the outstanding trial.
    pub fn record_choice(&mut self, trial: &ChoiceTrial, choice: Choice, response_time: Option<f64>) -> Result<()> {
        self.record_by_index(trial.trial_index_global, choice, response_time)
    }

    pub fn record_by_index(&mut self, trial_index: u64, choice: Choice, response_time: Option<f64>) -> Result<()> {
        let expected = self.outstanding.as_ref().map(|t| t.trial_index_global);
        if expected != Some(trial_index) {
            return Err(Error::StaleTrial { expected, got: trial_index });
        }
        if let Some(rt) = response_time {
            if !(rt.is_finite() && rt >= 0.0) {
                return Err(Error::Domain(format!("response time must be non-negative, got {rt}")));
            }
        }
        let trial = self.outstanding.take().expect("checked above");
        self.events.push(ChoiceEvent::ResponseRecorded { trial_index, choice, response_time });
        let interval = trial.interval;
        self.histories.get_mut(&interval).expect("issued interval exists").push(ChoiceRecord {
            trial,
            choice,
            response_time,
        });

        let new_status = self.compute_status();
        if new_status != self.status {
            self.status = new_status;
            self.events.push(ChoiceEvent::StatusChanged { status: new_status });
        }
        Ok(())
    }

    fn compute_status(&self) -> SessionStatus {
        if self.histories.values().all(|h| self.terminated(h)) {
            return SessionStatus::Complete;
        }
        for (&t, h) in &self.histories {
            if h.len() >= self.config.max_trials_per_interval && !self.terminated(h) {
                return SessionStatus::CapExceeded { interval: t };
            }
        }
        SessionStatus::Running
    }

    /// Qualifying inversions (second index past the burn-in) seen so far.
    pub fn inversion_count(&self, interval: u32) -> Result<usize> {
        Ok(self.count_qualifying(self.history(interval)?))
    }

    pub fn equivalence_point(&self, interval: u32) -> Result<EquivalencePoint> {
        equivalence_point(interval, self.history(interval)?, &self.config)
    }

    /// `(interval, dv)` for every interval, ordered by interval.
    pub fn dv_series(&self) -> Result<DataSeries> {
        if !self.is_complete() {
            return Err(Error::Incomplete(format!("choice session status {:?}", self.status)));
        }
        let eps = self.equivalence_points()?;
        DataSeries::new(eps.iter().map(|e| e.interval as f64).collect(), eps.iter().map(|e| e.dv).collect())
    }

    pub fn equivalence_points(&self) -> Result<Vec<EquivalencePoint>> {
        self.config.intervals_sorted().into_iter().map(|t| self.equivalence_point(t)).collect()
    }

    /// DV per interval with `None` for intervals that have not terminated.
    pub fn dv_grid(&self) -> GridSeries {
        let intervals = self.config.intervals_sorted();
        GridSeries {
            t: intervals.iter().map(|&t| t as f64).collect(),
            y: intervals.iter().map(|&t| self.equivalence_point(t).ok().map(|e| e.dv)).collect(),
        }
    }
}

impl StaircaseConfig {
    pub fn intervals_sorted(&self) -> Vec<u32> {
        let mut v = self.intervals.clone();
        v.sort_unstable();
        v
    }
}

/// Equivalence point of one interval's history: the mean of the first three
/// qualifying inversion midpoints, each the arithmetic mean of the later
/// amounts on the two trials around the switch.
pub fn equivalence_point(interval: u32, history: &[ChoiceRecord], config: &StaircaseConfig) -> Result<EquivalencePoint> {
    let choices: Vec<Choice> = history.iter().map(|r| r.choice).collect();
    let qualifying: Vec<usize> =
        inversion_indices(&choices).into_iter().filter(|&k| k > config.burn_in_trials).collect();
    if qualifying.len() < config.required_inversions.max(3) {
        return Err(Error::Incomplete(format!("interval {interval} has not terminated")));
    }
    let points: Vec<f64> = qualifying[..3]
        .iter()
        .map(|&k| 0.5 * (history[k - 2].trial.later_amount + history[k - 1].trial.later_amount))
        .collect();
    let ep = points.iter().sum::<f64>() / 3.0;
    Ok(EquivalencePoint { interval, ep, dv: config.now_amount / ep, inversion_points: [points[0], points[1], points[2]] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Choice::{Later, Now};

    fn single(interval: u32) -> ChoiceSession {
        ChoiceSession::new(1, StaircaseConfig { intervals: vec![interval], ..Default::default() }).unwrap()
    }

    fn feed(s: &mut ChoiceSession, choices: &[Choice]) {
        for &c in choices {
            if s.status() != SessionStatus::Running {
                return;
            }
            let t = s.next_trial().unwrap();
            s.record_choice(&t, c, None).unwrap();
        }
    }

    #[test]
    fn first_block_is_a_permutation() {
        let mut s = ChoiceSession::new(1, StaircaseConfig::default()).unwrap();
        let mut seen = Vec::new();
        for _ in 0..12 {
            let t = s.next_trial().unwrap();
            seen.push(t.interval);
            assert_eq!(t.later_amount, 150.0);
            assert_eq!(t.now_amount, 100.0);
            s.record_choice(&t, Now, None).unwrap();
        }
        seen.sort_unstable();
        assert_eq!(seen, default_intervals());
    }

    #[test]
    fn schedules_are_deterministic() {
        let run = || {
            let mut s = ChoiceSession::new(1, StaircaseConfig::default()).unwrap();
            (0..40)
                .map(|i| {
                    let t = s.next_trial().unwrap();
                    s.record_choice(&t, if i % 3 == 0 { Now } else { Later }, None).unwrap();
                    t
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_interval_blocks() {
        let mut s = single(3);
        for k in 1..=5 {
            let t = s.next_trial().unwrap();
            assert_eq!(t.interval, 3);
            assert_eq!(t.trial_index_within_interval, k);
            s.record_choice(&t, Later, None).unwrap();
        }
        assert_eq!(s.blocks_started(), 5);
    }

    #[test]
    fn invalid_configs() {
        assert!(ChoiceSession::new(1, StaircaseConfig { intervals: vec![], ..Default::default() }).is_err());
        assert!(ChoiceSession::new(1, StaircaseConfig { step: 1.0, ..Default::default() }).is_err());
        assert!(ChoiceSession::new(1, StaircaseConfig { step: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn product_rule_amounts() {
        let mut s = single(12);
        feed(&mut s, &[Now, Now, Later]);
        assert!((s.next_trial().unwrap().later_amount - 163.35).abs() < 1e-9);

        let mut s = single(12);
        feed(&mut s, &[Later, Later, Later]);
        assert!((s.next_trial().unwrap().later_amount - 109.35).abs() < 1e-9);
    }

    #[test]
    fn inversion_flags() {
        assert_eq!(inversion_indices(&[Later, Now]), vec![2]);
        assert!(inversion_indices(&[Now, Now, Now]).is_empty());
    }

    #[test]
    fn duplicate_submission_is_stale() {
        let mut s = single(12);
        let t = s.next_trial().unwrap();
        s.record_choice(&t, Now, None).unwrap();
        assert!(matches!(s.record_choice(&t, Now, None), Err(Error::StaleTrial { .. })));
    }

    #[test]
    fn next_trial_is_idempotent_until_answered() {
        let mut s = ChoiceSession::new(5, StaircaseConfig::default()).unwrap();
        let a = s.next_trial().unwrap();
        let b = s.next_trial().unwrap();
        assert_eq!(a, b);
        assert_eq!(s.events().len(), 1);
    }

    #[test]
    fn burn_in_inversions_do_not_count() {
        let mut s = single(12);
        feed(&mut s, &[Now, Later, Now, Later, Now, Later, Now, Now, Now, Now]);
        assert!(!s.interval_complete(12).unwrap());
        assert_eq!(s.inversion_count(12).unwrap(), 0);
    }

    #[test]
    fn three_late_inversions_terminate() {
        let mut s = single(12);
        // ten Later, then switches at indices 11, 12 and 13
        let mut c = vec![Later; 10];
        c.extend([Now, Later, Now]);
        feed(&mut s, &c);
        assert!(s.interval_complete(12).unwrap());
        assert!(s.is_complete());
        assert!(matches!(s.next_trial(), Err(Error::SessionComplete)));
    }

    #[test]
    fn alternating_terminates_at_thirteen() {
        let mut s = single(12);
        for k in 1..=13 {
            assert!(!s.interval_complete(12).unwrap(), "terminated early at {k}");
            feed(&mut s, &[if k % 2 == 1 { Now } else { Later }]);
        }
        assert!(s.interval_complete(12).unwrap());
    }

    #[test]
    fn unknown_interval() {
        let s = single(12);
        assert_eq!(s.interval_complete(5).unwrap_err(), Error::UnknownInterval(5));
    }

    #[test]
    fn equivalence_point_midpoints() {
        let cfg = StaircaseConfig::default();
        let rec = |amount: f64, choice| ChoiceRecord {
            trial: ChoiceTrial {
                interval: 12,
                now_amount: 100.0,
                later_amount: amount,
                trial_index_global: 0,
                trial_index_within_interval: 0,
            },
            choice,
            response_time: None,
        };
        let mut h: Vec<ChoiceRecord> = (0..10).map(|_| rec(200.0, Later)).collect();
        h.push(rec(135.0, Later));
        h.push(rec(121.5, Now));
        h.push(rec(141.08 * 2.0 - 121.5, Later));
        h.push(rec(126.97 * 2.0 - (141.08 * 2.0 - 121.5), Now));
        let ep = equivalence_point(12, &h, &cfg).unwrap();
        assert!((ep.inversion_points[0] - 128.25).abs() < 1e-12);
        assert!((ep.ep - 132.1).abs() < 1e-9);
        assert!((ep.dv - 0.757_002_271_006_813).abs() < 1e-9);

        assert!(matches!(equivalence_point(12, &h[..12], &cfg), Err(Error::Incomplete(_))));
    }

    #[test]
    fn dv_series_requires_completion() {
        let s = single(12);
        assert!(matches!(s.dv_series(), Err(Error::Incomplete(_))));
    }

    #[test]
    fn all_now_hits_the_cap() {
        let mut s = single(12);
        let mut n = 0;
        while s.status() == SessionStatus::Running {
            feed(&mut s, &[Now]);
            n += 1;
        }
        assert_eq!(n, 60);
        assert_eq!(s.status(), SessionStatus::CapExceeded { interval: 12 });
        assert!(matches!(s.dv_series(), Err(Error::Incomplete(_))));
    }

    #[test]
    fn drop_completed_intervals_shortens_sessions() {
        let run = |drop: bool| {
            let cfg = StaircaseConfig { intervals: vec![3, 36], drop_completed_intervals: drop, ..Default::default() };
            let mut s = ChoiceSession::new(2, cfg).unwrap();
            // threshold agent: interval 3 alternates quickly, interval 36 needs a long climb
            while s.status() == SessionStatus::Running {
                let t = s.next_trial().unwrap();
                let m = if t.interval == 3 { 0.8 } else { 0.2 };
                let c = if t.later_amount * m > 100.0 { Later } else { Now };
                s.record_choice(&t, c, None).unwrap();
            }
            assert!(s.is_complete());
            (s.history(3).unwrap().len(), s.history(36).unwrap().len())
        };
        let (kept3, kept36) = run(false);
        let (dropped3, dropped36) = run(true);
        assert_eq!(kept36, dropped36);
        assert!(dropped3 < kept3);
        assert_eq!(dropped3, 13);
    }

    proptest! {
        #[test]
        fn amount_depends_only_on_choice_counts(choices in prop::collection::vec(any::<bool>(), 0..30)) {
            let to_choice = |b: bool| if b { Later } else { Now };
            let mut a = single(9);
            feed(&mut a, &choices.iter().copied().map(to_choice).collect::<Vec<_>>());
            let mut sorted = choices.clone();
            sorted.sort_unstable();
            let mut b = single(9);
            feed(&mut b, &sorted.into_iter().map(to_choice).collect::<Vec<_>>());
            if a.status() == SessionStatus::Running
                && b.status() == SessionStatus::Running
                && a.total_trials() == choices.len()
                && b.total_trials() == choices.len()
            {
                prop_assert_eq!(a.next_trial().unwrap().later_amount, b.next_trial().unwrap().later_amount);
            }
        }

        #[test]
        fn ep_lies_within_presented_amounts(choices in prop::collection::vec(any::<bool>(), 13..45)) {
            let mut s = single(9);
            for b in choices {
                if s.status() != SessionStatus::Running { break; }
                feed(&mut s, &[if b { Later } else { Now }]);
            }
            if let Ok(ep) = s.equivalence_point(9) {
                let h = s.history(9).unwrap();
                let lo = h.iter().map(|r| r.trial.later_amount).fold(f64::INFINITY, f64::min);
                let hi = h.iter().map(|r| r.trial.later_amount).fold(0.0, f64::max);
                prop_assert!(ep.ep >= lo && ep.ep <= hi);
            }
        }
    }
}
