//! Temporal magnitude estimation: each interval is answered by setting the
//! length of a bounded line.
//!
//! A session is four training trials on randomly drawn intervals followed
//! by a seeded permutation of every (interval, repetition) pair. Timeouts
//! are stored as missing values and training responses never reach the
//! analysis series.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{DataSeries, GridSeries};
use crate::staircase::{default_intervals, SessionStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MagnitudeConfig {
    pub intervals: Vec<u32>,
    pub repetitions: u8,
    pub training_trials: usize,
    /// Full line length in pixels (180 mm on the reference display).
    pub line_max_px: u32,
    /// Seconds before a trial times out.
    pub response_window: f64,
}

impl Default for MagnitudeConfig {
    fn default() -> Self {
        Self {
            intervals: default_intervals(),
            repetitions: 5,
            training_trials: 4,
            line_max_px: 685,
            response_window: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeTrial {
    pub trial_index: u64,
    pub interval: u32,
    /// 1-based repetition within the main block; 0 for training trials.
    pub repetition: u8,
    pub is_training: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeAnswer {
    Line(u32),
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeResponse {
    pub trial: MagnitudeTrial,
    pub line_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MagnitudeEvent {
    TrialIssued {
        trial: MagnitudeTrial,
    },
    ResponseRecorded {
        trial_index: u64,
        line_px: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latency: Option<f64>,
    },
    StatusChanged {
        status: SessionStatus,
    },
}

#[derive(Debug, Clone)]
pub struct MagnitudeSession {
    config: MagnitudeConfig,
    seed: u64,
    schedule: Vec<MagnitudeTrial>,
    responses: Vec<MagnitudeResponse>,
    issued: bool,
    status: SessionStatus,
    events: Vec<MagnitudeEvent>,
}

impl MagnitudeSession {
    pub fn new(seed: u64, config: MagnitudeConfig) -> Result<Self> {
        if config.intervals.is_empty() || config.repetitions == 0 {
            return Err(Error::InvalidConfig("magnitude schedule is empty".into()));
        }
        if !(config.response_window > 0.0) {
            return Err(Error::InvalidConfig("response window must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut schedule = Vec::new();
        for _ in 0..config.training_trials {
            let interval = *config.intervals.choose(&mut rng).expect("non-empty intervals");
            schedule.push(MagnitudeTrial { trial_index: 0, interval, repetition: 0, is_training: true });
        }
        let mut main: Vec<u32> =
            config.intervals.iter().flat_map(|&t| std::iter::repeat_n(t, config.repetitions as usize)).collect();
        main.shuffle(&mut rng);
        let mut seen: BTreeMap<u32, u8> = BTreeMap::new();
        for interval in main {
            let rep = seen.entry(interval).or_insert(0);
            *rep += 1;
            schedule.push(MagnitudeTrial { trial_index: 0, interval, repetition: *rep, is_training: false });
        }
        for (i, t) in schedule.iter_mut().enumerate() {
            t.trial_index = i as u64;
        }
        Ok(Self {
            config,
            seed,
            schedule,
            responses: Vec::new(),
            issued: false,
            status: SessionStatus::Running,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &MagnitudeConfig {
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

    pub fn schedule(&self) -> &[MagnitudeTrial] {
        &self.schedule
    }

    pub fn responses(&self) -> &[MagnitudeResponse] {
        &self.responses
    }

    pub fn events(&self) -> &[MagnitudeEvent] {
        &self.events
    }

    /// The current trial; repeated calls return the same trial until it is
    /// answered.
    pub fn next_trial(&mut self) -> Result<MagnitudeTrial> {
        let trial = self.schedule.get(self.responses.len()).cloned().ok_or(Error::SessionComplete)?;
        if !self.issued {
            self.issued = true;
            self.events.push(MagnitudeEvent::TrialIssued { trial: trial.clone() });
        }
        Ok(trial)
    }

    pub fn record_magnitude(&mut self, trial: &MagnitudeTrial, answer: MagnitudeAnswer, latency: Option<f64>) -> Result<()> {
        self.record_by_index(trial.trial_index, answer, latency)
    }

    pub fn record_by_index(&mut self, trial_index: u64, answer: MagnitudeAnswer, latency: Option<f64>) -> Result<()> {
        let expected = self.issued.then_some(self.responses.len() as u64);
        if expected != Some(trial_index) {
            return Err(Error::StaleTrial { expected, got: trial_index });
        }
        let line_px = match answer {
            MagnitudeAnswer::Line(px) if px > self.config.line_max_px => {
                return Err(Error::OutOfRange(px as i64, self.config.line_max_px))
            }
            MagnitudeAnswer::Line(px) => Some(px),
            MagnitudeAnswer::Timeout => None,
        };
        if let Some(l) = latency {
            if !(l.is_finite() && l >= 0.0 && l <= self.config.response_window) {
                return Err(Error::Domain(format!(
                    "latency {l} outside [0, {}] seconds",
                    self.config.response_window
                )));
            }
        }
        let trial = self.schedule[self.responses.len()].clone();
        self.events.push(MagnitudeEvent::ResponseRecorded { trial_index, line_px, latency });
        self.responses.push(MagnitudeResponse { trial, line_px, latency });
        self.issued = false;
        if self.responses.len() == self.schedule.len() {
            self.status = SessionStatus::Complete;
            self.events.push(MagnitudeEvent::StatusChanged { status: self.status });
        }
        Ok(())
    }

    fn main_responses(&self) -> impl Iterator<Item = &MagnitudeResponse> {
        self.responses.iter().filter(|r| !r.trial.is_training)
    }

    /// Per-interval mean line length with `None` where every repetition is
    /// missing, plus the missing count per interval.
    pub fn magnitude_grid(&self) -> (GridSeries, Vec<usize>) {
        let mut intervals = self.config.intervals.clone();
        intervals.sort_unstable();
        let mut y = Vec::with_capacity(intervals.len());
        let mut missing = Vec::with_capacity(intervals.len());
        for &t in &intervals {
            let (vals, n_missing) = self.main_responses().filter(|r| r.trial.interval == t).fold(
                (Vec::new(), 0usize),
                |(mut v, m), r| match r.line_px {
                    Some(px) => {
                        v.push(px as f64);
                        (v, m)
                    }
                    None => (v, m + 1),
                },
            );
            y.push((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64));
            missing.push(n_missing);
        }
        (GridSeries { t: intervals.iter().map(|&t| t as f64).collect(), y }, missing)
    }

    /// `(interval, mean line px over answered repetitions)` for a completed
    /// session.
    pub fn magnitude_series(&self) -> Result<DataSeries> {
        if !self.is_complete() {
            return Err(Error::Incomplete("magnitude session not complete".into()));
        }
        let (grid, _) = self.magnitude_grid();
        let mut y = Vec::with_capacity(grid.t.len());
        for (t, v) in grid.t.iter().zip(&grid.y) {
            y.push(v.ok_or(Error::EmptyCell(*t))?);
        }
        DataSeries::new(grid.t, y)
    }

    /// Every answered main-block trial as its own observation.
    pub fn raw_observations(&self) -> Result<DataSeries> {
        let (t, y) = self
            .main_responses()
            .filter_map(|r| r.line_px.map(|px| (r.trial.interval as f64, px as f64)))
            .unzip();
        DataSeries::from_observations(t, y)
    }
}
