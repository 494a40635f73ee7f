//! Request and response bodies of the session service, shared by the
//! server and its clients.

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisConfig, SubjectData};
use crate::fitting::{DataSeries, FitConfig, GridSeries, ModelFamily};
use crate::magnitude::MagnitudeTrial;
use crate::session_log::{TaskConfig, TaskKind, TaskOrder};
use crate::staircase::{Choice, ChoiceTrial, EquivalencePoint, SessionStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Task configuration; must match `task` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TaskConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub subject_id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub task_order: TaskOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "trial", rename_all = "snake_case")]
pub enum TrialPayload {
    Choice(ChoiceTrial),
    Magnitude(MagnitudeTrial),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTrial {
    pub complete: bool,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", flatten)]
    pub trial: Option<TrialPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponsePayload {
    Choice {
        choice: Choice,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response_time: Option<f64>,
    },
    /// `line_px: null` records a timeout.
    Magnitude {
        line_px: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latency: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub session_id: String,
    pub trial_token: String,
    pub payload: ResponsePayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAccepted {
    pub accepted: bool,
    pub next_available: bool,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum SessionResults {
    Choice { equivalence_points: Vec<EquivalencePoint>, dv: DataSeries },
    Magnitude { series: GridSeries, n_missing: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub subject_id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub task_order: Option<TaskOrder>,
    pub status: SessionStatus,
    pub responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    pub model: ModelFamily,
    pub data: DataSeries,
    #[serde(default)]
    pub config: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub subjects: Vec<SubjectData>,
    #[serde(default)]
    pub config: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

/// Localized display strings for the task screens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instructions {
    pub lang: String,
    pub magnitude_intro: String,
    pub magnitude_left_label: String,
    pub magnitude_right_label: String,
    pub choice_intro: String,
    pub choice_now_template: String,
    pub choice_later_template: String,
    pub break_screen: String,
    pub debrief: String,
}
