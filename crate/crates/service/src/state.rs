use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use chronopref_core::api::{
    CreateSession, Instructions, NextTrial, ResponseAccepted, ResponsePayload, SessionCreated, SessionInfo,
    SessionResults, SubmitResponse, TrialPayload,
};
use chronopref_core::magnitude::MagnitudeAnswer;
use chronopref_core::session_log::{
    session_file_name, session_files, Session, SessionRecord, SessionWriter, TaskConfig, TaskOrder,
};
use chronopref_core::staircase::SessionStatus;
use chronopref_core::Error;
use tokio::sync::{Mutex, RwLock};

use crate::error::ApiError;

/// Environment variable that overrides the data directory.
pub const DATA_DIR_ENV: &str = "CHRONOPREF_DATA_DIR";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into() }
    }

    /// Uses the environment override when set.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(dir),
            _ => Self::new(default),
        }
    }
}

struct LiveSession {
    record: SessionRecord,
    writer: SessionWriter,
}

#[derive(Default)]
struct Registry {
    orders: BTreeMap<String, TaskOrder>,
    created: u64,
}

pub struct AppState {
    data_dir: PathBuf,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<LiveSession>>>>,
    registry: Mutex<Registry>,
    instructions: Vec<Instructions>,
}

fn token(trial_index: u64) -> String {
    format!("t{trial_index}")
}

fn parse_token(token: &str) -> Result<u64, ApiError> {
    token
        .strip_prefix('t')
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ApiError::unprocessable(format!("malformed trial token {token:?}")))
}

fn valid_subject_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn session_id(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}

impl AppState {
    /// Opens the data directory and resumes every readable session file in it.
    pub fn open(cfg: &ServiceConfig) -> Result<Self, Error> {
        std::fs::create_dir_all(&cfg.data_dir)?;
        let mut sessions = BTreeMap::new();
        let mut registry = Registry::default();
        for path in session_files(&cfg.data_dir)? {
            let record = match SessionRecord::load(&path) {
                Ok(r) => r,
                Err(e) => {
                    tracing::error!("not resuming {}: {e}", path.display());
                    continue;
                }
            };
            if let Some(order) = record.header.task_order {
                registry.orders.entry(record.header.subject_id.clone()).or_insert(order);
            }
            let writer = SessionWriter::resume(&path, &record)?;
            let id = session_id(&path).expect("session files have names");
            sessions.insert(id, Arc::new(Mutex::new(LiveSession { record, writer })));
        }
        registry.created = registry.orders.len() as u64;
        let instructions =
            serde_json::from_str(include_str!("../resources/instructions.json")).expect("bundled instructions parse");
        Ok(Self {
            data_dir: cfg.data_dir.clone(),
            sessions: RwLock::new(sessions),
            registry: Mutex::new(registry),
            instructions,
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    async fn get(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ApiError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub async fn create_session(&self, req: CreateSession) -> Result<SessionCreated, ApiError> {
        let task = match req.config {
            Some(cfg) if cfg.kind() != req.task => {
                return Err(ApiError::unprocessable("config does not match task"));
            }
            Some(cfg) => cfg,
            None => TaskConfig::default_for(req.task),
        };
        let seed = req.seed.unwrap_or_else(|| {
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
        });

        let mut registry = self.registry.lock().await;
        let subject_id = match req.subject_id {
            Some(id) if valid_subject_id(&id) => id,
            Some(id) => return Err(ApiError::unprocessable(format!("invalid subject id {id:?}"))),
            None => loop {
                let candidate = format!("p{:04}", registry.created + 1);
                if !registry.orders.contains_key(&candidate) {
                    break candidate;
                }
                registry.created += 1;
            },
        };
        let file = session_file_name(&subject_id, req.task);
        let path = self.data_dir.join(&file);
        let id = session_id(&path).expect("named");
        if self.sessions.read().await.contains_key(&id) {
            return Err(ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "exists",
                format!("subject {subject_id} already has a {:?} session", req.task),
            ));
        }
        let order = match registry.orders.get(&subject_id) {
            Some(o) => *o,
            None => {
                let o = TaskOrder::for_index(registry.created);
                registry.created += 1;
                registry.orders.insert(subject_id.clone(), o);
                o
            }
        };
        let record = SessionRecord::new(&subject_id, task, seed, Some(order))?;
        let writer = SessionWriter::create(&path, &record)?;
        self.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(LiveSession { record, writer })));
        tracing::info!("created session {id}");
        Ok(SessionCreated { session_id: id, subject_id, task: req.task, seed, task_order: order })
    }

    /// The outstanding trial; issuing a new one is persisted before it is
    /// returned, and repeated calls return the same trial.
    pub async fn next_trial(&self, id: &str) -> Result<NextTrial, ApiError> {
        let live = self.get(id).await?;
        let mut live = live.lock().await;
        let status = live.record.session.status();
        if status != SessionStatus::Running {
            return Ok(NextTrial { complete: true, status, trial_token: None, trial: None });
        }
        let payload = match &mut live.record.session {
            Session::Choice(s) => TrialPayload::Choice(s.next_trial()?),
            Session::Magnitude(s) => TrialPayload::Magnitude(s.next_trial()?),
        };
        let LiveSession { record, writer } = &mut *live;
        writer.append_new(&record.session)?;
        let index = match &payload {
            TrialPayload::Choice(t) => t.trial_index_global,
            TrialPayload::Magnitude(t) => t.trial_index,
        };
        Ok(NextTrial { complete: false, status, trial_token: Some(token(index)), trial: Some(payload) })
    }

    /// Records a response and appends it to the session file before
    /// acknowledging.
    pub async fn submit(&self, req: SubmitResponse) -> Result<ResponseAccepted, ApiError> {
        let index = parse_token(&req.trial_token)?;
        let live = self.get(&req.session_id).await?;
        let mut live = live.lock().await;
        let LiveSession { record, writer } = &mut *live;
        match (&mut record.session, req.payload) {
            (Session::Choice(s), ResponsePayload::Choice { choice, response_time }) => {
                if s.status() != SessionStatus::Running {
                    return Err(Error::SessionComplete.into());
                }
                s.record_by_index(index, choice, response_time)?
            }
            (Session::Magnitude(s), ResponsePayload::Magnitude { line_px, latency }) => {
                if s.status() != SessionStatus::Running {
                    return Err(Error::SessionComplete.into());
                }
                let answer = match line_px {
                    None => MagnitudeAnswer::Timeout,
                    Some(px) => {
                        let max = s.config().line_max_px;
                        match u32::try_from(px) {
                            Ok(px) => MagnitudeAnswer::Line(px),
                            Err(_) => return Err(Error::OutOfRange(px, max).into()),
                        }
                    }
                };
                s.record_by_index(index, answer, latency)?
            }
            _ => return Err(ApiError::unprocessable("payload does not match the session's task")),
        }
        writer.append_new(&record.session)?;
        let status = record.session.status();
        Ok(ResponseAccepted { accepted: true, next_available: status == SessionStatus::Running, status })
    }

    pub async fn results(&self, id: &str) -> Result<SessionResults, ApiError> {
        let live = self.get(id).await?;
        let live = live.lock().await;
        Ok(match &live.record.session {
            Session::Choice(s) => SessionResults::Choice { equivalence_points: s.equivalence_points()?, dv: s.dv_series()? },
            Session::Magnitude(s) => {
                if !s.is_complete() {
                    return Err(Error::Incomplete("magnitude session not complete".into()).into());
                }
                let (series, n_missing) = s.magnitude_grid();
                SessionResults::Magnitude { series, n_missing }
            }
        })
    }

    pub async fn info(&self, id: &str) -> Result<SessionInfo, ApiError> {
        let live = self.get(id).await?;
        let live = live.lock().await;
        Ok(describe(id, &live.record))
    }

    pub async fn list(&self) -> Vec<SessionInfo> {
        let map = self.sessions.read().await;
        let mut out = Vec::with_capacity(map.len());
        for (id, live) in map.iter() {
            out.push(describe(id, &live.lock().await.record));
        }
        out
    }

    pub fn instructions(&self, lang: &str) -> Option<&Instructions> {
        self.instructions.iter().find(|i| i.lang == lang)
    }
}

fn describe(id: &str, record: &SessionRecord) -> SessionInfo {
    let responses = match &record.session {
        Session::Choice(s) => s.total_trials(),
        Session::Magnitude(s) => s.responses().len(),
    };
    SessionInfo {
        session_id: id.to_string(),
        subject_id: record.header.subject_id.clone(),
        task: record.header.task.kind(),
        seed: record.header.seed,
        task_order: record.header.task_order,
        status: record.session.status(),
        responses,
    }
}
