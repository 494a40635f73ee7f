//! Line-delimited JSON session files.
//!
//! The first line is a header naming the task, seed and configuration;
//! every following line is one session event with a 1-based sequence
//! number. Loading replays the events through a fresh engine, so the
//! reconstructed session is exactly the one that produced the file.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::SubjectData;
use crate::error::{Error, Result};
use crate::magnitude::{MagnitudeAnswer, MagnitudeConfig, MagnitudeEvent, MagnitudeSession};
use crate::staircase::{ChoiceEvent, ChoiceSession, SessionStatus, StaircaseConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const SESSION_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Choice,
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrder {
    MagnitudeFirst,
    ChoiceFirst,
}

impl TaskOrder {
    /// Alternating assignment by creation index.
    pub fn for_index(i: u64) -> Self {
        if i % 2 == 0 {
            TaskOrder::MagnitudeFirst
        } else {
            TaskOrder::ChoiceFirst
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "config", rename_all = "snake_case")]
pub enum TaskConfig {
    Choice(StaircaseConfig),
    Magnitude(MagnitudeConfig),
}

impl TaskConfig {
    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Choice => TaskConfig::Choice(StaircaseConfig::default()),
            TaskKind::Magnitude => TaskConfig::Magnitude(MagnitudeConfig::default()),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::Choice(_) => TaskKind::Choice,
            TaskConfig::Magnitude(_) => TaskKind::Magnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub schema_version: u32,
    pub subject_id: String,
    #[serde(flatten)]
    pub task: TaskConfig,
    pub seed: u64,
    #[serde(default)]
    pub task_order: Option<TaskOrder>,
}

#[derive(Debug, Clone)]
pub enum Session {
    Choice(ChoiceSession),
    Magnitude(MagnitudeSession),
}

impl Session {
    pub fn new(task: &TaskConfig, seed: u64) -> Result<Self> {
        Ok(match task {
            TaskConfig::Choice(c) => Session::Choice(ChoiceSession::new(seed, c.clone())?),
            TaskConfig::Magnitude(c) => Session::Magnitude(MagnitudeSession::new(seed, c.clone())?),
        })
    }

    pub fn status(&self) -> SessionStatus {
        match self {
            Session::Choice(s) => s.status(),
            Session::Magnitude(s) => s.status(),
        }
    }

    pub fn event_count(&self) -> usize {
        match self {
            Session::Choice(s) => s.events().len(),
            Session::Magnitude(s) => s.events().len(),
        }
    }

    /// Serialized events from index `from` on, numbered from `from + 1`.
    pub fn event_lines(&self, from: usize) -> Result<Vec<String>> {
        fn lines<E: Serialize>(events: &[E], from: usize) -> Result<Vec<String>> {
            events
                .iter()
                .enumerate()
                .skip(from)
                .map(|(i, event)| to_line(&EventLine { seq: i as u64 + 1, event }))
                .collect()
        }
        match self {
            Session::Choice(s) => lines(s.events(), from),
            Session::Magnitude(s) => lines(s.events(), from),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EventLine<E> {
    seq: u64,
    #[serde(flatten)]
    event: E,
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Io(e.to_string()))
}

/// A session together with the header it is stored under.
#[derive(Debug, Clone)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub session: Session,
}

impl SessionRecord {
    pub fn new(subject_id: &str, task: TaskConfig, seed: u64, task_order: Option<TaskOrder>) -> Result<Self> {
        let session = Session::new(&task, seed)?;
        let header = SessionHeader { schema_version: SCHEMA_VERSION, subject_id: subject_id.to_string(), task, seed, task_order };
        Ok(Self { header, session })
    }

    pub fn from_choice(subject_id: &str, session: ChoiceSession, task_order: Option<TaskOrder>) -> Self {
        let header = SessionHeader {
            schema_version: SCHEMA_VERSION,
            subject_id: subject_id.to_string(),
            task: TaskConfig::Choice(session.config().clone()),
            seed: session.seed(),
            task_order,
        };
        Self { header, session: Session::Choice(session) }
    }

    pub fn from_magnitude(subject_id: &str, session: MagnitudeSession, task_order: Option<TaskOrder>) -> Self {
        let header = SessionHeader {
            schema_version: SCHEMA_VERSION,
            subject_id: subject_id.to_string(),
            task: TaskConfig::Magnitude(session.config().clone()),
            seed: session.seed(),
            task_order,
        };
        Self { header, session: Session::Magnitude(session) }
    }

    pub fn header_line(&self) -> Result<String> {
        to_line(&self.header)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = self.header_line()?;
        out.push('\n');
        for line in self.session.event_lines(0)? {
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes the whole file through a temporary sibling and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(self.to_jsonl()?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines: Vec<&str> = text.split('\n').collect();
        // a final line without its newline is a torn, never-acknowledged write
        if let Some(last) = lines.pop() {
            if !last.trim().is_empty() {
                if lines.is_empty() || serde_json::from_str::<serde_json::Value>(last).is_ok() {
                    lines.push(last);
                } else {
                    log::warn!("dropping torn final line of session file");
                }
            }
        }
        let mut lines = lines.into_iter().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::SchemaMismatch("empty session file".into()))?;
        let header: SessionHeader =
            serde_json::from_str(first).map_err(|e| Error::SchemaMismatch(format!("unreadable header: {e}")))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let rest: Vec<&str> = lines.collect();
        let session = match &header.task {
            TaskConfig::Choice(cfg) => Session::Choice(replay_choice(header.seed, cfg.clone(), &parse_events(&rest)?)?),
            TaskConfig::Magnitude(cfg) => {
                Session::Magnitude(replay_magnitude(header.seed, cfg.clone(), &parse_events(&rest)?)?)
            }
        };
        Ok(Self { header, session })
    }
}

fn parse_events<E: DeserializeOwned>(lines: &[&str]) -> Result<Vec<E>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let parsed: EventLine<E> =
                serde_json::from_str(line).map_err(|e| Error::CorruptEvent(format!("line {}: {e}", i + 2)))?;
            let expected = i as u64 + 1;
            if parsed.seq != expected {
                return Err(Error::CorruptEvent(format!("expected sequence {expected}, found {}", parsed.seq)));
            }
            Ok(parsed.event)
        })
        .collect()
}

fn corrupt(seq: usize) -> impl Fn(Error) -> Error {
    move |e| Error::CorruptEvent(format!("event {seq} does not replay: {e}"))
}

/// The replayed log must reproduce the file's events; trailing status
/// events are derived and may be missing from a file cut short.
fn check_replay<E: PartialEq>(replayed: &[E], stored: &[E], is_status: impl Fn(&E) -> bool) -> Result<()> {
    if replayed.len() < stored.len() || replayed[..stored.len()] != *stored {
        let at = replayed.iter().zip(stored).position(|(a, b)| a != b).unwrap_or(replayed.len().min(stored.len()));
        return Err(Error::CorruptEvent(format!("event {} differs from its replay", at + 1)));
    }
    if !replayed[stored.len()..].iter().all(is_status) {
        return Err(Error::CorruptEvent("replay produced unrecorded events".into()));
    }
    Ok(())
}

pub fn replay_choice(seed: u64, config: StaircaseConfig, events: &[ChoiceEvent]) -> Result<ChoiceSession> {
    let mut s = ChoiceSession::new(seed, config)?;
    for (i, ev) in events.iter().enumerate() {
        match ev {
            ChoiceEvent::TrialIssued { trial } => {
                if s.outstanding().is_some() {
                    return Err(Error::CorruptEvent(format!("event {} issues a second outstanding trial", i + 1)));
                }
                let issued = s.next_trial().map_err(corrupt(i + 1))?;
                if &issued != trial {
                    return Err(Error::CorruptEvent(format!("event {} issues a different trial", i + 1)));
                }
            }
            ChoiceEvent::ResponseRecorded { trial_index, choice, response_time } => {
                s.record_by_index(*trial_index, *choice, *response_time).map_err(corrupt(i + 1))?
            }
            ChoiceEvent::StatusChanged { .. } => {}
        }
    }
    check_replay(s.events(), events, |e| matches!(e, ChoiceEvent::StatusChanged { .. }))?;
    Ok(s)
}

pub fn replay_magnitude(seed: u64, config: MagnitudeConfig, events: &[MagnitudeEvent]) -> Result<MagnitudeSession> {
    let mut s = MagnitudeSession::new(seed, config)?;
    for (i, ev) in events.iter().enumerate() {
        match ev {
            MagnitudeEvent::TrialIssued { trial } => {
                let before = s.events().len();
                let issued = s.next_trial().map_err(corrupt(i + 1))?;
                if &issued != trial || s.events().len() == before {
                    return Err(Error::CorruptEvent(format!("event {} issues an unexpected trial", i + 1)));
                }
            }
            MagnitudeEvent::ResponseRecorded { trial_index, line_px, latency } => {
                let answer = line_px.map_or(MagnitudeAnswer::Timeout, MagnitudeAnswer::Line);
                s.record_by_index(*trial_index, answer, *latency).map_err(corrupt(i + 1))?
            }
            MagnitudeEvent::StatusChanged { .. } => {}
        }
    }
    check_replay(s.events(), events, |e| matches!(e, MagnitudeEvent::StatusChanged { .. }))?;
    Ok(s)
}

/// Append-only writer used by the live service: each call writes the
/// events added since the previous call and syncs before returning.
pub struct SessionWriter {
    file: File,
    written: usize,
}

impl SessionWriter {
    /// Creates a new file holding only the header plus any existing events.
    pub fn create(path: &Path, record: &SessionRecord) -> Result<Self> {
        let mut file = OpenOptions::new().write(true).create_new(true).open(path)?;
        file.write_all(record.to_jsonl()?.as_bytes())?;
        file.sync_data()?;
        Ok(Self { file, written: record.session.event_count() })
    }

    /// Reopens a file whose contents already match `record`. The file is
    /// rewritten first so a torn tail cannot precede new events.
    pub fn resume(path: &Path, record: &SessionRecord) -> Result<Self> {
        record.save(path)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file, written: record.session.event_count() })
    }

    pub fn append_new(&mut self, session: &Session) -> Result<()> {
        let lines = session.event_lines(self.written)?;
        if lines.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for l in &lines {
            buf.push_str(l);
            buf.push('\n');
        }
        self.file.write_all(buf.as_bytes())?;
        self.file.sync_data()?;
        self.written += lines.len();
        Ok(())
    }
}

/// Every session file in `dir`, sorted by file name.
pub fn session_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == SESSION_EXTENSION))
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_dir(dir: &Path) -> Result<Vec<SessionRecord>> {
    session_files(dir)?.iter().map(|p| SessionRecord::load(p)).collect()
}

/// Pairs each subject's completed choice and magnitude sessions. Subjects
/// lacking either, or with an incomplete or empty-cell session, are
/// returned by id in the second list.
pub fn subjects_from_sessions(records: &[SessionRecord]) -> (Vec<SubjectData>, Vec<String>) {
    use std::collections::BTreeMap;
    let mut by_subject: BTreeMap<&str, (Option<&ChoiceSession>, Option<&MagnitudeSession>)> = BTreeMap::new();
    for r in records {
        let entry = by_subject.entry(r.header.subject_id.as_str()).or_default();
        match &r.session {
            Session::Choice(s) => entry.0 = Some(s),
            Session::Magnitude(s) => entry.1 = Some(s),
        }
    }
    let mut subjects = vec![];
    let mut skipped = vec![];
    for (id, pair) in by_subject {
        let built = match pair {
            (Some(c), Some(m)) => c
                .dv_series()
                .and_then(|dv| m.magnitude_series().map(|magnitude| SubjectData { id: id.to_string(), dv, magnitude })),
            _ => Err(Error::Incomplete("missing task".into())),
        };
        match built {
            Ok(s) => subjects.push(s),
            Err(e) => {
                log::warn!("skipping subject {id}: {e}");
                skipped.push(id.to_string());
            }
        }
    }
    (subjects, skipped)
}

/// File name used for a subject's session of one task.
pub fn session_file_name(subject_id: &str, kind: TaskKind) -> String {
    let task = match kind {
        TaskKind::Choice => "choice",
        TaskKind::Magnitude => "magnitude",
    };
    format!("{subject_id}_{task}.{SESSION_EXTENSION}")
}
