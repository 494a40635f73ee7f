//! Thin async client for the session service.

use chronopref_core::analysis::{CohortReport, SubjectData, AnalysisConfig};
use chronopref_core::api::{
    AnalyzeRequest, CreateSession, ErrorBody, FitRequest, Instructions, NextTrial, ResponseAccepted, ResponsePayload,
    SessionCreated, SessionInfo, SessionResults, SubmitResponse,
};
use chronopref_core::fitting::{DataSeries, FitConfig, FitResult, ModelFamily};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    /// The server answered with a non-success status.
    #[error("{status}: {code}: {message}")]
    Api { status: StatusCode, code: String, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp.json().await?);
    }
    let text = resp.text().await.unwrap_or_default();
    let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
        Ok(b) => (b.error, b.message),
        Err(_) => ("http".to_string(), text),
    };
    Err(ClientError::Api { status, code, message })
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        decode(self.http.get(self.url(path)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<()> {
        let resp = self.http.get(self.url("/health")).send().await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            decode::<()>(resp).await
        }
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionCreated> {
        self.post("/sessions", req).await
    }

    pub async fn sessions(&self) -> Result<Vec<SessionInfo>> {
        self.get("/sessions").await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo> {
        self.get(&format!("/sessions/{id}")).await
    }

    pub async fn next_trial(&self, id: &str) -> Result<NextTrial> {
        self.get(&format!("/sessions/{id}/next-trial")).await
    }

    pub async fn respond(&self, session_id: &str, trial_token: &str, payload: ResponsePayload) -> Result<ResponseAccepted> {
        let body = SubmitResponse { session_id: session_id.into(), trial_token: trial_token.into(), payload };
        self.post("/responses", &body).await
    }

    pub async fn results(&self, id: &str) -> Result<SessionResults> {
        self.get(&format!("/sessions/{id}/results")).await
    }

    pub async fn instructions(&self, lang: &str) -> Result<Instructions> {
        self.get(&format!("/instructions/{lang}")).await
    }

    pub async fn fit(&self, model: ModelFamily, data: DataSeries, config: FitConfig) -> Result<FitResult> {
        self.post("/fit", &FitRequest { model, data, config }).await
    }

    pub async fn analyze(&self, subjects: Vec<SubjectData>, config: AnalysisConfig) -> Result<CohortReport> {
        self.post("/analyze", &AnalyzeRequest { subjects, config }).await
    }
}
