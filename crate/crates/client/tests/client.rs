use std::sync::Arc;

use chronopref_client::{Client, ClientError};
use chronopref_core::api::{CreateSession, ResponsePayload, TrialPayload};
use chronopref_core::session_log::TaskKind;
use chronopref_core::staircase::Choice;
use chronopref_service::{AppState, ServiceConfig};

async fn start(dir: &std::path::Path) -> Client {
    let state = Arc::new(AppState::open(&ServiceConfig::new(dir)).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(chronopref_service::serve(listener, state, std::future::pending()));
    Client::new(format!("http://{addr}/"))
}

#[tokio::test]
async fn api_errors_carry_status_and_code() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path()).await;
    client.health().await.unwrap();

    let err = client.next_trial("nobody_choice").await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(404));
    assert!(matches!(err, ClientError::Api { ref code, .. } if code == "not_found"), "{err}");

    let unreachable = Client::new("http://127.0.0.1:1");
    assert!(matches!(unreachable.health().await, Err(ClientError::Transport(_))));
}

#[tokio::test]
async fn choice_session_runs_through_the_client() {
    let dir = tempfile::tempdir().unwrap();
    let client = start(dir.path()).await;
    let req = CreateSession { task: TaskKind::Choice, seed: Some(3), config: None, subject_id: Some("c1".into()) };
    let created = client.create_session(&req).await.unwrap();
    assert_eq!(client.sessions().await.unwrap().len(), 1);

    // Always prefer the later amount once it is at least twice the immediate one.
    let mut answered = 0;
    loop {
        let next = client.next_trial(&created.session_id).await.unwrap();
        let (Some(TrialPayload::Choice(trial)), Some(token)) = (next.trial, next.trial_token) else { break };
        let choice = if trial.later_amount >= 2.0 * trial.now_amount { Choice::Later } else { Choice::Now };
        client.respond(&created.session_id, &token, ResponsePayload::Choice { choice, response_time: None }).await.unwrap();
        answered += 1;
    }
    let info = client.session(&created.session_id).await.unwrap();
    assert_eq!(info.responses, answered);
    client.results(&created.session_id).await.unwrap();

    let stale = client.respond(&created.session_id, "t0", ResponsePayload::Choice { choice: Choice::Now, response_time: None }).await;
    assert_eq!(stale.unwrap_err().status().map(|s| s.as_u16()), Some(409));
}
