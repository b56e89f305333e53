//! HTTP JSON chat service.
//!
//! ```text
//! POST /sessions              {scenario}                      -> 201 session
//! POST /sessions/{id}/turns   {utterance, label_override?, deterministic?}
//! GET  /sessions/{id}                                         -> transcript
//! GET  /health
//! ```

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::Context as _;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use condial_core::checkpoint::Checkpoint;
use condial_core::corpus::Vocab;
use condial_core::numeric::{ParamStore, Rng};
use condial_core::session::{LabelSource, Role, Session, TranscriptEntry, TurnOptions, TurnReply};
use condial_core::sphred::{Model, Scenario};
use condial_core::Error as CoreError;

use crate::commands::ServeArgs;

/// Read-only model plus the live sessions.
pub struct AppState {
    model: Model,
    params: ParamStore,
    vocab: Vocab,
    seed: u64,
    transcripts: Option<PathBuf>,
    next_id: AtomicU64,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
}

impl AppState {
    pub fn new(model: Model, params: ParamStore, vocab: Vocab, seed: u64, transcripts: Option<PathBuf>) -> Self {
        AppState {
            model,
            params,
            vocab,
            seed,
            transcripts,
            next_id: AtomicU64::new(1),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, seed: u64, transcripts: Option<PathBuf>) -> condial_core::Result<Self> {
        let model = ck.model()?;
        Ok(AppState::new(model, ck.params, ck.vocab, seed, transcripts))
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::LabelDomain { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            CoreError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub scenario: u8,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub scenario: u8,
    pub num_labels: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRequest {
    pub utterance: String,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub label_override: Option<usize>,
    #[serde(default)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub turn_index: usize,
    pub speaker: Role,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_source: Option<LabelSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_distribution: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_prob: Option<f64>,
}

impl From<&TranscriptEntry> for Message {
    fn from(e: &TranscriptEntry) -> Self {
        Message {
            turn_index: e.turn_index,
            speaker: e.speaker,
            text: e.text.clone(),
            label_used: e.label.as_ref().map(|l| l.value),
            label_source: e.label.as_ref().map(|l| l.source),
            label_distribution: e.label.as_ref().and_then(|l| l.distribution.clone()),
            log_prob: e.log_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: String,
    pub scenario: u8,
    pub messages: Vec<Message>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(take_turn))
        .with_state(state)
}

async fn health(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "scenario": st.model.config.scenario.number(),
        "vocab_size": st.vocab.len(),
    }))
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(req) = body?;
    let served = st.model.config.scenario;
    let scenario = Scenario::from_number(req.scenario).filter(|&s| s == served).ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("scenario {} is not served; the loaded model is scenario {}", req.scenario, served.number()),
        )
    })?;
    let n = st.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}");
    let seed = Rng::derived(st.seed, &[n]).next_u64();
    let session = Session::new(id.clone(), scenario, &st.model, seed)?;
    st.sessions
        .lock()
        .expect("session table poisoned")
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: id,
            scenario: scenario.number(),
            num_labels: scenario.num_labels(),
        }),
    ))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionTranscript>, ApiError> {
    let session = st.session(&id)?;
    let s = session.lock().await;
    Ok(Json(SessionTranscript {
        session_id: s.id.clone(),
        scenario: s.scenario.number(),
        messages: s.transcript().iter().map(Message::from).collect(),
    }))
}

async fn take_turn(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<TurnRequest>, JsonRejection>,
) -> Result<Json<TurnReply>, ApiError> {
    let session = st.session(&id)?;
    let Json(req) = body?;
    if let Some(other) = &req.session_id {
        if *other != id {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("session_id: body names {other:?} but the path names {id:?}"),
            ));
        }
    }
    // held for the whole turn so a session runs one turn at a time
    let mut guard = session.lock_owned().await;
    let reply = tokio::task::spawn_blocking(move || -> Result<TurnReply, ApiError> {
        let opts = TurnOptions {
            label_override: req.label_override,
            deterministic: req.deterministic,
            ..TurnOptions::default()
        };
        let before = guard.transcript().len();
        let reply = guard.take_turn(&st.model, &st.params, &st.vocab, &req.utterance, &opts)?;
        if let Some(dir) = &st.transcripts {
            append_transcript(dir, &guard.id, &guard.transcript()[before..])
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")))?;
        }
        Ok(reply)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(reply))
}

fn append_transcript(dir: &std::path::Path, id: &str, entries: &[TranscriptEntry]) -> anyhow::Result<()> {
    let path = dir.join(format!("{id}.jsonl"));
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    for e in entries {
        let line = serde_json::to_string(e)?;
        writeln!(f, "{line}").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn serve_blocking(a: &ServeArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if let Some(dir) = &a.transcripts {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let state = Arc::new(AppState::from_checkpoint(ck, a.seed, a.transcripts.clone())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
