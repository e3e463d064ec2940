//! HTTP facade over a running simulation.
//!
//! Every mutating route becomes a command on the engine thread; GET routes
//! read the view the engine thread publishes after each command.

mod error;
mod worker;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::{mpsc, Arc, RwLock};
use std::thread::JoinHandle;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use twin_core::model::SimulationSummary;
use twin_core::run::RunDir;
use twin_core::{Engine, TickReport};

pub use error::ApiError;
pub use worker::{AgentView, Command, View};

/// Upper bound for one `/control/step` request.
pub const MAX_STEP_TICKS: u64 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("server failed: {0}")]
    Serve(#[source] io::Error),
    #[error("final save failed: {0}")]
    Save(String),
    #[error("engine thread stopped unexpectedly")]
    EngineGone,
}

#[derive(Clone)]
struct AppState {
    tx: mpsc::Sender<Command>,
    view: Arc<RwLock<View>>,
}

impl AppState {
    async fn send<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<Result<T, ApiError>>) -> Command,
    ) -> Result<T, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(make(reply))
            .map_err(|_| ApiError::internal("engine thread stopped"))?;
        rx.await
            .map_err(|_| ApiError::internal("engine thread dropped the request"))?
    }

    fn view(&self) -> std::sync::RwLockReadGuard<'_, View> {
        self.view.read().expect("view lock")
    }
}

/// A running engine thread plus the routes that drive it.
pub struct Service {
    state: AppState,
    handle: JoinHandle<()>,
}

impl Service {
    pub fn start(engine: Engine, run: Option<RunDir>) -> Self {
        let w = worker::spawn(engine, run);
        Self {
            state: AppState {
                tx: w.tx,
                view: w.view,
            },
            handle: w.handle,
        }
    }

    pub fn router(&self) -> Router {
        router(self.state.clone())
    }

    /// Stops the engine thread after saving the run.
    pub async fn shutdown(self) -> Result<(), ServiceError> {
        let (reply, rx) = oneshot::channel();
        let result = match self.state.tx.send(Command::Shutdown { reply }) {
            Err(_) => Err(ServiceError::EngineGone),
            Ok(()) => match rx.await {
                Err(_) => Err(ServiceError::EngineGone),
                Ok(saved) => saved.map_err(|e| ServiceError::Save(e.message)),
            },
        };
        let handle = self.handle;
        let _ = tokio::task::spawn_blocking(move || handle.join()).await;
        result
    }
}

/// Serves until `signal` resolves, then drains requests and saves.
pub async fn serve(
    service: Service,
    listener: TcpListener,
    signal: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let app = service.router();
    if let Ok(addr) = listener.local_addr() {
        tracing::info!("listening on http://{addr}");
    }
    let served = axum::serve(listener, app)
        .with_graceful_shutdown(signal)
        .await
        .map_err(ServiceError::Serve);
    let saved = service.shutdown().await;
    served.and(saved)
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/summary", get(summary))
        .route("/agents", get(agents))
        .route("/log", get(tail_log))
        .route("/dialogues", post(open_dialogue))
        .route("/dialogues/{id}/messages", post(post_message))
        .route("/dialogues/{id}/conclude", post(conclude))
        .route("/control/step", post(step))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::validation(e.body_text()))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn summary(State(state): State<AppState>) -> Json<SimulationSummary> {
    Json(state.view().summary.clone())
}

async fn agents(State(state): State<AppState>) -> Json<Vec<AgentView>> {
    Json(state.view().agents.clone())
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    #[serde(default)]
    since: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogPage {
    pub lines: Vec<String>,
    pub next: usize,
}

async fn tail_log(
    State(state): State<AppState>,
    query: Result<Query<LogQuery>, QueryRejection>,
) -> Result<Json<LogPage>, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::validation(e.body_text()))?;
    let view = state.view();
    let start = query.since.min(view.log.len());
    Ok(Json(LogPage {
        lines: view.log[start..].to_vec(),
        next: view.log.len().max(query.since),
    }))
}

#[derive(Debug, Deserialize)]
struct OpenBody {
    agent: String,
}

async fn open_dialogue(
    State(state): State<AppState>,
    payload: Result<Json<OpenBody>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let OpenBody { agent } = body(payload)?;
    let session = state.send(|reply| Command::Open { agent, reply }).await?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": session.id}))))
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(state): State<AppState>,
    Path(session): Path<String>,
    payload: Result<Json<MessageBody>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let MessageBody { text } = body(payload)?;
    let reply = state
        .send(|reply| Command::Post {
            session,
            text,
            reply,
        })
        .await?;
    Ok(Json(json!({"reply": reply})))
}

async fn conclude(
    State(state): State<AppState>,
    Path(session): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let ids = state
        .send(|reply| Command::Conclude { session, reply })
        .await?;
    Ok(Json(json!({"memory_ids": ids})))
}

#[derive(Debug, Deserialize)]
struct StepBody {
    ticks: u64,
}

async fn step(
    State(state): State<AppState>,
    payload: Result<Json<StepBody>, JsonRejection>,
) -> Result<Json<TickReport>, ApiError> {
    let StepBody { ticks } = body(payload)?;
    if ticks == 0 || ticks > MAX_STEP_TICKS {
        return Err(ApiError::validation(format!(
            "ticks must be between 1 and {MAX_STEP_TICKS}"
        )));
    }
    let report = state.send(|reply| Command::Step { ticks, reply }).await?;
    Ok(Json(report))
}
