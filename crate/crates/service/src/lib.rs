//! Live session service: observers connect over WebSocket at `/ws`, claim a
//! role, stream setting choices and receive cumulative statistics. The
//! message schema is in `docs/messages.schema.json`.

pub mod protocol;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use lunabell_core::session::{
    ChoiceSourceKind, MonotonicClock, RunMode, SessionClock, SessionConfig, SessionError,
};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

use protocol::*;
use session::{Command, SessionActor};

pub use session::Outbox;

pub type ClockFactory = Arc<dyn Fn() -> Arc<dyn SessionClock> + Send + Sync>;

#[derive(Clone)]
pub struct ServiceConfig {
    /// Config for sessions created without a preset.
    pub session: SessionConfig,
    /// Stats broadcast interval.
    pub tick: Duration,
    /// Finished runs are persisted under `runs_dir/<session id>`.
    pub runs_dir: Option<PathBuf>,
    pub clock: ClockFactory,
}

impl ServiceConfig {
    pub fn new(session: SessionConfig) -> Self {
        Self {
            session,
            tick: Duration::from_millis(250),
            runs_dir: None,
            clock: Arc::new(|| Arc::new(MonotonicClock::start()) as Arc<dyn SessionClock>),
        }
    }
}

#[derive(Clone)]
struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<HashMap<String, mpsc::UnboundedSender<Command>>>>,
    next_conn: Arc<AtomicU64>,
}

/// Force the settings every live session needs.
pub fn live_config(mut config: SessionConfig) -> Result<SessionConfig, SessionError> {
    config.mode = RunMode::Interactive;
    config.choices.source = ChoiceSourceKind::Live;
    config.choices.replay_path = None;
    config.time_compression = 1.0;
    config.validate()?;
    Ok(config)
}

fn session_config(base: &SessionConfig, spec: &SessionSpec) -> Result<SessionConfig, SessionError> {
    let overrides: Vec<(String, String)> =
        spec.overrides.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let config = match &spec.preset {
        Some(name) => SessionConfig::from_preset(name, &overrides)?,
        None => SessionConfig::from_toml_str(&base.to_toml()?, &overrides)?,
    };
    live_config(config)
}

impl AppState {
    fn create(&self, spec: &SessionSpec) -> Result<(String, mpsc::UnboundedSender<Command>), SessionError> {
        let config = session_config(&self.config.session, spec)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let actor = SessionActor::new(
            id.clone(),
            config,
            (self.config.clock)(),
            self.config.runs_dir.clone(),
        )?;
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(actor.run(rx, self.config.tick));
        self.sessions.lock().expect("registry lock").insert(id.clone(), tx.clone());
        tracing::info!(session = %id, "session created");
        Ok((id, tx))
    }

    fn lookup(&self, id: &str) -> Option<mpsc::UnboundedSender<Command>> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }
}

pub fn router(config: ServiceConfig) -> Router {
    let state = AppState {
        config: Arc::new(config),
        sessions: Arc::default(),
        next_conn: Arc::default(),
    };
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/ws", get(ws_upgrade))
        .route("/sessions/{id}/report", get(fetch_report))
        .with_state(state)
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn fetch_report(Path(id): Path<String>, State(state): State<AppState>) -> Response {
    let not_found = || {
        let body = ErrorBody {
            code: ErrorCode::UnknownSession,
            message: format!("no session {id}"),
        };
        (StatusCode::NOT_FOUND, Json(body)).into_response()
    };
    let Some(tx) = state.lookup(&id) else {
        return not_found();
    };
    let (reply, rx) = oneshot::channel();
    if tx.send(Command::FetchReport { reply }).is_err() {
        return not_found();
    }
    match rx.await {
        Ok(Some(report)) => Json(report).into_response(),
        Ok(None) => (
            StatusCode::CONFLICT,
            Json(ErrorBody {
                code: ErrorCode::NotFinished,
                message: "the session is still running".into(),
            }),
        )
            .into_response(),
        Err(_) => not_found(),
    }
}

async fn connection(socket: WebSocket, state: AppState) {
    let conn = state.next_conn.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let (outbox, mut outgoing) = mpsc::unbounded_channel::<String>();
    tokio::spawn(async move {
        while let Some(text) = outgoing.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let reject = |code, msg: String| {
        let _ = outbox.send(ServerMessage::error(code, msg).to_json());
    };
    let mut session: Option<mpsc::UnboundedSender<Command>> = None;
    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let message = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(m) => m,
            Err(e) => {
                reject(ErrorCode::BadMessage, format!("unreadable message: {e}"));
                continue;
            }
        };
        match (&session, message) {
            (
                None,
                ClientMessage::Hello {
                    protocol,
                    session: id,
                    config,
                },
            ) => {
                if protocol != PROTOCOL_VERSION {
                    reject(
                        ErrorCode::BadMessage,
                        format!("protocol {protocol} is not supported, expected {PROTOCOL_VERSION}"),
                    );
                    continue;
                }
                let joined = match id {
                    Some(id) => state.lookup(&id).map(|tx| (tx, false)).ok_or_else(|| {
                        (ErrorCode::UnknownSession, format!("no session {id}"))
                    }),
                    None => state
                        .create(&config.unwrap_or_default())
                        .map(|(_, tx)| (tx, true))
                        .map_err(|e| (ErrorCode::Config, e.to_string())),
                };
                match joined {
                    Ok((tx, created)) => {
                        let _ = tx.send(Command::Join {
                            conn,
                            outbox: outbox.clone(),
                            created,
                        });
                        session = Some(tx);
                    }
                    Err((code, msg)) => reject(code, msg),
                }
            }
            (None, _) => reject(ErrorCode::BadMessage, "send hello first".into()),
            (Some(tx), message) => {
                let _ = tx.send(Command::Client { conn, message });
            }
        }
    }
    if let Some(tx) = session {
        let _ = tx.send(Command::Leave { conn });
    }
}

/// Bind `addr` and serve in the background. Returns the bound address.
pub async fn spawn(
    config: ServiceConfig,
    addr: SocketAddr,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(config);
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok((local, handle))
}

/// Serve until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(config)).await
}
