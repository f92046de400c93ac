//! HTTP and WebSocket face of a running bridge.
//!
//! Telemetry fans out through a bounded broadcast channel; a slow client
//! loses its oldest messages instead of stalling the loop.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::broadcast;

use crate::bridge::{Bridge, BridgeHandle};
use crate::model::ParseMode;
use crate::scenario::Scenario;

use super::codec::{decode_command, encode, encode_state, ServerMessage};
use super::decimate::Decimator;

/// Per-client backlog before the oldest telemetry is dropped.
const CLIENT_BACKLOG: usize = 64;

/// Telemetry source shared between the loop thread and client tasks.
#[derive(Clone)]
pub struct Telemetry {
    tx: broadcast::Sender<Arc<str>>,
    seq: Arc<AtomicU64>,
}

impl Telemetry {
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.tx.subscribe()
    }

    /// Seq of the most recent state message.
    pub fn last_seq(&self) -> u64 {
        self.seq.load(Ordering::SeqCst)
    }
}

/// Installs a decimating observer on `bridge` that feeds a broadcast
/// channel at `rate_hz`.
pub fn attach_telemetry(bridge: &mut Bridge, rate_hz: f64) -> Telemetry {
    let (tx, _) = broadcast::channel(CLIENT_BACKLOG);
    let seq = Arc::new(AtomicU64::new(0));
    let telemetry = Telemetry { tx, seq };
    let mut decimator = Decimator::new(bridge.config().physics_hz(), rate_hz);
    let out = telemetry.clone();
    bridge.set_observer(move |snap| {
        if !decimator.offer(snap) {
            return;
        }
        let seq = out.seq.load(Ordering::SeqCst) + 1;
        match encode(&ServerMessage::State(encode_state(snap, seq))) {
            Ok(text) => {
                out.seq.store(seq, Ordering::SeqCst);
                let _ = out.tx.send(Arc::from(text));
            }
            Err(e) => tracing::error!(error = %e, "telemetry dropped"),
        }
    });
    telemetry
}

#[derive(Clone)]
pub struct AppState {
    pub handle: BridgeHandle,
    pub telemetry: Telemetry,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/api/scenario", get(get_scenario).post(post_scenario))
        .route("/api/report", get(get_report))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn get_scenario(State(st): State<AppState>) -> Json<Scenario> {
    Json((*st.handle.scenario()).clone())
}

async fn post_scenario(State(st): State<AppState>, body: String) -> Response {
    let built = Scenario::from_json(&body, ParseMode::Strict).and_then(|(s, _)| s.build());
    match built {
        Ok(built) => match st.handle.load(built) {
            Ok(()) => (StatusCode::OK, Json(serde_json::json!({"loaded": true}))).into_response(),
            Err(e) => (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({"error": e.to_string()}))).into_response(),
        },
        Err(e) => (StatusCode::UNPROCESSABLE_ENTITY, Json(serde_json::json!({"error": e.to_string()}))).into_response(),
    }
}

async fn get_report(State(st): State<AppState>) -> Response {
    match st.handle.report() {
        Some(r) => Json((*r).clone()).into_response(),
        None => (StatusCode::NOT_FOUND, Json(serde_json::json!({"error": "no report yet"}))).into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(st): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, st))
}

/// Answers one client text frame. Returns the reply to send.
fn handle_text(st: &AppState, text: &str) -> ServerMessage {
    let msg = match decode_command(text) {
        Ok(m) => m,
        Err(e) => return e.to_message(),
    };
    let seq = st.telemetry.last_seq();
    match st.handle.enqueue(msg.cmd) {
        Ok(()) => ServerMessage::Ack {
            id: msg.id,
            accepted: true,
            reason: None,
            seq,
        },
        Err(r) => ServerMessage::Ack {
            id: msg.id,
            accepted: false,
            reason: Some(r.to_string()),
            seq,
        },
    }
}

async fn client(socket: WebSocket, st: AppState) {
    let (sink, mut stream) = socket.split();
    let sink = Arc::new(tokio::sync::Mutex::new(sink));
    let mut rx = st.telemetry.subscribe();
    let fwd = sink.clone();
    let forward = tokio::spawn(async move {
        loop {
            match rx.recv().await {
                Ok(text) => {
                    if fwd.lock().await.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => tracing::debug!(dropped = n, "slow client"),
                Err(broadcast::error::RecvError::Closed) => break,
            }
        }
    });

    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => match String::from_utf8(b.to_vec()) {
                Ok(t) => t,
                Err(_) => "\u{0}".to_string(),
            },
            Message::Close(_) => break,
            _ => continue,
        };
        // Holding the sink while enqueueing keeps the ack ahead of any state
        // message that reflects the command.
        let mut out = sink.lock().await;
        let reply = handle_text(&st, &text);
        let Ok(encoded) = encode(&reply) else { continue };
        if out.send(Message::Text(encoded.into())).await.is_err() {
            break;
        }
    }
    forward.abort();
}
