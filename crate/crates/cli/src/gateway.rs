//! HTTP/JSON gateway with a server-sent event stream.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use cloudburst_core::runtime::OperatorDecision;
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::watch;

use crate::session::{DecideError, Session};

#[derive(Clone)]
pub struct Gateway {
    session: Arc<Mutex<Session>>,
    changed: Arc<watch::Sender<u64>>,
}

impl Gateway {
    pub fn new(session: Session) -> Self {
        Gateway {
            session: Arc::new(Mutex::new(session)),
            changed: Arc::new(watch::Sender::new(0)),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn notify(&self) {
        self.changed.send_modify(|g| *g += 1);
    }

    /// One step of the run, then a wake-up for stream readers.
    pub fn step(&self) -> Option<u32> {
        let clock = self.lock().step();
        self.notify();
        clock
    }

    /// Steps until the run is over. `pace` is simulated minutes per wall
    /// second and only spaces out the steps; 0 runs flat out.
    pub fn drive(&self, pace: f64) {
        let mut last = None;
        while let Some(clock) = self.step() {
            if pace > 0.0 {
                let minutes = last.map_or(0, |l| clock.saturating_sub(l));
                std::thread::sleep(Duration::from_secs_f64(minutes as f64 / pace));
            }
            last = Some(clock);
        }
    }

    /// Waits until the stream has ended.
    pub async fn finished(&self) {
        let mut rx = self.changed.subscribe();
        loop {
            rx.borrow_and_update();
            if self.lock().is_done() {
                return;
            }
            if rx.changed().await.is_err() {
                return;
            }
        }
    }
}

pub fn router(gateway: Gateway) -> Router {
    Router::new()
        .route("/state/snapshot", get(snapshot))
        .route("/alerts", get(alerts))
        .route("/hitl", get(pending))
        .route("/hitl/{id}", get(hitl_item_method).post(decide))
        .route("/events", get(events))
        .route("/grids/{hash}", get(grid))
        .with_state(gateway)
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(json!({"error": message}))).into_response()
}

async fn snapshot(State(g): State<Gateway>) -> Response {
    Json(g.lock().snapshot()).into_response()
}

async fn alerts(State(g): State<Gateway>) -> Response {
    Json(g.lock().alerts()).into_response()
}

async fn pending(State(g): State<Gateway>) -> Response {
    Json(g.lock().pending_hitl()).into_response()
}

async fn hitl_item_method() -> Response {
    error(StatusCode::METHOD_NOT_ALLOWED, "use POST with {\"decision\": \"approve\" | \"override\"}".into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionBody {
    pub decision: OperatorDecision,
}

async fn decide(State(g): State<Gateway>, Path(id): Path<u64>, Json(body): Json<DecisionBody>) -> Response {
    let result = g.lock().decide(id, body.decision);
    match result {
        Ok(item) => {
            g.notify();
            Json(item).into_response()
        }
        Err(DecideError::NotFound(id)) => error(StatusCode::NOT_FOUND, format!("no HITL item {id}")),
        Err(DecideError::Conflict(item)) => (
            StatusCode::CONFLICT,
            Json(json!({"error": format!("HITL item {} is no longer pending", item.id), "item": item})),
        )
            .into_response(),
        Err(DecideError::ReadOnly) => error(StatusCode::FORBIDDEN, "replayed runs are read-only".into()),
        Err(DecideError::Failed(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn grid(State(g): State<Gateway>, Path(hash): Path<String>) -> Response {
    match g.lock().grid(&hash) {
        Some(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no grid {hash}")),
    }
}

struct Reader {
    gateway: Gateway,
    rx: watch::Receiver<u64>,
    cursor: usize,
    buffered: VecDeque<(usize, String)>,
    ended: bool,
}

/// Frames as SSE events with their index as id. A reconnecting client that
/// sends `Last-Event-ID` resumes after that frame.
async fn events(State(g): State<Gateway>, headers: HeaderMap) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let cursor = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok())
        .map_or(0, |i| i + 1);
    let reader = Reader {
        rx: g.changed.subscribe(),
        gateway: g,
        cursor,
        buffered: VecDeque::new(),
        ended: false,
    };
    let frames = stream::unfold(reader, |mut r| async move {
        loop {
            if let Some((i, frame)) = r.buffered.pop_front() {
                return Some((Ok(Event::default().id(i.to_string()).data(frame)), r));
            }
            if r.ended {
                return None;
            }
            r.rx.borrow_and_update();
            let (new, done) = r.gateway.lock().frames_from(r.cursor);
            for f in new {
                r.buffered.push_back((r.cursor, f));
                r.cursor += 1;
            }
            r.ended = done;
            if r.buffered.is_empty() && !r.ended && r.rx.changed().await.is_err() {
                r.ended = true;
            }
        }
    });
    Sse::new(frames).keep_alive(KeepAlive::default())
}
