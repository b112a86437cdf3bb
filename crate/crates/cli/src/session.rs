//! The run behind the gateway: a live event advanced tick by tick, or a
//! finished run directory served read-only.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use cloudburst_core::evaluation::run::{EventRun, RunError, RunOutput};
use cloudburst_core::grid::Minutes;
use cloudburst_core::runtime::governance::{HitlError, HitlItem};
use cloudburst_core::runtime::trace::StreamEvent;
use cloudburst_core::runtime::{OperatorDecision, Runtime, RuntimeError, StateKey, StateValue};
use serde_json::{json, Value};

use crate::artifacts::{self, read_manifest, read_verified, RunManifest, ALERTS, EVENTS, GRID_DIR, HITL, SNAPSHOT};
use crate::error::CliError;

/// Versioned projection of shared state served at `/state/snapshot`.
pub fn snapshot_projection(rt: &Runtime, done: bool) -> Value {
    let snap = rt.state().snapshot();
    let entries: serde_json::Map<String, Value> = snap
        .entries()
        .map(|(k, v)| {
            let name = serde_json::to_value(k).expect("key serializes");
            let name = name.as_str().expect("keys serialize as strings").to_string();
            (name, json!({"version": v.version, "written_at": v.written_at, "writer": v.writer}))
        })
        .collect();
    let scalar = |k: StateKey| snap.get(k).and_then(|v| v.value.as_scalar());
    let active = match snap.get(StateKey::Alerts).map(|v| &v.value) {
        Some(StateValue::Alerts(a)) => json!(a),
        _ => json!([]),
    };
    json!({
        "version": snap.version,
        "clock": snap.clock,
        "content_hash": snap.content_hash().0,
        "entries": entries,
        "p_star": scalar(StateKey::PStar),
        "sigma_infl": scalar(StateKey::SpreadInflation),
        "delta": rt.governance().delta,
        "active_alerts": active,
        "grids": rt.grid_refs(),
        "pending_hitl": rt.hitl().pending().len(),
        "degraded": rt.degraded(),
        "done": done,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecideError {
    NotFound(u64),
    Conflict(HitlItem),
    ReadOnly,
    Failed(String),
}

struct Recorded {
    dir: PathBuf,
    manifest: RunManifest,
    snapshot: Value,
    alerts: Value,
    hitl: Vec<HitlItem>,
    queued: VecDeque<String>,
}

enum Source {
    Live(Box<EventRun>),
    Finished(Box<RunOutput>),
    Replay(Box<Recorded>),
    Failed(String),
}

pub struct Session {
    source: Source,
    /// Stream frames released so far, one JSON document each.
    frames: Vec<String>,
    /// Where a live run writes its artifacts when it finishes.
    manifest: Option<RunManifest>,
    written: Option<Result<RunManifest, String>>,
}

impl Session {
    pub fn live(run: EventRun, manifest: Option<RunManifest>) -> Self {
        let mut s = Session {
            source: Source::Live(Box::new(run)),
            frames: Vec::new(),
            manifest,
            written: None,
        };
        s.sync_frames();
        s
    }

    /// Opens a run directory, checking every served artifact against the
    /// manifest.
    pub fn replay(dir: &Path) -> Result<Self, CliError> {
        let manifest = read_manifest(dir)?;
        let read_json = |rel: &str| -> Result<Value, CliError> {
            let bytes = read_verified(dir, &manifest, rel)?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::Artifact(format!("{rel}: {e}")))
        };
        let events = String::from_utf8(read_verified(dir, &manifest, EVENTS)?)
            .map_err(|e| CliError::Artifact(format!("{EVENTS}: {e}")))?;
        let hitl = serde_json::from_value(read_json(HITL)?).map_err(|e| CliError::Artifact(format!("{HITL}: {e}")))?;
        let recorded = Recorded {
            dir: dir.to_path_buf(),
            snapshot: read_json(SNAPSHOT)?,
            alerts: read_json(ALERTS)?,
            hitl,
            queued: events.lines().map(str::to_string).collect(),
            manifest,
        };
        Ok(Session {
            source: Source::Replay(Box::new(recorded)),
            frames: Vec::new(),
            manifest: None,
            written: None,
        })
    }

    pub fn is_done(&self) -> bool {
        match &self.source {
            Source::Live(_) => false,
            Source::Finished(_) | Source::Failed(_) => true,
            Source::Replay(r) => r.queued.is_empty(),
        }
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.source, Source::Replay(_))
    }

    fn runtime(&self) -> Option<&Runtime> {
        match &self.source {
            Source::Live(run) => Some(run.runtime()),
            Source::Finished(out) => Some(&out.runtime),
            _ => None,
        }
    }

    /// Artifacts written when the live run finished.
    pub fn written(&self) -> Option<&Result<RunManifest, String>> {
        self.written.as_ref()
    }

    fn sync_frames(&mut self) {
        let Some(rt) = self.runtime() else { return };
        let new: Vec<String> = rt.trace().stream[self.frames.len()..]
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes"))
            .collect();
        self.frames.extend(new);
    }

    /// Advances one tick (live) or releases the next tick's frames
    /// (replay). Returns the simulated clock afterwards, or `None` once
    /// there is nothing left to do.
    pub fn step(&mut self) -> Option<Minutes> {
        match &mut self.source {
            Source::Live(run) => {
                let result = run.tick();
                let clock = run.runtime().clock();
                match result {
                    Ok(true) => {}
                    Ok(false) => self.finish(),
                    Err(e) => self.fail(e),
                }
                self.sync_frames();
                Some(clock)
            }
            Source::Replay(r) => {
                let mut clock = None;
                while let Some(frame) = r.queued.pop_front() {
                    if let Ok(StreamEvent::Tick { t, .. }) = serde_json::from_str::<StreamEvent>(&frame) {
                        clock = Some(t);
                    }
                    self.frames.push(frame);
                    if clock.is_some() {
                        break;
                    }
                }
                clock
            }
            Source::Finished(_) | Source::Failed(_) => None,
        }
    }

    fn finish(&mut self) {
        let Source::Live(run) = std::mem::replace(&mut self.source, Source::Failed("finishing".into())) else {
            return;
        };
        match run.finish() {
            Ok(out) => {
                if let Some(m) = self.manifest.take() {
                    self.written = Some(artifacts::write_dir(m, &artifacts::run_files(&out)).map_err(|e| e.to_string()));
                }
                self.source = Source::Finished(Box::new(out));
            }
            Err(e) => self.fail(e),
        }
    }

    fn fail(&mut self, e: RunError) {
        self.source = Source::Failed(e.to_string());
    }

    pub fn snapshot(&self) -> Value {
        match &self.source {
            Source::Live(run) => snapshot_projection(run.runtime(), false),
            Source::Finished(out) => snapshot_projection(&out.runtime, true),
            Source::Replay(r) => r.snapshot.clone(),
            Source::Failed(e) => json!({"error": e, "done": true}),
        }
    }

    pub fn alerts(&self) -> Value {
        match (&self.source, self.runtime()) {
            (Source::Replay(r), _) => r.alerts.clone(),
            (_, Some(rt)) => json!(rt.trace().alerts),
            _ => json!([]),
        }
    }

    pub fn pending_hitl(&self) -> Value {
        match (&self.source, self.runtime()) {
            (Source::Replay(r), _) => json!(r.hitl.iter().filter(|i| i.resolved_at.is_none()).collect::<Vec<_>>()),
            (_, Some(rt)) => json!(rt.hitl().pending()),
            _ => json!([]),
        }
    }

    /// Resolves a pending item through the runtime's operator ingress.
    pub fn decide(&mut self, id: u64, decision: OperatorDecision) -> Result<HitlItem, DecideError> {
        let result = match &mut self.source {
            Source::Live(run) => run.decide(id, decision),
            Source::Finished(out) => {
                return match out.runtime.hitl().get(id) {
                    Some(item) => Err(DecideError::Conflict(item.clone())),
                    None => Err(DecideError::NotFound(id)),
                }
            }
            Source::Replay(_) => return Err(DecideError::ReadOnly),
            Source::Failed(e) => return Err(DecideError::Failed(e.clone())),
        };
        self.sync_frames();
        result.map_err(|e| match e {
            RuntimeError::Hitl(HitlError::NotFound(id)) => DecideError::NotFound(id),
            RuntimeError::Hitl(HitlError::Conflict { id, .. }) => match self.runtime().and_then(|rt| rt.hitl().get(id)) {
                Some(item) => DecideError::Conflict(item.clone()),
                None => DecideError::NotFound(id),
            },
            other => DecideError::Failed(other.to_string()),
        })
    }

    /// A grid blob as JSON bytes.
    pub fn grid(&self, hash: &str) -> Option<Vec<u8>> {
        if hash.is_empty() || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        match (&self.source, self.runtime()) {
            (Source::Replay(r), _) => read_verified(&r.dir, &r.manifest, &format!("{GRID_DIR}/{hash}.json")).ok(),
            (_, Some(rt)) => rt.blobs().get(hash).map(|g| serde_json::to_vec(&*g).expect("grid serializes")),
            _ => None,
        }
    }

    /// Frames from index `from` on, and whether the stream has ended.
    pub fn frames_from(&self, from: usize) -> (Vec<String>, bool) {
        let new = self.frames.get(from..).map(<[String]>::to_vec).unwrap_or_default();
        (new, self.is_done())
    }
}
