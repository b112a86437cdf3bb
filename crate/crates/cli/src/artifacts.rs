//! Run directories: every file is staged first and the directory appears
//! in one rename, so a failed command leaves nothing behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cloudburst_core::evaluation::pipeline::Mode;
use cloudburst_core::evaluation::report::{tables_csv, tables_markdown};
use cloudburst_core::evaluation::run::RunOutput;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::session::snapshot_projection;

pub const MANIFEST: &str = "manifest.json";
pub const AUDIT: &str = "audit.ndjson";
pub const EVENTS: &str = "events.ndjson";
pub const SNAPSHOT: &str = "snapshot.json";
pub const ALERTS: &str = "alerts.json";
pub const HITL: &str = "hitl.json";
pub const OPERATOR: &str = "operator.json";
pub const GRID_DIR: &str = "grids";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_path: Option<String>,
    pub seeds: Vec<u64>,
    pub mode: String,
    pub out_dir: String,
    /// SHA-256 of every other file in the directory, by relative path.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(run_id: String, config_path: Option<&Path>, seeds: Vec<u64>, mode: String, out_dir: &Path) -> Self {
        RunManifest {
            run_id,
            config_path: config_path.map(|p| p.display().to_string()),
            seeds,
            mode,
            out_dir: out_dir.display().to_string(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn dir(&self) -> PathBuf {
        Path::new(&self.out_dir).join(&self.run_id)
    }
}

/// Directory name of a single run. Unique per (mode, seed), so rerunning
/// replaces the previous artifacts instead of accumulating copies.
pub fn run_id(mode: Mode, seed: u64) -> String {
    format!("{}-seed{seed}", mode.to_string().replace(':', "-"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_pretty<T: Serialize + ?Sized>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

/// Files of a single-event run, by relative path.
pub fn run_files(out: &RunOutput) -> Vec<(String, Vec<u8>)> {
    let rt = &out.runtime;
    let mut files = vec![
        (AUDIT.to_string(), out.audit().to_ndjson().into_bytes()),
        (EVENTS.to_string(), out.trace().stream_ndjson().into_bytes()),
        ("metrics.csv".to_string(), tables_csv(&[&out.table]).into_bytes()),
        ("metrics.md".to_string(), tables_markdown(&[&out.table]).into_bytes()),
        ("metrics.json".to_string(), json_pretty(&out.table)),
        (SNAPSHOT.to_string(), json_pretty(&snapshot_projection(rt, true))),
        (ALERTS.to_string(), json_pretty(&out.trace().alerts)),
        (HITL.to_string(), json_pretty(&rt.hitl().items().collect::<Vec<_>>())),
        (OPERATOR.to_string(), json_pretty(rt.operator_timeline())),
        (format!("{GRID_DIR}/index.json"), json_pretty(&rt.grid_refs())),
    ];
    for hash in rt.blobs().hashes() {
        let grid = rt.blobs().get(hash).expect("listed blob exists");
        files.push((format!("{GRID_DIR}/{hash}.json"), serde_json::to_vec(&*grid).expect("grid serializes")));
    }
    files
}

/// Writes `files` plus the manifest into `<out_dir>/<run_id>`, replacing
/// any previous directory of that name.
pub fn write_dir(mut manifest: RunManifest, files: &[(String, Vec<u8>)]) -> Result<RunManifest, CliError> {
    let out_dir = PathBuf::from(&manifest.out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let staging = out_dir.join(format!(".staging-{}-{}", manifest.run_id, std::process::id()));
    let result = stage(&staging, &mut manifest, files).and_then(|()| {
        let target = manifest.dir();
        if target.exists() {
            fs::remove_dir_all(&target).map_err(|e| CliError::io(&target, e))?;
        }
        fs::rename(&staging, &target).map_err(|e| CliError::io(&target, e))
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result.map(|()| manifest)
}

fn stage(staging: &Path, manifest: &mut RunManifest, files: &[(String, Vec<u8>)]) -> Result<(), CliError> {
    if staging.exists() {
        fs::remove_dir_all(staging).map_err(|e| CliError::io(staging, e))?;
    }
    for (rel, bytes) in files {
        let path = staging.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        manifest.artifacts.insert(rel.clone(), sha256_hex(bytes));
    }
    let path = staging.join(MANIFEST);
    fs::write(&path, json_pretty(manifest)).map_err(|e| CliError::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))
}

/// Reads an artifact and checks it against the manifest hash.
pub fn read_verified(dir: &Path, manifest: &RunManifest, rel: &str) -> Result<Vec<u8>, CliError> {
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    match manifest.artifacts.get(rel) {
        Some(h) if *h == sha256_hex(&bytes) => Ok(bytes),
        Some(_) => Err(CliError::Artifact(format!("{}: hash does not match the manifest", path.display()))),
        None => Err(CliError::Artifact(format!("{}: not listed in the manifest", path.display()))),
    }
}
