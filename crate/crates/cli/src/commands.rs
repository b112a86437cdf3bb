use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::sync::Arc;

use cloudburst_core::evaluation::benchmark::{batch_seeds, run_ablation, run_all_ablations, run_benchmark};
use cloudburst_core::evaluation::pipeline::{Component, LearnedState, Mode, PipelineConfig};
use cloudburst_core::evaluation::report::{ablation_csv, ablation_markdown, benchmark_markdown, tables_csv, verdicts_json};
use cloudburst_core::evaluation::run::{run_event, EventRun, RunOptions, RunOutput};
use cloudburst_core::world::generate_scenario;
use serde_json::json;

use crate::args::{AblateArgs, BatchArgs, ReplayArgs, ReportArgs, RunArgs, ServeArgs};
use crate::artifacts::{read_manifest, read_verified, run_files, run_id, write_dir, RunManifest};
use crate::config::load_config;
use crate::error::CliError;
use crate::gateway::{router, Gateway};
use crate::session::Session;

/// Process exit status: success, a directional verdict that did not hold,
/// or an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    VerdictFailed,
}

pub fn simulate(config: &PipelineConfig, mode: Mode, seed: u64) -> Result<RunOutput, CliError> {
    let scenario = generate_scenario(&config.scenario, seed).map_err(cloudburst_core::evaluation::run::RunError::from)?;
    Ok(run_event(&scenario, config, mode, &LearnedState::initial(config), &RunOptions::default())?)
}

pub fn summary(out: &RunOutput) -> String {
    let t = &out.table;
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    format!(
        "{} seed {}: {} alerts, {} review items, {} operator decisions, degraded {}, CRPS {}, CSI@20 {}, reliability {}",
        out.mode,
        out.seed,
        out.trace().alerts.len(),
        out.runtime.hitl().items().count(),
        out.runtime.operator_timeline().len(),
        out.runtime.degraded(),
        f(t.crps),
        f(t.csi20),
        f(t.reliability),
    )
}

pub fn cmd_run(args: &RunArgs) -> Result<(Outcome, RunManifest), CliError> {
    let config = load_config(args.common.config.as_deref())?;
    let out = simulate(&config, args.mode, args.seed)?;
    let manifest = RunManifest::new(
        run_id(args.mode, args.seed),
        args.common.config.as_deref(),
        vec![args.seed],
        args.mode.to_string(),
        &args.common.out,
    );
    let manifest = write_dir(manifest, &run_files(&out))?;
    println!("{}", summary(&out));
    println!("artifacts: {}", manifest.dir().display());
    Ok((Outcome::Pass, manifest))
}

fn seeds(batch: &BatchArgs) -> Result<Vec<u64>, CliError> {
    if batch.events == 0 {
        return Err(CliError::EmptyBatch);
    }
    Ok(batch_seeds(batch.seed_base, batch.events))
}

fn pretty(v: &serde_json::Value) -> Vec<u8> {
    (serde_json::to_string_pretty(v).expect("json serializes") + "\n").into_bytes()
}

pub fn cmd_bench(args: &BatchArgs) -> Result<(Outcome, RunManifest), CliError> {
    let config = load_config(args.common.config.as_deref())?;
    let seeds = seeds(args)?;
    let r = run_benchmark(&config, &seeds)?;
    let mut per_event = String::from("seed,crps_mas,crps_baseline\n");
    for (seed, a, b) in &r.per_event {
        let c = |v: &Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let _ = writeln!(per_event, "{seed},{},{}", c(a), c(b));
    }
    let files = vec![
        ("report.md".to_string(), benchmark_markdown(&r).into_bytes()),
        ("metrics.csv".to_string(), tables_csv(&[&r.mas, &r.baseline]).into_bytes()),
        ("metrics.json".to_string(), pretty(&json!([r.mas, r.baseline]))),
        ("verdicts.json".to_string(), verdicts_json(&r.verdicts).into_bytes()),
        ("per_event.csv".to_string(), per_event.into_bytes()),
    ];
    let manifest = RunManifest::new(
        format!("bench-seed{}-n{}", args.seed_base, seeds.len()),
        args.common.config.as_deref(),
        seeds,
        "mas-vs-baseline".to_string(),
        &args.common.out,
    );
    let manifest = write_dir(manifest, &files)?;
    for (name, v) in &r.verdicts {
        println!("{:<4} {name}", if v.win { "win" } else { "loss" });
    }
    println!("{}", if r.passed() { "all orderings hold" } else { "some orderings do not hold" });
    println!("report: {}", manifest.dir().join("report.md").display());
    Ok((if r.passed() { Outcome::Pass } else { Outcome::VerdictFailed }, manifest))
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(Outcome, RunManifest), CliError> {
    let component = match args.component.as_str() {
        "all" => None,
        other => Some(other.parse::<Component>().map_err(|_| CliError::Component(other.to_string()))?),
    };
    let config = load_config(args.batch.common.config.as_deref())?;
    let seeds = seeds(&args.batch)?;
    let reports = match component {
        Some(c) => vec![run_ablation(&config, c, &seeds)?],
        None => run_all_ablations(&config, &seeds)?,
    };
    let checks: BTreeMap<&str, _> = reports
        .iter()
        .map(|r| (r.component.as_str(), json!({"checks": r.checks, "deltas": r.deltas, "passed": r.passed()})))
        .collect();
    let files = vec![
        ("report.md".to_string(), ablation_markdown(&reports).into_bytes()),
        ("ablation.csv".to_string(), ablation_csv(&reports).into_bytes()),
        ("checks.json".to_string(), pretty(&json!(checks))),
    ];
    let manifest = RunManifest::new(
        format!("ablate-{}-seed{}-n{}", args.component, args.batch.seed_base, seeds.len()),
        args.batch.common.config.as_deref(),
        seeds,
        format!("ablation:{}", args.component),
        &args.batch.common.out,
    );
    let manifest = write_dir(manifest, &files)?;
    let passed = reports.iter().all(|r| r.passed());
    for r in &reports {
        println!("{:<4} {}", if r.passed() { "ok" } else { "FAIL" }, r.component.as_str());
    }
    println!("report: {}", manifest.dir().join("report.md").display());
    Ok((if passed { Outcome::Pass } else { Outcome::VerdictFailed }, manifest))
}

/// Checks every artifact against the manifest and returns the stored
/// Markdown report.
pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let manifest = read_manifest(&args.dir)?;
    for rel in manifest.artifacts.keys() {
        read_verified(&args.dir, &manifest, rel)?;
    }
    let name = ["report.md", "metrics.md"]
        .into_iter()
        .find(|n| manifest.artifacts.contains_key(*n))
        .ok_or_else(|| CliError::Artifact(format!("{}: no report in the manifest", args.dir.display())))?;
    let path = args.dir.join(name);
    fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
}

pub fn live_session(args: &RunArgs) -> Result<Session, CliError> {
    let config = load_config(args.common.config.as_deref())?;
    let scenario = generate_scenario(&config.scenario, args.seed).map_err(cloudburst_core::evaluation::run::RunError::from)?;
    let run = EventRun::new(Arc::new(scenario), &config, args.mode, &LearnedState::initial(&config), &RunOptions::default())?;
    let manifest = RunManifest::new(
        run_id(args.mode, args.seed),
        args.common.config.as_deref(),
        vec![args.seed],
        args.mode.to_string(),
        &args.common.out,
    );
    Ok(Session::live(run, Some(manifest)))
}

async fn serve_gateway(gateway: Gateway, addr: SocketAddr, pace: f64, label: &str) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Io { path: addr.to_string(), source: e })?;
    let local = listener.local_addr().map_err(|e| CliError::Io { path: addr.to_string(), source: e })?;
    println!("{label} on http://{local}");
    let driver = gateway.clone();
    tokio::task::spawn_blocking(move || {
        driver.drive(pace);
        match driver.lock().written() {
            Some(Ok(m)) => println!("run finished; artifacts: {}", m.dir().display()),
            Some(Err(e)) => eprintln!("run finished; writing artifacts failed: {e}"),
            None => println!("stream finished"),
        }
    });
    axum::serve(listener, router(gateway))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Io { path: local.to_string(), source: e })
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::Io { path: "tokio runtime".into(), source: e })
}

pub fn cmd_serve(args: &ServeArgs) -> Result<Outcome, CliError> {
    let gateway = Gateway::new(live_session(&args.run)?);
    runtime()?.block_on(serve_gateway(gateway, args.addr, args.pace, "serving live run"))?;
    Ok(Outcome::Pass)
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<Outcome, CliError> {
    let gateway = Gateway::new(Session::replay(&args.dir)?);
    runtime()?.block_on(serve_gateway(gateway, args.addr, args.pace, "replaying read-only"))?;
    Ok(Outcome::Pass)
}
