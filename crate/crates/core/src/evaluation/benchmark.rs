//! Batch campaigns: MAS against the baseline, and single-component ablations.

use std::collections::BTreeMap;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::world::generate_scenario;

use super::pipeline::{Component, LearnedState, Mode, PipelineConfig};
use super::run::{run_event, MetricAccumulator, MetricTable, RunError, RunOptions};

/// `n` consecutive event seeds starting at `base`.
pub fn batch_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base + i).collect()
}

/// What a campaign keeps of each event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventResult {
    pub seed: u64,
    pub crps: Option<f64>,
    pub metrics: MetricAccumulator,
    pub input_hash: String,
    pub mass_balance_error: f64,
    pub degraded: bool,
    pub peak_hourly: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub mode: String,
    pub events: Vec<EventResult>,
    pub learned: LearnedState,
}

impl Campaign {
    pub fn metrics(&self, bins: usize) -> MetricAccumulator {
        let mut acc = MetricAccumulator::new(bins);
        for e in &self.events {
            acc.merge(&e.metrics);
        }
        acc
    }

    pub fn table(&self, bins: usize) -> MetricTable {
        self.metrics(bins).table(&self.mode)
    }
}

fn run_one(config: &PipelineConfig, mode: Mode, seed: u64, learned: &LearnedState) -> Result<(EventResult, LearnedState), RunError> {
    let wrap = |e: RunError| RunError::Seed { seed, source: Box::new(e) };
    let scenario = generate_scenario(&config.scenario, seed).map_err(|e| wrap(e.into()))?;
    let out = run_event(&scenario, config, mode, learned, &RunOptions::default()).map_err(wrap)?;
    let m = &out.metrics;
    Ok((
        EventResult {
            seed,
            crps: (m.crps_n > 0).then(|| m.crps_sum / m.crps_n as f64),
            metrics: out.metrics.clone(),
            input_hash: out.input_hash.clone(),
            mass_balance_error: out.mass_balance_error,
            degraded: out.runtime.degraded(),
            peak_hourly: out.runtime.ledger().peak_hourly(),
        },
        out.learned,
    ))
}

fn workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `seeds` under `mode`. Learning carries state from event to event,
/// so those campaigns run in order; the rest fan out over worker threads.
pub fn run_campaign(config: &PipelineConfig, mode: Mode, seeds: &[u64], threads: usize) -> Result<Campaign, RunError> {
    config.validate()?;
    let mut learned = LearnedState::initial(config);
    let mut events = Vec::with_capacity(seeds.len());
    if mode.flags().learning || threads <= 1 || seeds.len() <= 1 {
        for &seed in seeds {
            let (e, next) = run_one(config, mode, seed, &learned)?;
            events.push(e);
            learned = next;
        }
    } else {
        let chunk = seeds.len().div_ceil(threads);
        let start = learned.clone();
        let parts: Vec<Result<Vec<EventResult>, RunError>> = thread::scope(|s| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| {
                    let start = &start;
                    s.spawn(move || part.iter().map(|&seed| run_one(config, mode, seed, start).map(|r| r.0)).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("campaign worker panicked")).collect()
        });
        for p in parts {
            events.extend(p?);
        }
    }
    Ok(Campaign {
        mode: mode.to_string(),
        events,
        learned,
    })
}

/// Runs several campaigns over the same seeds at once.
pub fn run_campaigns(config: &PipelineConfig, modes: &[Mode], seeds: &[u64]) -> Result<Vec<Campaign>, RunError> {
    let sequential = modes.iter().filter(|m| m.flags().learning).count();
    let spare = workers().saturating_sub(sequential).max(1);
    let parallel = modes.len() - sequential;
    let per = (spare / parallel.max(1)).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = modes
            .iter()
            .map(|&mode| s.spawn(move || run_campaign(config, mode, seeds, per)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("campaign panicked")).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Better {
    Lower,
    Higher,
}

/// Compared metrics with the direction in which MAS should win.
pub const COMPARED: [(&str, Better); 7] = [
    ("crps", Better::Lower),
    ("csi20", Better::Higher),
    ("csi40", Better::Higher),
    ("reliability", Better::Higher),
    ("median_lead_min", Better::Higher),
    ("reach_10min", Better::Higher),
    ("routes_viable_frac", Better::Higher),
];

/// Share of events on which MAS must beat the baseline on CRPS.
pub const CRPS_EVENT_SHARE: f64 = 0.75;

pub fn metric(table: &MetricTable, name: &str) -> Option<f64> {
    match name {
        "crps" => table.crps,
        "csi20" => table.csi20,
        "csi40" => table.csi40,
        "pod" => table.pod,
        "far" => table.far,
        "reliability" => table.reliability,
        "median_lead_min" => table.median_lead_min,
        "reach_10min" => table.reach_10min,
        "routes_viable_frac" => table.routes_viable_frac,
        "coordination_latency_min" => table.coordination_latency_min,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub mas: Option<f64>,
    pub baseline: Option<f64>,
    pub delta: Option<f64>,
    pub win: bool,
}

/// Metrics whose missing value compares as this number. A side with no
/// warned events has achieved no positive lead.
fn missing_as(name: &str) -> Option<f64> {
    (name == "median_lead_min").then_some(0.0)
}

fn verdict(name: &str, mas: Option<f64>, baseline: Option<f64>, better: Better) -> Verdict {
    let fill = |v: Option<f64>| v.or(missing_as(name));
    let delta = fill(mas).zip(fill(baseline)).map(|(a, b)| a - b);
    let win = delta.is_some_and(|d| match better {
        Better::Lower => d < 0.0,
        Better::Higher => d > 0.0,
    });
    Verdict { mas, baseline, delta, win }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seeds: Vec<u64>,
    pub mas: MetricTable,
    pub baseline: MetricTable,
    pub verdicts: BTreeMap<String, Verdict>,
    /// Events on which each side had the strictly lower CRPS.
    pub crps_wins: (usize, usize),
    pub input_hashes_match: bool,
    pub max_mass_balance_error: f64,
    pub elapsed_s: f64,
    pub per_event: Vec<(u64, Option<f64>, Option<f64>)>,
}

impl BenchmarkReport {
    pub fn passed(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.values().all(|v| v.win)
    }
}

pub fn run_benchmark(config: &PipelineConfig, seeds: &[u64]) -> Result<BenchmarkReport, RunError> {
    compare(config, Mode::Mas, Mode::Baseline, seeds)
}

/// Runs `a` against `b` over the same seeds; verdicts read `a` as "mas".
pub fn compare(config: &PipelineConfig, a: Mode, b: Mode, seeds: &[u64]) -> Result<BenchmarkReport, RunError> {
    let started = Instant::now();
    let runs = run_campaigns(config, &[a, b], seeds)?;
    Ok(benchmark_report(config, &runs[0], &runs[1], started.elapsed().as_secs_f64()))
}

/// Compares two finished campaigns over the same seeds.
pub fn benchmark_report(config: &PipelineConfig, ra: &Campaign, rb: &Campaign, elapsed_s: f64) -> BenchmarkReport {
    let bins = config.eval.reliability_bins;
    let seeds: Vec<u64> = ra.events.iter().map(|e| e.seed).collect();
    let (ta, tb) = (ra.table(bins), rb.table(bins));
    let mut verdicts = BTreeMap::new();
    let mut crps_wins = (0, 0);
    let mut per_event = Vec::new();
    for (ea, eb) in ra.events.iter().zip(&rb.events) {
        if let (Some(x), Some(y)) = (ea.crps, eb.crps) {
            crps_wins.0 += (x < y) as usize;
            crps_wins.1 += (y < x) as usize;
        }
        per_event.push((ea.seed, ea.crps, eb.crps));
    }
    if !seeds.is_empty() {
        for (name, better) in COMPARED {
            verdicts.insert(name.to_string(), verdict(name, metric(&ta, name), metric(&tb, name), better));
        }
        let n = seeds.len() as f64;
        let share = crps_wins.0 as f64 / n;
        verdicts.insert(
            "crps_event_wins".to_string(),
            Verdict {
                mas: Some(share),
                baseline: Some(crps_wins.1 as f64 / n),
                delta: Some(share - crps_wins.1 as f64 / n),
                win: share >= CRPS_EVENT_SHARE,
            },
        );
    }
    let input_hashes_match = ra.events.len() == rb.events.len()
        && ra.events.iter().zip(&rb.events).all(|(x, y)| x.input_hash == y.input_hash);
    let max_mass_balance_error = ra
        .events
        .iter()
        .chain(&rb.events)
        .map(|e| e.mass_balance_error)
        .fold(0.0, f64::max);
    BenchmarkReport {
        seeds,
        mas: ta,
        baseline: tb,
        verdicts,
        crps_wins,
        input_hashes_match,
        max_mass_balance_error,
        elapsed_s,
        per_event,
    }
}

/// Expected sign of `ablated − full` for each component.
pub fn expected_signs(component: Component) -> &'static [(&'static str, Better)] {
    match component {
        Component::Downscaling => &[("csi20", Better::Lower)],
        Component::Learning => &[("reliability", Better::Lower), ("crps", Better::Higher)],
        Component::Initiation => &[("median_lead_min", Better::Lower), ("pod", Better::Lower)],
    }
}

const DELTA_METRICS: [&str; 10] = [
    "crps",
    "csi20",
    "csi40",
    "pod",
    "far",
    "reliability",
    "median_lead_min",
    "reach_10min",
    "routes_viable_frac",
    "coordination_latency_min",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub component: Component,
    pub seeds: Vec<u64>,
    pub full: MetricTable,
    pub ablated: MetricTable,
    /// `ablated − full` per metric.
    pub deltas: BTreeMap<String, Option<f64>>,
    /// Whether each expected sign holds strictly.
    pub checks: BTreeMap<String, bool>,
    pub elapsed_s: f64,
}

impl AblationReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.values().all(|&c| c)
    }
}

pub fn ablation_report(component: Component, seeds: &[u64], full: MetricTable, ablated: MetricTable, elapsed_s: f64) -> AblationReport {
    let deltas: BTreeMap<String, Option<f64>> = DELTA_METRICS
        .iter()
        .map(|&m| (m.to_string(), metric(&ablated, m).zip(metric(&full, m)).map(|(a, f)| a - f)))
        .collect();
    let checks = if seeds.is_empty() {
        BTreeMap::new()
    } else {
        expected_signs(component)
            .iter()
            .map(|&(m, dir)| {
                let ok = deltas[m].is_some_and(|d| match dir {
                    Better::Lower => d < 0.0,
                    Better::Higher => d > 0.0,
                });
                (m.to_string(), ok)
            })
            .collect()
    };
    AblationReport {
        component,
        seeds: seeds.to_vec(),
        full,
        ablated,
        deltas,
        checks,
        elapsed_s,
    }
}

pub fn run_ablation(config: &PipelineConfig, component: Component, seeds: &[u64]) -> Result<AblationReport, RunError> {
    let started = Instant::now();
    let bins = config.eval.reliability_bins;
    let runs = run_campaigns(config, &[Mode::Mas, Mode::Ablation(component)], seeds)?;
    Ok(ablation_report(
        component,
        seeds,
        runs[0].table(bins),
        runs[1].table(bins),
        started.elapsed().as_secs_f64(),
    ))
}

/// All three ablations against one shared full-MAS campaign.
pub fn run_all_ablations(config: &PipelineConfig, seeds: &[u64]) -> Result<Vec<AblationReport>, RunError> {
    let started = Instant::now();
    let bins = config.eval.reliability_bins;
    let mut modes = vec![Mode::Mas];
    modes.extend(Component::ALL.iter().map(|&c| Mode::Ablation(c)));
    let runs = run_campaigns(config, &modes, seeds)?;
    let full = runs[0].table(bins);
    let elapsed = started.elapsed().as_secs_f64();
    Ok(Component::ALL
        .iter()
        .zip(&runs[1..])
        .map(|(&c, r)| ablation_report(c, seeds, full.clone(), r.table(bins), elapsed))
        .collect())
}
