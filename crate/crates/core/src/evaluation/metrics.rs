//! Verification metric kernels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridField, Minutes};
use crate::response::triage::Tier;
use crate::world::{Community, EventLabel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("non-finite value in CRPS input")]
    NonFinite,
    #[error("fields are {a:?} and {b:?}")]
    Shape { a: (usize, usize), b: (usize, usize) },
    #[error("mask has {got} cells, field has {expected}")]
    Mask { got: usize, expected: usize },
}

/// Ensemble CRPS in its empirical-CDF form. Sorting makes the pairwise term
/// linear: for ascending `x`, Σ_i Σ_j |x_i − x_j| = 2 Σ_i (2i − m + 1) x_i.
pub fn crps(members: &[f64], obs: f64) -> Result<f64, MetricError> {
    if members.is_empty() {
        return Err(MetricError::EmptyEnsemble);
    }
    if !obs.is_finite() || members.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let m = members.len() as f64;
    let mut x = members.to_vec();
    x.sort_by(f64::total_cmp);
    let skill: f64 = x.iter().map(|v| (v - obs).abs()).sum::<f64>() / m;
    let pair: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * i as f64 - m + 1.0) * v)
        .sum::<f64>()
        * 2.0;
    Ok((skill - pair / (2.0 * m * m)).max(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub hits: u64,
    pub misses: u64,
    pub false_alarms: u64,
    pub correct_negatives: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ContingencyTable {
    pub fn record(&mut self, forecast: bool, observed: bool) {
        match (forecast, observed) {
            (true, true) => self.hits += 1,
            (false, true) => self.misses += 1,
            (true, false) => self.false_alarms += 1,
            (false, false) => self.correct_negatives += 1,
        }
    }

    pub fn merge(&mut self, other: &ContingencyTable) {
        self.hits += other.hits;
        self.misses += other.misses;
        self.false_alarms += other.false_alarms;
        self.correct_negatives += other.correct_negatives;
    }

    pub fn total(&self) -> u64 {
        self.hits + self.misses + self.false_alarms + self.correct_negatives
    }

    pub fn csi(&self) -> Option<f64> {
        ratio(self.hits, self.hits + self.misses + self.false_alarms)
    }

    pub fn pod(&self) -> Option<f64> {
        ratio(self.hits, self.hits + self.misses)
    }

    pub fn far(&self) -> Option<f64> {
        ratio(self.false_alarms, self.hits + self.false_alarms)
    }
}

/// Cellwise binarization of both fields at `threshold` over the masked
/// cells (all cells without a mask).
pub fn contingency(
    forecast: &GridField,
    observed: &GridField,
    threshold: f64,
    mask: Option<&[bool]>,
) -> Result<ContingencyTable, MetricError> {
    if !forecast.same_shape(observed) {
        return Err(MetricError::Shape {
            a: (forecast.nx, forecast.ny),
            b: (observed.nx, observed.ny),
        });
    }
    if let Some(m) = mask {
        if m.len() != forecast.len() {
            return Err(MetricError::Mask {
                got: m.len(),
                expected: forecast.len(),
            });
        }
    }
    let mut t = ContingencyTable::default();
    for (i, (&f, &o)) in forecast.data.iter().zip(&observed.data).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            t.record(f >= threshold, o >= threshold);
        }
    }
    Ok(t)
}

/// Per-bin sums for the reliability index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub n: Vec<u64>,
    pub forecast_sum: Vec<f64>,
    pub observed_sum: Vec<u64>,
}

impl ReliabilityBins {
    pub fn new(k: usize) -> Self {
        let k = k.max(1);
        ReliabilityBins {
            n: vec![0; k],
            forecast_sum: vec![0.0; k],
            observed_sum: vec![0; k],
        }
    }

    pub fn bins(&self) -> usize {
        self.n.len()
    }

    pub fn add(&mut self, p: f64, outcome: bool) {
        let k = self.bins();
        let b = ((p.clamp(0.0, 1.0) * k as f64).floor() as usize).min(k - 1);
        self.n[b] += 1;
        self.forecast_sum[b] += p;
        self.observed_sum[b] += outcome as u64;
    }

    pub fn merge(&mut self, other: &ReliabilityBins) {
        for b in 0..self.bins().min(other.bins()) {
            self.n[b] += other.n[b];
            self.forecast_sum[b] += other.forecast_sum[b];
            self.observed_sum[b] += other.observed_sum[b];
        }
    }

    pub fn total(&self) -> u64 {
        self.n.iter().sum()
    }

    /// `1 − Σ_k (n_k / N) |f̄_k − ō_k|`.
    pub fn index(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let mut dev = 0.0;
        for b in 0..self.bins() {
            if self.n[b] == 0 {
                continue;
            }
            let n = self.n[b] as f64;
            dev += n / total as f64 * (self.forecast_sum[b] / n - self.observed_sum[b] as f64 / n).abs();
        }
        Some((1.0 - dev).clamp(0.0, 1.0))
    }
}

pub fn reliability_index(pairs: &[(f64, bool)], k: usize) -> Option<f64> {
    let mut bins = ReliabilityBins::new(k);
    for &(p, o) in pairs {
        bins.add(p, o);
    }
    bins.index()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadCategory {
    Warned,
    Late,
    Missed,
}

/// Warnings issued less than this many minutes before onset are late.
pub const LATE_MINUTES: i64 = 5;

/// Alerts issued earlier than this before onset do not count toward it.
pub const LEAD_LOOKBACK: Minutes = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLead {
    pub event: u32,
    pub onset: Minutes,
    pub districts: Vec<u32>,
    /// Onset minus the earliest qualifying warning; `None` when there was
    /// none.
    pub lead: Option<i64>,
    pub category: LeadCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssuedAlert {
    pub district: u32,
    pub tier: Tier,
    pub issued_at: Minutes,
}

pub fn categorize(lead: Option<i64>) -> LeadCategory {
    match lead {
        Some(l) if l >= LATE_MINUTES => LeadCategory::Warned,
        Some(l) if l >= 0 => LeadCategory::Late,
        _ => LeadCategory::Missed,
    }
}

/// Earliest warning-or-higher alert for any affected district issued no
/// more than `LEAD_LOOKBACK` minutes before onset.
pub fn event_lead(event: &EventLabel, alerts: &[IssuedAlert], community: &Community) -> EventLead {
    let districts = community.districts_touching(&event.affected_cells);
    let from = event.onset.saturating_sub(LEAD_LOOKBACK);
    let first = alerts
        .iter()
        .filter(|a| a.tier >= Tier::Warning && a.issued_at >= from && districts.contains(&a.district))
        .map(|a| a.issued_at)
        .min();
    let lead = first.map(|t| event.onset as i64 - t as i64);
    EventLead {
        event: event.id,
        onset: event.onset,
        districts,
        lead,
        category: categorize(lead),
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Nearest-rank percentile, `q` in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSummary {
    pub events: Vec<EventLead>,
    pub warned: usize,
    pub late: usize,
    pub missed: usize,
    /// Median over events with a nonnegative lead.
    pub median: Option<f64>,
}

pub fn lead_time(events: &[EventLabel], alerts: &[IssuedAlert], community: &Community) -> LeadSummary {
    let per: Vec<EventLead> = events.iter().map(|e| event_lead(e, alerts, community)).collect();
    summarize_leads(per)
}

pub fn summarize_leads(events: Vec<EventLead>) -> LeadSummary {
    let count = |c| events.iter().filter(|e| e.category == c).count();
    let leads: Vec<f64> = events
        .iter()
        .filter_map(|e| e.lead)
        .filter(|&l| l >= 0)
        .map(|l| l as f64)
        .collect();
    LeadSummary {
        warned: count(LeadCategory::Warned),
        late: count(LeadCategory::Late),
        missed: count(LeadCategory::Missed),
        median: median(&leads),
        events,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub p95: Option<f64>,
}

pub fn coordination_latency(latencies: &[Minutes]) -> LatencySummary {
    let v: Vec<f64> = latencies.iter().map(|&l| l as f64).collect();
    LatencySummary {
        count: v.len(),
        min: v.iter().copied().reduce(f64::min),
        median: median(&v),
        p95: percentile(&v, 0.95),
    }
}
