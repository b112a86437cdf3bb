//! Alert dissemination over warning channels and population reach.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::grid::Minutes;
use crate::seed::SeedRng;
use crate::world::Community;

use super::triage::AlertDecision;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Fixed { minutes: f64 },
    Exponential { mean: f64 },
}

impl DelayModel {
    pub fn sample(&self, rng: &mut SeedRng) -> f64 {
        match *self {
            DelayModel::Fixed { minutes } => minutes,
            DelayModel::Exponential { mean } => {
                if mean <= 0.0 {
                    0.0
                } else {
                    Exp::new(1.0 / mean).expect("positive rate").sample(rng)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    /// Probability that a populated cell is covered.
    pub coverage: f64,
    pub delay: DelayModel,
}

impl Channel {
    pub fn new(name: &str, coverage: f64, delay: DelayModel) -> Self {
        Channel {
            name: name.to_string(),
            coverage,
            delay,
        }
    }
}

pub fn multi_channel() -> Vec<Channel> {
    vec![
        Channel::new("cell_broadcast", 0.85, DelayModel::Exponential { mean: 2.0 }),
        Channel::new("siren", 0.6, DelayModel::Fixed { minutes: 1.0 }),
        Channel::new("radio", 0.5, DelayModel::Exponential { mean: 5.0 }),
    ]
}

pub fn single_channel() -> Vec<Channel> {
    multi_channel().into_iter().take(1).collect()
}

pub const REACH_WINDOW: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReach {
    pub channel: String,
    pub delivered: f64,
    /// Population-weighted mean delay over delivered cells, minutes.
    pub mean_latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachReport {
    pub alert_id: String,
    pub district: u32,
    pub issued_at: Minutes,
    pub population: f64,
    pub channels: Vec<ChannelReach>,
    pub reached: f64,
    pub reach: f64,
    /// The district has no population; reach is reported as 1.
    pub degenerate: bool,
}

/// Samples per-cell coverage and delay for each channel; a cell counts once
/// if any channel reaches it within the window.
pub fn disseminate(
    alert: &AlertDecision,
    channels: &[Channel],
    community: &Community,
    rng: &mut SeedRng,
) -> ReachReport {
    let cells = community
        .districts
        .iter()
        .find(|d| d.id == alert.district)
        .map(|d| d.cells.as_slice())
        .unwrap_or(&[]);
    let pop: Vec<f64> = cells.iter().map(|&c| community.population.data[c]).collect();
    let total: f64 = pop.iter().sum();
    let mut reached_cell = vec![false; cells.len()];
    let mut per = Vec::with_capacity(channels.len());
    for ch in channels {
        let mut delivered = 0.0;
        let mut lat = 0.0;
        for (j, &w) in pop.iter().enumerate() {
            let covered = rng.random::<f64>() < ch.coverage;
            let delay = ch.delay.sample(rng);
            if covered && delay <= REACH_WINDOW {
                delivered += w;
                lat += w * delay;
                reached_cell[j] = true;
            }
        }
        per.push(ChannelReach {
            channel: ch.name.clone(),
            delivered,
            mean_latency: (delivered > 0.0).then(|| lat / delivered),
        });
    }
    let reached: f64 = pop.iter().zip(&reached_cell).filter(|(_, r)| **r).map(|(w, _)| w).sum();
    let degenerate = !(total > 0.0);
    ReachReport {
        alert_id: alert.id(),
        district: alert.district,
        issued_at: alert.issued_at,
        population: total,
        channels: per,
        reached,
        reach: if degenerate { 1.0 } else { (reached / total).clamp(0.0, 1.0) },
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridField;
    use crate::response::triage::Tier;
    use crate::seed::stream;
    use crate::world::{District, RoadGraph, RoadNode};

    fn community(pop: f64) -> Community {
        let nodes = vec![RoadNode { id: 0, x: 0, y: 0 }];
        Community {
            population: GridField::filled(10, 10, 1.0, 0, pop),
            districts: vec![District {
                id: 0,
                cells: (0..100).collect(),
                population: pop * 100.0,
            }],
            district_of: vec![Some(0); 100],
            roads: RoadGraph::new(nodes, 0.3, 0),
            shelters: vec![0],
            zones: Vec::new(),
        }
    }

    fn alert() -> AlertDecision {
        AlertDecision {
            district: 0,
            tier: Tier::Warning,
            probability: 0.5,
            p_star: 0.1,
            low_confidence: false,
            degraded: false,
            issued_at: 0,
            expiry: 30,
            lead: 10,
            zones: vec![],
        }
    }

    #[test]
    fn full_coverage_no_delay() {
        let ch = [Channel::new("a", 1.0, DelayModel::Fixed { minutes: 0.0 })];
        let r = disseminate(&alert(), &ch, &community(5.0), &mut stream(1, "reach", 0));
        assert_eq!(r.reach, 1.0);
    }

    #[test]
    fn late_channel_reaches_nobody() {
        let ch = [Channel::new("a", 1.0, DelayModel::Fixed { minutes: 11.0 })];
        let r = disseminate(&alert(), &ch, &community(5.0), &mut stream(1, "reach", 0));
        assert_eq!(r.reach, 0.0);
    }

    #[test]
    fn empty_district_is_degenerate() {
        let ch = multi_channel();
        let r = disseminate(&alert(), &ch, &community(0.0), &mut stream(1, "reach", 0));
        assert!(r.degenerate);
        assert_eq!(r.reach, 1.0);
    }

    #[test]
    fn union_at_least_each_channel() {
        let r = disseminate(&alert(), &multi_channel(), &community(3.0), &mut stream(4, "reach", 0));
        for c in &r.channels {
            assert!(r.reached >= c.delivered - 1e-9);
        }
    }
}
