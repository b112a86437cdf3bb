//! Ground-truth event labels.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::grid::Minutes;

use super::scenario::{Scenario, TruthFrame};

pub const EVENT_THRESHOLD: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub id: u32,
    pub onset: Minutes,
    /// Last minute at or above threshold.
    pub end: Minutes,
    /// Cells at or above threshold at any minute of the event, ascending.
    pub affected_cells: Vec<usize>,
    pub peak: f64,
}

impl EventLabel {
    /// Bounding box `(x0, y0, x1, y1)` of the affected cells, inclusive.
    pub fn bbox(&self, nx: usize) -> (usize, usize, usize, usize) {
        let mut b = (usize::MAX, usize::MAX, 0, 0);
        for &c in &self.affected_cells {
            let (x, y) = (c % nx, c / nx);
            b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
        }
        b
    }
}

/// Maximal intervals of minutes with any cell at or above `threshold`.
pub fn label_frames<I>(frames: I, threshold: f64) -> Vec<EventLabel>
where
    I: IntoIterator<Item = TruthFrame>,
{
    let mut out = Vec::new();
    let mut open: Option<(Minutes, Minutes, BTreeSet<usize>, f64)> = None;
    for f in frames {
        let wet: Vec<usize> = f
            .rain
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= threshold)
            .map(|(i, _)| i)
            .collect();
        if wet.is_empty() {
            if let Some((onset, end, cells, peak)) = open.take() {
                out.push(EventLabel {
                    id: out.len() as u32,
                    onset,
                    end,
                    affected_cells: cells.into_iter().collect(),
                    peak,
                });
            }
            continue;
        }
        let max = f.rain.max();
        match &mut open {
            Some((_, end, cells, peak)) => {
                *end = f.t;
                cells.extend(wet);
                *peak = peak.max(max);
            }
            None => open = Some((f.t, f.t, wet.into_iter().collect(), max)),
        }
    }
    if let Some((onset, end, cells, peak)) = open {
        out.push(EventLabel {
            id: out.len() as u32,
            onset,
            end,
            affected_cells: cells.into_iter().collect(),
            peak,
        });
    }
    out
}

/// Labels every minute of the scenario at the default event threshold.
pub fn label_events(scenario: &Scenario) -> Vec<EventLabel> {
    label_events_at(scenario, EVENT_THRESHOLD)
}

pub fn label_events_at(scenario: &Scenario, threshold: f64) -> Vec<EventLabel> {
    label_frames(
        (0..=scenario.duration()).map(|t| scenario.truth_step(t).expect("t within duration")),
        threshold,
    )
}
