//! Multi-sensor fusion into a quality-flagged analysis grid.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{ContentHash, GridField, Minutes};
use crate::world::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Direct,
    Infilled,
    Stale,
    Missing,
}

impl Quality {
    fn code(self) -> u8 {
        match self {
            Quality::Direct => 0,
            Quality::Infilled => 1,
            Quality::Stale => 2,
            Quality::Missing => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisGrid {
    pub t: Minutes,
    pub rain: GridField,
    pub quality: Vec<Quality>,
    /// Minutes from observation to analysis.
    pub ingest_latency: Minutes,
}

impl AnalysisGrid {
    pub fn stale_fraction(&self) -> f64 {
        let n = self
            .quality
            .iter()
            .filter(|q| matches!(q, Quality::Stale | Quality::Missing))
            .count();
        n as f64 / self.quality.len().max(1) as f64
    }

    pub fn hash_into(&self, h: &mut Sha256) {
        h.update(self.t.to_le_bytes());
        h.update(self.ingest_latency.to_le_bytes());
        self.rain.hash_into(h);
        let q: Vec<u8> = self.quality.iter().map(|q| q.code()).collect();
        h.update(&q);
    }

    pub fn content_hash(&self) -> ContentHash {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        ContentHash::from_hasher(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonizeParams {
    pub idw_power: f64,
    pub idw_neighbors: usize,
    /// Data older than this many ticks is stale.
    pub stale_ticks: u32,
    pub cadence: Minutes,
}

impl Default for HarmonizeParams {
    fn default() -> Self {
        HarmonizeParams {
            idw_power: 2.0,
            idw_neighbors: 8,
            stale_ticks: 2,
            cadence: 5,
        }
    }
}

/// Fuses one observation set. Never fails: with nothing usable the previous
/// analysis is carried forward and flagged stale.
pub fn harmonize(
    obs: &ObservationSet,
    prev: Option<&AnalysisGrid>,
    nx: usize,
    ny: usize,
    cell_km: f64,
    params: &HarmonizeParams,
    now: Minutes,
) -> AnalysisGrid {
    let n = nx * ny;
    let horizon = params.stale_ticks * params.cadence;
    let latency = now.saturating_sub(obs.t);
    let fresh_gauges: Vec<_> = obs
        .gauges
        .iter()
        .filter(|g| obs.t.saturating_sub(g.observed_at) <= horizon && g.cell < n)
        .collect();

    let mut rain = GridField::zeros(nx, ny, cell_km, obs.t);
    let mut quality = vec![Quality::Missing; n];
    let mut source = vec![false; n];
    if let Some(radar) = &obs.radar {
        for i in 0..n {
            if obs.radar_valid[i] {
                rain.data[i] = radar.data[i].max(0.0);
                quality[i] = Quality::Direct;
                source[i] = true;
            }
        }
    }
    for g in &fresh_gauges {
        rain.data[g.cell] = g.value.max(0.0);
        source[g.cell] = true;
        if quality[g.cell] != Quality::Direct {
            quality[g.cell] = if g.observed_at == obs.t {
                Quality::Direct
            } else {
                Quality::Infilled
            };
        }
    }

    if !source.iter().any(|&s| s) {
        return match prev {
            Some(p) => {
                let mut rain = p.rain.clone();
                rain.t = obs.t;
                AnalysisGrid {
                    t: obs.t,
                    rain,
                    quality: vec![Quality::Stale; n],
                    ingest_latency: latency,
                }
            }
            None => AnalysisGrid {
                t: obs.t,
                rain,
                quality: vec![Quality::Missing; n],
                ingest_latency: latency,
            },
        };
    }

    let k = params.idw_neighbors.max(1);
    let values = rain.data.clone();
    for i in 0..n {
        if source[i] {
            continue;
        }
        let near = nearest_sources(&source, nx, ny, i, k);
        let (mut num, mut den) = (0.0, 0.0);
        for (j, d2) in near {
            let w = 1.0 / d2.powf(params.idw_power / 2.0);
            num += w * values[j];
            den += w;
        }
        rain.data[i] = num / den;
        quality[i] = Quality::Infilled;
    }
    AnalysisGrid {
        t: obs.t,
        rain,
        quality,
        ingest_latency: latency,
    }
}

/// The `k` nearest source cells to `i` by squared distance, ties by index.
fn nearest_sources(source: &[bool], nx: usize, ny: usize, i: usize, k: usize) -> Vec<(usize, f64)> {
    let (x, y) = ((i % nx) as i64, (i / nx) as i64);
    let mut found: Vec<(usize, f64)> = Vec::new();
    let max_r = nx.max(ny) as i64;
    for r in 1..=max_r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() != r && dy.abs() != r {
                    continue;
                }
                let (qx, qy) = (x + dx, y + dy);
                if qx < 0 || qy < 0 || qx >= nx as i64 || qy >= ny as i64 {
                    continue;
                }
                let j = qy as usize * nx + qx as usize;
                if source[j] {
                    found.push((j, (dx * dx + dy * dy) as f64));
                }
            }
        }
        if found.len() >= k {
            found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            // Cells on later rings are at least r + 1 away.
            if found[k - 1].1 < ((r + 1) * (r + 1)) as f64 {
                found.truncate(k);
                return found;
            }
        }
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    found.truncate(k);
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::GaugeReading;

    fn obs_with(radar: GridField, valid: Vec<bool>) -> ObservationSet {
        ObservationSet {
            t: radar.t,
            radar: Some(radar),
            radar_valid: valid,
            gauges: Vec::new(),
            satellite: None,
        }
    }

    #[test]
    fn unshadowed_radar_passes_through() {
        let radar = GridField::from_fn(8, 8, 1.0, 10, |x, y| (x * y) as f64);
        let a = harmonize(&obs_with(radar.clone(), vec![true; 64]), None, 8, 8, 1.0, &HarmonizeParams::default(), 10);
        assert_eq!(a.rain.data, radar.data);
        assert!(a.quality.iter().all(|&q| q == Quality::Direct));
    }

    #[test]
    fn gauge_overrides_radar() {
        let radar = GridField::filled(8, 8, 1.0, 10, 40.0);
        let mut obs = obs_with(radar, vec![true; 64]);
        obs.gauges.push(GaugeReading {
            cell: 9,
            value: 50.0,
            observed_at: 5,
        });
        let a = harmonize(&obs, None, 8, 8, 1.0, &HarmonizeParams::default(), 10);
        assert_eq!(a.rain.data[9], 50.0);
        assert_eq!(a.quality[9], Quality::Direct);
    }

    #[test]
    fn shadow_in_uniform_field_infills_constant() {
        let radar = GridField::filled(8, 8, 1.0, 0, 10.0);
        let mut valid = vec![true; 64];
        for i in [18, 19, 26, 27] {
            valid[i] = false;
        }
        let a = harmonize(&obs_with(radar, valid), None, 8, 8, 1.0, &HarmonizeParams::default(), 0);
        for i in [18, 19, 26, 27] {
            assert!((a.rain.data[i] - 10.0).abs() < 1e-12);
            assert_eq!(a.quality[i], Quality::Infilled);
        }
    }

    #[test]
    fn nothing_usable_carries_previous_forward_as_stale() {
        let prev = AnalysisGrid {
            t: 5,
            rain: GridField::filled(8, 8, 1.0, 5, 3.0),
            quality: vec![Quality::Direct; 64],
            ingest_latency: 0,
        };
        let a = harmonize(&ObservationSet::empty(10, 64), Some(&prev), 8, 8, 1.0, &HarmonizeParams::default(), 10);
        assert_eq!(a.t, 10);
        assert!(a.rain.data.iter().all(|&v| v == 3.0));
        assert!(a.quality.iter().all(|&q| q == Quality::Stale));
    }

    #[test]
    fn nearest_sources_brute_force_agreement() {
        let nx = 12;
        let source: Vec<bool> = (0..144).map(|i| (i * 7) % 5 == 0).collect();
        for i in 0..144 {
            let got = nearest_sources(&source, nx, 12, i, 8);
            let mut all: Vec<(usize, f64)> = (0..144)
                .filter(|&j| source[j] && j != i)
                .map(|j| {
                    let dx = (j % nx) as f64 - (i % nx) as f64;
                    let dy = (j / nx) as f64 - (i / nx) as f64;
                    (j, dx * dx + dy * dy)
                })
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(8);
            assert_eq!(got, all, "cell {i}");
        }
    }
}
