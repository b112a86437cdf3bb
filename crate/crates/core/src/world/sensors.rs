//! Sensor models: radar with a fixed shadow sector and multiplicative noise,
//! exact gauges with reporting latency, block-averaged satellite.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{ContentHash, GridField, Minutes};
use crate::seed::SeedRng;

use super::scenario::TruthFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Log-space standard deviation of multiplicative radar noise.
    pub radar_noise_sd: f64,
    /// Shadow sector size as a fraction of all cells, drawn from this range.
    pub shadow_fraction: (f64, f64),
    pub gauge_count: usize,
    pub gauge_latency: Minutes,
    pub satellite_factor: usize,
    pub satellite_latency: Minutes,
    pub satellite_noise_sd: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            radar_noise_sd: 0.15,
            shadow_fraction: (0.10, 0.20),
            gauge_count: 24,
            gauge_latency: 5,
            satellite_factor: 8,
            satellite_latency: 15,
            satellite_noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSuite {
    pub config: SensorConfig,
    pub radar_site: (f64, f64),
    /// True where the radar cannot see.
    pub shadow: Vec<bool>,
    /// Gauge cell indices, ascending.
    pub gauges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeReading {
    pub cell: usize,
    pub value: f64,
    pub observed_at: Minutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteFrame {
    pub field: GridField,
    pub observed_at: Minutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub t: Minutes,
    /// Radar rain rate; shadowed cells hold 0 and are marked invalid.
    pub radar: Option<GridField>,
    pub radar_valid: Vec<bool>,
    pub gauges: Vec<GaugeReading>,
    pub satellite: Option<SatelliteFrame>,
}

impl ObservationSet {
    /// An observation set with no usable data at all.
    pub fn empty(t: Minutes, cells: usize) -> Self {
        ObservationSet {
            t,
            radar: None,
            radar_valid: vec![false; cells],
            gauges: Vec::new(),
            satellite: None,
        }
    }

    pub fn hash_into(&self, h: &mut Sha256) {
        h.update(self.t.to_le_bytes());
        match &self.radar {
            Some(r) => {
                h.update([1u8]);
                r.hash_into(h);
            }
            None => h.update([0u8]),
        }
        let bits: Vec<u8> = self.radar_valid.iter().map(|&b| b as u8).collect();
        h.update(&bits);
        for g in &self.gauges {
            h.update((g.cell as u64).to_le_bytes());
            h.update(g.value.to_le_bytes());
            h.update(g.observed_at.to_le_bytes());
        }
        if let Some(s) = &self.satellite {
            s.field.hash_into(h);
            h.update(s.observed_at.to_le_bytes());
        }
    }

    pub fn content_hash(&self) -> ContentHash {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        ContentHash::from_hasher(h)
    }
}

impl SensorSuite {
    pub fn generate(nx: usize, ny: usize, config: &SensorConfig, rng: &mut SeedRng) -> SensorSuite {
        let site = (
            rng.random_range(nx as f64 * 0.3..nx as f64 * 0.7),
            rng.random_range(ny as f64 * 0.3..ny as f64 * 0.7),
        );
        let (lo, hi) = config.shadow_fraction;
        let shadow = if hi <= 0.0 {
            vec![false; nx * ny]
        } else {
            let target = if hi > lo {
                rng.random_range(lo + (hi - lo) * 0.1..hi - (hi - lo) * 0.1)
            } else {
                lo
            };
            let bearing: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let min_range: f64 = rng.random_range(5.0..10.0);
            sector_mask(nx, ny, site, bearing, min_range, target)
        };
        let count = config.gauge_count.min(nx * ny);
        let mut gauges: Vec<usize> = sample(rng, nx * ny, count).into_iter().collect();
        gauges.sort_unstable();
        SensorSuite {
            config: config.clone(),
            radar_site: site,
            shadow,
            gauges,
        }
    }

    /// A suite that sees everything exactly, for tests.
    pub fn perfect(nx: usize, ny: usize) -> SensorSuite {
        SensorSuite {
            config: SensorConfig {
                radar_noise_sd: 0.0,
                shadow_fraction: (0.0, 0.0),
                gauge_count: 0,
                gauge_latency: 0,
                satellite_factor: 2,
                satellite_latency: 0,
                satellite_noise_sd: 0.0,
            },
            radar_site: (nx as f64 / 2.0, ny as f64 / 2.0),
            shadow: vec![false; nx * ny],
            gauges: Vec::new(),
        }
    }

    pub fn shadow_fraction(&self) -> f64 {
        self.shadow.iter().filter(|&&s| s).count() as f64 / self.shadow.len() as f64
    }

    /// Observes `now`; gauge and satellite readings come from their lagged
    /// frames when available.
    pub fn observe(
        &self,
        now: &TruthFrame,
        gauge_frame: Option<&TruthFrame>,
        satellite_frame: Option<&TruthFrame>,
        rng: &mut SeedRng,
    ) -> ObservationSet {
        let sd = self.config.radar_noise_sd;
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut radar = now.rain.clone();
        for (i, v) in radar.data.iter_mut().enumerate() {
            let z: f64 = noise.sample(rng);
            if self.shadow[i] {
                *v = 0.0;
            } else if sd > 0.0 {
                *v *= (sd * z - 0.5 * sd * sd).exp();
            }
        }
        let radar_valid = self.shadow.iter().map(|&s| !s).collect();
        let gauges = gauge_frame
            .map(|f| {
                self.gauges
                    .iter()
                    .map(|&cell| GaugeReading {
                        cell,
                        value: f.rain.data[cell],
                        observed_at: f.t,
                    })
                    .collect()
            })
            .unwrap_or_default();
        let satellite = satellite_frame.map(|f| {
            let mut field = f
                .rain
                .block_mean(self.config.satellite_factor)
                .expect("grid divisible by satellite factor");
            let ssd = self.config.satellite_noise_sd;
            if ssd > 0.0 {
                for v in &mut field.data {
                    let z: f64 = noise.sample(rng);
                    *v *= (ssd * z - 0.5 * ssd * ssd).exp();
                }
            }
            SatelliteFrame {
                field,
                observed_at: f.t,
            }
        });
        ObservationSet {
            t: now.t,
            radar: Some(radar),
            radar_valid,
            gauges,
            satellite,
        }
    }
}

/// Contiguous beam-blockage sector: cells beyond `min_range` whose bearing
/// from the site lies within a half-width grown until `target` is reached.
fn sector_mask(
    nx: usize,
    ny: usize,
    site: (f64, f64),
    bearing: f64,
    min_range: f64,
    target: f64,
) -> Vec<bool> {
    let total = (nx * ny) as f64;
    let angular: Vec<Option<f64>> = (0..nx * ny)
        .map(|i| {
            let dx = (i % nx) as f64 - site.0;
            let dy = (i / nx) as f64 - site.1;
            if (dx * dx + dy * dy).sqrt() < min_range {
                None
            } else {
                let mut d = dy.atan2(dx) - bearing;
                while d > std::f64::consts::PI {
                    d -= std::f64::consts::TAU;
                }
                while d < -std::f64::consts::PI {
                    d += std::f64::consts::TAU;
                }
                Some(d.abs())
            }
        })
        .collect();
    let mut half = 0.0f64;
    let step = 0.25f64.to_radians();
    loop {
        half += step;
        let mask: Vec<bool> = angular.iter().map(|a| a.is_some_and(|d| d <= half)).collect();
        let frac = mask.iter().filter(|&&m| m).count() as f64 / total;
        if frac >= target || half >= std::f64::consts::PI {
            return mask;
        }
    }
}
