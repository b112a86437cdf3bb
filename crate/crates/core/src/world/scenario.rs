//! Scenario generation and the analytic rainfall truth.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{GridField, Minutes};
use crate::seed::stream;

use super::cells::{CellError, ConvectiveCell, FOOTPRINT_CUTOFF};
use super::community::{Community, CommunityConfig, CommunityError};
use super::sensors::{ObservationSet, SensorConfig, SensorSuite};
use super::terrain::{Terrain, TerrainParams};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("grid must be at least 32x32 (got {0}x{1})")]
    GridTooSmall(usize, usize),
    #[error("invalid scenario config: {0}")]
    Invalid(String),
    #[error("time {t} outside scenario [0, {duration}]")]
    OutOfRange { t: Minutes, duration: Minutes },
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Community(#[from] CommunityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioClass {
    /// One terrain-locked cell guaranteed above the cloudburst floor.
    Cloudburst,
    /// Only ordinary convection.
    Moderate,
    /// No convective cells.
    Dry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub nx: usize,
    pub ny: usize,
    pub cell_km: f64,
    pub duration: Minutes,
    pub cadence: Minutes,
    pub class: ScenarioClass,
    /// Orographic enhancement strength: rain × (1 + gamma · uplift).
    pub gamma: f64,
    pub minor_cells: (usize, usize),
    pub steering_speed: (f64, f64),
    pub main_birth: (Minutes, Minutes),
    pub main_peak: (f64, f64),
    pub main_radius: (f64, f64),
    pub main_lifetime: (Minutes, Minutes),
    pub main_speed: (f64, f64),
    pub tau: (f64, f64),
    pub minor_peak: (f64, f64),
    pub minor_radius: (f64, f64),
    pub minor_lifetime: (Minutes, Minutes),
    /// Guaranteed maximum rain rate for the cloudburst class (mm/h).
    pub cloudburst_floor: f64,
    /// Replaces generated cells when set.
    pub cells: Option<Vec<ConvectiveCell>>,
    pub flat_terrain: bool,
    pub terrain: TerrainParams,
    pub sensors: SensorConfig,
    pub community: CommunityConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            nx: 64,
            ny: 64,
            cell_km: 1.0,
            duration: 180,
            cadence: 5,
            class: ScenarioClass::Cloudburst,
            gamma: 1.0,
            minor_cells: (0, 2),
            steering_speed: (0.1, 0.3),
            main_birth: (30, 70),
            main_peak: (80.0, 130.0),
            main_radius: (2.5, 4.0),
            main_lifetime: (90, 120),
            main_speed: (0.03, 0.12),
            tau: (8.0, 12.0),
            minor_peak: (12.0, 35.0),
            minor_radius: (2.0, 3.5),
            minor_lifetime: (40, 80),
            cloudburst_floor: 105.0,
            cells: None,
            flat_terrain: false,
            terrain: TerrainParams::default(),
            sensors: SensorConfig::default(),
            community: CommunityConfig::default(),
        }
    }
}

fn ordered<T: PartialOrd>(name: &str, r: (T, T)) -> Result<(), ScenarioError> {
    if r.0 <= r.1 {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!("{name}: range is reversed")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nx < 32 || self.ny < 32 {
            return Err(ScenarioError::GridTooSmall(self.nx, self.ny));
        }
        if !(self.cell_km > 0.0) {
            return Err(ScenarioError::Invalid("cell_km must be positive".into()));
        }
        if self.cadence == 0 || self.duration == 0 || self.duration % self.cadence != 0 {
            return Err(ScenarioError::Invalid(
                "duration must be a positive multiple of cadence".into(),
            ));
        }
        let s = self.sensors.satellite_factor;
        if s < 2 || self.nx % s != 0 || self.ny % s != 0 {
            return Err(ScenarioError::Invalid(
                "satellite factor must be >= 2 and divide the grid".into(),
            ));
        }
        let (lo, hi) = self.sensors.shadow_fraction;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(ScenarioError::Invalid("shadow_fraction out of range".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(ScenarioError::Invalid("gamma must be >= 0".into()));
        }
        ordered("minor_cells", self.minor_cells)?;
        ordered("steering_speed", self.steering_speed)?;
        ordered("main_birth", self.main_birth)?;
        ordered("main_peak", self.main_peak)?;
        ordered("main_radius", self.main_radius)?;
        ordered("main_lifetime", self.main_lifetime)?;
        ordered("main_speed", self.main_speed)?;
        ordered("tau", self.tau)?;
        ordered("minor_peak", self.minor_peak)?;
        ordered("minor_radius", self.minor_radius)?;
        ordered("minor_lifetime", self.minor_lifetime)?;
        if self.main_peak.0 <= 0.0 || self.minor_peak.0 <= 0.0 {
            return Err(ScenarioError::Invalid("peaks must be positive".into()));
        }
        if let Some(cells) = &self.cells {
            for c in cells {
                c.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub t: Minutes,
    pub rain: GridField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub terrain: Terrain,
    pub cells: Vec<ConvectiveCell>,
    pub sensors: SensorSuite,
    pub community: Community,
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let (nx, ny) = (config.nx, config.ny);
    let mut rng = stream(seed, "scenario", 0);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let wind = (angle.cos(), angle.sin());
    let terrain = if config.flat_terrain {
        Terrain::from_elevation(GridField::filled(nx, ny, config.cell_km, 0, 500.0), wind)
    } else {
        Terrain::generate(
            nx,
            ny,
            config.cell_km,
            wind,
            &config.terrain,
            &mut stream(seed, "terrain", 0),
        )
    };

    let cells = match &config.cells {
        Some(c) => c.clone(),
        None => generate_cells(config, &terrain, wind, seed),
    };
    let sensors = SensorSuite::generate(nx, ny, &config.sensors, &mut stream(seed, "sensors", 0));
    let community = Community::generate(&terrain, &config.community, &mut stream(seed, "community", 0))?;
    Ok(Scenario {
        config: config.clone(),
        seed,
        terrain,
        cells,
        sensors,
        community,
    })
}

fn generate_cells(
    config: &ScenarioConfig,
    terrain: &Terrain,
    wind: (f64, f64),
    seed: u64,
) -> Vec<ConvectiveCell> {
    let mut rng = stream(seed, "cells", 0);
    let (nx, ny) = (config.nx, config.ny);
    let mut cells = Vec::new();
    let steer: f64 = rng.random_range(config.steering_speed.0..=config.steering_speed.1);
    let margin = 10usize.min(nx / 4);

    if config.class == ScenarioClass::Cloudburst {
        // Windward slopes are favored: location weight ∝ uplift².
        let mut weights = Vec::new();
        let mut total = 0.0;
        for y in margin..ny - margin {
            for x in margin..nx - margin {
                let u = terrain.uplift.get(x, y);
                let w = u * u + 1e-3;
                total += w;
                weights.push((x, y, total));
            }
        }
        let pick = rng.random_range(0.0..total);
        let &(x, y, _) = weights
            .iter()
            .find(|&&(_, _, c)| c > pick)
            .unwrap_or_else(|| weights.last().expect("interior nonempty"));
        let birth = rng.random_range(config.main_birth.0..=config.main_birth.1);
        let life = rng.random_range(config.main_lifetime.0..=config.main_lifetime.1);
        let speed: f64 = rng.random_range(config.main_speed.0..=config.main_speed.1);
        let jitter: f64 = rng.random_range(-0.5..0.5);
        let dir = (wind.0 * jitter.cos() - wind.1 * jitter.sin(), wind.0 * jitter.sin() + wind.1 * jitter.cos());
        let mut main = ConvectiveCell {
            center: (x as f64 + rng.random_range(-0.5..0.5), y as f64 + rng.random_range(-0.5..0.5)),
            peak_rate: rng.random_range(config.main_peak.0..=config.main_peak.1),
            radius: rng.random_range(config.main_radius.0..=config.main_radius.1),
            velocity: (dir.0 * speed, dir.1 * speed),
            birth,
            decay: (birth + life).min(config.duration),
            tau: rng.random_range(config.tau.0..=config.tau.1),
        };
        let reached = enhanced_max(&main, terrain, config.gamma);
        if reached < config.cloudburst_floor {
            main.peak_rate *= config.cloudburst_floor / reached * (1.0 + 1e-9);
        }
        cells.push(main);
    }

    if config.class != ScenarioClass::Dry {
        let n = rng.random_range(config.minor_cells.0..=config.minor_cells.1);
        for _ in 0..n {
            let life = rng.random_range(config.minor_lifetime.0..=config.minor_lifetime.1);
            let latest = config.duration.saturating_sub(life).max(1);
            let birth = rng.random_range(0..=latest);
            let jitter: f64 = rng.random_range(-0.6..0.6);
            let dir = (wind.0 * jitter.cos() - wind.1 * jitter.sin(), wind.0 * jitter.sin() + wind.1 * jitter.cos());
            cells.push(ConvectiveCell {
                center: (
                    rng.random_range(4.0..nx as f64 - 4.0),
                    rng.random_range(4.0..ny as f64 - 4.0),
                ),
                peak_rate: rng.random_range(config.minor_peak.0..=config.minor_peak.1),
                radius: rng.random_range(config.minor_radius.0..=config.minor_radius.1),
                velocity: (dir.0 * steer, dir.1 * steer),
                birth,
                decay: (birth + life).min(config.duration),
                tau: rng.random_range(config.tau.0..=config.tau.1),
            });
        }
    }
    cells
}

/// Maximum enhanced rate one cell produces on the grid at whole minutes.
fn enhanced_max(cell: &ConvectiveCell, terrain: &Terrain, gamma: f64) -> f64 {
    let (nx, ny) = (terrain.nx() as i64, terrain.ny() as i64);
    let mut best = 0.0f64;
    for t in cell.birth..=cell.decay {
        let tf = t as f64;
        let (cx, cy) = cell.center_at(tf);
        for y in (cy.round() as i64 - 3)..=(cy.round() as i64 + 3) {
            for x in (cx.round() as i64 - 3)..=(cx.round() as i64 + 3) {
                if x < 0 || y < 0 || x >= nx || y >= ny {
                    continue;
                }
                let u = terrain.uplift.get(x as usize, y as usize);
                best = best.max(cell.rate_at(x as f64, y as f64, tf) * (1.0 + gamma * u));
            }
        }
    }
    best
}

impl Scenario {
    pub fn nx(&self) -> usize {
        self.config.nx
    }

    pub fn ny(&self) -> usize {
        self.config.ny
    }

    pub fn duration(&self) -> Minutes {
        self.config.duration
    }

    /// The truth at `t`: superposed footprints times orographic enhancement.
    pub fn truth_step(&self, t: Minutes) -> Result<TruthFrame, ScenarioError> {
        if t > self.config.duration {
            return Err(ScenarioError::OutOfRange {
                t,
                duration: self.config.duration,
            });
        }
        Ok(TruthFrame {
            t,
            rain: self.rain_at(t),
        })
    }

    fn rain_at(&self, t: Minutes) -> GridField {
        let (nx, ny) = (self.nx(), self.ny());
        let mut rain = GridField::zeros(nx, ny, self.config.cell_km, t);
        let tf = t as f64;
        for c in &self.cells {
            if !c.active(tf) || c.growth(tf) == 0.0 {
                continue;
            }
            let (cx, cy) = c.center_at(tf);
            let reach = FOOTPRINT_CUTOFF * c.radius;
            let x0 = (cx - reach).floor().max(0.0) as usize;
            let y0 = (cy - reach).floor().max(0.0) as usize;
            let x1 = ((cx + reach).ceil().max(0.0) as usize).min(nx - 1);
            let y1 = ((cy + reach).ceil().max(0.0) as usize).min(ny - 1);
            if cx + reach < 0.0 || cy + reach < 0.0 || x0 >= nx || y0 >= ny {
                continue;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let v = c.rate_at(x as f64, y as f64, tf);
                    if v > 0.0 {
                        rain.data[y * nx + x] += v;
                    }
                }
            }
        }
        let gamma = self.config.gamma;
        if gamma > 0.0 {
            for (v, u) in rain.data.iter_mut().zip(&self.terrain.uplift.data) {
                *v *= 1.0 + gamma * u;
            }
        }
        rain
    }

    /// Observations available at clock `t`.
    pub fn sense(&self, t: Minutes) -> Result<ObservationSet, ScenarioError> {
        let now = self.truth_step(t)?;
        let cfg = &self.sensors.config;
        let gauge = t
            .checked_sub(cfg.gauge_latency)
            .map(|g| self.truth_step(g))
            .transpose()?;
        let sat = t
            .checked_sub(cfg.satellite_latency)
            .map(|s| self.truth_step(s))
            .transpose()?;
        let mut rng = stream(self.seed, "radar", t as u64);
        Ok(self
            .sensors
            .observe(&now, gauge.as_ref(), sat.as_ref(), &mut rng))
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(self.seed.to_le_bytes());
        self.terrain.hash_into(&mut h);
        h.update(serde_json::to_vec(&self.cells).expect("cells serialize"));
        let shadow: Vec<u8> = self.sensors.shadow.iter().map(|&b| b as u8).collect();
        h.update(&shadow);
        self.community.hash_into(&mut h);
        hex::encode(h.finalize())
    }
}
