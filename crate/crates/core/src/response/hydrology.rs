//! Linear-reservoir runoff per catchment and a log-accumulation depth
//! surrogate.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{GridField, Minutes};
use crate::world::Terrain;

#[derive(Debug, Error, PartialEq)]
pub enum HydroError {
    #[error("negative rain {value} at cell {cell}, t={t}")]
    NegativeRain { t: Minutes, cell: usize, value: f64 },
    #[error("rain grid {nx}x{ny} does not match terrain")]
    Shape { nx: usize, ny: usize },
    #[error("state has {got} catchments, terrain has {expected}")]
    Catchments { got: usize, expected: usize },
    #[error("time step must be positive and no larger than the smallest reservoir constant")]
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HydroParams {
    /// Reservoir constant per sqrt(km²) of catchment area, minutes.
    pub k_per_sqrt_km2: f64,
    /// Lower bound on the reservoir constant, minutes.
    pub k_min: f64,
    /// Depth scale, metres.
    pub alpha: f64,
    /// Specific discharge × upstream cells giving `alpha · ln 2`, in
    /// mm/h · cells.
    pub kappa: f64,
    /// Cells with fewer upstream cells stay dry.
    pub channel_threshold: u32,
}

impl Default for HydroParams {
    fn default() -> Self {
        HydroParams {
            k_per_sqrt_km2: 1.5,
            k_min: 10.0,
            alpha: 0.16,
            kappa: 500.0,
            channel_threshold: 25,
        }
    }
}

/// Storage in m³, outflow in m³/min, reservoir constant in minutes, area in
/// m². `inflow_total` and `outflow_total` accumulate volumes since the
/// initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunoffState {
    pub t: Minutes,
    pub storage: Vec<f64>,
    pub outflow: Vec<f64>,
    pub k: Vec<f64>,
    pub area: Vec<f64>,
    pub inflow_total: Vec<f64>,
    pub outflow_total: Vec<f64>,
}

impl RunoffState {
    pub fn dry(terrain: &Terrain, params: &HydroParams, t: Minutes) -> RunoffState {
        let cell_m2 = (terrain.elevation.cell_km * 1000.0).powi(2);
        let area: Vec<f64> = terrain
            .catchment_sizes()
            .into_iter()
            .map(|n| n as f64 * cell_m2)
            .collect();
        let k = area
            .iter()
            .map(|a| (params.k_per_sqrt_km2 * (a / 1e6).sqrt()).max(params.k_min))
            .collect();
        let n = area.len();
        RunoffState {
            t,
            storage: vec![0.0; n],
            outflow: vec![0.0; n],
            k,
            area,
            inflow_total: vec![0.0; n],
            outflow_total: vec![0.0; n],
        }
    }

    pub fn catchments(&self) -> usize {
        self.storage.len()
    }

    /// Specific discharge per catchment in mm/h.
    pub fn specific_discharge(&self) -> Vec<f64> {
        self.outflow
            .iter()
            .zip(&self.area)
            .map(|(q, a)| if *a > 0.0 { q / a * 60_000.0 } else { 0.0 })
            .collect()
    }

    /// Largest relative violation of `inflow − outflow = ΔS` against
    /// `initial`, scaled by total inflow (or 1 m³ when nothing fell).
    pub fn mass_balance_error(&self, initial: &RunoffState) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.catchments() {
            let din = self.inflow_total[c] - initial.inflow_total[c];
            let dout = self.outflow_total[c] - initial.outflow_total[c];
            let ds = self.storage[c] - initial.storage[c];
            let scale = din.abs().max(1.0);
            worst = worst.max((din - dout - ds).abs() / scale);
        }
        worst
    }

    pub fn hash_into(&self, h: &mut Sha256) {
        h.update(self.t.to_le_bytes());
        for v in self.storage.iter().chain(&self.outflow) {
            h.update(v.to_le_bytes());
        }
    }
}

/// Catchment-mean rain in mm/h.
pub fn catchment_rain(rain: &GridField, terrain: &Terrain) -> Vec<f64> {
    let n = terrain.catchment_count;
    let mut sum = vec![0.0; n];
    let mut cnt = vec![0usize; n];
    for (i, &c) in terrain.catchment_id.iter().enumerate() {
        sum[c as usize] += rain.data[i];
        cnt[c as usize] += 1;
    }
    sum.iter()
        .zip(&cnt)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect()
}

/// Advances the reservoirs by one step of `dt` minutes under `rain`.
pub fn runoff_step(
    state: &RunoffState,
    rain: &GridField,
    terrain: &Terrain,
    dt: Minutes,
) -> Result<RunoffState, HydroError> {
    if rain.nx != terrain.nx() || rain.ny != terrain.ny() {
        return Err(HydroError::Shape { nx: rain.nx, ny: rain.ny });
    }
    if state.catchments() != terrain.catchment_count {
        return Err(HydroError::Catchments {
            got: state.catchments(),
            expected: terrain.catchment_count,
        });
    }
    if let Some((cell, &value)) = rain.data.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(HydroError::NegativeRain { t: rain.t, cell, value });
    }
    let dt_f = dt as f64;
    if dt == 0 || state.k.iter().any(|&k| k < dt_f) {
        return Err(HydroError::Step);
    }
    let p = catchment_rain(rain, terrain);
    let mut next = state.clone();
    next.t = state.t + dt;
    for c in 0..state.catchments() {
        let p_m_per_min = p[c] / 60_000.0;
        let inflow = p_m_per_min * state.area[c] * dt_f;
        let out = state.storage[c] / state.k[c] * dt_f;
        next.storage[c] = state.storage[c] + inflow - out;
        next.outflow[c] = next.storage[c] / state.k[c];
        next.inflow_total[c] = state.inflow_total[c] + inflow;
        next.outflow_total[c] = state.outflow_total[c] + out;
    }
    Ok(next)
}

/// Runs the reservoirs over a rain sequence; element `i` of the result is
/// the state after `rain[i]`.
pub fn simulate_runoff(
    rain: &[GridField],
    terrain: &Terrain,
    state: &RunoffState,
    dt: Minutes,
) -> Result<Vec<RunoffState>, HydroError> {
    let mut out = Vec::with_capacity(rain.len());
    let mut s = state.clone();
    for r in rain {
        s = runoff_step(&s, r, terrain, dt)?;
        out.push(s.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthGrid {
    pub t: Minutes,
    pub depth: GridField,
    /// Identifies what drove the depths (truth, a forecast id, ...).
    pub source: String,
}

pub fn depth_from_runoff(state: &RunoffState, terrain: &Terrain, params: &HydroParams) -> GridField {
    let q = state.specific_discharge();
    let (nx, ny) = (terrain.nx(), terrain.ny());
    let mut depth = GridField::zeros(nx, ny, terrain.elevation.cell_km, state.t);
    for (i, d) in depth.data.iter_mut().enumerate() {
        let acc = terrain.flow_acc[i];
        if acc < params.channel_threshold {
            continue;
        }
        let qc = q[terrain.catchment_id[i] as usize].max(0.0);
        *d = params.alpha * (1.0 + qc * acc as f64 / params.kappa).ln();
    }
    depth
}

pub fn inundation_map(
    runoff: &[RunoffState],
    terrain: &Terrain,
    params: &HydroParams,
    source: &str,
) -> Vec<DepthGrid> {
    runoff
        .iter()
        .map(|s| DepthGrid {
            t: s.t,
            depth: depth_from_runoff(s, terrain, params),
            source: source.to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terrain() -> Terrain {
        let raw = GridField::from_fn(12, 10, 1.0, 0, |x, y| 100.0 - 4.0 * x as f64 + ((y as f64) - 4.5).abs() * 3.0);
        Terrain::from_elevation(raw, (1.0, 0.0))
    }

    #[test]
    fn zero_rain_stays_dry() {
        let t = terrain();
        let p = HydroParams::default();
        let s0 = RunoffState::dry(&t, &p, 0);
        let rain: Vec<GridField> = (0..50).map(|i| GridField::zeros(12, 10, 1.0, i * 5)).collect();
        let out = simulate_runoff(&rain, &t, &s0, 5).unwrap();
        assert!(out.iter().all(|s| s.outflow.iter().all(|&q| q == 0.0)));
        let d = inundation_map(&out, &t, &p, "test");
        assert!(d.iter().all(|g| g.depth.max() == 0.0));
    }

    #[test]
    fn constant_rain_reaches_steady_state() {
        let t = terrain();
        let p = HydroParams::default();
        let mut s = RunoffState::dry(&t, &p, 0);
        let rain = GridField::filled(12, 10, 1.0, 0, 30.0);
        for _ in 0..10_000 {
            s = runoff_step(&s, &rain, &t, 5).unwrap();
        }
        for c in 0..s.catchments() {
            let pa = 30.0 / 60_000.0 * s.area[c];
            assert!((s.outflow[c] - pa).abs() <= 0.01 * pa);
        }
    }

    #[test]
    fn mass_balance_holds() {
        let t = terrain();
        let p = HydroParams::default();
        let s0 = RunoffState::dry(&t, &p, 0);
        let rain: Vec<GridField> = (0..40)
            .map(|i| GridField::from_fn(12, 10, 1.0, i * 5, |x, y| ((x * 7 + y * 3 + i as usize) % 11) as f64 * 9.0))
            .collect();
        let out = simulate_runoff(&rain, &t, &s0, 5).unwrap();
        assert!(out.last().unwrap().mass_balance_error(&s0) <= 1e-6);
        assert!(out.iter().all(|s| s.storage.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn negative_rain_rejected() {
        let t = terrain();
        let p = HydroParams::default();
        let s0 = RunoffState::dry(&t, &p, 0);
        let mut r = GridField::zeros(12, 10, 1.0, 0);
        r.data[3] = -1.0;
        assert!(matches!(runoff_step(&s0, &r, &t, 5), Err(HydroError::NegativeRain { .. })));
    }

    #[test]
    fn depth_monotone_in_discharge_and_masked_on_hillslopes() {
        let t = terrain();
        let p = HydroParams::default();
        let mut s = RunoffState::dry(&t, &p, 0);
        s.outflow.iter_mut().zip(&s.area).for_each(|(q, a)| *q = a / 60_000.0 * 20.0);
        let d1 = depth_from_runoff(&s, &t, &p);
        s.outflow.iter_mut().for_each(|q| *q *= 2.0);
        let d2 = depth_from_runoff(&s, &t, &p);
        for i in 0..d1.len() {
            assert!(d2.data[i] >= d1.data[i]);
            if t.flow_acc[i] < p.channel_threshold {
                assert_eq!(d2.data[i], 0.0);
            }
        }
        assert!(d2.max() > 0.0);
    }
}
