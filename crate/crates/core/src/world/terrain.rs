//! Synthetic terrain with D8 drainage.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::GridField;
use crate::seed::SeedRng;

/// D8 neighbor offsets, indexed by direction code.
pub const D8: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

const FILL_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    /// Pit-filled elevation (m).
    pub elevation: GridField,
    /// D8 direction code per cell; `None` marks an outlet on the boundary.
    pub flow_dir: Vec<Option<u8>>,
    /// Upstream cell count including the cell itself.
    pub flow_acc: Vec<u32>,
    pub catchment_id: Vec<u32>,
    pub catchment_count: usize,
    /// Wind-aligned upslope gradient of the unfilled surface, normalized to
    /// [0, 1].
    pub uplift: GridField,
    /// Unit steering-wind direction (x, y).
    pub wind: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    /// Regional slope along the wind (m per km).
    pub tilt: f64,
    pub ridge_count: usize,
    pub ridge_height: (f64, f64),
    pub ridge_width_km: (f64, f64),
    pub roughness: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        TerrainParams {
            tilt: 12.0,
            ridge_count: 3,
            ridge_height: (250.0, 600.0),
            ridge_width_km: (2.5, 5.0),
            roughness: 40.0,
        }
    }
}

impl Terrain {
    /// Builds drainage, catchments and uplift for an elevation field.
    pub fn from_elevation(raw: GridField, wind: (f64, f64)) -> Terrain {
        let uplift = wind_uplift(&raw, wind);
        let elevation = fill_pits(&raw);
        let flow_dir = d8_directions(&elevation);
        let flow_acc = accumulate(&elevation, &flow_dir);
        let (catchment_id, catchment_count) = label_catchments(&elevation, &flow_dir);
        Terrain {
            elevation,
            flow_dir,
            flow_acc,
            catchment_id,
            catchment_count,
            uplift,
            wind,
        }
    }

    pub fn flat(nx: usize, ny: usize, cell_km: f64) -> Terrain {
        Terrain::from_elevation(GridField::filled(nx, ny, cell_km, 0, 100.0), (1.0, 0.0))
    }

    pub fn generate(
        nx: usize,
        ny: usize,
        cell_km: f64,
        wind: (f64, f64),
        params: &TerrainParams,
        rng: &mut SeedRng,
    ) -> Terrain {
        let (wx, wy) = wind;
        let (px, py) = (-wy, wx);
        let cx = nx as f64 / 2.0;
        let cy = ny as f64 / 2.0;
        let span = (nx.max(ny) as f64) * cell_km;
        struct Ridge {
            offset: f64,
            height: f64,
            width: f64,
            wave_amp: f64,
            wave_len: f64,
            wave_phase: f64,
        }
        let ridges: Vec<Ridge> = (0..params.ridge_count)
            .map(|i| {
                let frac = (i as f64 + 0.5) / params.ridge_count as f64;
                Ridge {
                    offset: (frac - 0.5) * span * 0.8 + rng.random_range(-4.0..4.0),
                    height: rng.random_range(params.ridge_height.0..=params.ridge_height.1),
                    width: rng.random_range(params.ridge_width_km.0..=params.ridge_width_km.1),
                    wave_amp: rng.random_range(2.0..6.0),
                    wave_len: rng.random_range(20.0..40.0),
                    wave_phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let len: f64 = rng.random_range(8.0..20.0);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (ang.cos() / len, ang.sin() / len, phase, params.roughness)
            })
            .collect();
        let noise = Normal::new(0.0, params.roughness * 0.1).expect("valid sd");
        let raw = GridField::from_fn(nx, ny, cell_km, 0, |x, y| {
            let dx = (x as f64 - cx) * cell_km;
            let dy = (y as f64 - cy) * cell_km;
            let along = dx * wx + dy * wy;
            let across = dx * px + dy * py;
            let mut z = 800.0 + params.tilt * along;
            for r in &ridges {
                let center = r.offset
                    + r.wave_amp * (std::f64::consts::TAU * across / r.wave_len + r.wave_phase).sin();
                let d = (along - center) / r.width;
                z += r.height * (-0.5 * d * d).exp();
            }
            for &(kx, ky, phase, amp) in &waves {
                z += amp * (std::f64::consts::TAU * (kx * dx + ky * dy) + phase).sin();
            }
            z + noise.sample(rng)
        });
        Terrain::from_elevation(raw, wind)
    }

    pub fn nx(&self) -> usize {
        self.elevation.nx
    }

    pub fn ny(&self) -> usize {
        self.elevation.ny
    }

    /// Downstream cell index, if any.
    pub fn downstream(&self, i: usize) -> Option<usize> {
        let nx = self.nx() as i64;
        self.flow_dir[i].map(|d| {
            let (dx, dy) = D8[d as usize];
            let x = (i as i64 % nx) + dx;
            let y = (i as i64 / nx) + dy;
            (y * nx + x) as usize
        })
    }

    /// Cell count per catchment.
    pub fn catchment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.catchment_count];
        for &c in &self.catchment_id {
            sizes[c as usize] += 1;
        }
        sizes
    }

    pub fn hash_into(&self, h: &mut Sha256) {
        self.elevation.hash_into(h);
        self.uplift.hash_into(h);
        h.update(self.wind.0.to_le_bytes());
        h.update(self.wind.1.to_le_bytes());
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        hex::encode(h.finalize())
    }
}

fn neighbors(nx: usize, ny: usize, i: usize) -> impl Iterator<Item = (u8, usize)> {
    let x = (i % nx) as i64;
    let y = (i / nx) as i64;
    D8.iter().enumerate().filter_map(move |(d, &(dx, dy))| {
        let (qx, qy) = (x + dx, y + dy);
        if qx < 0 || qy < 0 || qx >= nx as i64 || qy >= ny as i64 {
            None
        } else {
            Some((d as u8, qy as usize * nx + qx as usize))
        }
    })
}

fn on_boundary(nx: usize, ny: usize, i: usize) -> bool {
    let (x, y) = (i % nx, i / nx);
    x == 0 || y == 0 || x == nx - 1 || y == ny - 1
}

struct Key(f64, usize);
impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .total_cmp(&other.0)
            .then_with(|| self.1.cmp(&other.1))
    }
}

/// Priority-flood fill: every interior cell ends strictly above the cell
/// through which it was reached, so no interior sinks remain.
fn fill_pits(raw: &GridField) -> GridField {
    let (nx, ny) = (raw.nx, raw.ny);
    let mut filled = raw.clone();
    let mut seen = vec![false; raw.len()];
    let mut heap = BinaryHeap::new();
    for i in 0..raw.len() {
        if on_boundary(nx, ny, i) {
            seen[i] = true;
            heap.push(Reverse(Key(raw.data[i], i)));
        }
    }
    while let Some(Reverse(Key(z, i))) = heap.pop() {
        for (_, j) in neighbors(nx, ny, i) {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            let zj = filled.data[j].max(z + FILL_EPSILON);
            filled.data[j] = zj;
            heap.push(Reverse(Key(zj, j)));
        }
    }
    filled
}

/// Steepest descent per cell; ties go to the lowest direction code.
fn d8_directions(elev: &GridField) -> Vec<Option<u8>> {
    let (nx, ny) = (elev.nx, elev.ny);
    (0..elev.len())
        .map(|i| {
            let z = elev.data[i];
            let mut best: Option<(f64, u8)> = None;
            for (d, j) in neighbors(nx, ny, i) {
                let (dx, dy) = D8[d as usize];
                let dist = ((dx * dx + dy * dy) as f64).sqrt();
                let slope = (z - elev.data[j]) / dist;
                if slope > 0.0 && best.is_none_or(|(s, _)| slope > s) {
                    best = Some((slope, d));
                }
            }
            best.map(|(_, d)| d)
        })
        .collect()
}

fn downstream_of(nx: usize, i: usize, dir: Option<u8>) -> Option<usize> {
    dir.map(|d| {
        let (dx, dy) = D8[d as usize];
        ((i / nx) as i64 + dy) as usize * nx + ((i % nx) as i64 + dx) as usize
    })
}

fn descending_order(elev: &GridField) -> Vec<usize> {
    let mut order: Vec<usize> = (0..elev.len()).collect();
    order.sort_by(|&a, &b| {
        elev.data[b]
            .total_cmp(&elev.data[a])
            .then_with(|| a.cmp(&b))
    });
    order
}

fn accumulate(elev: &GridField, dir: &[Option<u8>]) -> Vec<u32> {
    let mut acc = vec![1u32; elev.len()];
    for i in descending_order(elev) {
        if let Some(j) = downstream_of(elev.nx, i, dir[i]) {
            acc[j] += acc[i];
        }
    }
    acc
}

fn label_catchments(elev: &GridField, dir: &[Option<u8>]) -> (Vec<u32>, usize) {
    let mut id = vec![u32::MAX; elev.len()];
    let mut count = 0u32;
    for (i, d) in dir.iter().enumerate() {
        if d.is_none() {
            id[i] = count;
            count += 1;
        }
    }
    // Ascending elevation: every cell's receiver is labelled first.
    let mut order = descending_order(elev);
    order.reverse();
    for i in order {
        if let Some(j) = downstream_of(elev.nx, i, dir[i]) {
            id[i] = id[j];
        }
    }
    (id, count as usize)
}

fn wind_uplift(elev: &GridField, wind: (f64, f64)) -> GridField {
    let (nx, ny) = (elev.nx, elev.ny);
    let km = elev.cell_km;
    let grad = |x: usize, y: usize| -> (f64, f64) {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(nx - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(ny - 1));
        let gx = (elev.get(x1, y) - elev.get(x0, y)) / ((x1 - x0).max(1) as f64 * km);
        let gy = (elev.get(x, y1) - elev.get(x, y0)) / ((y1 - y0).max(1) as f64 * km);
        (gx, gy)
    };
    let mut u = GridField::from_fn(nx, ny, km, 0, |x, y| {
        let (gx, gy) = grad(x, y);
        (gx * wind.0 + gy * wind.1).max(0.0)
    });
    let m = u.max();
    if m > 1e-6 {
        for v in &mut u.data {
            *v /= m;
        }
    } else {
        u.data.iter_mut().for_each(|v| *v = 0.0);
    }
    u
}
