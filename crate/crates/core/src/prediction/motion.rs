//! Block-matching motion estimation.

use serde::{Deserialize, Serialize};

use crate::grid::{GridField, Minutes};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionParams {
    pub block: usize,
    /// Largest shift tried, in cells per frame interval.
    pub search_radius: i64,
    /// Rain rate that makes a cell count as wet (mm/h).
    pub wet_threshold: f64,
    /// Wet cells needed before a block is matched.
    pub min_wet_cells: usize,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            block: 8,
            search_radius: 4,
            wet_threshold: 1.0,
            min_wet_cells: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionField {
    pub nx: usize,
    pub ny: usize,
    pub block: usize,
    pub nbx: usize,
    pub nby: usize,
    /// Per-block velocity (cells/min), row-major over blocks.
    pub vectors: Vec<(f64, f64)>,
    /// Best normalized correlation per block; zero for dry blocks.
    pub quality: Vec<f64>,
    pub wet: Vec<bool>,
}

impl MotionField {
    pub fn uniform(nx: usize, ny: usize, block: usize, v: (f64, f64)) -> Self {
        let (nbx, nby) = (nx.div_ceil(block), ny.div_ceil(block));
        MotionField {
            nx,
            ny,
            block,
            nbx,
            nby,
            vectors: vec![v; nbx * nby],
            quality: vec![0.0; nbx * nby],
            wet: vec![false; nbx * nby],
        }
    }

    pub fn block_vector(&self, bx: usize, by: usize) -> (f64, f64) {
        self.vectors[by * self.nbx + bx]
    }

    /// Velocity at a fractional cell position: bilinear between block
    /// centers, constant beyond the outermost centers.
    pub fn velocity_at(&self, x: f64, y: f64) -> (f64, f64) {
        let b = self.block as f64;
        let fx = ((x + 0.5) / b - 0.5).clamp(0.0, (self.nbx - 1) as f64);
        let fy = ((y + 0.5) / b - 0.5).clamp(0.0, (self.nby - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.nbx - 1), (y0 + 1).min(self.nby - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let v = |i: usize, j: usize| self.block_vector(i, j);
        let lerp = |a: (f64, f64), c: (f64, f64), t: f64| (a.0 + (c.0 - a.0) * t, a.1 + (c.1 - a.1) * t);
        let top = lerp(v(x0, y0), v(x1, y0), tx);
        let bot = lerp(v(x0, y1), v(x1, y1), tx);
        lerp(top, bot, ty)
    }

    /// Horizontal divergence at a cell (1/min), by central differences one
    /// block apart.
    pub fn divergence_at(&self, x: f64, y: f64) -> f64 {
        let b = self.block as f64;
        let (ue, _) = self.velocity_at(x + b, y);
        let (uw, _) = self.velocity_at(x - b, y);
        let (_, vs) = self.velocity_at(x, y + b);
        let (_, vn) = self.velocity_at(x, y - b);
        (ue - uw) / (2.0 * b) + (vs - vn) / (2.0 * b)
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.0.is_finite() && v.1.is_finite())
    }
}

/// Candidate shifts ordered by speed, then lexicographically by (dx, dy).
fn shift_order(radius: i64) -> Vec<(i64, i64)> {
    let mut s: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dx| (-radius..=radius).map(move |dy| (dx, dy)))
        .collect();
    s.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));
    s
}

/// Per-block displacement maximizing normalized cross-correlation between
/// `prev` shifted and `curr`, divided by `dt` minutes.
pub fn estimate_motion(prev: &GridField, curr: &GridField, dt: Minutes, params: &MotionParams) -> MotionField {
    let (nx, ny) = (curr.nx, curr.ny);
    let b = params.block.max(1);
    let mut mf = MotionField::uniform(nx, ny, b, (0.0, 0.0));
    let shifts = shift_order(params.search_radius);
    let dt = dt.max(1) as f64;
    let mut wet_vectors = Vec::new();
    for by in 0..mf.nby {
        for bx in 0..mf.nbx {
            let (x0, y0) = (bx * b, by * b);
            let (x1, y1) = (((bx + 1) * b).min(nx), ((by + 1) * b).min(ny));
            let mut wet_count = 0;
            let mut aa = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let a = curr.get(x, y);
                    if a >= params.wet_threshold {
                        wet_count += 1;
                    }
                    aa += a * a;
                }
            }
            let k = by * mf.nbx + bx;
            if wet_count < params.min_wet_cells || aa == 0.0 {
                continue;
            }
            let mut best = (f64::NEG_INFINITY, (0i64, 0i64));
            for &(dx, dy) in &shifts {
                let (mut ab, mut bb) = (0.0, 0.0);
                for y in y0..y1 {
                    let sy = y as i64 - dy;
                    if sy < 0 || sy >= ny as i64 {
                        continue;
                    }
                    for x in x0..x1 {
                        let sx = x as i64 - dx;
                        if sx < 0 || sx >= nx as i64 {
                            continue;
                        }
                        let p = prev.data[sy as usize * nx + sx as usize];
                        ab += curr.data[y * nx + x] * p;
                        bb += p * p;
                    }
                }
                let score = if bb > 0.0 { ab / (aa * bb).sqrt() } else { 0.0 };
                if score > best.0 + 1e-12 {
                    best = (score, (dx, dy));
                }
            }
            let v = (best.1 .0 as f64 / dt, best.1 .1 as f64 / dt);
            mf.vectors[k] = v;
            mf.quality[k] = best.0.max(0.0);
            mf.wet[k] = true;
            wet_vectors.push(v);
        }
    }
    let fill = if wet_vectors.is_empty() {
        (0.0, 0.0)
    } else {
        (
            median(wet_vectors.iter().map(|v| v.0).collect()),
            median(wet_vectors.iter().map(|v| v.1).collect()),
        )
    };
    for k in 0..mf.vectors.len() {
        if !mf.wet[k] {
            mf.vectors[k] = fill;
        }
    }
    mf
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(nx: usize, cx: f64, cy: f64) -> GridField {
        GridField::from_fn(nx, nx, 1.0, 0, |x, y| {
            let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            30.0 * (-r2 / 18.0).exp() + 5.0 * ((x * 7 + y * 3) % 5) as f64 * (-r2 / 40.0).exp()
        })
    }

    #[test]
    fn identical_frames_give_zero_motion() {
        let f = blob(32, 16.0, 16.0);
        let m = estimate_motion(&f, &f, 5, &MotionParams::default());
        assert!(m.vectors.iter().all(|&v| v == (0.0, 0.0)));
    }

    #[test]
    fn dry_frames_give_zero_motion() {
        let f = GridField::zeros(32, 32, 1.0, 0);
        let m = estimate_motion(&f, &f, 5, &MotionParams::default());
        assert!(m.vectors.iter().all(|&v| v == (0.0, 0.0)));
        assert!(m.wet.iter().all(|&w| !w));
    }

    #[test]
    fn shift_order_prefers_slow_then_lexicographic() {
        let s = shift_order(1);
        assert_eq!(s[0], (0, 0));
        assert_eq!(&s[1..5], &[(-1, 0), (0, -1), (0, 1), (1, 0)]);
    }

    #[test]
    fn dry_blocks_take_median_of_wet_vectors() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn uniform_field_velocity_interpolates_exactly() {
        let m = MotionField::uniform(32, 32, 8, (0.2, -0.1));
        assert_eq!(m.velocity_at(3.3, 17.9), (0.2, -0.1));
        assert_eq!(m.divergence_at(10.0, 10.0), 0.0);
    }
}
