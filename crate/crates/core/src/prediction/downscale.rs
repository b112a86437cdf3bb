//! Mass-conserving, terrain-aware downscaling.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridField;
use crate::seed::stream;

#[derive(Debug, Error, PartialEq)]
pub enum DownscaleError {
    #[error("fine grid {fine_nx}x{fine_ny} is not coarse {nx}x{ny} times {factor}")]
    Dimensions {
        nx: usize,
        ny: usize,
        factor: usize,
        fine_nx: usize,
        fine_ny: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownscaleParams {
    /// Softmax sharpness on the uplift proxy.
    pub beta: f64,
    /// Standard deviation of the zero-sum residual, relative to the block
    /// mean.
    pub residual_sd: f64,
}

impl Default for DownscaleParams {
    fn default() -> Self {
        DownscaleParams {
            beta: std::f64::consts::LN_2,
            residual_sd: 0.1,
        }
    }
}

/// Redistributes each coarse value over its `factor × factor` block with
/// weights `softmax(beta · uplift) · factor²` plus a seeded zero-sum
/// residual. Negatives are clipped and the block rescaled, so every block
/// mean equals its coarse value.
pub fn downscale(
    coarse: &GridField,
    factor: usize,
    uplift: &GridField,
    params: &DownscaleParams,
    member_seed: u64,
) -> Result<GridField, DownscaleError> {
    let s = factor.max(1);
    if uplift.nx != coarse.nx * s || uplift.ny != coarse.ny * s {
        return Err(DownscaleError::Dimensions {
            nx: coarse.nx,
            ny: coarse.ny,
            factor: s,
            fine_nx: uplift.nx,
            fine_ny: uplift.ny,
        });
    }
    let (fnx, fny) = (uplift.nx, uplift.ny);
    let mut fine = GridField::zeros(fnx, fny, uplift.cell_km, coarse.t);
    let mut rng = stream(member_seed, "downscale", coarse.t as u64);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = (s * s) as f64;
    let mut w = vec![0.0; s * s];
    for by in 0..coarse.ny {
        for bx in 0..coarse.nx {
            let c = coarse.get(bx, by);
            // Residual draws are consumed for every block so the stream
            // does not depend on where it rains.
            let mut r: Vec<f64> = (0..s * s).map(|_| normal.sample(&mut rng)).collect();
            if c <= 0.0 {
                continue;
            }
            let umax = (0..s * s)
                .map(|k| uplift.get(bx * s + k % s, by * s + k / s))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut wsum = 0.0;
            for (k, wk) in w.iter_mut().enumerate() {
                let u = uplift.get(bx * s + k % s, by * s + k / s);
                *wk = (params.beta * (u - umax)).exp();
                wsum += *wk;
            }
            if params.residual_sd > 0.0 {
                let rmean = r.iter().sum::<f64>() / n;
                r.iter_mut().for_each(|v| *v = (*v - rmean) * params.residual_sd);
            }
            let mut block_sum = 0.0;
            for k in 0..s * s {
                let mut v = c * (w[k] / wsum * n);
                if params.residual_sd > 0.0 {
                    v += c * r[k];
                }
                let v = v.max(0.0);
                w[k] = v;
                block_sum += v;
            }
            let scale = c * n / block_sum;
            for (k, wk) in w.iter().enumerate() {
                fine.set(bx * s + k % s, by * s + k / s, wk * scale);
            }
        }
    }
    Ok(fine)
}

/// Largest absolute difference between the fine block means and `coarse`.
pub fn block_mean_error(fine: &GridField, coarse: &GridField, factor: usize) -> f64 {
    let bm = fine.block_mean(factor).expect("fine grid divisible by factor");
    bm.data
        .iter()
        .zip(&coarse.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
