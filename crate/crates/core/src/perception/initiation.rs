//! Convective initiation precursors.
//!
//! The precursor score combines the motion-compensated intensification
//! trend, low-level convergence of the motion field and the wind-aligned
//! uplift of the terrain. Scores are normalized by their empirical CDF over
//! cells with a positive score, which makes the threshold scale-free.

use serde::{Deserialize, Serialize};

use crate::grid::{GridField, Minutes};
use crate::prediction::motion::{estimate_motion, MotionField, MotionParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitiationParams {
    pub theta_init: f64,
    /// Cells at or above this rate (mm/h) are already raining.
    pub dry_threshold: f64,
    /// Minimum trend (mm/h per minute) for a candidate.
    pub min_trend: f64,
    /// Weight of convergence (per 1/min of negative divergence).
    pub convergence_weight: f64,
    /// Added to the uplift proxy so flat ground is not excluded outright.
    pub uplift_floor: f64,
    /// Minimum spacing between candidates (cells).
    pub separation: f64,
    pub max_candidates: usize,
    /// Candidate lifetime (min).
    pub persistence: Minutes,
    /// Box-smoothing radius applied before differencing (cells).
    pub smoothing: usize,
}

impl Default for InitiationParams {
    fn default() -> Self {
        InitiationParams {
            theta_init: 0.9,
            dry_threshold: 10.0,
            min_trend: 0.3,
            convergence_weight: 50.0,
            uplift_floor: 0.25,
            separation: 6.0,
            max_candidates: 3,
            persistence: 20,
            smoothing: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitiationCandidate {
    pub x: usize,
    pub y: usize,
    pub phi: f64,
    pub detected_at: Minutes,
    pub expires_at: Minutes,
    /// Local intensification rate (mm/h per minute).
    pub trend: f64,
    /// Local motion (cells/min).
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecursorField {
    pub phi: GridField,
    pub score: GridField,
    pub trend: GridField,
    pub motion: MotionField,
}

fn box_smooth(f: &GridField, r: usize) -> GridField {
    if r == 0 {
        return f.clone();
    }
    let (nx, ny) = (f.nx, f.ny);
    GridField::from_fn(nx, ny, f.cell_km, f.t, |x, y| {
        let (mut s, mut n) = (0.0, 0.0);
        for yy in y.saturating_sub(r)..=(y + r).min(ny - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(nx - 1) {
                s += f.get(xx, yy);
                n += 1.0;
            }
        }
        s / n
    })
}

/// Empirical CDF of positive scores; non-positive scores map to 0.
pub fn rank_normalize(score: &GridField) -> GridField {
    let mut pos: Vec<f64> = score.data.iter().copied().filter(|&s| s > 0.0).collect();
    pos.sort_by(f64::total_cmp);
    let n = pos.len() as f64;
    score.map(|s| {
        if s > 0.0 {
            let rank = pos.partition_point(|&p| p <= s);
            rank as f64 / n
        } else {
            0.0
        }
    })
}

/// Precursor field from the oldest and newest of `history` (oldest first,
/// frames `dt` minutes apart).
pub fn precursor_field(
    history: &[&GridField],
    dt: Minutes,
    uplift: &GridField,
    params: &InitiationParams,
) -> Option<PrecursorField> {
    if history.len() < 3 {
        return None;
    }
    let first = history[0];
    let last = history[history.len() - 1];
    let span = dt * (history.len() as Minutes - 1);
    let motion = estimate_motion(first, last, span, &MotionParams::default());
    let s_first = box_smooth(first, params.smoothing);
    let s_last = box_smooth(last, params.smoothing);
    let (nx, ny) = (last.nx, last.ny);
    let span_f = span.max(1) as f64;
    let trend = GridField::from_fn(nx, ny, last.cell_km, last.t, |x, y| {
        let (u, v) = motion.velocity_at(x as f64, y as f64);
        let upstream = s_first.sample_bilinear(x as f64 - u * span_f, y as f64 - v * span_f);
        (s_last.get(x, y) - upstream) / span_f
    });
    let score = GridField::from_fn(nx, ny, last.cell_km, last.t, |x, y| {
        let tr = trend.get(x, y);
        if tr <= 0.0 {
            return 0.0;
        }
        let conv = (-motion.divergence_at(x as f64, y as f64)).max(0.0);
        tr * (1.0 + params.convergence_weight * conv) * (params.uplift_floor + uplift.get(x, y))
    });
    let phi = rank_normalize(&score);
    Some(PrecursorField {
        phi,
        score,
        trend,
        motion,
    })
}

/// Candidates in currently dry cells whose precursor rank reaches
/// `theta_init`. Returns an empty list with fewer than three frames.
pub fn detect_initiation(
    history: &[&GridField],
    dt: Minutes,
    uplift: &GridField,
    params: &InitiationParams,
    now: Minutes,
) -> Vec<InitiationCandidate> {
    let Some(pf) = precursor_field(history, dt, uplift, params) else {
        return Vec::new();
    };
    let last = history[history.len() - 1];
    let nx = last.nx;
    let mut eligible: Vec<usize> = (0..last.len())
        .filter(|&i| {
            pf.phi.data[i] >= params.theta_init
                && last.data[i] < params.dry_threshold
                && pf.trend.data[i] >= params.min_trend
        })
        .collect();
    eligible.sort_by(|&a, &b| {
        pf.phi.data[b]
            .total_cmp(&pf.phi.data[a])
            .then(pf.score.data[b].total_cmp(&pf.score.data[a]))
            .then(a.cmp(&b))
    });
    let mut out: Vec<InitiationCandidate> = Vec::new();
    for i in eligible {
        if out.len() >= params.max_candidates {
            break;
        }
        let (x, y) = (i % nx, i / nx);
        let far = out.iter().all(|c| {
            let d2 = (c.x as f64 - x as f64).powi(2) + (c.y as f64 - y as f64).powi(2);
            d2 >= params.separation * params.separation
        });
        if far {
            out.push(InitiationCandidate {
                x,
                y,
                phi: pf.phi.data[i],
                detected_at: now,
                expires_at: now + params.persistence.max(1),
                trend: pf.trend.data[i],
                velocity: pf.motion.velocity_at(x as f64, y as f64),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn growing(t: Minutes, amp: f64) -> GridField {
        GridField::from_fn(32, 32, 1.0, t, |x, y| {
            let r2 = (x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2);
            amp * (-r2 / 12.0).exp()
        })
    }

    #[test]
    fn uniform_static_field_has_no_candidates() {
        let f = GridField::filled(32, 32, 1.0, 0, 5.0);
        let u = GridField::filled(32, 32, 1.0, 0, 0.5);
        assert!(detect_initiation(&[&f, &f, &f], 5, &u, &InitiationParams::default(), 10).is_empty());
    }

    #[test]
    fn insufficient_history_is_empty() {
        let f = growing(0, 5.0);
        let u = GridField::zeros(32, 32, 1.0, 0);
        assert!(detect_initiation(&[&f, &f], 5, &u, &InitiationParams::default(), 5).is_empty());
    }

    #[test]
    fn growing_cell_is_detected_while_dry() {
        let frames = [growing(0, 1.0), growing(5, 3.0), growing(10, 8.0)];
        let refs: Vec<&GridField> = frames.iter().collect();
        let u = GridField::zeros(32, 32, 1.0, 0);
        let c = detect_initiation(&refs, 5, &u, &InitiationParams::default(), 10);
        assert!(!c.is_empty());
        let d = ((c[0].x as f64 - 16.0).powi(2) + (c[0].y as f64 - 16.0).powi(2)).sqrt();
        assert!(d <= 4.0, "candidate at {:?}", (c[0].x, c[0].y));
        assert!(c[0].expires_at > c[0].detected_at);
    }

    #[test]
    fn unreachable_threshold_is_always_empty() {
        let frames = [growing(0, 1.0), growing(5, 3.0), growing(10, 8.0)];
        let refs: Vec<&GridField> = frames.iter().collect();
        let u = GridField::zeros(32, 32, 1.0, 0);
        let p = InitiationParams {
            theta_init: 1.0 + 1e-9,
            ..InitiationParams::default()
        };
        assert!(detect_initiation(&refs, 5, &u, &p, 10).is_empty());
    }

    #[test]
    fn rank_normalization_is_an_ecdf() {
        let s = GridField::from_vec(2, 2, 1.0, 0, vec![0.0, 1.0, 3.0, 3.0]).unwrap();
        let p = rank_normalize(&s);
        assert_eq!(p.data, vec![0.0, 1.0 / 3.0, 1.0, 1.0]);
    }
}
