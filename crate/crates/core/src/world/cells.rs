//! Convective cells: advecting Gaussian rain footprints with logistic
//! growth and decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;

/// Footprints are cut to zero beyond this many radii.
pub const FOOTPRINT_CUTOFF: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum CellError {
    #[error("peak_rate must be positive")]
    PeakRate,
    #[error("radius must be >= 1 cell")]
    Radius,
    #[error("decay ({decay}) must come after birth ({birth})")]
    Lifetime { birth: Minutes, decay: Minutes },
    #[error("growth time constant must be positive")]
    Tau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvectiveCell {
    /// Center at birth, grid coordinates.
    pub center: (f64, f64),
    /// Peak rate before orographic enhancement (mm/h).
    pub peak_rate: f64,
    /// Gaussian radius (cells).
    pub radius: f64,
    /// Velocity (cells/min).
    pub velocity: (f64, f64),
    pub birth: Minutes,
    pub decay: Minutes,
    /// Logistic time constant for growth and decay (min).
    pub tau: f64,
}

impl ConvectiveCell {
    pub fn validate(&self) -> Result<(), CellError> {
        if !(self.peak_rate > 0.0) {
            return Err(CellError::PeakRate);
        }
        if !(self.radius >= 1.0) {
            return Err(CellError::Radius);
        }
        if self.decay <= self.birth {
            return Err(CellError::Lifetime {
                birth: self.birth,
                decay: self.decay,
            });
        }
        if !(self.tau > 0.0) {
            return Err(CellError::Tau);
        }
        Ok(())
    }

    /// Intensity fraction of `peak_rate` at time `t`, in [0, 1].
    pub fn growth(&self, t: f64) -> f64 {
        if t < self.birth as f64 || t > self.decay as f64 {
            return 0.0;
        }
        let rise = logistic((t - self.birth as f64 - 3.0 * self.tau) / self.tau);
        let fall = 1.0 - logistic((t - self.decay as f64 + 3.0 * self.tau) / self.tau);
        rise * fall
    }

    pub fn center_at(&self, t: f64) -> (f64, f64) {
        let dt = t - self.birth as f64;
        (
            self.center.0 + self.velocity.0 * dt,
            self.center.1 + self.velocity.1 * dt,
        )
    }

    /// Unenhanced rain rate contributed at grid point `(x, y)` and time `t`.
    pub fn rate_at(&self, x: f64, y: f64, t: f64) -> f64 {
        let g = self.growth(t);
        if g == 0.0 {
            return 0.0;
        }
        let (cx, cy) = self.center_at(t);
        let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (self.radius * self.radius);
        if r2 > FOOTPRINT_CUTOFF * FOOTPRINT_CUTOFF {
            return 0.0;
        }
        self.peak_rate * g * (-0.5 * r2).exp()
    }

    /// Time of maximum growth (midpoint of the plateau).
    pub fn mature_time(&self) -> f64 {
        0.5 * (self.birth as f64 + self.decay as f64)
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.birth as f64 && t <= self.decay as f64
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell() -> ConvectiveCell {
        ConvectiveCell {
            center: (10.0, 10.0),
            peak_rate: 120.0,
            radius: 3.0,
            velocity: (0.0, 0.0),
            birth: 20,
            decay: 120,
            tau: 8.0,
        }
    }

    #[test]
    fn center_value_is_peak_times_growth() {
        let c = cell();
        for t in [0.0, 25.0, 50.0, 70.0, 119.0] {
            assert_eq!(c.rate_at(10.0, 10.0, t), 120.0 * c.growth(t));
        }
    }

    #[test]
    fn growth_is_zero_outside_lifetime_and_bounded() {
        let c = cell();
        assert_eq!(c.growth(19.9), 0.0);
        assert_eq!(c.growth(120.1), 0.0);
        for t in 20..=120 {
            let g = c.growth(t as f64);
            assert!((0.0..=1.0).contains(&g));
        }
        assert!(c.growth(70.0) > 0.9);
    }

    #[test]
    fn footprint_is_cut() {
        let c = cell();
        assert_eq!(c.rate_at(10.0 + 12.1, 10.0, 70.0), 0.0);
        assert!(c.rate_at(10.0 + 11.9, 10.0, 70.0) > 0.0);
    }

    #[test]
    fn validation_rejects_bad_cells() {
        let mut c = cell();
        c.decay = c.birth;
        assert!(matches!(c.validate(), Err(CellError::Lifetime { .. })));
        let mut c = cell();
        c.radius = 0.5;
        assert_eq!(c.validate(), Err(CellError::Radius));
    }
}
