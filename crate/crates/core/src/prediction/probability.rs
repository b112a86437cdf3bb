//! Exceedance probabilities from an ensemble.

use serde::{Deserialize, Serialize};

use crate::grid::{GridField, Minutes};
use crate::learning_audit::calibration::CalibrationMap;

use super::nowcast::{EnsembleForecast, NowcastError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityGrid {
    pub threshold: f64,
    pub lead: Minutes,
    pub p: GridField,
    pub calibrated: bool,
}

/// Raw probability is the member fraction at or above `threshold`; with a
/// calibration map it is remapped and flagged calibrated.
pub fn exceedance_probability(
    ens: &EnsembleForecast,
    threshold: f64,
    lead: Minutes,
    calibration: Option<&CalibrationMap>,
) -> Result<ProbabilityGrid, NowcastError> {
    let k = ens.lead_index(lead)?;
    let m = ens.m();
    let first = &ens.members[0][k];
    let mut counts = vec![0u32; first.len()];
    for member in &ens.members {
        for (c, &v) in counts.iter_mut().zip(&member[k].data) {
            if v >= threshold {
                *c += 1;
            }
        }
    }
    let mut p = GridField::zeros(first.nx, first.ny, first.cell_km, first.t);
    for (o, &c) in p.data.iter_mut().zip(&counts) {
        let raw = c as f64 / m as f64;
        *o = match calibration {
            Some(map) => map.apply(raw),
            None => raw,
        };
    }
    Ok(ProbabilityGrid {
        threshold,
        lead,
        p,
        calibrated: calibration.is_some(),
    })
}
