//! Perturbed-advection ensemble nowcasting.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{ContentHash, GridField, Minutes};
use crate::perception::initiation::InitiationCandidate;
use crate::seed::{derive_seed, stream};

use super::motion::MotionField;

#[derive(Debug, Error, PartialEq)]
pub enum NowcastError {
    #[error("probabilistic ensembles need at least 2 members (got {0})")]
    TooFewMembers(usize),
    #[error("horizon {horizon} is not a positive multiple of cadence {cadence}")]
    Horizon { horizon: Minutes, cadence: Minutes },
    #[error("lead {lead} is not a forecast lead (horizon {horizon}, cadence {cadence})")]
    Lead {
        lead: Minutes,
        horizon: Minutes,
        cadence: Minutes,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    pub issued_at: Minutes,
    pub horizon: Minutes,
    pub cadence: Minutes,
    /// Coarsening factor relative to the analysis grid (1 = native).
    pub factor: usize,
    pub coarse: bool,
    /// `members[i][k]` is member `i` at lead `(k + 1) · cadence`.
    pub members: Vec<Vec<GridField>>,
    pub member_seeds: Vec<u64>,
}

impl EnsembleForecast {
    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn leads(&self) -> Vec<Minutes> {
        (1..=self.horizon / self.cadence).map(|k| k * self.cadence).collect()
    }

    pub fn lead_index(&self, lead: Minutes) -> Result<usize, NowcastError> {
        if lead == 0 || lead > self.horizon || lead % self.cadence != 0 {
            return Err(NowcastError::Lead {
                lead,
                horizon: self.horizon,
                cadence: self.cadence,
            });
        }
        Ok((lead / self.cadence - 1) as usize)
    }

    pub fn member_at(&self, member: usize, lead: Minutes) -> Result<&GridField, NowcastError> {
        Ok(&self.members[member][self.lead_index(lead)?])
    }

    /// Member values at one cell and lead.
    pub fn values_at(&self, k: usize, cell: usize) -> Vec<f64> {
        self.members.iter().map(|m| m[k].data[cell]).collect()
    }

    pub fn mean_at(&self, k: usize) -> GridField {
        let mut out = self.members[0][k].clone();
        for m in &self.members[1..] {
            for (o, v) in out.data.iter_mut().zip(&m[k].data) {
                *o += v;
            }
        }
        let n = self.members.len() as f64;
        out.data.iter_mut().for_each(|v| *v /= n);
        out
    }

    pub fn hash_into(&self, h: &mut Sha256) {
        h.update(self.issued_at.to_le_bytes());
        h.update(self.horizon.to_le_bytes());
        h.update(self.cadence.to_le_bytes());
        h.update((self.factor as u64).to_le_bytes());
        h.update([self.coarse as u8]);
        for s in &self.member_seeds {
            h.update(s.to_le_bytes());
        }
        for m in &self.members {
            for f in m {
                f.hash_into(h);
            }
        }
    }

    pub fn content_hash(&self) -> ContentHash {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        ContentHash::from_hasher(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NowcastParams {
    pub m: usize,
    pub horizon: Minutes,
    pub cadence: Minutes,
    /// Velocity jitter standard deviation (fine cells/min) at unit inflation.
    pub velocity_jitter: f64,
    /// Log-intensity spread at lead 0 and its growth per full horizon.
    pub intensity_sd: f64,
    pub intensity_sd_growth: f64,
    /// Spread inflation applied to every perturbation.
    pub sigma_infl: f64,
    pub injection: InjectionParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionParams {
    /// Gaussian radius of an injected nascent cell (fine cells).
    pub radius: f64,
    /// Upper bound on the injected rate (mm/h).
    pub cap: f64,
    /// Multiplier on the observed trend when extrapolating growth.
    pub gain: f64,
    /// Log-space amplitude jitter across members.
    pub amplitude_sd: f64,
}

impl Default for InjectionParams {
    fn default() -> Self {
        InjectionParams {
            radius: 2.5,
            cap: 70.0,
            gain: 1.0,
            amplitude_sd: 0.3,
        }
    }
}

impl Default for NowcastParams {
    fn default() -> Self {
        NowcastParams {
            m: 20,
            horizon: 60,
            cadence: 10,
            velocity_jitter: 0.04,
            intensity_sd: 0.15,
            intensity_sd_growth: 0.45,
            sigma_infl: 1.0,
            injection: InjectionParams::default(),
        }
    }
}

impl NowcastParams {
    fn check(&self) -> Result<(), NowcastError> {
        if self.cadence == 0 || self.horizon == 0 || self.horizon % self.cadence != 0 {
            return Err(NowcastError::Horizon {
                horizon: self.horizon,
                cadence: self.cadence,
            });
        }
        Ok(())
    }
}

/// Probabilistic ensemble: member 0 is unperturbed advection, the others
/// carry seeded velocity and intensity perturbations. Candidates are
/// injected into `ceil(phi · m)` members each.
///
/// `analysis` may be coarser than the grid the candidates and motion refer
/// to; `factor` is that coarsening (motion and candidates are given in
/// fine cells).
pub fn nowcast_ensemble(
    analysis: &GridField,
    motion: &MotionField,
    candidates: &[InitiationCandidate],
    factor: usize,
    params: &NowcastParams,
    seed: u64,
) -> Result<EnsembleForecast, NowcastError> {
    if params.m < 2 {
        return Err(NowcastError::TooFewMembers(params.m));
    }
    params.check()?;
    Ok(run(analysis, motion, candidates, factor, params, seed, params.m))
}

/// Single unperturbed member without candidates (baseline pipeline).
pub fn nowcast_deterministic(
    analysis: &GridField,
    motion: &MotionField,
    factor: usize,
    params: &NowcastParams,
    seed: u64,
) -> Result<EnsembleForecast, NowcastError> {
    params.check()?;
    Ok(run(analysis, motion, &[], factor, params, seed, 1))
}

fn run(
    analysis: &GridField,
    motion: &MotionField,
    candidates: &[InitiationCandidate],
    factor: usize,
    params: &NowcastParams,
    seed: u64,
    m: usize,
) -> EnsembleForecast {
    let s = factor.max(1) as f64;
    let leads: Vec<Minutes> = (1..=params.horizon / params.cadence)
        .map(|k| k * params.cadence)
        .collect();
    let (nx, ny) = (analysis.nx, analysis.ny);
    // Per-cell velocity in this grid's units.
    let base_v: Vec<(f64, f64)> = (0..nx * ny)
        .map(|i| {
            let fx = ((i % nx) as f64 + 0.5) * s - 0.5;
            let fy = ((i / nx) as f64 + 0.5) * s - 0.5;
            let (u, v) = motion.velocity_at(fx, fy);
            (u / s, v / s)
        })
        .collect();

    let mut membership: Vec<Vec<usize>> = vec![Vec::new(); m];
    {
        let mut rng = stream(seed, "injection", 0);
        for (ci, c) in candidates.iter().enumerate() {
            let n = ((c.phi.clamp(0.0, 1.0) * m as f64).ceil() as usize).min(m);
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..n] {
                membership[i].push(ci);
            }
        }
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let infl = params.sigma_infl.max(0.0);
    let mut members = Vec::with_capacity(m);
    let mut member_seeds = Vec::with_capacity(m);
    for i in 0..m {
        let mseed = derive_seed(seed, "member", i as u64);
        member_seeds.push(mseed);
        let mut rng = stream(mseed, "perturb", 0);
        let (du, dv, z, amp_z) = if i == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let a: f64 = normal.sample(&mut rng);
            let b: f64 = normal.sample(&mut rng);
            let c: f64 = normal.sample(&mut rng);
            let d: f64 = normal.sample(&mut rng);
            (
                a * params.velocity_jitter * infl / s,
                b * params.velocity_jitter * infl / s,
                c,
                d,
            )
        };
        let mut seq = Vec::with_capacity(leads.len());
        for &lead in &leads {
            let lf = lead as f64;
            let mut f = GridField::zeros(nx, ny, analysis.cell_km, analysis.t + lead);
            let log_sd = infl * (params.intensity_sd + params.intensity_sd_growth * lf / params.horizon as f64);
            let mult = if i == 0 { 1.0 } else { (z * log_sd).exp() };
            for y in 0..ny {
                for x in 0..nx {
                    let k = y * nx + x;
                    let (u, v) = base_v[k];
                    let src = analysis.sample_bilinear(x as f64 - (u + du) * lf, y as f64 - (v + dv) * lf);
                    f.data[k] = src * mult;
                }
            }
            for &ci in &membership[i] {
                inject(&mut f, &candidates[ci], analysis, lf, s, &params.injection, amp_z);
            }
            seq.push(f);
        }
        members.push(seq);
    }
    EnsembleForecast {
        issued_at: analysis.t,
        horizon: params.horizon,
        cadence: params.cadence,
        factor: factor.max(1),
        coarse: factor > 1,
        members,
        member_seeds,
    }
}

/// Adds a nascent Gaussian cell, integrated over each target cell.
fn inject(
    f: &mut GridField,
    c: &InitiationCandidate,
    analysis: &GridField,
    lead: f64,
    s: f64,
    p: &InjectionParams,
    amp_z: f64,
) {
    let (cx, cy) = (c.x as f64 + c.velocity.0 * lead, c.y as f64 + c.velocity.1 * lead);
    let si = s as usize;
    let here = analysis.get(
        (c.x / si).min(analysis.nx - 1),
        (c.y / si).min(analysis.ny - 1),
    );
    let amp = ((here + p.gain * c.trend.max(0.0) * lead).min(p.cap)) * (p.amplitude_sd * amp_z).exp();
    if amp <= 0.0 {
        return;
    }
    let reach = 4.0 * p.radius;
    let (fnx, fny) = (f.nx * si, f.ny * si);
    let x0 = (cx - reach).floor().max(0.0) as usize;
    let y0 = (cy - reach).floor().max(0.0) as usize;
    let x1 = ((cx + reach).ceil().max(0.0) as usize).min(fnx.saturating_sub(1));
    let y1 = ((cy + reach).ceil().max(0.0) as usize).min(fny.saturating_sub(1));
    let area = s * s;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let r2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (p.radius * p.radius);
            if r2 > 16.0 {
                continue;
            }
            let k = (y / si) * f.nx + x / si;
            f.data[k] += amp * (-0.5 * r2).exp() / area;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> NowcastParams {
        NowcastParams {
            velocity_jitter: 0.0,
            intensity_sd: 0.0,
            intensity_sd_growth: 0.0,
            ..NowcastParams::default()
        }
    }

    fn field() -> GridField {
        GridField::from_fn(16, 16, 1.0, 30, |x, y| ((x * 3 + y * 5) % 7) as f64)
    }

    #[test]
    fn zero_motion_zero_perturbation_is_persistence() {
        let a = field();
        let ens = nowcast_ensemble(&a, &MotionField::uniform(16, 16, 8, (0.0, 0.0)), &[], 1, &quiet(), 1).unwrap();
        for m in &ens.members {
            for f in m {
                assert_eq!(f.data, a.data);
            }
        }
    }

    #[test]
    fn too_few_members_rejected() {
        let p = NowcastParams { m: 1, ..quiet() };
        let e = nowcast_ensemble(&field(), &MotionField::uniform(16, 16, 8, (0.0, 0.0)), &[], 1, &p, 1);
        assert_eq!(e.unwrap_err(), NowcastError::TooFewMembers(1));
    }

    #[test]
    fn full_confidence_candidate_enters_every_member() {
        let a = GridField::zeros(16, 16, 1.0, 0);
        let c = InitiationCandidate {
            x: 8,
            y: 8,
            phi: 1.0,
            detected_at: 0,
            expires_at: 20,
            trend: 1.0,
            velocity: (0.0, 0.0),
        };
        let ens = nowcast_ensemble(&a, &MotionField::uniform(16, 16, 8, (0.0, 0.0)), &[c], 1, &NowcastParams::default(), 3).unwrap();
        for m in &ens.members {
            assert!(m[0].get(8, 8) > 0.0);
        }
    }

    #[test]
    fn member_zero_is_unperturbed() {
        let a = field();
        let mf = MotionField::uniform(16, 16, 8, (0.1, 0.0));
        let noisy = nowcast_ensemble(&a, &mf, &[], 1, &NowcastParams::default(), 5).unwrap();
        let clean = nowcast_ensemble(&a, &mf, &[], 1, &quiet(), 9).unwrap();
        assert_eq!(noisy.members[0], clean.members[0]);
        assert_ne!(noisy.members[1], clean.members[1]);
    }

    #[test]
    fn lead_lookup_is_checked() {
        let ens = nowcast_ensemble(&field(), &MotionField::uniform(16, 16, 8, (0.0, 0.0)), &[], 1, &quiet(), 1).unwrap();
        assert_eq!(ens.leads(), vec![10, 20, 30, 40, 50, 60]);
        assert!(ens.member_at(0, 70).is_err());
        assert!(ens.member_at(0, 15).is_err());
        assert!(ens.member_at(0, 60).is_ok());
    }
}
