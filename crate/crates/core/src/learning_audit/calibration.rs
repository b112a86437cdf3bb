//! Binned probability recalibration with isotonic projection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// Mapped value per bin, nondecreasing, in [0, 1].
    pub values: Vec<f64>,
    /// Evidence weight per bin (starts at the prior weight).
    pub counts: Vec<f64>,
    pub version: u64,
}

/// Pseudo-count given to the identity map in each bin.
pub const PRIOR_WEIGHT: f64 = 20.0;

impl CalibrationMap {
    pub fn identity(k: usize) -> Self {
        Self::identity_with_prior(k, PRIOR_WEIGHT)
    }

    pub fn identity_with_prior(k: usize, prior: f64) -> Self {
        let k = k.max(1);
        CalibrationMap {
            values: (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect(),
            counts: vec![prior; k],
            version: 0,
        }
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn bin_of(&self, p: f64) -> usize {
        let k = self.bins();
        ((p.clamp(0.0, 1.0) * k as f64).floor() as usize).min(k - 1)
    }

    fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.bins() as f64
    }

    /// Piecewise-linear through the bin centers, slope one beyond the outer
    /// centers, clamped to [0, 1]. The identity map returns its input.
    pub fn apply(&self, p: f64) -> f64 {
        let k = self.bins();
        let p = p.clamp(0.0, 1.0);
        let first = self.center(0);
        let last = self.center(k - 1);
        let v = if k == 1 || p <= first {
            self.values[0] + (p - first)
        } else if p >= last {
            self.values[k - 1] + (p - last)
        } else {
            let pos = p * k as f64 - 0.5;
            let i = (pos.floor() as usize).min(k - 2);
            let t = pos - i as f64;
            self.values[i] + (self.values[i + 1] - self.values[i]) * t
        };
        v.clamp(0.0, 1.0)
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Weighted pool-adjacent-violators projection onto nondecreasing
/// sequences.
pub fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let w = w.max(1e-12);
        blocks.push((v, w, 1));
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (v1, w1, c1) = blocks[n - 2];
            let (v2, w2, c2) = blocks[n - 1];
            if v1 <= v2 {
                break;
            }
            blocks.pop();
            blocks[n - 2] = ((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2);
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (v, _, c) in blocks {
        out.extend(std::iter::repeat_n(v, c));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationOutcome {
    pub map: CalibrationMap,
    pub changed: bool,
    pub pairs: usize,
    /// Observed frequency per bin for this batch (None where empty).
    pub observed: Vec<Option<f64>>,
}

/// One strategic-loop update from `(raw p, outcome)` pairs.
///
/// Each populated bin moves toward its observed frequency with step
/// `max(eta, n / (n_prev + n))`: never slower than `eta`, and no slower than
/// the running mean of all evidence seen, so repeated batches converge to
/// the true frequency. Monotonicity is then restored by isotonic
/// projection.
pub fn recalibrate(map: &CalibrationMap, pairs: &[(f64, bool)], eta: f64) -> RecalibrationOutcome {
    let k = map.bins();
    if pairs.is_empty() {
        return RecalibrationOutcome {
            map: map.clone(),
            changed: false,
            pairs: 0,
            observed: vec![None; k],
        };
    }
    let mut n = vec![0.0f64; k];
    let mut hits = vec![0.0f64; k];
    for &(p, o) in pairs {
        let b = map.bin_of(p);
        n[b] += 1.0;
        if o {
            hits[b] += 1.0;
        }
    }
    let mut values = map.values.clone();
    let mut counts = map.counts.clone();
    let mut observed = vec![None; k];
    for b in 0..k {
        if n[b] == 0.0 {
            continue;
        }
        let obar = hits[b] / n[b];
        observed[b] = Some(obar);
        let step = eta.max(n[b] / (counts[b] + n[b])).min(1.0);
        values[b] += step * (obar - values[b]);
        counts[b] += n[b];
    }
    let mut values = isotonic(&values, &counts);
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    let changed = values
        .iter()
        .zip(&map.values)
        .any(|(a, b)| (a - b).abs() > 1e-12);
    let version = if changed { map.version + 1 } else { map.version };
    RecalibrationOutcome {
        map: CalibrationMap {
            values: if changed { values } else { map.values.clone() },
            counts,
            version,
        },
        changed,
        pairs: pairs.len(),
        observed,
    }
}
