//! Regular 2D scalar fields and their exchange formats.
//!
//! A [`GridField`] is stored row-major (`index = y * nx + x`). Two exchange
//! encodings are supported: row-major CSV, and little-endian 32-bit float
//! binary accompanied by a JSON sidecar ([`GridSidecar`]).

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulated minutes since scenario start.
pub type Minutes = u32;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("shape mismatch: expected {expected_nx}x{expected_ny}, got {nx}x{ny}")]
    ShapeMismatch {
        expected_nx: usize,
        expected_ny: usize,
        nx: usize,
        ny: usize,
    },
    #[error("grid {nx}x{ny} is not divisible by factor {factor}")]
    NotDivisible { nx: usize, ny: usize, factor: usize },
    #[error("factor must be >= 1")]
    ZeroFactor,
    #[error("payload has {got} values, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Hex-encoded SHA-256 of a value's canonical byte encoding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentHash(pub String);

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl ContentHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        ContentHash(hex::encode(Sha256::digest(bytes)))
    }

    pub fn from_hasher(hasher: Sha256) -> Self {
        ContentHash(hex::encode(hasher.finalize()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub nx: usize,
    pub ny: usize,
    pub cell_km: f64,
    pub t: Minutes,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(nx: usize, ny: usize, cell_km: f64, t: Minutes) -> Self {
        Self::filled(nx, ny, cell_km, t, 0.0)
    }

    pub fn filled(nx: usize, ny: usize, cell_km: f64, t: Minutes, value: f64) -> Self {
        GridField {
            nx,
            ny,
            cell_km,
            t,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_fn(
        nx: usize,
        ny: usize,
        cell_km: f64,
        t: Minutes,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                data.push(f(x, y));
            }
        }
        GridField {
            nx,
            ny,
            cell_km,
            t,
            data,
        }
    }

    pub fn from_vec(
        nx: usize,
        ny: usize,
        cell_km: f64,
        t: Minutes,
        data: Vec<f64>,
    ) -> Result<Self, GridError> {
        if data.len() != nx * ny {
            return Err(GridError::Length {
                expected: nx * ny,
                got: data.len(),
            });
        }
        Ok(GridField {
            nx,
            ny,
            cell_km,
            t,
            data,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.nx + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = y * self.nx + x;
        self.data[i] = v;
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn check_shape(&self, other: &GridField) -> Result<(), GridError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(GridError::ShapeMismatch {
                expected_nx: self.nx,
                expected_ny: self.ny,
                nx: other.nx,
                ny: other.ny,
            })
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> GridField {
        GridField {
            nx: self.nx,
            ny: self.ny,
            cell_km: self.cell_km,
            t: self.t,
            data: Vec::new(),
        }
    }

    /// Block mean at integer `factor` (coarsening).
    pub fn block_mean(&self, factor: usize) -> Result<GridField, GridError> {
        if factor == 0 {
            return Err(GridError::ZeroFactor);
        }
        if self.nx % factor != 0 || self.ny % factor != 0 {
            return Err(GridError::NotDivisible {
                nx: self.nx,
                ny: self.ny,
                factor,
            });
        }
        let (cx, cy) = (self.nx / factor, self.ny / factor);
        let mut out = GridField::zeros(cx, cy, self.cell_km * factor as f64, self.t);
        let norm = (factor * factor) as f64;
        for by in 0..cy {
            for bx in 0..cx {
                let mut s = 0.0;
                for y in by * factor..(by + 1) * factor {
                    let row = y * self.nx;
                    for x in bx * factor..(bx + 1) * factor {
                        s += self.data[row + x];
                    }
                }
                out.data[by * cx + bx] = s / norm;
            }
        }
        Ok(out)
    }

    /// Naive block replication at integer `factor` (every fine cell takes its
    /// coarse parent's value).
    pub fn replicate(&self, factor: usize) -> GridField {
        let (fx, fy) = (self.nx * factor, self.ny * factor);
        GridField::from_fn(fx, fy, self.cell_km / factor as f64, self.t, |x, y| {
            self.get(x / factor, y / factor)
        })
    }

    /// Bilinear sample at fractional cell coordinates (cell centers at
    /// integer positions). Points outside the grid read as zero.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v = |i: i64, j: i64| -> f64 {
            if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
                0.0
            } else {
                self.data[j as usize * self.nx + i as usize]
            }
        };
        if fx == 0.0 && fy == 0.0 {
            return v(ix, iy);
        }
        let a = v(ix, iy) * (1.0 - fx) + v(ix + 1, iy) * fx;
        let b = v(ix, iy + 1) * (1.0 - fx) + v(ix + 1, iy + 1) * fx;
        a * (1.0 - fy) + b * fy
    }

    /// Feeds the canonical encoding (dims, cell size, time, f64 LE values)
    /// into `hasher`.
    pub fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.nx as u64).to_le_bytes());
        hasher.update((self.ny as u64).to_le_bytes());
        hasher.update(self.cell_km.to_le_bytes());
        hasher.update(self.t.to_le_bytes());
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        hasher.update(&buf);
    }

    pub fn content_hash(&self) -> ContentHash {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        ContentHash::from_hasher(h)
    }

    pub fn to_f32_le(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_f32_le(sidecar: &GridSidecar, bytes: &[u8]) -> Result<GridField, GridError> {
        let expected = sidecar.nx * sidecar.ny;
        if bytes.len() != expected * 4 {
            return Err(GridError::Length {
                expected,
                got: bytes.len() / 4,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        GridField::from_vec(sidecar.nx, sidecar.ny, sidecar.cell_km, sidecar.t, data)
    }

    pub fn sidecar(&self, variable: &str, units: &str) -> GridSidecar {
        GridSidecar {
            nx: self.nx,
            ny: self.ny,
            cell_km: self.cell_km,
            t: self.t,
            variable: variable.to_string(),
            units: units.to_string(),
        }
    }

    /// Row-major CSV: one grid row per line, `ny` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 8);
        for y in 0..self.ny {
            let row = &self.data[y * self.nx..(y + 1) * self.nx];
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(sidecar: &GridSidecar, text: &str) -> Result<GridField, GridError> {
        let mut data = Vec::with_capacity(sidecar.nx * sidecar.ny);
        let mut rows = 0;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            let before = data.len();
            for tok in line.split(',') {
                let v: f64 = tok.trim().parse().map_err(|e| GridError::Csv {
                    line: line_no + 1,
                    message: format!("{e}"),
                })?;
                data.push(v);
            }
            if data.len() - before != sidecar.nx {
                return Err(GridError::Csv {
                    line: line_no + 1,
                    message: format!("expected {} columns, got {}", sidecar.nx, data.len() - before),
                });
            }
        }
        if rows != sidecar.ny {
            return Err(GridError::Length {
                expected: sidecar.nx * sidecar.ny,
                got: data.len(),
            });
        }
        GridField::from_vec(sidecar.nx, sidecar.ny, sidecar.cell_km, sidecar.t, data)
    }
}

/// JSON sidecar describing a binary or CSV grid blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub nx: usize,
    pub ny: usize,
    pub cell_km: f64,
    pub t: Minutes,
    pub variable: String,
    pub units: String,
}
