//! Multivariate DTW, the global alignment kernel (GAK) and Gram assembly.
//!
//! Series are handled frame-major: a frame is the vector of all parameters at
//! one timestep. DTW uses squared Euclidean frame cost and returns the square
//! root of the optimal cumulative cost. GAK sums, over all monotone alignments,
//! the product of local kernels
//!
//! ```text
//! kappa(a, b) = g / (2 - g),   g = exp(-|a - b|^2 / (2 sigma^2))
//! ```
//!
//! and is evaluated in log space.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mvts::MvtsInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "GAK")]
    Gak,
    /// `exp(-gamma * dtw^2)`; not guaranteed positive semi-definite.
    #[serde(rename = "DTW_RBF")]
    DtwRbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub gamma: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Optional Sakoe-Chiba band half-width; `None` means unconstrained.
    #[serde(default)]
    pub band: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::Gak,
            gamma: 0.01,
            normalize: true,
            band: None,
        }
    }
}

impl KernelConfig {
    pub fn gak(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn dtw_rbf(gamma: f64) -> Self {
        Self {
            kind: KernelKind::DtwRbf,
            gamma,
            ..Self::default()
        }
    }

    /// `sigma = sqrt(1 / (2 gamma))`.
    pub fn sigma(&self) -> f64 {
        (1.0 / (2.0 * self.gamma)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("kernel gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let kind = match self.kind {
            KernelKind::Gak => "GAK",
            KernelKind::DtwRbf => "DTW_RBF",
        };
        let band = self.band.map_or("none".to_string(), |b| b.to_string());
        format!("{kind};gamma={:e};normalize={};band={band}", self.gamma, self.normalize)
    }
}

/// A series stored frame-major: `data[t * n_params + p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    n_params: usize,
    n_steps: usize,
    data: Vec<f64>,
}

impl Frames {
    pub fn from_instance(inst: &MvtsInstance) -> Self {
        let (p, t) = (inst.n_params(), inst.n_steps());
        let mut data = vec![0.0; p * t];
        for (pi, row) in inst.rows().enumerate() {
            for (ti, &v) in row.iter().enumerate() {
                data[ti * p + pi] = v;
            }
        }
        Self {
            n_params: p,
            n_steps: t,
            data,
        }
    }

    /// From parameter rows (`rows[p][t]`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if p == 0 || t == 0 || rows.iter().any(|r| r.len() != t) {
            return Err(Error::InvalidDataset("series rows must be nonempty and equal length".into()));
        }
        let mut data = vec![0.0; p * t];
        for (pi, row) in rows.iter().enumerate() {
            for (ti, &v) in row.iter().enumerate() {
                data[ti * p + pi] = v;
            }
        }
        Ok(Self {
            n_params: p,
            n_steps: t,
            data,
        })
    }

    /// Univariate series.
    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::from_rows(&[values.to_vec()])
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_params..(t + 1) * self.n_params]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(x: &Frames, y: &Frames) -> Result<()> {
    if x.n_params != y.n_params {
        return Err(Error::DimensionMismatch {
            expected: x.n_params,
            found: y.n_params,
        });
    }
    Ok(())
}

fn in_band(i: usize, j: usize, band: Option<usize>, n: usize, m: usize) -> bool {
    match band {
        None => true,
        Some(w) => i.abs_diff(j) <= w.max(n.abs_diff(m)),
    }
}

/// Minimum cumulative squared frame cost over monotone alignments.
pub fn dtw_cost(x: &Frames, y: &Frames, band: Option<usize>) -> Result<f64> {
    check_dims(x, y)?;
    let (n, m) = (x.n_steps, y.n_steps);
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        let xi = x.frame(i - 1);
        for j in 1..=m {
            cur[j] = if in_band(i, j, band, n, m) {
                sq_dist(xi, y.frame(j - 1)) + prev[j].min(cur[j - 1]).min(prev[j - 1])
            } else {
                f64::INFINITY
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let cost = prev[m];
    if !cost.is_finite() {
        return Err(Error::NonFinite("DTW cost".into()));
    }
    Ok(cost)
}

pub fn dtw(x: &Frames, y: &Frames) -> Result<f64> {
    dtw_cost(x, y, None).map(f64::sqrt)
}

/// `ln kappa(a, b)` for squared distance `d2`.
pub fn log_local_kernel(d2: f64, sigma: f64) -> f64 {
    let u = d2 / (2.0 * sigma * sigma);
    // ln(g / (2 - g)) = -u - ln(1 + (1 - g))
    -u - (-(-u).exp_m1()).ln_1p()
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Natural log of the unnormalized global alignment kernel.
pub fn log_gak(x: &Frames, y: &Frames, sigma: f64, band: Option<usize>) -> Result<f64> {
    check_dims(x, y)?;
    let (n, m) = (x.n_steps, y.n_steps);
    let mut prev = vec![f64::NEG_INFINITY; m + 1];
    let mut cur = vec![f64::NEG_INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::NEG_INFINITY;
        let xi = x.frame(i - 1);
        for j in 1..=m {
            cur[j] = if in_band(i, j, band, n, m) {
                log_local_kernel(sq_dist(xi, y.frame(j - 1)), sigma) + log_sum_exp3(prev[j], cur[j - 1], prev[j - 1])
            } else {
                f64::NEG_INFINITY
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let v = prev[m];
    if !v.is_finite() {
        return Err(Error::NonFinite("log global alignment kernel".into()));
    }
    Ok(v)
}

/// Unnormalized GAK value `k(x, y)`. Fails instead of returning 0 or
/// infinity when the value leaves `f64` range; use [`log_gak`] for long series.
pub fn gak(x: &Frames, y: &Frames, cfg: &KernelConfig) -> Result<f64> {
    let v = log_gak(x, y, cfg.sigma(), cfg.band)?.exp();
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::NonFinite("global alignment kernel (out of f64 range)".into()));
    }
    Ok(v)
}

/// A series with its self-similarity term precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub frames: Frames,
    /// `ln k(x, x)` for normalized GAK, otherwise 0.
    self_log: f64,
}

pub fn prepare(id: impl Into<String>, frames: Frames, cfg: &KernelConfig) -> Result<Prepared> {
    let self_log = match (cfg.kind, cfg.normalize) {
        (KernelKind::Gak, true) => log_gak(&frames, &frames, cfg.sigma(), cfg.band)?,
        _ => 0.0,
    };
    Ok(Prepared {
        id: id.into(),
        frames,
        self_log,
    })
}

pub fn prepare_all(instances: &[MvtsInstance], cfg: &KernelConfig) -> Result<Vec<Prepared>> {
    instances
        .par_iter()
        .map(|i| prepare(i.instance_id(), Frames::from_instance(i), cfg))
        .collect()
}

fn prepared_value(x: &Prepared, y: &Prepared, cfg: &KernelConfig) -> Result<f64> {
    match cfg.kind {
        KernelKind::Gak => {
            let lxy = log_gak(&x.frames, &y.frames, cfg.sigma(), cfg.band)?;
            let v = if cfg.normalize {
                (lxy - 0.5 * (x.self_log + y.self_log)).exp()
            } else {
                lxy.exp()
            };
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("kernel value ({}, {})", x.id, y.id)));
            }
            Ok(v)
        }
        KernelKind::DtwRbf => Ok((-cfg.gamma * dtw_cost(&x.frames, &y.frames, cfg.band)?).exp()),
    }
}

/// Normalized GAK, raw GAK, or `exp(-gamma dtw^2)` depending on `cfg`.
pub fn kernel_value(x: &Frames, y: &Frames, cfg: &KernelConfig) -> Result<f64> {
    cfg.validate()?;
    let px = prepare("x", x.clone(), cfg)?;
    let py = prepare("y", y.clone(), cfg)?;
    prepared_value(&px, &py, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub fingerprint: String,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn transpose(&self) -> GramMatrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                data[j * self.n_rows + i] = self.get(i, j);
            }
        }
        GramMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            data,
            row_ids: self.col_ids.clone(),
            col_ids: self.row_ids.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows {
            for j in i + 1..self.n_cols.min(self.n_rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Smallest eigenvalue of a square matrix (symmetric part).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                found: self.n_cols,
            });
        }
        if self.n_rows == 0 {
            return Err(Error::EmptyInput);
        }
        let n = self.n_rows;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)));
        let eig = m.symmetric_eigenvalues();
        Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
    }

    const MAGIC: &'static [u8; 8] = b"FCGRAM01";

    /// Binary cache: magic, `n` and `m` as little-endian u64, fingerprint
    /// length (u32 LE) and UTF-8 bytes, then `n * m` little-endian f64 values
    /// in row-major order.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + self.fingerprint.len() + 8 * self.data.len());
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&(self.n_rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_cols as u64).to_le_bytes());
        buf.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.fingerprint.as_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a cache file; `Ok(None)` when the fingerprint differs. Ids are not
    /// stored and come back empty.
    pub fn read_cache(path: &Path, expected_fingerprint: &str) -> Result<Option<GramMatrix>> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::InvalidDataset(format!("gram cache {}: {m}", path.display()));
        if buf.len() < 28 || &buf[..8] != Self::MAGIC {
            return Err(bad("bad header"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap()) as usize;
        let (n, m) = (u64_at(8), u64_at(16));
        let fp_len = u32::from_le_bytes(buf[24..28].try_into().unwrap()) as usize;
        let body = 28 + fp_len;
        if buf.len() != body + 8 * n * m {
            return Err(bad("truncated"));
        }
        let fp = std::str::from_utf8(&buf[28..body]).map_err(|_| bad("fingerprint not UTF-8"))?;
        if fp != expected_fingerprint {
            return Ok(None);
        }
        let data = buf[body..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Some(GramMatrix {
            n_rows: n,
            n_cols: m,
            data,
            row_ids: Vec::new(),
            col_ids: Vec::new(),
            fingerprint: fp.to_string(),
        }))
    }
}

fn content_digest(items: &[Prepared]) -> String {
    let mut h = Sha256::new();
    for p in items {
        h.update(p.id.as_bytes());
        h.update([0u8]);
        for v in &p.frames.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn gram_fingerprint(rows: &[Prepared], cols: &[Prepared], cfg: &KernelConfig) -> String {
    format!(
        "{}|rows={}|cols={}",
        cfg.fingerprint(),
        content_digest(rows),
        content_digest(cols)
    )
}

/// All pairwise kernel values between prepared rows and columns. Every cell is
/// computed independently, so the result is the same for any thread count.
pub fn gram_prepared(rows: &[Prepared], cols: &[Prepared], cfg: &KernelConfig) -> Result<GramMatrix> {
    cfg.validate()?;
    let m = cols.len();
    let data = (0..rows.len() * m)
        .into_par_iter()
        .map(|k| prepared_value(&rows[k / m], &cols[k % m], cfg))
        .collect::<Result<Vec<f64>>>()?;
    Ok(GramMatrix {
        n_rows: rows.len(),
        n_cols: m,
        data,
        row_ids: rows.iter().map(|p| p.id.clone()).collect(),
        col_ids: cols.iter().map(|p| p.id.clone()).collect(),
        fingerprint: gram_fingerprint(rows, cols, cfg),
    })
}

/// Symmetric self-Gram; only the upper triangle is evaluated.
pub fn self_gram_prepared(items: &[Prepared], cfg: &KernelConfig) -> Result<GramMatrix> {
    cfg.validate()?;
    let n = items.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| prepared_value(&items[i], &items[j], cfg))
        .collect::<Result<Vec<f64>>>()?;
    let mut data = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        data[i * n + j] = v;
        data[j * n + i] = v;
    }
    let ids: Vec<String> = items.iter().map(|p| p.id.clone()).collect();
    Ok(GramMatrix {
        n_rows: n,
        n_cols: n,
        data,
        row_ids: ids.clone(),
        col_ids: ids,
        fingerprint: gram_fingerprint(items, items, cfg),
    })
}

pub fn gram(rows: &[MvtsInstance], cols: &[MvtsInstance], cfg: &KernelConfig) -> Result<GramMatrix> {
    gram_prepared(&prepare_all(rows, cfg)?, &prepare_all(cols, cfg)?, cfg)
}

pub fn self_gram(items: &[MvtsInstance], cfg: &KernelConfig) -> Result<GramMatrix> {
    self_gram_prepared(&prepare_all(items, cfg)?, cfg)
}
