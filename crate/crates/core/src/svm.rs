//! Soft-margin binary SVM trained on a precomputed Gram matrix.
//!
//! The dual `max W(a) = sum a_i - 1/2 sum a_i a_j y_i y_j K_ij` subject to
//! `0 <= a_i <= C` and `sum a_i y_i = 0` is solved by two-variable updates on
//! the maximal violating pair.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvts::Label;
use crate::seed;
use crate::tskernel::{GramMatrix, KernelKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    /// Iteration budget in units of full passes (`max_passes * n` pair updates).
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    /// Shuffles the scan order used to break ties in pair selection.
    #[serde(default)]
    pub seed: u64,
}

fn default_kkt_tol() -> f64 {
    1e-3
}

fn default_max_passes() -> usize {
    10_000
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 100.0,
            kkt_tol: default_kkt_tol(),
            max_passes: default_max_passes(),
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn with_c(c: f64) -> Self {
        Self { c, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("SVM C must be positive, got {}", self.c)));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidConfig("kkt_tol must be positive".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidConfig("max_passes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_indices: Vec<usize>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub labels: Vec<Label>,
    pub c: f64,
    pub kkt_tol: f64,
    pub kernel_fingerprint: String,
    pub iterations: usize,
    pub dual_objective: f64,
}

impl SvmModel {
    pub fn n_train(&self) -> usize {
        self.labels.len()
    }

    /// Full dual vector, zero for non-support points.
    pub fn alphas(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.labels.len()];
        for (&i, &coef) in self.support_indices.iter().zip(&self.dual_coefs) {
            a[i] = coef * self.labels[i].sign();
        }
        a
    }

    /// `f(x) = sum_s coef_s kcol[s] + b` over kernel values against every
    /// training instance.
    pub fn decision(&self, kcol: &[f64]) -> Result<f64> {
        if kcol.len() != self.n_train() {
            return Err(Error::LengthMismatch {
                left: kcol.len(),
                right: self.n_train(),
            });
        }
        Ok(self
            .support_indices
            .iter()
            .zip(&self.dual_coefs)
            .map(|(&i, &c)| c * kcol[i])
            .sum::<f64>()
            + self.bias)
    }

    /// Like [`decision`](Self::decision) but with kernel values against the
    /// support vectors only, in `support_indices` order.
    pub fn decision_support(&self, ksv: &[f64]) -> Result<f64> {
        if ksv.len() != self.support_indices.len() {
            return Err(Error::LengthMismatch {
                left: ksv.len(),
                right: self.support_indices.len(),
            });
        }
        Ok(ksv.iter().zip(&self.dual_coefs).map(|(k, c)| c * k).sum::<f64>() + self.bias)
    }

    pub fn predict(&self, kcol: &[f64]) -> Result<Label> {
        self.decision(kcol).map(label_of)
    }

    /// Largest KKT residual over the training set.
    pub fn max_kkt_violation(&self, gram: &GramMatrix) -> Result<f64> {
        let alphas = self.alphas();
        let mut worst: f64 = 0.0;
        for i in 0..self.n_train() {
            let yf = self.labels[i].sign() * self.decision(gram.row(i))?;
            let v = if alphas[i] <= 0.0 {
                (1.0 - yf).max(0.0)
            } else if alphas[i] >= self.c {
                (yf - 1.0).max(0.0)
            } else {
                (yf - 1.0).abs()
            };
            worst = worst.max(v);
        }
        Ok(worst)
    }
}

/// Sign rule with ties going to the positive class.
pub fn label_of(f: f64) -> Label {
    if f >= 0.0 {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// `W(a) = sum a - 1/2 a' Q a` with `Q_ij = y_i y_j K_ij`.
pub fn dual_objective(gram: &GramMatrix, labels: &[Label], alphas: &[f64]) -> f64 {
    let n = alphas.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alphas[i] * alphas[j] * labels[i].sign() * labels[j].sign() * gram.get(i, j);
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

/// Adds `lambda I` with `lambda = max(0, -min_eig) + 1e-10` to a DTW-RBF
/// training Gram. GAK matrices are returned unchanged.
pub fn regularize(gram: &GramMatrix, kind: KernelKind) -> Result<(GramMatrix, Option<f64>)> {
    if kind != KernelKind::DtwRbf {
        return Ok((gram.clone(), None));
    }
    let lambda = (-gram.min_eigenvalue()?).max(0.0) + 1e-10;
    let mut out = gram.clone();
    for i in 0..out.n_rows {
        out.data[i * out.n_cols + i] += lambda;
    }
    out.fingerprint = format!("{};shift={lambda:e}", gram.fingerprint);
    Ok((out, Some(lambda)))
}

pub fn train(gram: &GramMatrix, labels: &[Label], cfg: &SvmConfig) -> Result<SvmModel> {
    cfg.validate()?;
    let n = gram.n_rows;
    if !gram.is_square() {
        return Err(Error::DimensionMismatch {
            expected: gram.n_rows,
            found: gram.n_cols,
        });
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: n,
        });
    }
    if gram.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training Gram matrix".into()));
    }
    let scale = gram.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if gram.max_asymmetry() > 1e-9 * scale {
        return Err(Error::InvalidConfig("training Gram matrix is not symmetric".into()));
    }
    if !labels.contains(&Label::Positive) || !labels.contains(&Label::Negative) {
        return Err(Error::SingleClass);
    }

    let c = cfg.c;
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let k = |i: usize, j: usize| gram.data[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(cfg.seed));

    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y < 0.0 && a < c) || (y > 0.0 && a > 0.0);
    let budget = cfg.max_passes.saturating_mul(n.max(1));

    let mut iterations = 0;
    let (m_up, m_low) = loop {
        let (mut i, mut m_up) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut m_low) = (usize::MAX, f64::INFINITY);
        for &t in &order {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > m_up {
                i = t;
                m_up = v;
            }
            if in_low(alpha[t], y[t]) && v < m_low {
                j = t;
                m_low = v;
            }
        }
        if i == usize::MAX || j == usize::MAX || m_up - m_low < cfg.kkt_tol {
            break (m_up, m_low);
        }
        if iterations >= budget {
            return Err(Error::NotConverged {
                iterations,
                max_violation: m_up - m_low,
            });
        }
        iterations += 1;

        // step t along a_i += y_i t, a_j -= y_j t
        let curvature = (k(i, i) + k(j, j) - 2.0 * k(i, j)).max(1e-12);
        let room_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let room_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = ((m_up - m_low) / curvature).min(room_i).min(room_j);
        alpha[i] = if step == room_i { if y[i] > 0.0 { c } else { 0.0 } } else { alpha[i] + y[i] * step };
        alpha[j] = if step == room_j { if y[j] > 0.0 { 0.0 } else { c } } else { alpha[j] - y[j] * step };
        for t in 0..n {
            grad[t] += step * y[t] * (k(t, i) - k(t, j));
        }
    };

    let free: Vec<f64> = (0..n)
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
        .map(|t| -y[t] * grad[t])
        .collect();
    let bias = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else if m_up.is_finite() && m_low.is_finite() {
        0.5 * (m_up + m_low)
    } else {
        let finite = if m_up.is_finite() { m_up } else { m_low };
        if finite.is_finite() { finite } else { 0.0 }
    };

    let support_indices: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let dual_coefs = support_indices.iter().map(|&t| alpha[t] * y[t]).collect();
    let dual_objective = 0.5 * alpha.iter().sum::<f64>() - 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    Ok(SvmModel {
        support_indices,
        dual_coefs,
        bias,
        labels: labels.to_vec(),
        c,
        kkt_tol: cfg.kkt_tol,
        kernel_fingerprint: gram.fingerprint.clone(),
        iterations,
        dual_objective,
    })
}
