//! Temperature-scaled similarity logits and the soft-target InfoNCE loss.
//!
//! With logits `Z = V Tᵀ / tau` and a row-stochastic target matrix `P`,
//!
//! ```text
//! L_i2t = -(1/N) Σ_i Σ_j P[i][j] · log softmax_j(Z[i][·])
//! L_t2i = the same on Zᵀ
//! L     = (L_i2t + L_t2i) / 2
//! ```
//!
//! One-hot `P` recovers the usual symmetric InfoNCE.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soft_target::SoftLabelMatrix;

pub const DEFAULT_TAU: f64 = 0.07;

/// Row sums of a valid target matrix must be within this of one.
pub const TARGET_ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityLogits {
    pub z: Array2<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_i2t: f64,
    pub loss_t2i: f64,
    pub loss_total: f64,
}

impl LossReport {
    fn new(loss_i2t: f64, loss_t2i: f64) -> Self {
        Self {
            loss_i2t,
            loss_t2i,
            loss_total: (loss_i2t + loss_t2i) / 2.0,
        }
    }
}

pub fn similarity_matrix(v: ArrayView2<f64>, t: ArrayView2<f64>, tau: f64) -> Result<SimilarityLogits> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidTemperature(tau));
    }
    if v.dim() != t.dim() {
        return Err(Error::shape(
            "similarity_matrix",
            format!("V is {:?}, T is {:?}", v.dim(), t.dim()),
        ));
    }
    let z = v.dot(&t.t()) / tau;
    Ok(SimilarityLogits { z, tau })
}

fn check_targets(p: &Array2<f64>, n: usize) -> Result<()> {
    if p.dim() != (n, n) {
        return Err(Error::shape("soft_infonce", format!("P is {:?}, logits are {n}x{n}", p.dim())));
    }
    for (row, r) in p.rows().into_iter().enumerate() {
        if r.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidTargets {
                row,
                detail: "negative or non-finite entry".into(),
            });
        }
        let s = r.sum();
        if (s - 1.0).abs() > TARGET_ROW_TOLERANCE {
            return Err(Error::InvalidTargets {
                row,
                detail: format!("sums to {s}"),
            });
        }
    }
    Ok(())
}

/// Row-wise log-softmax, stabilised by subtracting the row maximum.
pub fn log_softmax_rows(z: ArrayView2<f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

fn oriented(z: &SimilarityLogits, direction: Direction) -> ArrayView2<'_, f64> {
    match direction {
        Direction::ImageToText => z.z.view(),
        Direction::TextToImage => z.z.t(),
    }
}

fn cross_entropy(logits: ArrayView2<f64>, p: &Array2<f64>) -> f64 {
    let n = logits.nrows();
    let logp = log_softmax_rows(logits);
    let mut total = 0.0;
    for (pr, lr) in p.rows().into_iter().zip(logp.rows()) {
        for (&pij, &lij) in pr.iter().zip(lr.iter()) {
            if pij != 0.0 {
                total -= pij * lij;
            }
        }
    }
    total / n as f64
}

pub fn soft_infonce(z: &SimilarityLogits, p: &SoftLabelMatrix, direction: Direction) -> Result<f64> {
    check_targets(&p.p, z.z.nrows())?;
    if z.z.nrows() != z.z.ncols() {
        return Err(Error::shape("soft_infonce", "logits must be square"));
    }
    Ok(cross_entropy(oriented(z, direction), &p.p))
}

pub fn symmetric_loss(
    v: ArrayView2<f64>,
    t: ArrayView2<f64>,
    p: &SoftLabelMatrix,
    tau: f64,
) -> Result<LossReport> {
    let z = similarity_matrix(v, t, tau)?;
    Ok(LossReport::new(
        soft_infonce(&z, p, Direction::ImageToText)?,
        soft_infonce(&z, p, Direction::TextToImage)?,
    ))
}

/// `dL/dZ'` for one direction: `(softmax_row(Z') - P) / N`.
pub fn logit_gradient(z: &SimilarityLogits, p: &SoftLabelMatrix, direction: Direction) -> Result<Array2<f64>> {
    check_targets(&p.p, z.z.nrows())?;
    let logits = oriented(z, direction);
    let n = logits.nrows() as f64;
    let mut g = log_softmax_rows(logits).mapv(f64::exp);
    g -= &p.p;
    g /= n;
    Ok(g)
}

/// Gradients of the symmetric loss with respect to the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGradients {
    pub d_image: Array2<f64>,
    pub d_text: Array2<f64>,
}

/// `dL/dZ = (G_i2t + G_t2iᵀ) / 2`, then `dL/dV = dL/dZ · T / tau`, `dL/dT = dL/dZᵀ · V / tau`.
pub fn loss_gradients(
    v: ArrayView2<f64>,
    t: ArrayView2<f64>,
    z: &SimilarityLogits,
    p: &SoftLabelMatrix,
) -> Result<EmbeddingGradients> {
    if v.dim() != t.dim() || z.z.dim() != (v.nrows(), v.nrows()) {
        return Err(Error::shape(
            "loss_gradients",
            format!("V {:?}, T {:?}, Z {:?}", v.dim(), t.dim(), z.z.dim()),
        ));
    }
    let g_i2t = logit_gradient(z, p, Direction::ImageToText)?;
    let g_t2i = logit_gradient(z, p, Direction::TextToImage)?;
    let dz = (g_i2t + g_t2i.t()) * 0.5;
    Ok(EmbeddingGradients {
        d_image: dz.dot(&t) / z.tau,
        d_text: dz.t().dot(&v) / z.tau,
    })
}

/// Loss and embedding gradients in one pass.
pub fn symmetric_loss_and_gradients(
    v: ArrayView2<f64>,
    t: ArrayView2<f64>,
    p: &SoftLabelMatrix,
    tau: f64,
) -> Result<(LossReport, EmbeddingGradients)> {
    let z = similarity_matrix(v, t, tau)?;
    let report = LossReport::new(
        soft_infonce(&z, p, Direction::ImageToText)?,
        soft_infonce(&z, p, Direction::TextToImage)?,
    );
    let grads = loss_gradients(v, t, &z, p)?;
    Ok((report, grads))
}

/// Largest absolute row sum; zero for any valid `dL/dZ'`.
pub fn max_abs_row_sum(g: &Array2<f64>) -> f64 {
    g.sum_axis(Axis(1)).iter().fold(0.0, |m, x| m.max(x.abs()))
}
