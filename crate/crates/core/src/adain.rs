//! Adaptive instance normalization of token features.
//!
//! Statistics are per channel, pooled over every token of the matrix, with
//! population variance and an additive stabilizer inside the square root:
//! `sigma = sqrt(var + eps)`.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Stabilizer used when none is configured.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// `sqrt(population variance + eps)`, so always at least `sqrt(eps)`.
    pub sigma: Vec<f64>,
}

pub fn channel_stats(tokens: &Matrix, eps: f64) -> Result<ChannelStats> {
    if tokens.rows() == 0 || tokens.cols() == 0 {
        return Err(Error::shape("channel statistics of an empty matrix"));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    let n = tokens.rows() as f64;
    let mean: Vec<f64> = tokens.column_sums().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; tokens.cols()];
    for r in 0..tokens.rows() {
        for ((acc, v), m) in var.iter_mut().zip(tokens.row(r)).zip(&mean) {
            let d = v - m;
            *acc += d * d;
        }
    }
    let sigma = var.into_iter().map(|v| (v / n + eps).sqrt()).collect();
    Ok(ChannelStats { mean, sigma })
}

/// `(x - mu) / sigma` per channel.
pub fn normalize(tokens: &Matrix, stats: &ChannelStats) -> Matrix {
    let mut out = tokens.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(&stats.mean).zip(&stats.sigma) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Re-normalizes `content` so its channel statistics follow `style`.
///
/// Token counts may differ; channel counts must match. A constant content
/// channel collapses to the style mean.
pub fn adain(content: &Matrix, style: &Matrix, eps: f64) -> Result<Matrix> {
    if content.cols() != style.cols() {
        return Err(Error::shape(format!(
            "adain channel mismatch: content has {}, style has {}",
            content.cols(),
            style.cols()
        )));
    }
    let content_stats = channel_stats(content, eps)?;
    let style_stats = channel_stats(style, eps)?;
    Ok(restyle(&normalize(content, &content_stats), &style_stats))
}

/// `sigma_style · normalized + mu_style` per channel.
pub(crate) fn restyle(normalized: &Matrix, style: &ChannelStats) -> Matrix {
    let mut out = normalized.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(&style.mean).zip(&style.sigma) {
            *v = s * *v + m;
        }
    }
    out
}
