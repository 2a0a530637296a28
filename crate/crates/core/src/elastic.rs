//! Exact DTW, soft-DTW and the trajectory / F0 distances built on them.
//!
//! Both dynamic programs use squared-euclidean step costs and keep only two rows
//! of the accumulated-cost table.

use crate::audio_io::F0Contour;
use crate::series::{mean_std, ChannelSeries};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ElasticError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty sequence")]
    Empty,
    #[error("gamma must be finite and non-negative, got {0}")]
    BadGamma(f64),
    #[error("contour has no voiced frames to compare")]
    AllUnvoiced,
    #[error("contours differ in length or hop")]
    ContourMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdtwParams {
    /// Soft-min smoothing; 0 dispatches to exact DTW.
    pub gamma: f64,
    /// Report the soft-DTW divergence `S(x,y) − ½(S(x,x) + S(y,y))`, which is zero
    /// for identical inputs, instead of the raw soft-DTW value.
    pub debias: bool,
    /// Divide the cost by `n + m`.
    pub length_normalize: bool,
    /// Unvoiced F0 gaps up to this many seconds are interpolated; longer gaps split
    /// the comparison into segments whose costs are summed.
    pub max_gap: f64,
}

impl Default for SdtwParams {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            debias: true,
            length_normalize: false,
            max_gap: 0.25,
        }
    }
}

/// A sequence of `len` points in `dim` dimensions, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Seq<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Seq<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        Self { data, dim }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn check(x: Seq, y: Seq) -> Result<(), ElasticError> {
    if x.dim != y.dim {
        return Err(ElasticError::DimensionMismatch { left: x.dim, right: y.dim });
    }
    if x.is_empty() || y.is_empty() {
        return Err(ElasticError::Empty);
    }
    Ok(())
}

fn cost(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn dp(x: Seq, y: Seq, step: impl Fn(f64, f64, f64) -> f64) -> f64 {
    let m = y.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 0..x.len() {
        cur[0] = f64::INFINITY;
        let xi = x.point(i);
        for j in 0..m {
            cur[j + 1] = cost(xi, y.point(j)) + step(prev[j + 1], cur[j], prev[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Minimum summed squared-euclidean cost over monotone alignment paths.
pub fn exact_dtw(x: Seq, y: Seq) -> Result<f64, ElasticError> {
    check(x, y)?;
    Ok(dp(x, y, |a, b, c| a.min(b).min(c)))
}

fn softmin(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * s.ln()
}

/// Soft-DTW value `r[n, m]`; may be negative for `gamma > 0`.
pub fn soft_dtw(x: Seq, y: Seq, gamma: f64) -> Result<f64, ElasticError> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(ElasticError::BadGamma(gamma));
    }
    if gamma == 0.0 {
        return exact_dtw(x, y);
    }
    check(x, y)?;
    Ok(dp(x, y, |a, b, c| softmin(a, b, c, gamma)))
}

/// Soft-DTW divergence: zero when `x == y`.
pub fn sdtw_divergence(x: Seq, y: Seq, gamma: f64) -> Result<f64, ElasticError> {
    let xy = soft_dtw(x, y, gamma)?;
    let xx = soft_dtw(x, x, gamma)?;
    let yy = soft_dtw(y, y, gamma)?;
    Ok(xy - 0.5 * (xx + yy))
}

fn sequence_cost(x: Seq, y: Seq, params: &SdtwParams) -> Result<f64, ElasticError> {
    let raw = if params.debias {
        sdtw_divergence(x, y, params.gamma)?
    } else {
        soft_dtw(x, y, params.gamma)?
    };
    Ok(if params.length_normalize {
        raw / (x.len() + y.len()) as f64
    } else {
        raw
    })
}

fn znormalize_columns(s: &ChannelSeries) -> Vec<f64> {
    let dims = s.dims();
    let mut out = s.data().to_vec();
    for d in 0..dims {
        let (mean, std) = mean_std(&s.column(d));
        let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
        for v in out.iter_mut().skip(d).step_by(dims) {
            *v = (*v - mean) * scale;
        }
    }
    out
}

/// Per-dimension z-normalization of both series, then soft-DTW (or its divergence).
pub fn trajectory_distance(a: &ChannelSeries, b: &ChannelSeries, params: &SdtwParams) -> Result<f64, ElasticError> {
    if a.dims() != b.dims() {
        return Err(ElasticError::DimensionMismatch { left: a.dims(), right: b.dims() });
    }
    let za = znormalize_columns(a);
    let zb = znormalize_columns(b);
    sequence_cost(Seq::new(&za, a.dims()), Seq::new(&zb, b.dims()), params)
}

/// Frame runs `[from, to)` over which both contours are compared after short
/// unvoiced gaps have been bridged.
fn voiced_segments(mask: &[bool], max_gap_frames: usize) -> Vec<(usize, usize)> {
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < mask.len() && mask[i] {
            i += 1;
        }
        match segments.last_mut() {
            Some(last) if start - last.1 <= max_gap_frames => last.1 = i,
            _ => segments.push((start, i)),
        }
    }
    segments
}

/// Linear interpolation over the `None` frames of `values[from..to]`; the run
/// endpoints are voiced by construction.
fn fill(values: &[Option<f64>], from: usize, to: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(to - from);
    let mut last: Option<(usize, f64)> = None;
    for i in from..to {
        match values[i] {
            Some(v) => {
                if let Some((k, lv)) = last {
                    for g in k + 1..i {
                        let w = (g - k) as f64 / (i - k) as f64;
                        out[g - from] = lv + w * (v - lv);
                    }
                }
                out.push(v);
                last = Some((i, v));
            }
            None => out.push(f64::NAN),
        }
    }
    out
}

/// Distance between a reference F0 contour and an altered copy of it.
///
/// Frames count as voiced when both contours are voiced. Both contours are
/// normalized with the reference's voiced mean and standard deviation, so that a
/// flattened contour keeps its reduced excursion.
pub fn f0_distance(reference: &F0Contour, altered: &F0Contour, params: &SdtwParams) -> Result<f64, ElasticError> {
    if reference.len() != altered.len() || (reference.hop - altered.hop).abs() > 1e-12 {
        return Err(ElasticError::ContourMismatch);
    }
    let mask: Vec<bool> = reference
        .values
        .iter()
        .zip(&altered.values)
        .map(|(a, b)| a.is_some() && b.is_some())
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(ElasticError::AllUnvoiced);
    }
    let joint = |c: &F0Contour| -> Vec<Option<f64>> {
        c.values.iter().zip(&mask).map(|(v, &m)| if m { *v } else { None }).collect()
    };
    let (r, a) = (joint(reference), joint(altered));
    let voiced: Vec<f64> = r.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&voiced);
    let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
    let max_gap_frames = (params.max_gap / reference.hop).floor() as usize;

    let mut total = 0.0;
    for (from, to) in voiced_segments(&mask, max_gap_frames) {
        let norm = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| (x - mean) * scale).collect() };
        let x = norm(fill(&r, from, to));
        let y = norm(fill(&a, from, to));
        total += sequence_cost(Seq::new(&x, 1), Seq::new(&y, 1), params)?;
    }
    Ok(total)
}
