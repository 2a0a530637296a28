//! Empirical mode decomposition and multiscale beat consistency.
//!
//! Each signal is split into intrinsic mode functions (fast to slow). Beats are the
//! prominent maxima of each mode; two signals are compared scale by scale, pairing
//! modes by mean frequency (or by zero-crossing rank), and the per-scale Gaussian
//! proximity scores are averaged.

use crate::series::{mean_std, ChannelSeries};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BeatError {
    #[error("series of length {0} is too short for EMD (need at least 8 samples)")]
    TooShort(usize),
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("reference onset train has {found} beats, fewer than the required {required}")]
    TooFewBeats { found: usize, required: usize },
    #[error("no scale pair with enough beats")]
    NoScalePair,
    #[error("series spans differ")]
    SpanMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmdParams {
    pub max_imfs: usize,
    /// Cauchy-type stopping threshold on the normalized squared change per sift.
    pub sd_threshold: f64,
    pub max_sifts: usize,
    /// Mirror the outermost extrema about the series ends before fitting envelopes.
    pub mirror: bool,
}

impl Default for EmdParams {
    fn default() -> Self {
        Self {
            max_imfs: 8,
            sd_threshold: 0.2,
            max_sifts: 50,
            mirror: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImfSet {
    pub imfs: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    pub rate: f64,
}

impl ImfSet {
    /// `Σ imfs + residual`, sample by sample.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residual.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }
}

fn extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if x[i] > x[i - 1] && x[i] >= x[i + 1] {
            maxima.push(i);
        } else if x[i] < x[i - 1] && x[i] <= x[i + 1] {
            minima.push(i);
        }
    }
    (maxima, minima)
}

fn zero_crossings(x: &[f64]) -> usize {
    x.windows(2).filter(|w| (w[0] < 0.0 && w[1] >= 0.0) || (w[0] >= 0.0 && w[1] < 0.0)).count()
}

/// Natural cubic spline through `(t, y)` (strictly increasing `t`), evaluated at
/// `0, 1, …, n−1`.
fn natural_spline(t: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    let k = t.len();
    if k == 1 {
        return vec![y[0]; n];
    }
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    // second derivatives via the Thomas algorithm; m[0] = m[k-1] = 0
    let mut m = vec![0.0; k];
    if k > 2 {
        let inner = k - 2;
        let mut diag = vec![0.0; inner];
        let mut rhs = vec![0.0; inner];
        for i in 0..inner {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
        }
        for i in 1..inner {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            rhs[i] -= w * rhs[i - 1];
        }
        m[inner] = rhs[inner - 1] / diag[inner - 1];
        for i in (0..inner - 1).rev() {
            m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for s in 0..n {
        let x = s as f64;
        while seg + 2 < k && x > t[seg + 1] {
            seg += 1;
        }
        let (x0, x1, hs) = (t[seg], t[seg + 1], h[seg]);
        let a = (x1 - x) / hs;
        let b = (x - x0) / hs;
        out.push(
            a * y[seg] + b * y[seg + 1] + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hs * hs / 6.0,
        );
    }
    out
}

fn envelope(x: &[f64], idx: &[usize], mirror: bool) -> Vec<f64> {
    let n = x.len();
    let last = (n - 1) as f64;
    let mut t = Vec::with_capacity(idx.len() + 4);
    let mut y = Vec::with_capacity(idx.len() + 4);
    if mirror {
        for &i in idx.iter().take(2).rev() {
            t.push(-(i as f64));
            y.push(x[i]);
        }
    } else {
        t.push(0.0);
        y.push(x[0]);
    }
    for &i in idx {
        t.push(i as f64);
        y.push(x[i]);
    }
    if mirror {
        for &i in idx.iter().rev().take(2) {
            t.push(2.0 * last - i as f64);
            y.push(x[i]);
        }
    } else {
        t.push(last);
        y.push(x[n - 1]);
    }
    natural_spline(&t, &y, n)
}

fn sift(r: &[f64], params: &EmdParams) -> Vec<f64> {
    let mut h = r.to_vec();
    for _ in 0..params.max_sifts {
        let (maxima, minima) = extrema(&h);
        if maxima.is_empty() || minima.is_empty() || maxima.len() + minima.len() < 3 {
            break;
        }
        let upper = envelope(&h, &maxima, params.mirror);
        let lower = envelope(&h, &minima, params.mirror);
        let mut num = 0.0;
        let mut den = 0.0;
        for ((v, u), l) in h.iter_mut().zip(&upper).zip(&lower) {
            let mean = 0.5 * (u + l);
            num += mean * mean;
            den += *v * *v;
            *v -= mean;
        }
        let sd = if den > 0.0 { num / den } else { 0.0 };
        let (mx, mn) = extrema(&h);
        let balanced = (mx.len() + mn.len()).abs_diff(zero_crossings(&h)) <= 1;
        if sd < params.sd_threshold && balanced {
            break;
        }
    }
    h
}

/// Standard univariate EMD with cubic-spline envelopes.
pub fn emd_decompose(series: &[f64], rate: f64, params: &EmdParams) -> Result<ImfSet, BeatError> {
    if series.len() < 8 {
        return Err(BeatError::TooShort(series.len()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(BeatError::NonFinite);
    }
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut residual = series.to_vec();
    let mut imfs = Vec::new();
    while imfs.len() < params.max_imfs {
        let (mx, mn) = extrema(&residual);
        let (lo, hi) = residual
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if mx.len() + mn.len() < 3 || hi - lo <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        let imf = sift(&residual, params);
        for (r, v) in residual.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
    }
    Ok(ImfSet { imfs, residual, rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnsetSource {
    Gesture,
    Speech,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetTrain {
    /// Strictly increasing onset times in seconds.
    pub times: Vec<f64>,
    pub source: OnsetSource,
    /// IMF index the onsets were taken from.
    pub scale: usize,
    /// Mean frequency of the mode in Hz, from its zero-crossing count.
    pub frequency: f64,
}

/// Peak prominence: height above the higher of the two lowest points reached before
/// meeting a higher sample (or the series end) on either side.
fn prominence(x: &[f64], i: usize) -> f64 {
    let peak = x[i];
    let mut left = peak;
    for &v in x[..i].iter().rev() {
        if v > peak {
            break;
        }
        left = left.min(v);
    }
    let mut right = peak;
    for &v in &x[i + 1..] {
        if v > peak {
            break;
        }
        right = right.min(v);
    }
    peak - left.max(right)
}

/// Beats are local maxima whose prominence reaches `prominence × std(imf)`.
pub fn detect_beats(
    imf: &[f64],
    rate: f64,
    start_time: f64,
    prominence_factor: f64,
    source: OnsetSource,
    scale: usize,
) -> Result<OnsetTrain, BeatError> {
    if !(prominence_factor > 0.0) {
        return Err(BeatError::InvalidParam(format!(
            "prominence must be positive, got {prominence_factor}"
        )));
    }
    let (_, std) = mean_std(imf);
    let threshold = prominence_factor * std;
    let times = if std > 0.0 {
        extrema(imf)
            .0
            .into_iter()
            .filter(|&i| prominence(imf, i) >= threshold)
            .map(|i| start_time + i as f64 / rate)
            .collect()
    } else {
        Vec::new()
    };
    let frequency = if imf.is_empty() {
        0.0
    } else {
        zero_crossings(imf) as f64 * rate / (2.0 * imf.len() as f64)
    };
    Ok(OnsetTrain {
        times,
        source,
        scale,
        frequency,
    })
}

/// Mean over `g` of `exp(−min_u (t−u)² / 2σ²)`, the distance taken to the nearest
/// onset in `s`. Normalized by `|g|`, so the score is not symmetric.
pub fn beat_consistency(g: &OnsetTrain, s: &OnsetTrain, sigma_bc: f64) -> Result<f64, BeatError> {
    if !(sigma_bc > 0.0) {
        return Err(BeatError::InvalidParam(format!("sigma_bc must be positive, got {sigma_bc}")));
    }
    if g.times.is_empty() {
        return Err(BeatError::TooFewBeats { found: 0, required: 1 });
    }
    if s.times.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = g
        .times
        .iter()
        .map(|&t| {
            let k = s.times.partition_point(|&u| u < t);
            let mut best = f64::INFINITY;
            if k < s.times.len() {
                best = best.min((s.times[k] - t).abs());
            }
            if k > 0 {
                best = best.min((t - s.times[k - 1]).abs());
            }
            (-best * best / (2.0 * sigma_bc * sigma_bc)).exp()
        })
        .sum();
    Ok(total / g.times.len() as f64)
}

/// How the modes of the two signals are matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScalePairing {
    /// Each gesture mode meets the speech mode of nearest mean frequency, if within
    /// `max_ratio`.
    #[default]
    Frequency,
    /// The k-th fastest mode of one signal meets the k-th fastest of the other.
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeatConsistencyParams {
    /// Gaussian width in seconds.
    pub sigma_bc: f64,
    pub min_beats: usize,
    /// Peak prominence threshold as a multiple of the IMF's standard deviation.
    pub prominence: f64,
    pub pairing: ScalePairing,
    /// Largest frequency ratio between paired modes under frequency pairing.
    pub max_ratio: f64,
    pub emd: EmdParams,
}

impl Default for BeatConsistencyParams {
    fn default() -> Self {
        Self {
            sigma_bc: 0.2,
            min_beats: 1,
            prominence: 1.0,
            pairing: ScalePairing::Frequency,
            max_ratio: 2.0,
            emd: EmdParams::default(),
        }
    }
}

/// Onset trains of a signal, one per IMF, ordered from fastest to slowest by
/// zero-crossing rate.
pub fn scale_onsets(series: &ChannelSeries, source: OnsetSource, params: &BeatConsistencyParams) -> Result<Vec<OnsetTrain>, BeatError> {
    let x = series.column(0);
    let set = emd_decompose(&x, series.rate(), &params.emd)?;
    let mut order: Vec<(usize, usize)> = set.imfs.iter().enumerate().map(|(i, imf)| (i, zero_crossings(imf))).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    order
        .into_iter()
        .map(|(i, _)| detect_beats(&set.imfs[i], series.rate(), series.start_time(), params.prominence, source, i))
        .collect()
}

/// Unweighted mean of per-scale beat consistency over paired scales. Scales whose
/// reference train has fewer than `min_beats` onsets are skipped.
pub fn consistency_from_onsets(a: &[OnsetTrain], b: &[OnsetTrain], params: &BeatConsistencyParams) -> Result<f64, BeatError> {
    let mut scores = Vec::new();
    for (i, g) in a.iter().enumerate() {
        if g.times.is_empty() || g.times.len() < params.min_beats {
            continue;
        }
        let partner = match params.pairing {
            ScalePairing::Rank => b.get(i),
            ScalePairing::Frequency => b
                .iter()
                .filter(|s| s.frequency > 0.0 && g.frequency > 0.0)
                .map(|s| (s, (g.frequency / s.frequency).ln().abs()))
                .filter(|(_, d)| *d <= params.max_ratio.ln() + 1e-12)
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .map(|(s, _)| s),
        };
        if let Some(s) = partner {
            scores.push(beat_consistency(g, s, params.sigma_bc)?);
        }
    }
    if scores.is_empty() {
        return Err(BeatError::NoScalePair);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn multiscale_beat_consistency(
    a: &ChannelSeries,
    b: &ChannelSeries,
    params: &BeatConsistencyParams,
) -> Result<f64, BeatError> {
    if (a.duration() - b.duration()).abs() > 1.0 / a.rate().min(b.rate()) + 1e-9
        || (a.start_time() - b.start_time()).abs() > 1e-9
    {
        return Err(BeatError::SpanMismatch);
    }
    let oa = scale_onsets(a, OnsetSource::Gesture, params)?;
    let ob = scale_onsets(b, OnsetSource::Speech, params)?;
    consistency_from_onsets(&oa, &ob, params)
}
