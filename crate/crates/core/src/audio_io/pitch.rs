//! Difference-function pitch tracker.
//!
//! Each frame computes the squared-difference function
//! `d(τ) = Σ_j (x_j − x_{j+τ})²` through an FFT cross-correlation, normalizes it by
//! its cumulative mean, and takes the first dip below the voicing threshold
//! (refined by parabolic interpolation) as the period.

use super::{AudioError, AudioTrack, F0Contour};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct F0Params {
    /// Frame hop in seconds.
    pub hop: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    /// A frame is voiced when its normalized difference dips below this value.
    pub voicing_threshold: f64,
}

impl Default for F0Params {
    fn default() -> Self {
        Self {
            hop: 0.02,
            f0_min: 65.0,
            f0_max: 400.0,
            voicing_threshold: 0.3,
        }
    }
}

pub fn extract_f0(track: &AudioTrack, params: F0Params) -> Result<F0Contour, AudioError> {
    let sr = track.sample_rate();
    if !(params.f0_min > 0.0 && params.f0_min < params.f0_max) {
        return Err(AudioError::InvalidParam(format!(
            "need 0 < f0_min < f0_max, got {} and {}",
            params.f0_min, params.f0_max
        )));
    }
    if params.f0_max >= sr / 2.0 {
        return Err(AudioError::InvalidParam("f0_max must lie below Nyquist".into()));
    }
    let n_frames = (track.duration() / params.hop).floor() as usize;
    if !(params.hop > 0.0) || n_frames < 2 {
        return Err(AudioError::InvalidParam(format!(
            "hop {} s yields fewer than two frames",
            params.hop
        )));
    }

    let tau_min = ((sr / params.f0_max).floor() as usize).max(2);
    let tau_max = (sr / params.f0_min).ceil() as usize;
    let window = tau_max;
    let span = window + tau_max + 1;
    let fft_len = (span + window).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let x = track.samples();
    let mut seg = vec![0.0; span];
    let mut prefix = vec![0.0; span + 1];
    let mut a = vec![Complex::new(0.0, 0.0); fft_len];
    let mut b = vec![Complex::new(0.0, 0.0); fft_len];
    let mut cmnd = vec![1.0; tau_max + 2];
    let mut values = Vec::with_capacity(n_frames);

    for f in 0..n_frames {
        let centre = ((f as f64 + 0.5) * params.hop * sr).round() as i64;
        let start = centre - (span / 2) as i64;
        for (k, s) in seg.iter_mut().enumerate() {
            let idx = start + k as i64;
            *s = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
        }
        for k in 0..span {
            prefix[k + 1] = prefix[k] + seg[k] * seg[k];
        }
        let e0 = prefix[window];
        if e0 <= 1e-10 * window as f64 {
            values.push(None);
            continue;
        }

        for (k, slot) in a.iter_mut().enumerate() {
            *slot = Complex::new(if k < span { seg[k] } else { 0.0 }, 0.0);
        }
        for (k, slot) in b.iter_mut().enumerate() {
            *slot = Complex::new(if k < window { seg[k] } else { 0.0 }, 0.0);
        }
        fwd.process(&mut a);
        fwd.process(&mut b);
        for (p, q) in a.iter_mut().zip(&b) {
            *p *= q.conj();
        }
        inv.process(&mut a);
        let scale = 1.0 / fft_len as f64;

        // cumulative-mean-normalized difference
        let mut running = 0.0;
        cmnd[0] = 1.0;
        for tau in 1..=tau_max + 1 {
            let r = a[tau].re * scale;
            let e_tau = prefix[tau + window] - prefix[tau];
            let d = (e0 + e_tau - 2.0 * r).max(0.0);
            running += d;
            cmnd[tau] = if running > 0.0 { d * tau as f64 / running } else { 1.0 };
        }

        let mut best = None;
        let mut tau = tau_min;
        while tau <= tau_max {
            if cmnd[tau] < params.voicing_threshold {
                while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                    tau += 1;
                }
                best = Some(tau);
                break;
            }
            tau += 1;
        }
        let value = best.and_then(|tau| {
            let (l, c, r) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
            let denom = l - 2.0 * c + r;
            let shift = if denom.abs() > 1e-12 { (0.5 * (l - r) / denom).clamp(-1.0, 1.0) } else { 0.0 };
            let f0 = sr / (tau as f64 + shift);
            (f0 >= params.f0_min && f0 <= params.f0_max).then_some(f0)
        });
        values.push(value);
    }

    Ok(F0Contour {
        values,
        hop: params.hop,
        start_time: 0.0,
        voicing_threshold: params.voicing_threshold,
        f0_min: params.f0_min,
        f0_max: params.f0_max,
    })
}
