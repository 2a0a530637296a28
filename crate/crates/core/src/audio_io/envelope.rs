use super::{AudioError, AudioTrack};
use crate::series::ChannelSeries;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeParams {
    pub cutoff_hz: f64,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        Self { cutoff_hz: 5.0 }
    }
}

/// Second-order Butterworth low-pass section (bilinear transform, prewarped).
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, rate: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff / rate).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
        }
    }

    /// Direct form II transposed, started from the steady state of `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut z2 = (b2 - a2) * x0;
        let mut z1 = (b1 - a1) * x0 + z2;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Zero-phase filtering with odd-reflection padding at both ends.
fn filtfilt(filter: &Biquad, x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    buf.extend_from_slice(x);
    buf.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    filter.run(&mut buf);
    buf.reverse();
    filter.run(&mut buf);
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

/// Smoothed amplitude envelope: full-wave rectification, zero-phase low-pass at
/// `params.cutoff_hz`, then point decimation to `target_rate`.
pub fn amplitude_envelope(
    track: &AudioTrack,
    target_rate: f64,
    params: EnvelopeParams,
) -> Result<ChannelSeries, AudioError> {
    if track.is_empty() {
        return Err(AudioError::Empty);
    }
    let rate = track.sample_rate();
    if !(target_rate > 0.0 && target_rate <= rate) {
        return Err(AudioError::InvalidParam(format!(
            "target rate {target_rate} must be in (0, {rate}]"
        )));
    }
    if !(params.cutoff_hz > 0.0 && params.cutoff_hz < rate / 2.0) {
        return Err(AudioError::InvalidParam(format!(
            "cutoff {} Hz must lie below Nyquist",
            params.cutoff_hz
        )));
    }
    let rectified: Vec<f64> = track.samples().iter().map(|s| s.abs()).collect();
    let filter = Biquad::lowpass(params.cutoff_hz, rate);
    let pad = (3.0 * rate / params.cutoff_hz).ceil() as usize;
    let smooth = filtfilt(&filter, &rectified, pad);

    let n = smooth.len();
    let out_len = (n as f64 * target_rate / rate).ceil() as usize;
    let step = rate / target_rate;
    let data: Vec<f64> = (0..out_len)
        .map(|k| {
            let idx = ((k as f64 * step).round() as usize).min(n - 1);
            smooth[idx].max(0.0)
        })
        .collect();
    ChannelSeries::new(data, 1, target_rate, "envelope", 0.0).map_err(|e| AudioError::InvalidParam(e.to_string()))
}
