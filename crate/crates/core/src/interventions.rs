//! Controlled perturbations: kinematic dampening, uniform speech delay and pitch
//! flattening.

use crate::audio_io::{AudioTrack, F0Contour};
use crate::motion_io::{BvhError, SkeletonClip};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InterventionError {
    #[error(transparent)]
    Bvh(#[from] BvhError),
    #[error("dampening sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("delay must be non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("pitch limit must be positive, got {0}")]
    BadLimit(f64),
    #[error("joint `{0}` has no parent with rotation channels")]
    NoRotatingParent(String),
    #[error("contour has no voiced frames")]
    AllUnvoiced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum InterventionKind {
    Dampen,
    Delay,
    Pitch,
}

impl InterventionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dampen => "dampen",
            Self::Delay => "delay",
            Self::Pitch => "pitch",
        }
    }
}

impl std::fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InterventionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dampen" => Ok(Self::Dampen),
            "delay" => Ok(Self::Delay),
            "pitch" => Ok(Self::Pitch),
            other => Err(format!("unknown intervention kind `{other}` (expected dampen, delay or pitch)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PitchMode {
    /// Hard clamp of voiced values into `[μ − limit, μ + limit]`.
    #[default]
    Clamp,
    /// Linear shrink towards μ so the largest excursion equals `limit`.
    Scale,
}

/// Strength levels swept for each intervention kind.
pub const DAMPEN_LEVELS: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];
pub const DELAY_LEVELS: [f64; 5] = [0.15, 0.25, 0.50, 0.75, 1.40];
pub const PITCH_LEVELS: [f64; 5] = [40.0, 80.0, 100.0, 120.0, 140.0];

/// Normalized Gaussian kernel with standard deviation `sigma` samples, truncated at ±4σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Fold an out-of-range index back into `[0, n)` with half-sample symmetric reflection
/// (`d c b a | a b c d | d c b a`).
fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Gaussian smoothing with reflect padding.
pub fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let n = x.len();
    (0..n as i64)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * x[reflect_index(i + k as i64 - radius, n)])
                .sum()
        })
        .collect()
}

/// Low-pass the rotation channels one level up the kinematic chain from each target
/// joint (its parent) and, when `include_self`, the target's own rotation channels.
/// All other channels are copied unchanged.
pub fn dampen_motion(
    clip: &SkeletonClip,
    sigma: f64,
    target_joints: &[&str],
    include_self: bool,
) -> Result<SkeletonClip, InterventionError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(InterventionError::BadSigma(sigma));
    }
    let mut smoothed_joints = BTreeSet::new();
    for name in target_joints {
        let j = clip.joint_index(name)?;
        let parent = clip.joints()[j]
            .parent
            .filter(|&p| clip.joints()[p].has_rotation())
            .ok_or_else(|| InterventionError::NoRotatingParent(name.to_string()))?;
        smoothed_joints.insert(parent);
        if include_self {
            smoothed_joints.insert(j);
        }
    }
    let mut out = clip.clone();
    for j in smoothed_joints {
        let base = clip.channel_offset(j);
        for (c, ch) in clip.joints()[j].channels.iter().enumerate() {
            if ch.is_rotation() {
                let col = clip.column(base + c);
                out.set_column(base + c, &gaussian_smooth(&col, sigma));
            }
        }
    }
    Ok(out)
}

/// Prepend `round(delay × rate)` zero samples.
pub fn delay_audio(track: &AudioTrack, delay: f64) -> Result<AudioTrack, InterventionError> {
    if !(delay.is_finite() && delay >= 0.0) {
        return Err(InterventionError::NegativeDelay(delay));
    }
    let pad = (delay * track.sample_rate()).round() as usize;
    let mut samples = vec![0.0; pad];
    samples.extend_from_slice(track.samples());
    Ok(AudioTrack::from_parts_unchecked(samples, track.sample_rate()))
}

/// Restrict voiced F0 values to within `limit` Hz of their mean; unvoiced frames stay
/// in place.
pub fn flatten_pitch(contour: &F0Contour, limit: f64, mode: PitchMode) -> Result<F0Contour, InterventionError> {
    if !(limit.is_finite() && limit > 0.0) {
        return Err(InterventionError::BadLimit(limit));
    }
    let voiced = contour.voiced_count();
    if voiced == 0 {
        return Err(InterventionError::AllUnvoiced);
    }
    let mean = contour.voiced().sum::<f64>() / voiced as f64;
    let map: Box<dyn Fn(f64) -> f64> = match mode {
        PitchMode::Clamp => Box::new(move |v: f64| v.clamp(mean - limit, mean + limit)),
        PitchMode::Scale => {
            let spread = contour.voiced().map(|v| (v - mean).abs()).fold(0.0, f64::max);
            let gain = if spread > limit { limit / spread } else { 1.0 };
            Box::new(move |v: f64| mean + (v - mean) * gain)
        }
    };
    Ok(F0Contour {
        values: contour.values.iter().map(|v| v.map(&map)).collect(),
        ..contour.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_io::{Channel, JointNode};
    use Channel::*;

    fn contour(values: Vec<Option<f64>>) -> F0Contour {
        F0Contour {
            values,
            hop: 0.01,
            start_time: 0.0,
            voicing_threshold: 0.3,
            f0_min: 65.0,
            f0_max: 400.0,
        }
    }

    fn chain_clip(columns: impl Fn(usize) -> [f64; 6], n: usize) -> SkeletonClip {
        let joints = vec![
            JointNode::new("root", None, [0.0; 3], vec![Xposition, Yposition, Zposition]),
            JointNode::new("ForeArm", Some(0), [0.0, 1.0, 0.0], vec![Zrotation, Xrotation, Yrotation]),
            JointNode::new("Hand", Some(1), [0.0, 1.0, 0.0], vec![Zrotation, Xrotation, Yrotation]),
        ];
        let frames = (0..n)
            .flat_map(|i| {
                let c = columns(i);
                [i as f64, 0.5, -0.5, c[0], c[1], c[2], c[3], c[4], c[5]]
            })
            .collect();
        SkeletonClip::new(joints, 0.01, frames).unwrap()
    }

    #[test]
    fn kernel_is_normalized_and_truncated() {
        let k = gaussian_kernel(10.0);
        assert_eq!(k.len(), 81);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[40], k.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn constant_channels_unchanged() {
        let clip = chain_clip(|_| [5.0, -3.0, 1.0, 7.0, 7.0, 7.0], 50);
        let out = dampen_motion(&clip, 10.0, &["Hand"], true).unwrap();
        for (a, b) in clip.frames().iter().zip(out.frames()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_interior_preserved() {
        let clip = chain_clip(|i| [i as f64, 0.0, 0.0, 0.0, 0.0, 0.0], 200);
        let out = dampen_motion(&clip, 5.0, &["Hand"], false).unwrap();
        let col = out.column(3);
        for (i, v) in col.iter().enumerate().take(180).skip(20) {
            assert!((v - i as f64).abs() < 1e-9, "{i} {v}");
        }
        // Hand untouched without include_self, positions always untouched.
        assert_eq!(out.column(6), clip.column(6));
        assert_eq!(out.column(0), clip.column(0));
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let clip = chain_clip(|i| [if i == 100 { 1.0 } else { 0.0 }, 0.0, 0.0, 0.0, 0.0, 0.0], 201);
        let out = dampen_motion(&clip, 10.0, &["Hand"], true).unwrap();
        let col = out.column(3);
        // direct convolution oracle
        let oracle: Vec<f64> = (0..201)
            .map(|i| {
                let d = i as f64 - 100.0;
                if d.abs() <= 40.0 {
                    (-d * d / 200.0).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let norm: f64 = oracle.iter().sum();
        for (a, b) in col.iter().zip(&oracle) {
            assert!((a - b / norm).abs() < 1e-12);
        }
        assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dampen_errors() {
        let clip = chain_clip(|_| [0.0; 6], 10);
        assert_eq!(dampen_motion(&clip, 0.0, &["Hand"], true).unwrap_err(), InterventionError::BadSigma(0.0));
        assert_eq!(
            dampen_motion(&clip, 2.0, &["ForeArm"], true).unwrap_err(),
            InterventionError::NoRotatingParent("ForeArm".into())
        );
        assert!(matches!(dampen_motion(&clip, 2.0, &["Foot"], true), Err(InterventionError::Bvh(_))));
    }

    #[test]
    fn delay_prepends_zeros() {
        let track = AudioTrack::new(vec![0.25; 16000], 16000.0).unwrap();
        let d = delay_audio(&track, 0.5).unwrap();
        assert_eq!(d.len(), 24000);
        assert!(d.samples()[..8000].iter().all(|&s| s == 0.0));
        assert_eq!(&d.samples()[8000..], track.samples());
        assert_eq!(delay_audio(&track, 0.0).unwrap(), track);
        assert_eq!(delay_audio(&track, -0.1).unwrap_err(), InterventionError::NegativeDelay(-0.1));
    }

    #[test]
    fn clamp_arithmetic() {
        let c = contour(vec![Some(100.0), Some(200.0), Some(300.0)]);
        let f = flatten_pitch(&c, 40.0, PitchMode::Clamp).unwrap();
        assert_eq!(f.values, vec![Some(160.0), Some(200.0), Some(240.0)]);
        let narrow = contour(vec![Some(190.0), Some(200.0), Some(210.0)]);
        assert_eq!(flatten_pitch(&narrow, 40.0, PitchMode::Clamp).unwrap(), narrow);
    }

    #[test]
    fn unvoiced_frames_kept_in_place() {
        let c = contour(vec![None, Some(120.0), None, Some(180.0), Some(240.0), None]);
        // μ = (120 + 180 + 240) / 3 = 180
        let f = flatten_pitch(&c, 30.0, PitchMode::Clamp).unwrap();
        assert_eq!(f.values, vec![None, Some(150.0), None, Some(180.0), Some(210.0), None]);
        let s = flatten_pitch(&c, 30.0, PitchMode::Scale).unwrap();
        assert_eq!(s.values, vec![None, Some(150.0), None, Some(180.0), Some(210.0), None]);
        assert_eq!(
            flatten_pitch(&contour(vec![None, None]), 10.0, PitchMode::Clamp).unwrap_err(),
            InterventionError::AllUnvoiced
        );
    }
}
