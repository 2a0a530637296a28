//! Gesture signals derived from skeleton clips.

use crate::motion_io::{local_rotation, BvhError, SkeletonClip};
use crate::series::ChannelSeries;
use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joints summed into the gesture-speed signal unless overridden.
pub const DEFAULT_GESTURE_JOINTS: [&str; 4] = ["LeftArm", "LeftHand", "RightArm", "RightHand"];

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error(transparent)]
    Bvh(#[from] BvhError),
    #[error("joint `{0}` has no rotation channels")]
    NoRotation(String),
    #[error("no joints given")]
    NoJoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceSpec {
    /// Window length in seconds.
    pub length: f64,
}

impl Default for SliceSpec {
    fn default() -> Self {
        Self { length: 30.0 }
    }
}

/// Per-frame local rotations of one joint as unit quaternions.
pub fn joint_quaternions(clip: &SkeletonClip, joint: &str) -> Result<Vec<UnitQuaternion<f64>>, KinematicsError> {
    let j = clip.joint_index(joint)?;
    let node = &clip.joints()[j];
    if !node.has_rotation() {
        return Err(KinematicsError::NoRotation(joint.to_string()));
    }
    Ok((0..clip.n_frames())
        .map(|i| UnitQuaternion::from_rotation_matrix(&local_rotation(&node.channels, clip.joint_values(i, j))))
        .collect())
}

/// Geodesic angle between two unit quaternions, `2·acos|⟨p, q⟩|`, evaluated in the
/// numerically stable atan2 form.
fn geodesic(p: &UnitQuaternion<f64>, q: &UnitQuaternion<f64>) -> f64 {
    let d = p.inverse() * q;
    let w = d.w.abs();
    let v = d.imag().norm();
    2.0 * v.atan2(w)
}

/// Angular speed (rad/s) of a joint's local rotation. The first frame repeats the
/// second so the output has one value per clip frame.
pub fn joint_angular_speed(clip: &SkeletonClip, joint: &str) -> Result<ChannelSeries, KinematicsError> {
    let quats = joint_quaternions(clip, joint)?;
    let rate = clip.frame_rate();
    let mut speed = Vec::with_capacity(quats.len());
    speed.push(0.0);
    for w in quats.windows(2) {
        speed.push(geodesic(&w[0], &w[1]) * rate);
    }
    if speed.len() > 1 {
        speed[0] = speed[1];
    }
    Ok(ChannelSeries::new(speed, 1, rate, format!("{joint}.angular_speed"), 0.0)
        .expect("angular speed of a valid clip is finite"))
}

/// Element-wise aggregate of the angular speeds of `joints`.
pub fn gesture_speed(clip: &SkeletonClip, joints: &[&str], aggregate: Aggregate) -> Result<ChannelSeries, KinematicsError> {
    if joints.is_empty() {
        return Err(KinematicsError::NoJoints);
    }
    let mut total = vec![0.0; clip.n_frames()];
    for joint in joints {
        let s = joint_angular_speed(clip, joint)?;
        for (t, v) in total.iter_mut().zip(s.data()) {
            *t += v;
        }
    }
    if aggregate == Aggregate::Mean {
        let k = joints.len() as f64;
        total.iter_mut().for_each(|t| *t /= k);
    }
    Ok(ChannelSeries::new(total, 1, clip.frame_rate(), "gesture_speed", 0.0)
        .expect("sum of finite speeds is finite"))
}

/// Number of samples in one slice for a series sampled at `rate`.
pub fn slice_samples(spec: SliceSpec, rate: f64) -> usize {
    (spec.length * rate).round() as usize
}

/// Consecutive, non-overlapping windows of `spec.length` seconds. A trailing partial
/// window is dropped.
pub fn slice_series(series: &ChannelSeries, spec: SliceSpec) -> Vec<ChannelSeries> {
    let width = slice_samples(spec, series.rate());
    if width == 0 {
        return Vec::new();
    }
    (0..series.len() / width)
        .map(|k| series.window(k * width, (k + 1) * width))
        .collect()
}
