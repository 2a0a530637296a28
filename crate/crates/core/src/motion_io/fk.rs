use super::{BvhError, Channel, SkeletonClip};
use crate::series::ChannelSeries;
use nalgebra::{Rotation3, Vector3};

fn axis(c: Channel) -> Vector3<f64> {
    match c.axis() {
        0 => Vector3::x(),
        1 => Vector3::y(),
        _ => Vector3::z(),
    }
}

/// Local rotation of a joint from its channel values (degrees), composed as
/// intrinsic rotations in the declared channel order.
pub fn local_rotation(channels: &[Channel], values: &[f64]) -> Rotation3<f64> {
    channels
        .iter()
        .zip(values)
        .filter(|(c, _)| c.is_rotation())
        .fold(Rotation3::identity(), |acc, (c, deg)| {
            acc * Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis(*c)), deg.to_radians())
        })
}

fn local_translation(offset: &[f64; 3], channels: &[Channel], values: &[f64]) -> Vector3<f64> {
    let mut t = Vector3::new(offset[0], offset[1], offset[2]);
    for (c, v) in channels.iter().zip(values) {
        if !c.is_rotation() {
            t[c.axis()] += v;
        }
    }
    t
}

/// World-space position of `joint` at every frame (right-handed frame).
pub fn forward_kinematics(clip: &SkeletonClip, joint: &str) -> Result<ChannelSeries, BvhError> {
    let target = clip.joint_index(joint)?;
    let chain = clip.chain_to(target);
    let mut data = Vec::with_capacity(clip.n_frames() * 3);
    for i in 0..clip.n_frames() {
        let mut rot = Rotation3::identity();
        let mut pos = Vector3::zeros();
        for &j in &chain {
            let node = &clip.joints()[j];
            let values = clip.joint_values(i, j);
            pos += rot * local_translation(&node.offset, &node.channels, values);
            rot *= local_rotation(&node.channels, values);
        }
        data.extend_from_slice(pos.as_slice());
    }
    ChannelSeries::new(data, 3, clip.frame_rate(), format!("{joint}.position"), 0.0)
        .map_err(|e| BvhError::Invalid(e.to_string()))
}
