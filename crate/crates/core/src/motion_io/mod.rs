//! BVH skeletons: data model, text format and forward kinematics.

mod bvh;
mod fk;

pub use bvh::{parse_bvh, write_bvh};
pub use fk::{forward_kinematics, local_rotation};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BvhError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown channel `{name}` at {line}:{column}")]
    UnknownChannel {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("header declares {declared} frames but {found} were supplied")]
    FrameCountMismatch { declared: usize, found: usize },
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("invalid skeleton: {0}")]
    Invalid(String),
}

/// One of the six BVH channel kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "Xposition" => Self::Xposition,
            "Yposition" => Self::Yposition,
            "Zposition" => Self::Zposition,
            "Xrotation" => Self::Xrotation,
            "Yrotation" => Self::Yrotation,
            "Zrotation" => Self::Zrotation,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Xposition => "Xposition",
            Self::Yposition => "Yposition",
            Self::Zposition => "Zposition",
            Self::Xrotation => "Xrotation",
            Self::Yrotation => "Yrotation",
            Self::Zrotation => "Zrotation",
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Self::Xrotation | Self::Yrotation | Self::Zrotation)
    }

    /// Axis index (0 = x, 1 = y, 2 = z).
    pub fn axis(self) -> usize {
        match self {
            Self::Xposition | Self::Xrotation => 0,
            Self::Yposition | Self::Yrotation => 1,
            Self::Zposition | Self::Zrotation => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointNode {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    /// Channels in declaration order. Rotation order matters for Euler composition.
    pub channels: Vec<Channel>,
    /// Offset of a terminal `End Site`, if the joint has one.
    pub end_site: Option<[f64; 3]>,
}

impl JointNode {
    pub fn new(name: impl Into<String>, parent: Option<usize>, offset: [f64; 3], channels: Vec<Channel>) -> Self {
        Self {
            name: name.into(),
            parent,
            offset,
            channels,
            end_site: None,
        }
    }

    pub fn with_end_site(mut self, offset: [f64; 3]) -> Self {
        self.end_site = Some(offset);
        self
    }

    pub fn has_rotation(&self) -> bool {
        self.channels.iter().any(|c| c.is_rotation())
    }
}

/// A parsed BVH clip. Channel values are stored as they appear in the file
/// (degrees for rotations); kinematic routines convert to radians on use.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonClip {
    joints: Vec<JointNode>,
    frame_time: f64,
    n_frames: usize,
    frames: Vec<f64>,
    channel_offsets: Vec<usize>,
    n_channels: usize,
}

impl SkeletonClip {
    /// Build a clip from its parts; `frames` is row-major `[n_frames × n_channels]`.
    pub fn new(joints: Vec<JointNode>, frame_time: f64, frames: Vec<f64>) -> Result<Self, BvhError> {
        if joints.is_empty() {
            return Err(BvhError::Invalid("no joints".into()));
        }
        if !(frame_time.is_finite() && frame_time > 0.0) {
            return Err(BvhError::Invalid(format!("frame time must be positive, got {frame_time}")));
        }
        let mut names = std::collections::HashSet::new();
        let mut channel_offsets = Vec::with_capacity(joints.len());
        let mut n_channels = 0;
        for (i, j) in joints.iter().enumerate() {
            if !names.insert(j.name.as_str()) {
                return Err(BvhError::Invalid(format!("duplicate joint name `{}`", j.name)));
            }
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(BvhError::Invalid("root joint cannot have a parent".into())),
                (_, None) => return Err(BvhError::Invalid(format!("joint `{}` has no parent", j.name))),
                (_, Some(p)) if p >= i => {
                    return Err(BvhError::Invalid(format!(
                        "joint `{}` must appear after its parent",
                        j.name
                    )))
                }
                _ => {}
            }
            if j.offset.iter().chain(j.end_site.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(BvhError::Invalid(format!("joint `{}` has a non-finite offset", j.name)));
            }
            channel_offsets.push(n_channels);
            n_channels += j.channels.len();
        }
        let n_frames = if n_channels == 0 {
            return Err(BvhError::Invalid("skeleton declares no channels".into()));
        } else {
            if frames.len() % n_channels != 0 {
                return Err(BvhError::Invalid(format!(
                    "{} values do not fill whole frames of {n_channels} channels",
                    frames.len()
                )));
            }
            frames.len() / n_channels
        };
        if n_frames == 0 {
            return Err(BvhError::Invalid("clip has no frames".into()));
        }
        Ok(Self {
            joints,
            frame_time,
            n_frames,
            frames,
            channel_offsets,
            n_channels,
        })
    }

    pub fn joints(&self) -> &[JointNode] {
        &self.joints
    }

    pub fn frame_time(&self) -> f64 {
        self.frame_time
    }

    pub fn frame_rate(&self) -> f64 {
        1.0 / self.frame_time
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i * self.n_channels..(i + 1) * self.n_channels]
    }

    pub fn joint_index(&self, name: &str) -> Result<usize, BvhError> {
        self.joints
            .iter()
            .position(|j| j.name == name)
            .ok_or_else(|| BvhError::UnknownJoint(name.to_string()))
    }

    /// Index of the first channel belonging to joint `j` within a frame row.
    pub fn channel_offset(&self, j: usize) -> usize {
        self.channel_offsets[j]
    }

    /// The channel values of joint `j` at frame `i`.
    pub fn joint_values(&self, i: usize, j: usize) -> &[f64] {
        let start = i * self.n_channels + self.channel_offsets[j];
        &self.frames[start..start + self.joints[j].channels.len()]
    }

    /// One channel column across all frames.
    pub fn column(&self, channel_index: usize) -> Vec<f64> {
        (0..self.n_frames)
            .map(|i| self.frames[i * self.n_channels + channel_index])
            .collect()
    }

    /// Replace a whole channel column. Length must equal the frame count.
    pub(crate) fn set_column(&mut self, channel_index: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.n_frames);
        for (i, v) in values.iter().enumerate() {
            self.frames[i * self.n_channels + channel_index] = *v;
        }
    }

    /// Chain of joint indices from the root down to `j` (inclusive).
    pub fn chain_to(&self, j: usize) -> Vec<usize> {
        let mut chain = vec![j];
        let mut cur = j;
        while let Some(p) = self.joints[cur].parent {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    pub fn children_of(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == Some(j))
            .map(|(i, _)| i)
    }
}
