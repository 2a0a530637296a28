//! Interpersonal coordination analysis for multimodal (motion + speech) recordings.
//!
//! The crate reads skeleton clips and speech audio, derives gesture and prosody
//! signals, applies controlled interventions, and measures coordination with
//! recurrence quantification, multiscale beat consistency and soft-DTW. A pipeline
//! module ties these together and fits mixed-effects models over the results.

pub mod audio_io;
pub mod beats;
pub mod interventions;
pub mod kinematics;
pub mod motion_io;
pub mod rqa;
pub mod series;
pub mod elastic;
pub mod stats;
pub mod synth;
pub mod config;
pub mod pipeline;
pub mod plot;
pub mod report;
