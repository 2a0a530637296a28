//! Run configuration: a single TOML file, every key validated.

use crate::audio_io::{EnvelopeParams, F0Params};
use crate::beats::BeatConsistencyParams;
use crate::elastic::SdtwParams;
use crate::interventions::{InterventionKind, PitchMode, DAMPEN_LEVELS, DELAY_LEVELS, PITCH_LEVELS};
use crate::kinematics::{Aggregate, DEFAULT_GESTURE_JOINTS};
use crate::rqa::RqaConfig;
use crate::synth::SceneSpec;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    /// Schema violation; `path` is the dotted key path.
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("config error: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricFamily {
    #[default]
    Rqa,
    Sdtw,
    Beats,
}

/// Grouping unit of the random intercept for person-pair metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairGroup {
    /// Unordered pair: `a-b` and `b-a` share an intercept.
    #[default]
    Pair,
    /// Ordered pair.
    Ordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    /// Existing scene directory with a manifest; when absent a scene is synthesized
    /// from `[synth]`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSection {
    pub kind: InterventionKind,
    /// Defaults to the standard sweep of the chosen kind.
    #[serde(default)]
    pub strengths: Option<Vec<f64>>,
}

impl Default for InterventionSection {
    fn default() -> Self {
        Self {
            kind: InterventionKind::Dampen,
            strengths: None,
        }
    }
}

impl InterventionSection {
    pub fn resolved_strengths(&self) -> Vec<f64> {
        self.strengths.clone().unwrap_or_else(|| match self.kind {
            InterventionKind::Dampen => DAMPEN_LEVELS.to_vec(),
            InterventionKind::Delay => DELAY_LEVELS.to_vec(),
            InterventionKind::Pitch => PITCH_LEVELS.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampenSection {
    pub target_joints: Vec<String>,
    pub include_self: bool,
}

impl Default for DampenSection {
    fn default() -> Self {
        Self {
            target_joints: vec!["LeftHand".into(), "RightHand".into()],
            include_self: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PitchSection {
    pub mode: PitchMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub slice_seconds: f64,
    /// Optional cap on the number of slices analysed.
    pub max_slices: Option<usize>,
    /// Joints of the gesture-speed signal and of the per-joint metrics.
    pub joints: Vec<String>,
    pub aggregate: Aggregate,
    /// Reference level of the joint factor in mixed models.
    pub reference_joint: String,
    /// Metric families computed for dampening runs.
    pub metrics: Vec<MetricFamily>,
    /// Sample rate of the angular-speed series fed to RQA (block-mean downsampled).
    pub rqa_rate: f64,
    /// Sample rate of gesture trajectories fed to Soft-DTW.
    pub sdtw_rate: f64,
    pub pair_group: PairGroup,
    /// Z-score each analysis' outcome over its pooled records before fitting.
    pub standardize: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            slice_seconds: 30.0,
            max_slices: None,
            joints: DEFAULT_GESTURE_JOINTS.iter().map(|s| s.to_string()).collect(),
            aggregate: Aggregate::Sum,
            reference_joint: "RightHand".into(),
            metrics: vec![MetricFamily::Rqa, MetricFamily::Sdtw, MetricFamily::Beats],
            rqa_rate: 25.0,
            sdtw_rate: 10.0,
            pair_group: PairGroup::Pair,
            standardize: true,
        }
    }
}

fn default_jobs() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Master seed; overrides `synth.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub synth: SceneSpec,
    #[serde(default)]
    pub intervention: InterventionSection,
    #[serde(default)]
    pub dampen: DampenSection,
    #[serde(default)]
    pub pitch: PitchSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub envelope: EnvelopeParams,
    #[serde(default)]
    pub f0: F0Params,
    #[serde(default)]
    pub rqa: RqaConfig,
    #[serde(default)]
    pub beats: BeatConsistencyParams,
    #[serde(default)]
    pub sdtw: SdtwParams,
}

impl Default for Config {
    fn default() -> Self {
        toml::from_str("").expect("empty config resolves to defaults")
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| ConfigError::Schema {
            path: String::from("."),
            message: e.message().to_string(),
        })?;
        let mut cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Schema {
                path,
                message: e.into_inner().message().to_string(),
            }
        })?;
        cfg.synth.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // a relative scene directory is taken relative to the config file
        if let (Some(dir), Some(base)) = (&cfg.scene.dir, path.parent()) {
            if dir.is_relative() {
                cfg.scene.dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |path: &str, message: String| {
            Err(ConfigError::Schema {
                path: path.to_string(),
                message,
            })
        };
        if self.jobs == 0 {
            return bad("jobs", "must be at least 1".into());
        }
        for (i, s) in self.intervention.resolved_strengths().iter().enumerate() {
            let ok = match self.intervention.kind {
                InterventionKind::Delay => *s >= 0.0 && s.is_finite(),
                _ => *s > 0.0 && s.is_finite(),
            };
            if !ok {
                return bad(&format!("intervention.strengths[{i}]"), format!("invalid strength {s}"));
            }
        }
        if self.intervention.resolved_strengths().is_empty() {
            return bad("intervention.strengths", "must not be empty".into());
        }
        let a = &self.analysis;
        if !(a.slice_seconds > 0.0) {
            return bad("analysis.slice_seconds", "must be positive".into());
        }
        if a.joints.is_empty() {
            return bad("analysis.joints", "must name at least one joint".into());
        }
        if !(a.rqa_rate > 0.0 && a.sdtw_rate > 0.0) {
            return bad("analysis", "rqa_rate and sdtw_rate must be positive".into());
        }
        if self.dampen.target_joints.is_empty() {
            return bad("dampen.target_joints", "must name at least one joint".into());
        }
        if !(self.sdtw.gamma >= 0.0) {
            return bad("sdtw.gamma", "must be non-negative".into());
        }
        if !(self.beats.sigma_bc > 0.0) {
            return bad("beats.sigma_bc", "must be positive".into());
        }
        if !(self.beats.max_ratio >= 1.0) {
            return bad("beats.max_ratio", "must be at least 1".into());
        }
        if !(self.rqa.target_rr > 0.0 && self.rqa.target_rr <= 1.0) {
            return bad("rqa.target_rr", "must lie in (0, 1]".into());
        }
        if self.scene.dir.is_none() {
            self.synth
                .validate()
                .map_err(|e| ConfigError::Schema { path: "synth".into(), message: e.to_string() })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c.intervention.resolved_strengths(), DAMPEN_LEVELS.to_vec());
        assert_eq!(c.analysis.reference_joint, "RightHand");
        assert_eq!(c.sdtw.gamma, 0.1);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::from_toml("[analysis]\nslice_secs = 10\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("slice_secs"), "{msg}");
        assert!(msg.contains("analysis"), "{msg}");
    }

    #[test]
    fn wrong_type_reports_path() {
        let err = Config::from_toml("[rqa]\ndim = \"three\"\n").unwrap_err();
        assert!(err.to_string().contains("rqa.dim"), "{err}");
    }

    #[test]
    fn seed_flows_into_synth() {
        let c = Config::from_toml("seed = 42\n[intervention]\nkind = \"delay\"\nstrengths = [0.25]\n").unwrap();
        assert_eq!(c.synth.seed, 42);
        assert_eq!(c.intervention.kind, InterventionKind::Delay);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config::from_toml("seed = 3\n[beats.emd]\nmax_imfs = 5\n").unwrap();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }
}
