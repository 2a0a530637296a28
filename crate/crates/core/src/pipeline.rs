//! End-to-end experiment: load a scene, slice, intervene, compute metrics, fit
//! models and write the artifacts.
//!
//! Artifacts written into the output directory:
//! `metrics.csv`, `exclusions.csv`, `run-metadata.json`, `stats/lmem.json`,
//! `stats/lmem_<analysis>.{csv,json}`, `wilcoxon.json`, `plots/*.svg` and
//! (via [`crate::report`]) `report.md`.

use crate::audio_io::{amplitude_envelope, extract_f0, read_wav, write_wav, AudioTrack, F0Contour, SampleFormat};
use crate::beats::{consistency_from_onsets, scale_onsets, BeatError, OnsetSource, OnsetTrain};
use crate::config::{Config, ConfigError, MetricFamily, PairGroup};
use crate::elastic::{f0_distance, trajectory_distance, ElasticError};
use crate::interventions::{dampen_motion, delay_audio, flatten_pitch, InterventionKind};
use crate::kinematics::{gesture_speed, joint_angular_speed};
use crate::motion_io::{forward_kinematics, parse_bvh, write_bvh, SkeletonClip};
use crate::plot::error_bar_svg;
use crate::rqa::{crqa_pipeline, rqa_pipeline, RecurrenceResult, RqaError};
use crate::series::ChannelSeries;
use crate::stats::{StatsError, fit_lmem, interaction_name, Estimate, CONDITION, wilcoxon_signed_rank, zscore, Condition, LmemFit, LmemFormula, MetricRecord, WilcoxonResult};
use crate::synth::{generate_scene, Manifest, MANIFEST_FILE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("analysis degenerate: {0}")]
    Degenerate(String),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// Process exit code: 1 config, 2 data, 3 degenerate analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) | Self::MissingArtifact(_) | Self::Io { .. } => 2,
            Self::Degenerate(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Stream labels used in metric records.
pub const STREAM_GESTURE: &str = "gesture";
pub const STREAM_GESTURE_SPEECH: &str = "gesture-speech";
pub const STREAM_F0: &str = "f0";

pub const METRIC_RR: &str = "rr";
pub const METRIC_DET: &str = "det";
pub const METRIC_MEAN_LR: &str = "mean_lr";
pub const METRIC_SDTW: &str = "sdtw";
pub const METRIC_BC: &str = "beat_consistency";

#[derive(Debug, Clone, PartialEq)]
pub struct Person {
    pub id: String,
    pub clip: SkeletonClip,
    pub audio: AudioTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub session: String,
    pub persons: Vec<Person>,
}

/// Read a scene directory described by `manifest.json`.
pub fn read_scene_dir(dir: &Path) -> Result<SceneData, PipelineError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = read_file(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", manifest_path.display())))?;
    if manifest.persons.is_empty() {
        return Err(PipelineError::Data("manifest lists no persons".into()));
    }
    let persons = manifest
        .persons
        .iter()
        .map(|p| {
            let bvh_path = dir.join(&p.bvh);
            let text = String::from_utf8(read_file(&bvh_path)?)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", bvh_path.display())))?;
            let clip = parse_bvh(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", bvh_path.display())))?;
            let wav_path = dir.join(&p.wav);
            let audio = read_wav(&read_file(&wav_path)?)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", wav_path.display())))?;
            Ok(Person { id: p.id.clone(), clip, audio })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(SceneData { session: manifest.session, persons })
}

/// The configured scene directory, or an in-memory synthetic scene.
pub fn load_scene(cfg: &Config) -> Result<SceneData, PipelineError> {
    if let Some(dir) = &cfg.scene.dir {
        return read_scene_dir(dir);
    }
    let scene = generate_scene(&cfg.synth).map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?;
    Ok(SceneData {
        session: format!("synth-{}", cfg.synth.seed),
        persons: scene
            .persons
            .into_iter()
            .enumerate()
            .map(|(i, p)| Person {
                id: format!("person{i}"),
                clip: p.clip,
                audio: p.audio,
            })
            .collect(),
    })
}

/// A slice excluded from one metric, with a machine-readable reason code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub session: String,
    pub intervention: String,
    pub strength: f64,
    pub condition: Condition,
    pub slice: usize,
    pub scope: String,
    pub unit: String,
    pub joint: Option<String>,
    pub metric: String,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsOutput {
    pub records: Vec<MetricRecord>,
    pub exclusions: Vec<Exclusion>,
    pub n_slices: usize,
}

/// Identifies the condition being measured.
#[derive(Debug, Clone, Copy)]
struct Cond {
    condition: Condition,
    strength: f64,
}

struct Sink<'a> {
    session: &'a str,
    intervention: &'a str,
    cond: Cond,
    slice: usize,
    records: Vec<MetricRecord>,
    exclusions: Vec<Exclusion>,
}

impl Sink<'_> {
    fn record(&mut self, scope: &str, unit: &str, joint: Option<&str>, stream: &str, metric: &str, value: f64) {
        self.records.push(MetricRecord {
            session: self.session.to_string(),
            intervention: self.intervention.to_string(),
            strength: self.cond.strength,
            slice: self.slice,
            scope: scope.to_string(),
            unit: unit.to_string(),
            joint: joint.map(str::to_string),
            stream: stream.to_string(),
            condition: self.cond.condition,
            metric: metric.to_string(),
            value,
        });
    }

    fn exclude(&mut self, scope: &str, unit: &str, joint: Option<&str>, metric: &str, reason: &str, detail: String) {
        self.exclusions.push(Exclusion {
            session: self.session.to_string(),
            intervention: self.intervention.to_string(),
            strength: self.cond.strength,
            condition: self.cond.condition,
            slice: self.slice,
            scope: scope.to_string(),
            unit: unit.to_string(),
            joint: joint.map(str::to_string),
            metric: metric.to_string(),
            reason: reason.to_string(),
            detail,
        });
    }

    fn rqa(&mut self, scope: &str, unit: &str, joint: &str, res: Result<RecurrenceResult, RqaError>) {
        match res {
            Ok(r) => {
                self.record(scope, unit, Some(joint), STREAM_GESTURE, METRIC_RR, r.rr);
                self.record(scope, unit, Some(joint), STREAM_GESTURE, METRIC_DET, r.det);
                self.record(scope, unit, Some(joint), STREAM_GESTURE, METRIC_MEAN_LR, r.mean_lr);
            }
            Err(e) => {
                let reason = if matches!(e, RqaError::Unreachable { .. }) {
                    "rqa_calibration_unreachable"
                } else {
                    "rqa_failed"
                };
                self.exclude(scope, unit, Some(joint), "rqa", reason, e.to_string());
            }
        }
    }

    fn beats(&mut self, scope: &str, unit: &str, res: Result<f64, BeatError>) {
        match res {
            Ok(v) => self.record(scope, unit, None, STREAM_GESTURE_SPEECH, METRIC_BC, v),
            Err(e) => {
                let reason = match e {
                    BeatError::NoScalePair | BeatError::TooFewBeats { .. } => "too_few_beats",
                    _ => "emd_failed",
                };
                self.exclude(scope, unit, None, METRIC_BC, reason, e.to_string());
            }
        }
    }

    fn sdtw(&mut self, scope: &str, unit: &str, joint: Option<&str>, stream: &str, res: Result<f64, ElasticError>) {
        match res {
            Ok(v) => self.record(scope, unit, joint, stream, METRIC_SDTW, v),
            Err(e) => {
                let reason = if e == ElasticError::AllUnvoiced { "all_unvoiced" } else { "sdtw_failed" };
                self.exclude(scope, unit, joint, METRIC_SDTW, reason, e.to_string());
            }
        }
    }
}

/// Motion-derived signals of one person under one condition.
struct MotionFeatures {
    /// Per analysis joint, angular speed at the RQA rate.
    speed: Vec<ChannelSeries>,
    /// Per analysis joint, root-relative position at the Soft-DTW rate.
    position: Vec<ChannelSeries>,
    /// Gesture speed at the capture rate.
    gesture: ChannelSeries,
}

fn data_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn motion_features(clip: &SkeletonClip, cfg: &Config) -> Result<MotionFeatures, PipelineError> {
    let a = &cfg.analysis;
    let joints: Vec<&str> = a.joints.iter().map(String::as_str).collect();
    let wants = |f: MetricFamily| a.metrics.contains(&f);
    let mut speed = Vec::new();
    let mut position = Vec::new();
    if wants(MetricFamily::Rqa) {
        for j in &joints {
            speed.push(joint_angular_speed(clip, j).map_err(data_err)?.resample_to(a.rqa_rate));
        }
    }
    if wants(MetricFamily::Sdtw) {
        let root = forward_kinematics(clip, &clip.joints()[0].name).map_err(data_err)?;
        for j in &joints {
            let p = forward_kinematics(clip, j).map_err(data_err)?;
            let rel: Vec<f64> = p.data().iter().zip(root.data()).map(|(x, r)| x - r).collect();
            let rel = ChannelSeries::new(rel, 3, p.rate(), format!("{j}.position"), 0.0).map_err(data_err)?;
            position.push(rel.resample_to(a.sdtw_rate));
        }
    }
    let gesture = gesture_speed(clip, &joints, a.aggregate).map_err(data_err)?;
    Ok(MotionFeatures { speed, position, gesture })
}

fn slice_of(s: &ChannelSeries, k: usize, seconds: f64) -> ChannelSeries {
    let w = (seconds * s.rate()).round() as usize;
    s.window(k * w, (k + 1) * w)
}

fn slices_in(s: &ChannelSeries, seconds: f64) -> usize {
    let w = (seconds * s.rate()).round() as usize;
    if w == 0 {
        0
    } else {
        s.len() / w
    }
}

fn pair_unit(p: &str, q: &str) -> String {
    format!("{p}-{q}")
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Onset trains per person and slice; `Err` holds the failure message.
type Onsets = Vec<Vec<Result<Vec<OnsetTrain>, BeatError>>>;

fn onsets_for(signals: &[ChannelSeries], n_slices: usize, cfg: &Config, source: OnsetSource) -> Onsets {
    signals
        .par_iter()
        .map(|s| {
            (0..n_slices)
                .into_par_iter()
                .map(|k| scale_onsets(&slice_of(s, k, cfg.analysis.slice_seconds), source, &cfg.beats))
                .collect()
        })
        .collect()
}

fn beat_metrics(sink: &mut Sink, ids: &[String], gesture: &Onsets, speech: &Onsets, k: usize, cfg: &Config) {
    let n = ids.len();
    let score = |p: usize, q: usize| -> Result<f64, BeatError> {
        let g = gesture[p][k].as_ref().map_err(Clone::clone)?;
        let s = speech[q][k].as_ref().map_err(Clone::clone)?;
        consistency_from_onsets(g, s, &cfg.beats)
    };
    for p in 0..n {
        sink.beats("intra", &ids[p], score(p, p));
    }
    for p in 0..n {
        for q in 0..n {
            if p != q {
                sink.beats("inter", &pair_unit(&ids[p], &ids[q]), score(p, q));
            }
        }
    }
}

fn motion_metrics(sink: &mut Sink, ids: &[String], feats: &[MotionFeatures], k: usize, cfg: &Config) {
    let a = &cfg.analysis;
    let n = ids.len();
    let len = a.slice_seconds;
    if a.metrics.contains(&MetricFamily::Rqa) {
        for (ji, joint) in a.joints.iter().enumerate() {
            for p in 0..n {
                let x = slice_of(&feats[p].speed[ji], k, len);
                sink.rqa("intra", &ids[p], joint, rqa_pipeline(&x, &cfg.rqa));
            }
            for p in 0..n {
                for q in p + 1..n {
                    let x = slice_of(&feats[p].speed[ji], k, len);
                    let y = slice_of(&feats[q].speed[ji], k, len);
                    sink.rqa("inter", &pair_unit(&ids[p], &ids[q]), joint, crqa_pipeline(&x, &y, &cfg.rqa));
                }
            }
        }
    }
    if a.metrics.contains(&MetricFamily::Sdtw) {
        for (ji, joint) in a.joints.iter().enumerate() {
            for p in 0..n {
                for q in p + 1..n {
                    let x = slice_of(&feats[p].position[ji], k, len);
                    let y = slice_of(&feats[q].position[ji], k, len);
                    let d = trajectory_distance(&x, &y, &cfg.sdtw);
                    sink.sdtw("inter", &pair_unit(&ids[p], &ids[q]), Some(joint), STREAM_GESTURE, d);
                }
            }
        }
    }
}

fn envelopes(audio: &[&AudioTrack], rate: f64, cfg: &Config) -> Result<Vec<ChannelSeries>, PipelineError> {
    audio
        .par_iter()
        .map(|t| amplitude_envelope(t, rate, cfg.envelope).map_err(data_err))
        .collect()
}

fn contour_slice(c: &F0Contour, k: usize, seconds: f64) -> F0Contour {
    let w = (seconds / c.hop).round() as usize;
    c.window(k * w, (k + 1) * w)
}

/// Compute every metric record for the configured intervention sweep.
pub fn compute_metrics(cfg: &Config, scene: &SceneData) -> Result<MetricsOutput, PipelineError> {
    with_pool(cfg.jobs, || compute_metrics_inner(cfg, scene))
}

fn compute_metrics_inner(cfg: &Config, scene: &SceneData) -> Result<MetricsOutput, PipelineError> {
    let kind = cfg.intervention.kind;
    let strengths = cfg.intervention.resolved_strengths();
    let ids: Vec<String> = scene.persons.iter().map(|p| p.id.clone()).collect();
    let a = &cfg.analysis;
    let len = a.slice_seconds;
    let rate = scene.persons[0].clip.frame_rate();
    if scene.persons.iter().any(|p| (p.clip.frame_rate() - rate).abs() > 1e-9 * rate) {
        return Err(PipelineError::Data("persons differ in motion frame rate".into()));
    }
    let session = scene.session.as_str();
    let intervention = kind.as_str();
    let mut out = MetricsOutput::default();

    let finish = |sinks: Vec<Sink>, out: &mut MetricsOutput| {
        for s in sinks {
            out.records.extend(s.records);
            out.exclusions.extend(s.exclusions);
        }
    };
    let new_sink = |cond: Cond, slice: usize| Sink {
        session,
        intervention,
        cond,
        slice,
        records: Vec::new(),
        exclusions: Vec::new(),
    };
    let baseline = Cond { condition: Condition::Baseline, strength: 0.0 };
    let intervened = |s: f64| Cond { condition: Condition::Intervened, strength: s };

    match kind {
        InterventionKind::Dampen | InterventionKind::Delay => {
            let base_feats: Vec<MotionFeatures> = if kind == InterventionKind::Dampen {
                scene.persons.par_iter().map(|p| motion_features(&p.clip, cfg)).collect::<Result<_, _>>()?
            } else {
                let mut light = cfg.clone();
                light.analysis.metrics = vec![MetricFamily::Beats];
                scene.persons.par_iter().map(|p| motion_features(&p.clip, &light)).collect::<Result<_, _>>()?
            };
            let tracks: Vec<&AudioTrack> = scene.persons.iter().map(|p| &p.audio).collect();
            let base_env = envelopes(&tracks, rate, cfg)?;
            let mut n_slices = usize::MAX;
            for f in &base_feats {
                n_slices = n_slices.min(slices_in(&f.gesture, len));
                for s in f.speed.iter().chain(&f.position) {
                    n_slices = n_slices.min(slices_in(s, len));
                }
            }
            for e in &base_env {
                n_slices = n_slices.min(slices_in(e, len));
            }
            if let Some(m) = a.max_slices {
                n_slices = n_slices.min(m);
            }
            if n_slices == 0 {
                return Err(PipelineError::Data(format!("recordings are shorter than one {len} s slice")));
            }
            out.n_slices = n_slices;
            let with_beats = kind == InterventionKind::Delay || a.metrics.contains(&MetricFamily::Beats);
            let gestures: Vec<ChannelSeries> = base_feats.iter().map(|f| f.gesture.clone()).collect();
            let base_g = if with_beats { onsets_for(&gestures, n_slices, cfg, OnsetSource::Gesture) } else { Vec::new() };
            let base_s = if with_beats { onsets_for(&base_env, n_slices, cfg, OnsetSource::Speech) } else { Vec::new() };

            let run = |cond: Cond, feats: &[MotionFeatures], g: &Onsets, s: &Onsets, motion: bool| -> Vec<Sink> {
                (0..n_slices)
                    .into_par_iter()
                    .map(|k| {
                        let mut sink = new_sink(cond, k);
                        if motion {
                            motion_metrics(&mut sink, &ids, feats, k, cfg);
                        }
                        if with_beats {
                            beat_metrics(&mut sink, &ids, g, s, k, cfg);
                        }
                        sink
                    })
                    .collect()
            };
            let motion = kind == InterventionKind::Dampen;
            finish(run(baseline, &base_feats, &base_g, &base_s, motion), &mut out);

            for &strength in &strengths {
                let sinks = if kind == InterventionKind::Dampen {
                    let targets: Vec<&str> = cfg.dampen.target_joints.iter().map(String::as_str).collect();
                    let feats: Vec<MotionFeatures> = scene
                        .persons
                        .par_iter()
                        .map(|p| {
                            let clip = dampen_motion(&p.clip, strength, &targets, cfg.dampen.include_self).map_err(data_err)?;
                            motion_features(&clip, cfg)
                        })
                        .collect::<Result<_, _>>()?;
                    let g = if with_beats {
                        let gs: Vec<ChannelSeries> = feats.iter().map(|f| f.gesture.clone()).collect();
                        onsets_for(&gs, n_slices, cfg, OnsetSource::Gesture)
                    } else {
                        Vec::new()
                    };
                    run(intervened(strength), &feats, &g, &base_s, true)
                } else {
                    let delayed: Vec<AudioTrack> = scene
                        .persons
                        .par_iter()
                        .map(|p| delay_audio(&p.audio, strength).map_err(data_err))
                        .collect::<Result<_, _>>()?;
                    let refs: Vec<&AudioTrack> = delayed.iter().collect();
                    let env = envelopes(&refs, rate, cfg)?;
                    let s = onsets_for(&env, n_slices, cfg, OnsetSource::Speech);
                    run(intervened(strength), &base_feats, &base_g, &s, false)
                };
                finish(sinks, &mut out);
            }
        }
        InterventionKind::Pitch => {
            let contours: Vec<F0Contour> = scene
                .persons
                .par_iter()
                .map(|p| extract_f0(&p.audio, cfg.f0).map_err(data_err))
                .collect::<Result<_, _>>()?;
            let w = (len / cfg.f0.hop).round() as usize;
            let mut n_slices = contours.iter().map(|c| c.len() / w.max(1)).min().unwrap_or(0);
            if let Some(m) = a.max_slices {
                n_slices = n_slices.min(m);
            }
            if n_slices == 0 {
                return Err(PipelineError::Data(format!("recordings are shorter than one {len} s slice")));
            }
            out.n_slices = n_slices;
            let run = |cond: Cond, altered: &[Result<F0Contour, String>]| -> Vec<Sink> {
                (0..n_slices)
                    .into_par_iter()
                    .map(|k| {
                        let mut sink = new_sink(cond, k);
                        for (p, id) in ids.iter().enumerate() {
                            let reference = contour_slice(&contours[p], k, len);
                            match &altered[p] {
                                Ok(alt) => {
                                    let d = f0_distance(&reference, &contour_slice(alt, k, len), &cfg.sdtw);
                                    sink.sdtw("intra", id, None, STREAM_F0, d);
                                }
                                Err(msg) => sink.exclude("intra", id, None, METRIC_SDTW, "all_unvoiced", msg.clone()),
                            }
                        }
                        sink
                    })
                    .collect()
            };
            let same: Vec<Result<F0Contour, String>> = contours.iter().cloned().map(Ok).collect();
            finish(run(baseline, &same), &mut out);
            for &strength in &strengths {
                let flat: Vec<Result<F0Contour, String>> = contours
                    .iter()
                    .map(|c| flatten_pitch(c, strength, cfg.pitch.mode).map_err(|e| e.to_string()))
                    .collect();
                finish(run(intervened(strength), &flat), &mut out);
            }
        }
    }
    Ok(out)
}

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("record serializes");
    }
    if records.is_empty() {
        w.write_record(["session", "intervention", "strength", "slice", "scope", "unit", "joint", "stream", "condition", "metric", "value"])
            .expect("header");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8")
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRecord>, PipelineError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<MetricRecord>, _>>()
        .map_err(|e| PipelineError::Data(format!("metrics.csv: {e}")))
}

pub fn exclusions_csv(exclusions: &[Exclusion]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in exclusions {
        w.serialize(e).expect("exclusion serializes");
    }
    if exclusions.is_empty() {
        w.write_record([
            "session", "intervention", "strength", "condition", "slice", "scope", "unit", "joint", "metric", "reason", "detail",
        ])
        .expect("header");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8")
}

pub fn parse_exclusions_csv(text: &str) -> Result<Vec<Exclusion>, PipelineError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<Exclusion>, _>>()
        .map_err(|e| PipelineError::Data(format!("exclusions.csv: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub library: String,
    pub version: String,
    pub session: String,
    pub seed: u64,
    pub intervention: String,
    pub strengths: Vec<f64>,
    pub n_persons: usize,
    pub n_slices: usize,
    pub n_records: usize,
    pub n_exclusions: usize,
    /// Standardization convention applied before model fits.
    pub zscore: String,
    pub config: serde_json::Value,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const EXCLUSIONS_FILE: &str = "exclusions.csv";
pub const METADATA_FILE: &str = "run-metadata.json";
pub const LMEM_FILE: &str = "stats/lmem.json";
pub const WILCOXON_FILE: &str = "wilcoxon.json";

pub fn write_metrics(out_dir: &Path, cfg: &Config, scene: &SceneData, m: &MetricsOutput) -> Result<(), PipelineError> {
    write_file(&out_dir.join(METRICS_FILE), metrics_csv(&m.records))?;
    write_file(&out_dir.join(EXCLUSIONS_FILE), exclusions_csv(&m.exclusions))?;
    let meta = RunMetadata {
        library: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        session: scene.session.clone(),
        seed: cfg.seed,
        intervention: cfg.intervention.kind.as_str().to_string(),
        strengths: cfg.intervention.resolved_strengths(),
        n_persons: scene.persons.len(),
        n_slices: m.n_slices,
        n_records: m.records.len(),
        n_exclusions: m.exclusions.len(),
        zscore: if cfg.analysis.standardize {
            "population standard deviation over pooled baseline and intervened records per analysis".into()
        } else {
            "none".into()
        },
        config: serde_json::to_value(cfg).expect("config serializes"),
    };
    write_file(&out_dir.join(METADATA_FILE), serde_json::to_string_pretty(&meta).expect("metadata serializes"))
}

/// One mixed-model analysis: a metric/scope/stream at one intervention strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub id: String,
    pub intervention: String,
    pub strength: f64,
    pub metric: String,
    pub scope: String,
    pub stream: String,
    pub with_joint: bool,
    pub n_records: usize,
    pub standardized: bool,
    pub fit: Option<LmemFit>,
    /// Condition effect within each joint level (reference joint plus interaction).
    pub condition_by_joint: BTreeMap<String, Estimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonEntry {
    pub id: String,
    pub intervention: String,
    pub strength: f64,
    pub metric: String,
    pub scope: String,
    pub stream: String,
    /// Mean of intervened − baseline over matched slices.
    pub mean_diff: Option<f64>,
    pub result: Option<WilcoxonResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsOutput {
    pub analyses: Vec<Analysis>,
    pub wilcoxon: Vec<WilcoxonEntry>,
}

fn group_unit(r: &MetricRecord, pair_group: PairGroup) -> String {
    if r.scope == "inter" && pair_group == PairGroup::Pair {
        if let Some((a, b)) = r.unit.split_once('-') {
            return if a <= b { format!("{a}-{b}") } else { format!("{b}-{a}") };
        }
    }
    r.unit.clone()
}

type AnalysisKey = (String, String, String, String);

fn analysis_id(key: &AnalysisKey, strength: f64) -> String {
    format!("{}_{}_{}_{}_{}", key.0, strength, key.1, key.2, key.3)
}

/// Mixed models for every metric/scope/stream and strength, plus paired Wilcoxon
/// tests for pitch runs.
pub fn run_stats(cfg: &Config, records: &[MetricRecord]) -> StatsOutput {
    let mut keys: BTreeMap<AnalysisKey, BTreeSet<u64>> = BTreeMap::new();
    for r in records {
        let key = (r.intervention.clone(), r.metric.clone(), r.scope.clone(), r.stream.clone());
        let entry = keys.entry(key).or_default();
        if r.condition == Condition::Intervened {
            entry.insert(r.strength.to_bits());
        }
    }
    let mut out = StatsOutput::default();
    for (key, strength_bits) in &keys {
        let mut strengths: Vec<f64> = strength_bits.iter().map(|b| f64::from_bits(*b)).collect();
        strengths.sort_by(f64::total_cmp);
        let of_key = |r: &&MetricRecord| r.intervention == key.0 && r.metric == key.1 && r.scope == key.2 && r.stream == key.3;
        let base: Vec<&MetricRecord> = records.iter().filter(of_key).filter(|r| r.condition == Condition::Baseline).collect();
        for s in strengths {
            let int: Vec<&MetricRecord> = records
                .iter()
                .filter(of_key)
                .filter(|r| r.condition == Condition::Intervened && r.strength == s)
                .collect();
            let id = analysis_id(key, s);
            let pooled: Vec<&MetricRecord> = base.iter().chain(&int).copied().collect();
            out.analyses.push(fit_analysis(cfg, key, s, &id, &pooled));
            if key.0 == InterventionKind::Pitch.as_str() {
                out.wilcoxon.push(wilcoxon_entry(key, s, &id, &base, &int));
            }
        }
    }
    out
}

fn fit_analysis(cfg: &Config, key: &AnalysisKey, strength: f64, id: &str, pooled: &[&MetricRecord]) -> Analysis {
    let with_joint = pooled.iter().any(|r| r.joint.is_some());
    let mut analysis = Analysis {
        id: id.to_string(),
        intervention: key.0.clone(),
        strength,
        metric: key.1.clone(),
        scope: key.2.clone(),
        stream: key.3.clone(),
        with_joint,
        n_records: pooled.len(),
        standardized: false,
        fit: None,
        condition_by_joint: BTreeMap::new(),
        error: None,
    };
    let values: Vec<f64> = pooled.iter().map(|r| r.value).collect();
    let mut prepared: Vec<MetricRecord> = pooled
        .iter()
        .map(|r| MetricRecord {
            unit: group_unit(r, cfg.analysis.pair_group),
            ..(*r).clone()
        })
        .collect();
    if cfg.analysis.standardize {
        if let Ok(z) = zscore(&values) {
            for (r, v) in prepared.iter_mut().zip(z) {
                r.value = v;
            }
            analysis.standardized = true;
        }
    }
    let refs: Vec<&MetricRecord> = prepared.iter().collect();
    let formula = LmemFormula {
        with_joint,
        reference_joint: cfg.analysis.reference_joint.clone(),
    };
    let fitted = fit_lmem(&refs, &formula).and_then(|f| {
        let finite = f.coef.iter().chain(&f.se).chain(&f.p).all(|v| v.is_finite());
        if finite {
            Ok(f)
        } else {
            Err(StatsError::Invalid("non-finite estimates (no residual variation)".into()))
        }
    });
    match fitted {
        Ok(f) => {
            if with_joint {
                let joints: BTreeSet<&str> = pooled.iter().filter_map(|r| r.joint.as_deref()).collect();
                for j in joints {
                    let inter = interaction_name(j);
                    let weights: Vec<(&str, f64)> = if f.index_of(&inter).is_some() {
                        vec![(CONDITION, 1.0), (inter.as_str(), 1.0)]
                    } else {
                        vec![(CONDITION, 1.0)]
                    };
                    if let Some(e) = f.contrast(&weights).ok().filter(|e| e.p.is_finite()) {
                        analysis.condition_by_joint.insert(j.to_string(), e);
                    }
                }
            }
            analysis.fit = Some(f);
        }
        Err(e) => analysis.error = Some(e.to_string()),
    }
    analysis
}

fn wilcoxon_entry(key: &AnalysisKey, strength: f64, id: &str, base: &[&MetricRecord], int: &[&MetricRecord]) -> WilcoxonEntry {
    let index: BTreeMap<(usize, &str, Option<&str>), f64> = base
        .iter()
        .map(|r| ((r.slice, r.unit.as_str(), r.joint.as_deref()), r.value))
        .collect();
    let diffs: Vec<f64> = int
        .iter()
        .filter_map(|r| index.get(&(r.slice, r.unit.as_str(), r.joint.as_deref())).map(|b| r.value - b))
        .collect();
    let mean_diff = (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64);
    let (result, error) = match wilcoxon_signed_rank(&diffs) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    WilcoxonEntry {
        id: id.to_string(),
        intervention: key.0.clone(),
        strength,
        metric: key.1.clone(),
        scope: key.2.clone(),
        stream: key.3.clone(),
        mean_diff,
        result,
        error,
    }
}

/// Mean and 95% normal interval of raw values per condition level.
fn level_summary(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.959963984540054 * (var / n).sqrt())
}

pub fn write_stats(out_dir: &Path, records: &[MetricRecord], stats: &StatsOutput) -> Result<(), PipelineError> {
    for a in &stats.analyses {
        if let Some(fit) = &a.fit {
            write_file(&out_dir.join(format!("stats/lmem_{}.csv", a.id)), fit.to_csv())?;
            write_file(
                &out_dir.join(format!("stats/lmem_{}.json", a.id)),
                serde_json::to_string_pretty(a).expect("analysis serializes"),
            )?;
        }
    }
    write_file(&out_dir.join(LMEM_FILE), serde_json::to_string_pretty(&stats.analyses).expect("serializes"))?;
    write_file(&out_dir.join(WILCOXON_FILE), serde_json::to_string_pretty(&stats.wilcoxon).expect("serializes"))?;

    // error-bar plots: one per metric/scope/stream, levels baseline then strengths
    let mut groups: BTreeMap<AnalysisKey, BTreeMap<(u8, u64), Vec<f64>>> = BTreeMap::new();
    for r in records {
        let key = (r.intervention.clone(), r.metric.clone(), r.scope.clone(), r.stream.clone());
        let level = match r.condition {
            Condition::Baseline => (0, 0),
            Condition::Intervened => (1, r.strength.to_bits()),
        };
        groups.entry(key).or_default().entry(level).or_default().push(r.value);
    }
    for (key, levels) in groups {
        let mut items: Vec<(String, f64, f64)> = Vec::new();
        let mut sorted: Vec<((u8, u64), Vec<f64>)> = levels.into_iter().collect();
        sorted.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(f64::from_bits(a.0 .1).total_cmp(&f64::from_bits(b.0 .1))));
        for ((c, bits), values) in sorted {
            let label = if c == 0 { "baseline".to_string() } else { format!("{}", f64::from_bits(bits)) };
            let (m, ci) = level_summary(&values);
            items.push((label, m, ci));
        }
        let title = format!("{} {} ({}, {})", key.0, key.1, key.2, key.3);
        let svg = error_bar_svg(&title, &key.0, &key.1, &items);
        write_file(&out_dir.join(format!("plots/{}_{}_{}_{}.svg", key.0, key.1, key.2, key.3)), svg)?;
    }
    Ok(())
}

pub fn read_metrics(out_dir: &Path) -> Result<Vec<MetricRecord>, PipelineError> {
    let bytes = read_file(&out_dir.join(METRICS_FILE))?;
    parse_metrics_csv(&String::from_utf8_lossy(&bytes))
}

/// Fail with a degenerate-analysis error when no model could be fitted.
pub fn check_degenerate(stats: &StatsOutput) -> Result<(), PipelineError> {
    if stats.analyses.is_empty() {
        return Err(PipelineError::Degenerate("no analyses: every slice was excluded".into()));
    }
    if stats.analyses.iter().all(|a| a.fit.is_none()) {
        let first = stats.analyses[0].error.clone().unwrap_or_default();
        return Err(PipelineError::Degenerate(format!("no mixed model could be fitted ({first})")));
    }
    Ok(())
}

/// Load, measure and write `metrics.csv`, `exclusions.csv` and the run metadata.
pub fn metrics_stage(cfg: &Config, out_dir: &Path) -> Result<MetricsOutput, PipelineError> {
    let scene = load_scene(cfg)?;
    let m = compute_metrics(cfg, &scene)?;
    write_metrics(out_dir, cfg, &scene, &m)?;
    Ok(m)
}

/// Read `metrics.csv`, fit models, write tables, tests and plots.
pub fn stats_stage(cfg: &Config, out_dir: &Path) -> Result<StatsOutput, PipelineError> {
    let records = read_metrics(out_dir)?;
    let stats = with_pool(cfg.jobs, || run_stats(cfg, &records));
    write_stats(out_dir, &records, &stats)?;
    check_degenerate(&stats)?;
    Ok(stats)
}

/// All stages including the report.
pub fn run_pipeline(cfg: &Config, out_dir: &Path) -> Result<PathBuf, PipelineError> {
    metrics_stage(cfg, out_dir)?;
    stats_stage(cfg, out_dir)?;
    crate::report::emit_report(out_dir)
}

fn suffixed(file: &str, kind: InterventionKind, strength: f64, ext: &str) -> String {
    let stem = file.rsplit_once('.').map_or(file, |(s, _)| s);
    format!("{stem}.intervened.{kind}.{strength}.{ext}")
}

/// Apply one intervention to every person of a scene directory, writing the
/// altered files next to the originals. Returns the written paths.
pub fn intervene_scene_dir(dir: &Path, kind: InterventionKind, strength: f64, cfg: &Config) -> Result<Vec<PathBuf>, PipelineError> {
    let bytes = read_file(&dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(data_err)?;
    let scene = read_scene_dir(dir)?;
    let mut written = Vec::new();
    for (entry, person) in manifest.persons.iter().zip(&scene.persons) {
        let (name, bytes) = match kind {
            InterventionKind::Dampen => {
                let targets: Vec<&str> = cfg.dampen.target_joints.iter().map(String::as_str).collect();
                let clip = dampen_motion(&person.clip, strength, &targets, cfg.dampen.include_self).map_err(data_err)?;
                (suffixed(&entry.bvh, kind, strength, "bvh"), write_bvh(&clip).into_bytes())
            }
            InterventionKind::Delay => {
                let track = delay_audio(&person.audio, strength).map_err(data_err)?;
                (suffixed(&entry.wav, kind, strength, "wav"), write_wav(&track, SampleFormat::Pcm16).map_err(data_err)?)
            }
            InterventionKind::Pitch => {
                let contour = extract_f0(&person.audio, cfg.f0).map_err(data_err)?;
                let flat = flatten_pitch(&contour, strength, cfg.pitch.mode).map_err(data_err)?;
                (suffixed(&entry.wav, kind, strength, "csv"), flat.to_csv().into_bytes())
            }
        };
        let path = dir.join(name);
        write_file(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}
