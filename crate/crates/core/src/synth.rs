//! Deterministic synthetic multiparty scenes.
//!
//! Every person has a Hips root and two three-joint arm chains. Persons are
//! entrained: beat and sway phases share one frequency and a scene-wide wander, and
//! `coupling` bounds each person's individual lag and wander. Below a critical
//! coupling the lock breaks and each person drifts toward a natural frequency of
//! their own. Gesture strokes fall
//! on the beats; the same beats (jittered, some dropped) drive loudness bursts in
//! that person's voiced speech track, whose pitch follows a slow contour.

use crate::audio_io::{write_wav, AudioError, AudioTrack, SampleFormat};
use crate::motion_io::{write_bvh, BvhError, Channel, JointNode, SkeletonClip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Bvh(#[from] BvhError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub n_persons: usize,
    /// Seconds.
    pub duration: f64,
    pub mocap_rate: f64,
    pub audio_rate: f64,
    /// 0 = independent rhythms, 1 = one shared rhythm.
    pub coupling: f64,
    /// Mean gesture beat rate in Hz.
    pub beat_rate: f64,
    /// Scales motion noise and speech-onset jitter; 0 disables both.
    pub noise: f64,
    /// Standard deviation of the speech-onset jitter in seconds (before `noise`).
    pub jitter: f64,
    /// Probability that a gesture beat is accompanied by a speech burst.
    pub speech_prob: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_persons: 5,
            duration: 600.0,
            mocap_rate: 100.0,
            audio_rate: 16000.0,
            coupling: 0.7,
            beat_rate: 1.0,
            noise: 1.0,
            jitter: 0.04,
            speech_prob: 0.8,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_persons == 0 {
            return bad("n_persons must be at least 1".into());
        }
        if !(self.duration >= 60.0) {
            return bad(format!("duration must be at least 60 s, got {}", self.duration));
        }
        if !(self.mocap_rate > 0.0 && self.audio_rate > 0.0) {
            return bad("rates must be positive".into());
        }
        if self.audio_rate < 2000.0 {
            return bad(format!("audio_rate must be at least 2000 Hz, got {}", self.audio_rate));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad(format!("coupling must lie in [0, 1], got {}", self.coupling));
        }
        if !(self.beat_rate > 0.0 && self.beat_rate <= 4.0) {
            return bad(format!("beat_rate must lie in (0, 4] Hz, got {}", self.beat_rate));
        }
        if !(self.noise >= 0.0 && self.jitter >= 0.0) {
            return bad("noise and jitter must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.speech_prob) {
            return bad(format!("speech_prob must lie in [0, 1], got {}", self.speech_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonRecording {
    pub clip: SkeletonClip,
    pub audio: AudioTrack,
    /// Gesture beat times in seconds.
    pub beats: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub persons: Vec<PersonRecording>,
}

pub const ARM_JOINTS: [&str; 6] = ["LeftArm", "LeftForeArm", "LeftHand", "RightArm", "RightForeArm", "RightHand"];

fn rot() -> Vec<Channel> {
    vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation]
}

/// Hips plus two Arm → ForeArm → Hand chains.
pub fn scene_skeleton() -> Vec<JointNode> {
    use Channel::*;
    let mut joints = vec![JointNode::new(
        "Hips",
        None,
        [0.0, 0.0, 0.0],
        vec![Xposition, Yposition, Zposition, Zrotation, Xrotation, Yrotation],
    )];
    for (side, sx) in [("Left", 1.0), ("Right", -1.0)] {
        let base = joints.len();
        joints.push(JointNode::new(format!("{side}Arm"), Some(0), [sx * 18.0, 45.0, 0.0], rot()));
        joints.push(JointNode::new(format!("{side}ForeArm"), Some(base), [sx * 28.0, 0.0, 0.0], rot()));
        joints.push(
            JointNode::new(format!("{side}Hand"), Some(base + 1), [sx * 25.0, 0.0, 0.0], rot())
                .with_end_site([sx * 8.0, 0.0, 0.0]),
        );
    }
    joints
}

/// Slow smooth phase wander: a few random low-frequency sinusoids.
struct Wander {
    parts: Vec<(f64, f64, f64)>,
}

impl Wander {
    fn new(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let parts = (0..4)
            .map(|_| {
                (
                    amplitude * rng.random_range(0.5..1.0) / 2.0,
                    rng.random_range(0.01..0.08),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self { parts }
    }

    fn at(&self, t: f64) -> f64 {
        self.parts.iter().map(|(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum()
    }
}

/// Phase `2π f t + offset + c·shared(t) + (1−c)·own(t)` where own and shared wander
/// slowly.
struct Phase<'a> {
    freq: f64,
    offset: f64,
    c: f64,
    shared: &'a Wander,
    own: Wander,
}

impl Phase<'_> {
    fn at(&self, t: f64) -> f64 {
        2.0 * PI * self.freq * t + self.offset + self.c * self.shared.at(t) + (1.0 - self.c) * self.own.at(t)
    }
}

fn phase_crossings(phase: &Phase, duration: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut prev = phase.at(0.0);
    let mut t = 0.0;
    while t + step <= duration {
        let next = phase.at(t + step);
        let k = (prev / (2.0 * PI)).floor();
        let target = (k + 1.0) * 2.0 * PI;
        if next >= target {
            let frac = (target - prev) / (next - prev);
            out.push(t + frac * step);
        }
        prev = next;
        t += step;
    }
    out
}

/// Raised-sine step from 0 to 1 over `[−1, 1]`.
fn step(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        0.5 * (1.0 + (0.5 * PI * u).sin())
    }
}

/// Angle trace that moves between alternating target levels at each beat.
fn stroke_trace(beats: &[f64], amplitudes: &[f64], half_width: f64, n: usize, rate: f64) -> Vec<f64> {
    let level = |k: usize| -> f64 {
        // level before the first beat is 0
        if k == 0 {
            0.0
        } else {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * amplitudes[k - 1] / 2.0
        }
    };
    let mut out = Vec::with_capacity(n);
    let mut done = 0;
    for i in 0..n {
        let t = i as f64 / rate;
        while done < beats.len() && beats[done] + half_width <= t {
            done += 1;
        }
        let mut v = level(done);
        let mut k = done;
        while k < beats.len() && beats[k] - half_width < t {
            v += (level(k + 1) - level(k)) * step((t - beats[k]) / half_width);
            k += 1;
        }
        out.push(v);
    }
    out
}

/// Slow postural wander (AR(0.995), std `0.5·scale`) plus white-ish sensor noise
/// (AR(0.8), std `0.05·scale`).
fn ar_noise(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut a, mut b) = (0.0, 0.0);
    (0..n)
        .map(|_| {
            a = 0.995 * a + 0.05 * normal.sample(rng);
            b = 0.8 * b + 0.03 * normal.sample(rng);
            scale * (a + b)
        })
        .collect()
}

/// Fast idiosyncratic movement, AR(0.9) with stationary std `std`. Gaussian
/// dampening removes most of it.
fn tremor(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = std * (1.0f64 - 0.81).sqrt();
    let mut a = 0.0;
    (0..n)
        .map(|_| {
            a = 0.9 * a + innovation * normal.sample(rng);
            a
        })
        .collect()
}

fn person_motion(
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
    beats: &[f64],
    slow: &[Phase],
    n: usize,
) -> Result<SkeletonClip, SynthError> {
    let rate = spec.mocap_rate;
    let half_width = (0.12f64).min(0.3 / spec.beat_rate);
    let amps: Vec<f64> = beats.iter().map(|_| rng.random_range(0.7..1.3)).collect();
    let base_stroke = stroke_trace(beats, &amps, half_width, n, rate);
    let skeleton = scene_skeleton();
    let n_channels: usize = skeleton.iter().map(|j| j.channels.len()).sum();
    let mut frames = vec![0.0; n * n_channels];
    let mut set = |channel: usize, values: &[f64]| {
        for (i, v) in values.iter().enumerate() {
            frames[i * n_channels + channel] = *v;
        }
    };
    let times: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
    let sway: Vec<f64> = times.iter().map(|&t| 2.0 * (2.0 * PI * 0.05 * t).sin()).collect();
    set(0, &sway);
    set(1, &vec![95.0; n]);
    let yaw: Vec<f64> = times.iter().map(|&t| 3.0 * (slow[1].at(t) * 0.3).sin()).collect();
    set(3, &yaw);

    for (side, gain) in [(0usize, 0.7), (1usize, 1.0)] {
        let ch0 = 6 + side * 9;
        // shoulder: two incommensurate slow oscillations plus noise
        let arm: Vec<f64> = times
            .iter()
            .zip(ar_noise(rng, n, 2.0 * spec.noise))
            .map(|(&t, e)| 20.0 * slow[0].at(t).sin() + 10.0 * slow[1].at(t).sin() + e)
            .collect();
        set(ch0, &arm);
        set(ch0 + 1, &ar_noise(rng, n, 1.0 * spec.noise));
        // forearm: beat strokes plus fast individual movement
        let fore: Vec<f64> = base_stroke
            .iter()
            .zip(&times)
            .zip(ar_noise(rng, n, 1.5 * spec.noise))
            .zip(tremor(rng, n, 16.0 * spec.noise))
            .map(|(((s, &t), e), j)| gain * 30.0 * s + 6.0 * slow[0].at(t).cos() + e + j)
            .collect();
        set(ch0 + 3, &fore);
        set(ch0 + 4, &ar_noise(rng, n, 1.0 * spec.noise));
        // hand: smaller strokes on the same beats
        let hand: Vec<f64> = base_stroke
            .iter()
            .zip(ar_noise(rng, n, 2.0 * spec.noise))
            .map(|(s, e)| gain * 16.0 * s + e)
            .collect();
        set(ch0 + 6, &hand);
        set(ch0 + 7, &ar_noise(rng, n, 1.0 * spec.noise));
        set(ch0 + 8, &ar_noise(rng, n, 1.0 * spec.noise));
    }
    Ok(SkeletonClip::new(skeleton, 1.0 / rate, frames)?)
}

fn person_audio(spec: &SceneSpec, rng: &mut ChaCha8Rng, beats: &[f64]) -> Result<AudioTrack, SynthError> {
    let sr = spec.audio_rate;
    let n = (spec.duration * sr).round() as usize;
    let jitter = Normal::new(0.0, (spec.jitter * spec.noise).max(1e-12)).expect("finite std");
    let mut onsets = Vec::with_capacity(beats.len());
    for &b in beats {
        let keep = rng.random::<f64>() < spec.speech_prob;
        let shift = jitter.sample(rng);
        if keep {
            onsets.push(b + if spec.noise > 0.0 { shift } else { 0.0 });
        }
    }
    onsets.sort_by(f64::total_cmp);

    // phrase pauses
    let mut pauses = Vec::new();
    let mut t = rng.random_range(2.0..8.0);
    while t < spec.duration {
        let len = rng.random_range(0.6..1.4);
        pauses.push((t, t + len));
        t += len + rng.random_range(5.0..10.0);
    }

    let base = 180.0 + rng.random_range(-25.0..25.0);
    let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let noise = Normal::new(0.0, 1e-3).expect("finite std");
    let burst_half = 0.1;
    let mut samples = Vec::with_capacity(n);
    let mut phase = 0.0;
    let mut next_onset = 0;
    let mut next_pause = 0;
    for i in 0..n {
        let t = i as f64 / sr;
        let f0 = base + 70.0 * (0.6 * (2.0 * PI * 0.23 * t + p1).sin() + 0.4 * (2.0 * PI * 0.61 * t + p2).sin());
        phase += 2.0 * PI * f0 / sr;
        if phase > 2.0 * PI {
            phase -= 2.0 * PI;
        }
        while next_onset < onsets.len() && onsets[next_onset] + burst_half < t {
            next_onset += 1;
        }
        while next_pause < pauses.len() && pauses[next_pause].1 < t {
            next_pause += 1;
        }
        let paused = next_pause < pauses.len() && pauses[next_pause].0 <= t;
        let mut amp = 0.0;
        if !paused {
            amp = 0.1;
            let mut k = next_onset;
            while k < onsets.len() && onsets[k] - burst_half < t {
                let u = (t - onsets[k]) / burst_half;
                amp += 0.8 * 0.5 * (1.0 + (PI * u).cos());
                k += 1;
            }
        }
        let carrier = (phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin()) / 1.75;
        samples.push(amp * carrier + noise.sample(rng));
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
    Ok(AudioTrack::new(samples, sr)?)
}

/// Coupling at and above which all persons share the scene frequency.
const CRITICAL_COUPLING: f64 = 0.5;

/// Relative natural-frequency offsets within ±20%, one per person. Each person gets
/// a jittered slot of an even grid, slots shuffled, so no two persons coincide.
/// Drawn from their own stream so the rest of the scene does not depend on them.
fn natural_detunes(seed: u64, n_persons: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let n = n_persons as f64;
    let mut d: Vec<f64> = (0..n_persons)
        .map(|p| 0.2 * (2.0 * (p as f64 + 0.5 + 0.3 * rng.random_range(-1.0..1.0)) / n - 1.0))
        .collect();
    for i in (1..d.len()).rev() {
        d.swap(i, rng.random_range(0..=i));
    }
    d
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let c = spec.coupling;
    let mut shared_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared_beat = Wander::new(&mut shared_rng, 2.0);
    let shared_slow = [Wander::new(&mut shared_rng, 1.5), Wander::new(&mut shared_rng, 1.5)];
    let shared_offsets: [f64; 3] = [
        shared_rng.random_range(0.0..2.0 * PI),
        shared_rng.random_range(0.0..2.0 * PI),
        shared_rng.random_range(0.0..2.0 * PI),
    ];
    let n = (spec.duration * spec.mocap_rate).round() as usize;
    let free = (1.0 - c / CRITICAL_COUPLING).max(0.0);
    let detunes = natural_detunes(spec.seed, spec.n_persons);

    let mut persons = Vec::with_capacity(spec.n_persons);
    for p in 0..spec.n_persons {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(p as u64 + 1);
        let tune = 1.0 + free * detunes[p];
        let own_offset = |rng: &mut ChaCha8Rng, k: usize| shared_offsets[k] + (1.0 - c) * rng.random_range(-1.0..1.0);
        // entrained beat: common frequency, bounded individual lag
        let beat_phase = Phase {
            freq: spec.beat_rate * tune,
            offset: shared_offsets[0] + (1.0 - c) * rng.random_range(-1.0..1.0),
            c,
            shared: &shared_beat,
            own: Wander::new(&mut rng, 2.0),
        };
        let slow = [
            Phase {
                freq: 0.13 * tune,
                offset: own_offset(&mut rng, 1),
                c,
                shared: &shared_slow[0],
                own: Wander::new(&mut rng, 1.5),
            },
            Phase {
                freq: 0.29 * tune,
                offset: own_offset(&mut rng, 2),
                c,
                shared: &shared_slow[1],
                own: Wander::new(&mut rng, 1.5),
            },
        ];
        let beats = phase_crossings(&beat_phase, spec.duration, 1.0 / spec.mocap_rate);
        let clip = person_motion(spec, &mut rng, &beats, &slow, n)?;
        let audio = person_audio(spec, &mut rng, &beats)?;
        persons.push(PersonRecording { clip, audio, beats });
    }
    Ok(Scene { spec: spec.clone(), persons })
}

/// A random chain skeleton with `n_joints` rotating joints and arbitrary values,
/// handy for format round-trip checks.
pub fn random_clip(n_joints: usize, n_frames: usize, seed: u64) -> SkeletonClip {
    use Channel::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut joints = Vec::with_capacity(n_joints.max(1));
    joints.push(JointNode::new(
        "Root",
        None,
        [0.0; 3],
        vec![Xposition, Yposition, Zposition, Zrotation, Xrotation, Yrotation],
    ));
    for j in 1..n_joints.max(1) {
        let mut offset = [0.0; 3];
        offset.iter_mut().for_each(|v| *v = rng.random_range(-20.0..20.0));
        let mut node = JointNode::new(format!("Joint{j}"), Some(j - 1), offset, vec![Zrotation, Yrotation, Xrotation]);
        if j + 1 == n_joints {
            node = node.with_end_site([0.0, rng.random_range(1.0..5.0), 0.0]);
        }
        joints.push(node);
    }
    let n_channels: usize = joints.iter().map(|j| j.channels.len()).sum();
    let frames = (0..n_channels * n_frames.max(1)).map(|_| rng.random_range(-180.0..180.0)).collect();
    SkeletonClip::new(joints, 1.0 / 30.0, frames).expect("generated clip is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPerson {
    pub id: String,
    pub bvh: String,
    pub wav: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session: String,
    pub persons: Vec<ManifestPerson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    std::fs::write(path, bytes).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })
}

/// Write `person<i>.bvh`, `person<i>.wav` and `manifest.json` into `dir`.
pub fn write_scene_dir(scene: &Scene, dir: &Path) -> Result<Manifest, SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.to_path_buf(), source })?;
    let mut persons = Vec::new();
    for (i, p) in scene.persons.iter().enumerate() {
        let id = format!("person{i}");
        let bvh = format!("{id}.bvh");
        let wav = format!("{id}.wav");
        write_file(&dir.join(&bvh), write_bvh(&p.clip).as_bytes())?;
        write_file(&dir.join(&wav), &write_wav(&p.audio, SampleFormat::Pcm16)?)?;
        persons.push(ManifestPerson { id, bvh, wav });
    }
    let manifest = Manifest {
        session: format!("synth-{}", scene.spec.seed),
        persons,
        scene: Some(scene.spec.clone()),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(coupling: f64, noise: f64) -> SceneSpec {
        SceneSpec {
            n_persons: 2,
            duration: 60.0,
            audio_rate: 4000.0,
            coupling,
            noise,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_scene(&small(0.5, 1.0)).unwrap();
        let b = generate_scene(&small(0.5, 1.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.persons[0].clip.n_frames(), 6000);
        assert_eq!(a.persons[0].audio.len(), 240000);
    }

    #[test]
    fn full_coupling_shares_beats() {
        let s = generate_scene(&small(1.0, 0.0)).unwrap();
        assert_eq!(s.persons[0].beats, s.persons[1].beats);
        let rate = s.persons[0].beats.len() as f64 / 60.0;
        assert!((rate - 1.0).abs() < 0.1, "{rate}");
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = small(0.5, 1.0);
        s.duration = 30.0;
        assert!(generate_scene(&s).is_err());
        s.duration = 60.0;
        s.coupling = 1.5;
        assert!(generate_scene(&s).is_err());
    }

    #[test]
    fn stroke_levels_alternate() {
        let tr = stroke_trace(&[1.0, 2.0], &[2.0, 2.0], 0.1, 300, 100.0);
        assert_eq!(tr[50], 0.0);
        assert!((tr[150] - 1.0).abs() < 1e-12);
        assert!((tr[250] + 1.0).abs() < 1e-12);
    }
}
