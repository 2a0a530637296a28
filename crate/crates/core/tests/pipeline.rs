//! Scene generation, interventions on synthetic clips and the end-to-end pipeline
//! contracts: determinism, record coverage and exclusion reporting.

use coordkit_core::beats::{emd_decompose, EmdParams};
use coordkit_core::config::Config;
use coordkit_core::interventions::dampen_motion;
use coordkit_core::motion_io::SkeletonClip;
use coordkit_core::pipeline::{
    compute_metrics, load_scene, read_scene_dir, run_pipeline, EXCLUSIONS_FILE, METRICS_FILE, METRIC_BC,
};
use coordkit_core::report::REPORT_FILE;
use coordkit_core::stats::Condition;
use coordkit_core::synth::{generate_scene, write_scene_dir, SceneSpec};
use std::collections::BTreeSet;

mod common;
use common::variance;

fn config(text: &str) -> Config {
    Config::from_toml(text).unwrap()
}

fn small_spec(seed: u64) -> SceneSpec {
    SceneSpec { n_persons: 1, duration: 60.0, audio_rate: 4000.0, seed, ..SceneSpec::default() }
}

/// Variances of every rotation channel of the joints `dampen_motion` touches for the
/// right hand with `include_self`.
fn smoothed_variances(clip: &SkeletonClip) -> Vec<f64> {
    ["RightForeArm", "RightHand"]
        .iter()
        .flat_map(|name| {
            let j = clip.joint_index(name).unwrap();
            let base = clip.channel_offset(j);
            (0..clip.joints()[j].channels.len()).map(move |c| variance(&clip.column(base + c)))
        })
        .collect()
}

#[test]
fn synth_scene_round_trips_through_files() {
    let scene = generate_scene(&SceneSpec { n_persons: 2, ..small_spec(3) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene_dir(&scene, dir.path()).unwrap();
    let back = read_scene_dir(dir.path()).unwrap();
    assert_eq!(back.persons.len(), 2);
    for (orig, read) in scene.persons.iter().zip(&back.persons) {
        assert_eq!(read.clip, orig.clip);
        assert_eq!(read.audio.len(), orig.audio.len());
        // 16-bit quantization
        for (a, b) in read.audio.samples().iter().zip(orig.audio.samples()) {
            assert!((a - b).abs() <= 1.0 / 32767.0, "{a} vs {b}");
        }
    }
}

#[test]
fn dampening_lowers_channel_variance_monotonically() {
    for seed in 0..4 {
        let clip = generate_scene(&small_spec(seed)).unwrap().persons.remove(0).clip;
        let original = smoothed_variances(&clip);
        for (s1, s2) in [(10.0, 20.0), (20.0, 10.0), (5.0, 40.0), (30.0, 30.0)] {
            let once = dampen_motion(&clip, s1, &["RightHand"], true).unwrap();
            let twice = dampen_motion(&once, s2, &["RightHand"], true).unwrap();
            let single = dampen_motion(&clip, f64::max(s1, s2), &["RightHand"], true).unwrap();
            let (v1, v2, vmax) = (smoothed_variances(&once), smoothed_variances(&twice), smoothed_variances(&single));
            for k in 0..original.len() {
                assert!(v1[k] <= original[k], "seed {seed} channel {k}: {} > {}", v1[k], original[k]);
                assert!(v2[k] <= vmax[k] * (1.0 + 1e-12), "seed {seed} σ {s1},{s2} channel {k}");
            }
        }
    }
}

fn local_extrema(x: &[f64]) -> usize {
    x.windows(3).filter(|w| (w[1] > w[0] && w[1] > w[2]) || (w[1] < w[0] && w[1] < w[2])).count()
}

fn sign_changes(x: &[f64]) -> usize {
    let signs: Vec<bool> = x.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

#[test]
fn imfs_of_gesture_speed_are_balanced() {
    // first IMFs of real gesture input; the slowest modes are near-trend and exempt
    use coordkit_core::kinematics::{gesture_speed, Aggregate};
    let clip = generate_scene(&small_spec(5)).unwrap().persons.remove(0).clip;
    let speed = gesture_speed(&clip, &["RightHand", "RightForeArm"], Aggregate::Sum).unwrap();
    let x = &speed.data()[..3000];
    let set = emd_decompose(x, speed.rate(), &EmdParams::default()).unwrap();
    assert!(set.imfs.len() >= 3);
    for (k, imf) in set.imfs.iter().take(3).enumerate() {
        let (e, z) = (local_extrema(imf), sign_changes(imf));
        assert!(e.abs_diff(z) <= 1, "IMF {k}: {e} extrema, {z} zero crossings");
    }
}

#[test]
fn coupling_raises_cross_person_beat_consistency() {
    let mean_bc = |coupling: f64| {
        let cfg = config(&format!(
            "seed = 4\n[synth]\nn_persons = 3\nduration = 120\ncoupling = {coupling}\n\
             [intervention]\nkind = \"dampen\"\nstrengths = [10]\n[analysis]\nmetrics = [\"beats\"]\n"
        ));
        let out = compute_metrics(&cfg, &load_scene(&cfg).unwrap()).unwrap();
        let v: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.metric == METRIC_BC && r.scope == "inter" && r.condition == Condition::Baseline)
            .map(|r| r.value)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (low, mid, high) = (mean_bc(0.0), mean_bc(0.5), mean_bc(1.0));
    assert!(low < mid && mid < high, "{low} {mid} {high}");
}

const SMALL_RUN: &str = "seed = 11\n[synth]\nn_persons = 3\nduration = 60\n[intervention]\nkind = \"dampen\"\nstrengths = [10, 30]\n";

#[test]
fn metrics_cover_every_metric_and_condition() {
    let cfg = config(SMALL_RUN);
    let out = compute_metrics(&cfg, &load_scene(&cfg).unwrap()).unwrap();
    let seen: BTreeSet<(String, String, String)> = out
        .records
        .iter()
        .map(|r| (r.metric.clone(), r.scope.clone(), r.condition.as_str().to_string()))
        .collect();
    for (metric, scope) in [
        ("rr", "intra"),
        ("det", "intra"),
        ("mean_lr", "intra"),
        ("rr", "inter"),
        ("det", "inter"),
        ("mean_lr", "inter"),
        ("sdtw", "inter"),
        (METRIC_BC, "intra"),
        (METRIC_BC, "inter"),
    ] {
        for cond in [Condition::Baseline, Condition::Intervened] {
            assert!(
                seen.contains(&(metric.to_string(), scope.to_string(), cond.as_str().to_string())),
                "missing {metric}/{scope}/{}",
                cond.as_str()
            );
        }
    }
    assert!(out.records.iter().all(|r| r.value.is_finite()));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, jobs) in dirs.iter().zip([1, 3]) {
        let mut cfg = config(SMALL_RUN);
        cfg.jobs = jobs;
        run_pipeline(&cfg, dir.path()).unwrap();
    }
    for file in [METRICS_FILE, EXCLUSIONS_FILE, REPORT_FILE, "stats/lmem.json"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert!(a == b, "{file} differs between 1 and 3 threads");
    }
}

#[test]
fn every_exclusion_is_reported_with_a_reason() {
    // an unreachable beat count excludes every beat-consistency slice
    let cfg = config(
        "seed = 2\n[synth]\nn_persons = 2\nduration = 60\n[intervention]\nkind = \"delay\"\nstrengths = [0.5]\n\
         [beats]\nmin_beats = 100000\n",
    );
    let dir = tempfile::tempdir().unwrap();
    let result = run_pipeline(&cfg, dir.path());
    let csv = std::fs::read_to_string(dir.path().join(EXCLUSIONS_FILE)).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.contains("too_few_beats")));
    // with nothing left to fit the run is degenerate, but the report still lists
    // every excluded slice
    assert!(result.is_err());
    let report = coordkit_core::report::emit_report(dir.path());
    let text = std::fs::read_to_string(report.unwrap()).unwrap();
    let listed = text.lines().filter(|l| (l.starts_with("| baseline") || l.starts_with("| intervened")) && l.contains("| too_few_beats |")).count();
    assert_eq!(listed, rows.len());
}

#[test]
fn uncoupled_persons_move_independently() {
    use coordkit_core::kinematics::{gesture_speed, Aggregate};
    let spec = SceneSpec { n_persons: 3, duration: 300.0, audio_rate: 4000.0, coupling: 0.0, seed: 3, ..SceneSpec::default() };
    let scene = generate_scene(&spec).unwrap();
    let speeds: Vec<Vec<f64>> = scene
        .persons
        .iter()
        .map(|p| gesture_speed(&p.clip, &["LeftArm", "LeftHand", "RightArm", "RightHand"], Aggregate::Sum).unwrap().into_data())
        .collect();
    for a in 0..speeds.len() {
        for b in a + 1..speeds.len() {
            let r = common::pearson(&speeds[a], &speeds[b]);
            assert!(r.abs() < 0.1, "persons {a},{b}: r = {r}");
        }
    }
}
