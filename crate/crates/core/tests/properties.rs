//! Invariants of every module, checked over generated inputs.

use coordkit_core::audio_io::{amplitude_envelope, read_wav, write_wav, AudioTrack, EnvelopeParams, F0Contour, SampleFormat};
use coordkit_core::beats::{beat_consistency, emd_decompose, EmdParams, OnsetSource, OnsetTrain};
use coordkit_core::elastic::{exact_dtw, soft_dtw, Seq};
use coordkit_core::interventions::{delay_audio, flatten_pitch, PitchMode};
use coordkit_core::kinematics::{gesture_speed, joint_angular_speed, slice_series, Aggregate, SliceSpec};
use coordkit_core::motion_io::{forward_kinematics, local_rotation, parse_bvh, write_bvh, Channel, JointNode, SkeletonClip};
use coordkit_core::rqa::{crqa_pipeline, rqa_measures, DistanceMatrix, PointCloud, RecurrenceMatrix, RqaConfig};
use coordkit_core::series::ChannelSeries;
use coordkit_core::stats::{fit_lmem, wilcoxon_signed_rank, Condition, LmemFormula, LmemProblem, MetricRecord, CONDITION};
use coordkit_core::synth::random_clip;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

mod common;
use common::{diagonal_oracle, variance};

fn series(values: Vec<f64>, rate: f64) -> ChannelSeries {
    ChannelSeries::scalar(values, rate, "x").unwrap()
}

fn onsets(times: Vec<f64>) -> OnsetTrain {
    OnsetTrain { times, source: OnsetSource::Gesture, scale: 0, frequency: 1.0 }
}

/// Strictly increasing onset times in [0, 30).
fn onset_times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(0u32..30_000, 1..25).prop_map(|s| s.into_iter().map(|v| v as f64 / 1000.0).collect())
}

fn cells(max_rows: usize, max_cols: usize) -> impl Strategy<Value = RecurrenceMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(any::<bool>(), r * c).prop_map(move |cells| RecurrenceMatrix::from_cells(r, c, cells))
    })
}

fn seq(max_len: usize, dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (1..=max_len).prop_flat_map(move |n| prop::collection::vec(-3.0..3.0f64, n * dim))
}

fn contour(values: Vec<Option<f64>>) -> F0Contour {
    F0Contour { values, hop: 0.01, start_time: 0.0, voicing_threshold: 0.3, f0_min: 50.0, f0_max: 600.0 }
}

fn rebuilt(clip: &SkeletonClip, frames: Vec<f64>) -> SkeletonClip {
    SkeletonClip::new(clip.joints().to_vec(), clip.frame_time(), frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ------------------------------------------------------------ motion_io

    #[test]
    fn bvh_round_trip(n_joints in 1usize..7, n_frames in 1usize..30, seed in any::<u64>()) {
        let clip = random_clip(n_joints, n_frames, seed);
        let back = parse_bvh(&write_bvh(&clip)).unwrap();
        prop_assert_eq!(back, clip);
    }

    #[test]
    fn zero_rotation_fk_is_cumulative_offset(n_joints in 1usize..7, seed in any::<u64>()) {
        let template = random_clip(n_joints, 1, seed);
        let clip = rebuilt(&template, vec![0.0; template.n_channels() * 3]);
        for (j, node) in clip.joints().iter().enumerate() {
            let mut expected = [0.0; 3];
            for k in clip.chain_to(j) {
                for d in 0..3 {
                    expected[d] += clip.joints()[k].offset[d];
                }
            }
            let fk = forward_kinematics(&clip, &node.name).unwrap();
            for row in fk.rows() {
                prop_assert_eq!(row, &expected[..]);
            }
        }
    }

    #[test]
    fn fk_ignores_unrelated_zero_joint(n_joints in 2usize..7, n_frames in 1usize..10, seed in any::<u64>()) {
        let clip = random_clip(n_joints, n_frames, seed);
        let mut joints = clip.joints().to_vec();
        joints.push(JointNode::new("Extra", Some(0), [1.0, 2.0, 3.0], vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation]));
        let mut frames = Vec::new();
        for i in 0..clip.n_frames() {
            frames.extend_from_slice(clip.frame(i));
            frames.extend_from_slice(&[0.0; 3]);
        }
        let grown = SkeletonClip::new(joints, clip.frame_time(), frames).unwrap();
        for node in clip.joints() {
            prop_assert_eq!(
                forward_kinematics(&clip, &node.name).unwrap(),
                forward_kinematics(&grown, &node.name).unwrap()
            );
        }
    }

    // ------------------------------------------------------------ audio_io

    #[test]
    fn envelope_ignores_polarity(x in prop::collection::vec(-1.0..1.0f64, 200..2000)) {
        let track = AudioTrack::new(x.clone(), 1000.0).unwrap();
        let flipped = AudioTrack::new(x.iter().map(|v| -v).collect(), 1000.0).unwrap();
        let a = amplitude_envelope(&track, 100.0, EnvelopeParams::default()).unwrap();
        let b = amplitude_envelope(&flipped, 100.0, EnvelopeParams::default()).unwrap();
        prop_assert_eq!(a.data(), b.data());
        let expected = (x.len() as f64 / 1000.0 * 100.0).ceil();
        prop_assert!((a.len() as f64 - expected).abs() <= 1.0);
    }

    #[test]
    fn wav_round_trip(x in prop::collection::vec(-1.0..1.0f64, 1..500)) {
        let track = AudioTrack::new(x, 8000.0).unwrap();
        let back = read_wav(&write_wav(&track, SampleFormat::Float32).unwrap()).unwrap();
        prop_assert_eq!(back.len(), track.len());
        for (a, b) in back.samples().iter().zip(track.samples()) {
            prop_assert!((a - b).abs() <= 1e-7);
        }
    }

    // ------------------------------------------------------------ kinematics

    #[test]
    fn angular_speed_ignores_global_rotation(
        seed in any::<u64>(),
        axis in (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64),
        angle in -3.0..3.0f64,
    ) {
        let clip = random_clip(3, 12, seed);
        let j = clip.joint_index("Joint1").unwrap();
        let channels = clip.joints()[j].channels.clone();
        prop_assert_eq!(&channels, &vec![Channel::Zrotation, Channel::Yrotation, Channel::Xrotation]);
        let q = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(axis.0, axis.1, axis.2)), angle);
        let base = clip.channel_offset(j);
        let mut frames = clip.frames().to_vec();
        for i in 0..clip.n_frames() {
            let row = &mut frames[i * clip.n_channels() + base..][..3];
            let turned = q * local_rotation(&channels, row);
            // Z·Y·X intrinsic is nalgebra's yaw·pitch·roll
            let (roll, pitch, yaw) = turned.euler_angles();
            row.copy_from_slice(&[yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees()]);
            prop_assert!((local_rotation(&channels, row).matrix() - turned.matrix()).abs().max() < 1e-9);
        }
        let a = joint_angular_speed(&clip, "Joint1").unwrap();
        let b = joint_angular_speed(&rebuilt(&clip, frames), "Joint1").unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-7 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn gesture_speed_is_nonnegative_and_slices_copy(seed in any::<u64>(), n_frames in 2usize..200, len in 0.1..3.0f64) {
        let clip = random_clip(4, n_frames, seed);
        let s = gesture_speed(&clip, &["Joint1", "Joint2", "Joint3"], Aggregate::Sum).unwrap();
        prop_assert!(s.data().iter().all(|v| *v >= 0.0));
        let slices = slice_series(&s, SliceSpec { length: len });
        let mut offset = 0;
        for sl in &slices {
            prop_assert_eq!(sl.data(), &s.data()[offset..offset + sl.len()]);
            offset += sl.len();
        }
    }

    // ------------------------------------------------------------ interventions

    #[test]
    fn flatten_bounds_range_and_variance(
        raw in prop::collection::vec(prop::option::weighted(0.8, 80.0..400.0f64), 2..300),
        limit in 1.0..100.0f64,
        scale in any::<bool>(),
    ) {
        prop_assume!(raw.iter().flatten().count() > 0);
        let c = contour(raw);
        let mode = if scale { PitchMode::Scale } else { PitchMode::Clamp };
        let out = flatten_pitch(&c, limit, mode).unwrap();
        let before: Vec<f64> = c.voiced().collect();
        let after: Vec<f64> = out.voiced().collect();
        prop_assert_eq!(before.len(), after.len());
        let (lo, hi) = after.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        prop_assert!(hi - lo <= 2.0 * limit + 1e-9);
        prop_assert!(variance(&after) <= variance(&before) * (1.0 + 1e-12) + 1e-12);
        for (a, b) in c.values.iter().zip(&out.values) {
            prop_assert_eq!(a.is_some(), b.is_some());
        }
    }

    #[test]
    fn delays_compose(x in prop::collection::vec(-1.0..1.0f64, 1..200), a in 0.0..0.2f64, b in 0.0..0.2f64) {
        let rate = 1000.0;
        let track = AudioTrack::new(x.clone(), rate).unwrap();
        let twice = delay_audio(&delay_audio(&track, a).unwrap(), b).unwrap();
        let once = delay_audio(&track, a + b).unwrap();
        prop_assert!(twice.len().abs_diff(once.len()) <= 1);
        for out in [&twice, &once] {
            let pad = out.len() - x.len();
            prop_assert!(out.samples()[..pad].iter().all(|v| *v == 0.0));
            prop_assert_eq!(&out.samples()[pad..], &x[..]);
        }
    }

    // ------------------------------------------------------------ rqa

    #[test]
    fn rr_non_decreasing_in_radius(
        a in prop::collection::vec(-1.0..1.0f64, 20..80),
        b in prop::collection::vec(-1.0..1.0f64, 20..80),
        mut radii in prop::collection::vec(0.0..3.0f64, 2..10),
    ) {
        let (a, b) = (PointCloud::new(a[..a.len() / 2 * 2].to_vec(), 2), PointCloud::new(b[..b.len() / 2 * 2].to_vec(), 2));
        let d = DistanceMatrix::new(&a, &b, false).unwrap();
        radii.sort_by(f64::total_cmp);
        let rr: Vec<f64> = radii.iter().map(|e| d.recurrence_rate(*e)).collect();
        prop_assert!(rr.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn measures_survive_transpose(m in cells(12, 12), l_min in 1usize..5) {
        let a = rqa_measures(&m, l_min, false).unwrap();
        let b = rqa_measures(&m.transpose(), l_min, false).unwrap();
        prop_assert_eq!((a.rr, a.det, a.mean_lr), (b.rr, b.det, b.mean_lr));
        let a = rqa_measures(&m, l_min, true).unwrap();
        let b = rqa_measures(&m.transpose(), l_min, true).unwrap();
        prop_assert_eq!((a.rr, a.det, a.mean_lr), (b.rr, b.det, b.mean_lr));
    }

    #[test]
    fn measures_match_oracle_on_6x6(m in cells(6, 6), l_min in 1usize..4, exclude in any::<bool>()) {
        let r = rqa_measures(&m, l_min, exclude).unwrap();
        prop_assert_eq!((r.rr, r.det, r.mean_lr), diagonal_oracle(&m, l_min.max(1), exclude));
    }

    #[test]
    fn crqa_ignores_affine_rescaling(
        seed in any::<u64>(),
        gain in prop::sample::select(vec![0.5, 2.0, 4.0, 8.0]),
        shift in prop::sample::select(vec![-4.0, 0.0, 16.0]),
    ) {
        // random walks have enough structure to reach the target rate
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut walk = |n: usize| {
            let mut v = 0.0;
            (0..n).map(|_| { v += rng.random_range(-1.0..1.0); v }).collect::<Vec<f64>>()
        };
        let (x, y) = (walk(200), walk(200));
        let cfg = RqaConfig { delay: 3, ..RqaConfig::default() };
        let base = crqa_pipeline(&series(x.clone(), 10.0), &series(y.clone(), 10.0), &cfg).unwrap();
        let moved = crqa_pipeline(&series(x.iter().map(|v| gain * v + shift).collect(), 10.0), &series(y, 10.0), &cfg).unwrap();
        prop_assert_eq!((base.rr, base.det, base.mean_lr), (moved.rr, moved.det, moved.mean_lr));
    }

    // ------------------------------------------------------------ beats

    #[test]
    fn emd_reconstructs(x in prop::collection::vec(-5.0..5.0f64, 8..400)) {
        let set = emd_decompose(&x, 50.0, &EmdParams::default()).unwrap();
        let rec = set.reconstruct();
        prop_assert_eq!(rec.len(), x.len());
        for (a, b) in x.iter().zip(&rec) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn beat_consistency_bounds_and_shift(g in onset_times(), s in onset_times(), shift in -10.0..10.0f64, sigma in 0.01..1.0f64) {
        let score = beat_consistency(&onsets(g.clone()), &onsets(s.clone()), sigma).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
        let moved = beat_consistency(
            &onsets(g.iter().map(|t| t + shift).collect()),
            &onsets(s.iter().map(|t| t + shift).collect()),
            sigma,
        ).unwrap();
        prop_assert!((score - moved).abs() < 1e-9);
    }

    #[test]
    fn beat_consistency_falls_with_offset(t in 0.0..10.0f64, d1 in 0.0..0.5f64, step in 0.001..0.5f64, sigma in 0.05..0.5f64) {
        // one gesture onset against a lone speech onset, which stays the nearest
        let near = beat_consistency(&onsets(vec![t]), &onsets(vec![t + d1]), sigma).unwrap();
        let far = beat_consistency(&onsets(vec![t]), &onsets(vec![t + d1 + step]), sigma).unwrap();
        prop_assume!(near > 1e-300);
        prop_assert!(far < near);
    }

    // ------------------------------------------------------------ elastic

    #[test]
    fn soft_dtw_symmetric(x in seq(10, 2), y in seq(10, 2), gamma in 0.001..5.0f64) {
        let a = soft_dtw(Seq::new(&x, 2), Seq::new(&y, 2), gamma).unwrap();
        let b = soft_dtw(Seq::new(&y, 2), Seq::new(&x, 2), gamma).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn soft_dtw_non_increasing_in_gamma(x in seq(10, 1), y in seq(10, 1)) {
        let values: Vec<f64> = [0.01, 0.1, 1.0, 10.0]
            .iter()
            .map(|g| soft_dtw(Seq::new(&x, 1), Seq::new(&y, 1), *g).unwrap())
            .collect();
        prop_assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn exact_dtw_nonnegative_and_zero_on_self(x in seq(12, 3), y in seq(12, 3)) {
        prop_assert!(exact_dtw(Seq::new(&x, 3), Seq::new(&y, 3)).unwrap() >= 0.0);
        prop_assert_eq!(exact_dtw(Seq::new(&x, 3), Seq::new(&x, 3)).unwrap(), 0.0);
    }

    // ------------------------------------------------------------ stats

    #[test]
    fn wilcoxon_scale_and_sign(d in prop::collection::vec(-10.0..10.0f64, 1..40), c in 0.01..100.0f64) {
        prop_assume!(d.iter().any(|v| *v != 0.0));
        let base = wilcoxon_signed_rank(&d).unwrap();
        let scaled = wilcoxon_signed_rank(&d.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
        prop_assert!((base.p - scaled.p).abs() < 1e-12);
        let flipped = wilcoxon_signed_rank(&d.iter().map(|v| -v).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(flipped.w_plus, base.w_minus);
        prop_assert_eq!(flipped.w_minus, base.w_plus);
        prop_assert!((base.p - flipped.p).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lmem_condition_survives_group_relabel(
        values in prop::collection::vec(-2.0..2.0f64, 60),
        effects in prop::collection::vec(-1.0..1.0f64, 6),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let records: Vec<MetricRecord> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let g = i % 6;
                let intervened = (i / 6) % 2 == 1;
                MetricRecord {
                    session: "s".into(),
                    intervention: "dampen".into(),
                    strength: if intervened { 10.0 } else { 0.0 },
                    slice: i / 6,
                    scope: "intra".into(),
                    unit: format!("u{g}"),
                    joint: None,
                    stream: "x".into(),
                    condition: if intervened { Condition::Intervened } else { Condition::Baseline },
                    metric: "m".into(),
                    value: v + effects[g] + if intervened { 0.4 } else { 0.0 },
                }
            })
            .collect();
        let relabeled: Vec<MetricRecord> = records
            .iter()
            .map(|r| MetricRecord { unit: format!("w{}", perm[r.unit[1..].parse::<usize>().unwrap()]), ..r.clone() })
            .collect();
        let formula = LmemFormula { with_joint: false, reference_joint: "RightHand".into() };
        let a = fit_lmem(&records.iter().collect::<Vec<_>>(), &formula).unwrap();
        let b = fit_lmem(&relabeled.iter().collect::<Vec<_>>(), &formula).unwrap();
        let (ea, eb) = (a.estimate(CONDITION).unwrap(), b.estimate(CONDITION).unwrap());
        prop_assert!((ea.coef - eb.coef).abs() < 1e-6);
        prop_assert!((ea.se - eb.se).abs() < 1e-6);
    }

    #[test]
    fn reml_ratio_is_bracketed_minimum(
        values in prop::collection::vec(-2.0..2.0f64, 48),
        effects in prop::collection::vec(-2.0..2.0f64, 8),
    ) {
        let groups: Vec<usize> = (0..48).map(|i| i % 8).collect();
        let x: Vec<f64> = (0..48).flat_map(|i| [1.0, ((i / 8) % 2) as f64]).collect();
        let y: Vec<f64> = values.iter().zip(&groups).map(|(v, g)| v + effects[*g]).collect();
        let problem = LmemProblem::new(&x, 2, &y, &groups).unwrap();
        let lambda = problem.optimize();
        let best = problem.objective(lambda);
        prop_assert!(best.is_finite());
        for probe in [0.0, lambda * 0.9, lambda * 1.1, lambda + 1e-3, 10.0 * lambda + 1.0] {
            prop_assert!(best <= problem.objective(probe) + 1e-7, "λ {lambda} obj {best} beaten at {probe}");
        }
    }
}

#[test]
fn measures_match_oracle_on_every_small_matrix() {
    // every shape up to 6×6 with at most 16 cells, all cell patterns
    for rows in 1..=6 {
        for cols in 1..=6 {
            let n = rows * cols;
            if n > 16 {
                continue;
            }
            for bits in 0u32..(1 << n) {
                let m = RecurrenceMatrix::from_cells(rows, cols, (0..n).map(|b| bits >> b & 1 == 1).collect());
                for exclude in [false, true] {
                    let r = rqa_measures(&m, 2, exclude).unwrap();
                    assert_eq!((r.rr, r.det, r.mean_lr), diagonal_oracle(&m, 2, exclude), "{rows}×{cols} {bits:b}");
                }
            }
        }
    }
}
