mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use common::quick_generators;
use nalgebra::Vector3;
use proptest::prelude::*;
use svip::generator::{
    canonicalize, sample_config, sample_switching_conditions, sample_trajectory, sub_seed, train_config_generator,
    train_traj_generator, GeneratorError, HyperParams, NoiseSchedule, SkillGenerators, SwitchStream, Symmetry,
    WAYPOINTS,
};
use svip::geometry::{PointCloud, Pose};
use svip::pipeline::SkillExamples;
use svip::sim::DemoTask;

fn insertion() -> &'static (SkillGenerators, SkillExamples) {
    static G: OnceLock<(SkillGenerators, SkillExamples)> = OnceLock::new();
    G.get_or_init(|| quick_generators(DemoTask::Insertion, 20, 30))
}

fn clouds(ex: &SkillExamples, i: usize) -> BTreeMap<String, PointCloud> {
    ex.trajectories.iter().map(|(o, d)| (o.clone(), d[i].0.clone())).collect()
}

fn rigid() -> impl Strategy<Value = Pose> {
    (-0.5..0.5f64, -0.5..0.5f64, -PI..PI).prop_map(|(x, y, a)| Pose::planar(x, y, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn descriptor_is_invariant_and_frame_equivariant(t in rigid(), i in 0usize..20) {
        let c = &insertion().1.trajectories["peg"][i].0;
        let a = canonicalize(c).unwrap();
        let b = canonicalize(&c.transformed(&t)).unwrap();
        for (x, y) in a.descriptor.iter().zip(&b.descriptor) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        prop_assert!((t * a.frame).approx_eq(&b.frame, 1e-6));
    }

    #[test]
    fn trajectories_move_with_the_cloud(t in rigid(), seed in any::<u64>(), i in 0usize..20) {
        let (gens, ex) = insertion();
        for (o, den) in &gens.trajectories {
            let c = &ex.trajectories[o][i].0;
            let a = sample_trajectory(den, c, seed).unwrap();
            let b = sample_trajectory(den, &c.transformed(&t), seed).unwrap();
            prop_assert_eq!(a.len(), WAYPOINTS);
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((t * *p).approx_eq(q, 1e-6));
            }
        }
    }

    #[test]
    fn joint_draw_is_the_tuple_of_factor_draws(seed in any::<u64>(), i in 0usize..20) {
        let (gens, ex) = insertion();
        let cl = clouds(ex, i);
        let joint = sample_switching_conditions(gens, &cl, seed).unwrap();
        let (q_pre, q_eff) = sample_config(gens.config.as_ref().unwrap(), sub_seed(seed, "q")).unwrap();
        prop_assert_eq!(joint.q_pre, q_pre);
        prop_assert_eq!(joint.q_eff, q_eff);
        for (o, den) in &gens.trajectories {
            let tau = sample_trajectory(den, &cl[o], sub_seed(seed, &format!("tau:{o}"))).unwrap();
            prop_assert_eq!(&joint.trajectories[o], &tau);
        }
    }

    #[test]
    fn sampled_rotations_are_orthonormal(seed in any::<u64>()) {
        let (gens, ex) = insertion();
        let dv = sample_switching_conditions(gens, &clouds(ex, 0), seed).unwrap();
        for p in dv.trajectories.values().flatten() {
            let m = p.rotation.to_rotation_matrix().into_inner();
            prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn stream_yields_fresh_draws_until_budget() {
    let (gens, ex) = insertion();
    let cl = clouds(ex, 0);
    let mut s = SwitchStream::new(gens, 11, 4);
    let draws: Vec<_> = std::iter::from_fn(|| s.next(&cl).unwrap()).collect();
    assert_eq!(draws.len(), 4);
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(draws[i], draws[j]);
        }
    }
    assert!(SwitchStream::new(gens, 11, 0).next(&cl).unwrap().is_none());
}

#[test]
fn missing_cloud_or_generator_is_an_error() {
    let (gens, ex) = insertion();
    let mut cl = clouds(ex, 0);
    cl.remove("peg");
    assert!(matches!(sample_switching_conditions(gens, &cl, 0), Err(GeneratorError::MissingCloud(o)) if o == "peg"));
    let bare = SkillGenerators {
        config: None,
        ..gens.clone()
    };
    assert!(matches!(
        sample_switching_conditions(&bare, &clouds(ex, 0), 0),
        Err(GeneratorError::MissingGenerator(_))
    ));
}

#[test]
fn ragged_trajectories_are_rejected() {
    let data = &insertion().1.trajectories["peg"];
    let mut bad = data.clone();
    bad[3].1.pop();
    let r = train_traj_generator(&bad, NoiseSchedule::default(), &HyperParams::default(), &Symmetry::None);
    assert!(matches!(r, Err(GeneratorError::InconsistentLength { .. })));
    let r = train_traj_generator(&data[..5], NoiseSchedule::default(), &HyperParams::default(), &Symmetry::None);
    assert!(matches!(r, Err(GeneratorError::TooFewSamples { .. })));
}

fn small(epochs: usize) -> HyperParams {
    HyperParams {
        hidden: vec![64, 64],
        epochs,
        lr: 0.05,
        ..HyperParams::default()
    }
}

#[test]
fn constant_configs_collapse_to_the_constant() {
    let q = [Pose::planar(-0.3, 0.1, 0.4), Pose::planar(0.25, -0.05, 2.0)];
    let data = vec![(q, q); 20];
    let (den, _) = train_config_generator(&data, NoiseSchedule::default(), &small(50)).unwrap();
    for seed in 0..20 {
        let (a, b) = sample_config(&den, seed).unwrap();
        for (s, t) in a.iter().chain(&b).zip(q.iter().chain(&q)) {
            assert!((s.xy() - t.xy()).norm() < 0.01);
            assert!(svip::geometry::wrap_angle(s.yaw() - t.yaw()).abs() < 0.05);
        }
    }
}

#[test]
fn repeated_trajectory_collapses_to_it() {
    let (cloud, tau) = insertion().1.trajectories["peg"][0].clone();
    let data = vec![(cloud.clone(), tau.clone()); 20];
    let (den, _) = train_traj_generator(&data, NoiseSchedule::default(), &small(50), &Symmetry::None).unwrap();
    let n = 10;
    let mut err = vec![Vector3::zeros(); WAYPOINTS];
    let mut yaw = vec![0.0; WAYPOINTS];
    for seed in 0..n {
        let s = sample_trajectory(&den, &cloud, seed).unwrap();
        for k in 0..WAYPOINTS {
            err[k] += (s[k].translation - tau[k].translation) / n as f64;
            yaw[k] += svip::geometry::wrap_angle(s[k].yaw() - tau[k].yaw()) / n as f64;
        }
    }
    assert!(err.iter().all(|e| e.norm() < 0.01), "{err:?}");
    assert!(yaw.iter().all(|a| a.abs() < 0.05), "{yaw:?}");
}

/// Kernel-density oracle: fraction of draws within `r` of some training point.
fn near_training(draws: &[[Pose; 2]], train: &[[Pose; 2]], r: f64) -> f64 {
    let hits = draws
        .iter()
        .filter(|d| {
            train
                .iter()
                .any(|t| d.iter().zip(t).all(|(a, b)| (a.xy() - b.xy()).norm() < r))
        })
        .count();
    hits as f64 / draws.len() as f64
}

#[test]
fn two_mode_configs_land_near_a_mode() {
    let mode = |s: f64| [Pose::planar(-0.3 * s, 0.15 * s, 0.0), Pose::planar(0.3 * s, 0.15, PI)];
    let data: Vec<_> = (0..50)
        .map(|i| {
            let m = mode(if i % 2 == 0 { 1.0 } else { -1.0 });
            (m, m)
        })
        .collect();
    // The default schedule keeps most of the signal at its last step, so
    // chains started from pure noise stall between modes.
    let schedule = NoiseSchedule::linear(50, 1e-4, 0.2).unwrap();
    let hp = HyperParams {
        hidden: vec![128; 3],
        epochs: 3000,
        lr: 0.03,
        ..HyperParams::default()
    };
    let (den, report) = train_config_generator(&data, schedule, &hp).unwrap();
    let l = &report.epoch_losses;
    let head = l[..20].iter().sum::<f64>() / 20.0;
    let tail = l[l.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "loss {head} -> {tail}");
    let draws: Vec<[Pose; 2]> = (0..100).map(|s| sample_config(&den, s).unwrap().0).collect();
    let train: Vec<[Pose; 2]> = data.iter().map(|d| d.0).collect();
    let f = near_training(&draws, &train, 0.05);
    assert!(f >= 0.95, "{f}");
}

#[test]
fn handoff_grasps_stay_in_demonstrated_support() {
    let (gens, ex) = quick_generators(DemoTask::Handoff, 30, 300);
    let data = &ex.trajectories["o1"];
    let grasp = |cloud: &PointCloud, tau: &[Pose]| {
        let c = cloud.centroid().unwrap();
        let last = tau.last().unwrap();
        (last.translation - c).xy().norm()
    };
    let train: Vec<f64> = data.iter().map(|(c, t)| grasp(c, t)).collect();
    for (i, (cloud, _)) in data.iter().enumerate() {
        let tau = sample_trajectory(&gens.trajectories["o1"], cloud, 1000 + i as u64).unwrap();
        let g = grasp(cloud, &tau);
        let nearest = train.iter().map(|t| (t - g).abs()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 0.03, "draw {i}: offset {g:.3}, nearest {nearest:.3}");
    }
}
