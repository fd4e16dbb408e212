use std::sync::OnceLock;

use nalgebra::Vector2;
use proptest::prelude::*;
use svip::geometry::{Footprint, Pose};
use svip::scenegraph::{segment, DemoTrace};
use svip::sim::{
    base_of, pole, sample_scenario, scripted_demos, DemoTask, ScenarioName, ARM_REACH, GRIPPER_RADIUS, LEFT, RIGHT,
};
use svip::validator::{
    build_collision_dataset, test_reachable, test_safe_biop, train_validator, CollisionSample, PlacementGrid,
    ValidatorError, ValidatorModel, ValidatorParams, ValidatorReport, SAFETY_MARGIN, T_SAMPLES,
};

const MANIPULATED: [&str; 2] = ["socket", "peg"];

fn demos() -> &'static [DemoTrace] {
    static D: OnceLock<Vec<DemoTrace>> = OnceLock::new();
    D.get_or_init(|| scripted_demos(DemoTask::Insertion, 10, 2).unwrap())
}

fn fitted() -> &'static (ValidatorModel, ValidatorReport, Vec<CollisionSample>) {
    static M: OnceLock<(ValidatorModel, ValidatorReport, Vec<CollisionSample>)> = OnceLock::new();
    M.get_or_init(|| {
        let data = build_collision_dataset(demos(), &PlacementGrid::default()).unwrap();
        let (m, r) = train_validator("insert", &MANIPULATED, &data, &ValidatorParams::default()).unwrap();
        (m, r, data)
    })
}

fn obstacle_radius(nu: [f64; 3]) -> f64 {
    let (p, c) = (pole(Pose::identity()), svip::sim::cup(Pose::identity()));
    let r = |fp: Footprint| match fp {
        Footprint::Disk { radius } => radius,
        Footprint::Rect { .. } => unreachable!(),
    };
    if nu == p.nu() {
        r(p.footprint)
    } else {
        assert_eq!(nu, c.nu());
        r(c.footprint)
    }
}

/// Clearance between the gripper disks alone and the obstacle, at the
/// recorded frames from the sample's start to the end of the skill.
fn gripper_only_clearance(trace: &DemoTrace, s: &CollisionSample) -> f64 {
    let seq = segment(trace).unwrap();
    let (pre, mid, eff) = seq.phase_indices(&seq.contact_rich[0]);
    let end = if eff.is_empty() { mid.end } else { eff.end };
    let t = (pre.start..pre.end)
        .find(|&t| trace.steps[t].grippers[LEFT].pose == s.q[0] && trace.steps[t].grippers[RIGHT].pose == s.q[1])
        .expect("sample start lies in the pre-contact phase");
    let at = Vector2::new(s.p[0], s.p[1]);
    let r = obstacle_radius(s.nu);
    trace.steps[t..end]
        .iter()
        .flat_map(|st| [LEFT, RIGHT].map(|h| (st.grippers[h].pose.xy() - at).norm() - GRIPPER_RADIUS - r))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

#[test]
fn dataset_covers_every_demo_time_and_cell() {
    let (_, _, data) = fitted();
    assert_eq!(data.len(), demos().len() * T_SAMPLES * PlacementGrid::default().len());
    assert!(data.iter().all(|s| s.delta >= 0.0 && s.delta.is_finite()));
    let unsafe_n = data.iter().filter(|s| s.delta <= SAFETY_MARGIN).count();
    assert!(unsafe_n > 0 && unsafe_n < data.len());
}

#[test]
fn labels_never_exceed_gripper_only_clearance() {
    let (_, _, data) = fitted();
    let per_demo = T_SAMPLES * PlacementGrid::default().len();
    for (i, s) in data.iter().enumerate().step_by(7) {
        let bound = gripper_only_clearance(&demos()[i / per_demo], s);
        assert!(s.delta <= bound + 1e-9, "sample {i}: {} > {bound}", s.delta);
    }
}

#[test]
fn held_out_fidelity() {
    let (_, r, _) = fitted();
    assert!(r.val_mae <= 0.03, "{r:?}");
    assert!(r.val_agreement >= 0.9, "{r:?}");
    assert!(!r.degenerate_labels);
}

#[test]
fn fresh_demos_and_placements_generalize() {
    let (m, _, _) = fitted();
    let other = scripted_demos(DemoTask::Insertion, 5, 77).unwrap();
    let grid = PlacementGrid {
        seed: 9,
        ..PlacementGrid::default()
    };
    let test = build_collision_dataset(&other, &grid).unwrap();
    let (mut err, mut agree) = (0.0, 0usize);
    for s in &test {
        let d = m.predict(&s.q, s.p, s.nu).unwrap();
        err += (d - s.delta).abs();
        agree += usize::from((d > SAFETY_MARGIN) == (s.delta > SAFETY_MARGIN));
    }
    let n = test.len() as f64;
    assert!(err / n <= 0.03, "mae {}", err / n);
    assert!(agree as f64 / n >= 0.9, "agreement {}", agree as f64 / n);
}

#[test]
fn too_few_samples_is_an_error() {
    let (_, _, data) = fitted();
    let r = train_validator("insert", &MANIPULATED, &data[..10], &ValidatorParams::default());
    assert!(matches!(r, Err(ValidatorError::TooFewSamples { got: 10, .. })));
}

#[test]
fn reachability_is_a_disk_around_the_base() {
    for arm in [LEFT, RIGHT] {
        let b = base_of(arm);
        let b = Vector2::new(b[0], b[1]);
        for k in 0..16 {
            let a = k as f64 * std::f64::consts::TAU / 16.0;
            let u = Vector2::new(a.cos(), a.sin());
            assert!(test_reachable(arm, b + u * (ARM_REACH - 1e-6)));
            assert!(!test_reachable(arm, b + u * (ARM_REACH + 1e-6)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn larger_margins_are_never_more_permissive(seed in 0u64..200, lo in 0.0..0.1f64, extra in 0.0..0.1f64) {
        let (m, _, _) = fitted();
        let sc = sample_scenario(ScenarioName::Unsafe, seed).unwrap();
        let q = [sc.state.arm(LEFT).unwrap().pose, sc.state.arm(RIGHT).unwrap().pose];
        if test_safe_biop(m, &sc.state, &q, lo + extra) {
            prop_assert!(test_safe_biop(m, &sc.state, &q, lo));
        }
    }

    #[test]
    fn predictions_are_nonnegative_and_deterministic(i in 0usize..1250, dx in -0.3..0.3f64) {
        let (m, _, data) = fitted();
        let s = &data[i];
        let p = [s.p[0] + dx, s.p[1]];
        let a = m.predict(&s.q, p, s.nu).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a.to_bits(), m.predict(&s.q, p, s.nu).unwrap().to_bits());
    }
}
