use std::f64::consts::PI;

use nalgebra::Vector3;
use svip::geometry::{Footprint, Pose};
use svip::planner::desk::scripted_grasps;
use svip::scenegraph::{graph_of_state, segment, EdgeLabel, Timestep};
use svip::sim::{
    exec_policy, exec_primitive, min_distance_oracle, pole, sample_scenario, scripted_demos, synth_cloud,
    CloudOptions, DemoTask, PolicyEmulator, PolicyFailure, Primitive, ScenarioName, SimError, SweptBody,
    WorldState, ID_HALF, LEFT, OOD_HALF, PEG_CENTER, RIGHT, SOCKET_CENTER,
};

const DRAWS: u64 = 10_000;

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn new() -> Self {
        Self {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    /// Inside `[a, b]` and spanning at least 95% of it.
    fn fills(&self, a: f64, b: f64) -> bool {
        self.lo >= a - 1e-12 && self.hi <= b + 1e-12 && (self.hi - self.lo) >= 0.95 * (b - a)
    }
}

fn square_ranges(name: ScenarioName, half: f64, heading: Option<f64>) {
    let mut r: Vec<Range> = (0..6).map(|_| Range::new()).collect();
    for seed in 0..DRAWS {
        let s = sample_scenario(name, seed).unwrap().state;
        for (k, (id, c)) in [("socket", SOCKET_CENTER), ("peg", PEG_CENTER)].iter().enumerate() {
            let p = &s.objects[*id].pose;
            r[3 * k].add(p.translation.x - c[0]);
            r[3 * k + 1].add(p.translation.y - c[1]);
            r[3 * k + 2].add(p.yaw());
        }
    }
    for k in 0..2 {
        assert!(r[3 * k].fills(-half, half), "{name} x");
        assert!(r[3 * k + 1].fills(-half, half), "{name} y");
        match heading {
            Some(h) => {
                assert!(r[3 * k + 2].fills(-h, h), "{name} heading");
                assert!(r[3 * k + 2].lo > -h && r[3 * k + 2].hi < h);
            }
            None => assert!(r[3 * k + 2].lo == 0.0 && r[3 * k + 2].hi == 0.0),
        }
    }
}

#[test]
fn in_distribution_ranges() {
    square_ranges(ScenarioName::Id, ID_HALF, None);
}

#[test]
fn xy_ood_ranges() {
    square_ranges(ScenarioName::XyOod, OOD_HALF, None);
}

#[test]
fn xyh_ood_ranges() {
    square_ranges(ScenarioName::XyhOod, OOD_HALF, Some(0.5 * PI));
}

#[test]
fn unreachable_objects_share_a_half_with_free_heading() {
    let mut yaw = Range::new();
    let (mut left, mut right) = (0, 0);
    for seed in 0..DRAWS {
        let s = sample_scenario(ScenarioName::Unreachable, seed).unwrap().state;
        let (a, b) = (&s.objects["socket"].pose, &s.objects["peg"].pose);
        assert!(a.translation.x * b.translation.x > 0.0, "seed {seed}");
        if a.translation.x < 0.0 {
            left += 1;
        } else {
            right += 1;
        }
        yaw.add(a.yaw());
        yaw.add(b.yaw());
    }
    assert!(yaw.fills(-PI, PI));
    assert!(left > 0 && right > 0);
}

#[test]
fn unsafe_places_a_clear_pole() {
    for seed in 0..1000 {
        let s = sample_scenario(ScenarioName::Unsafe, seed).unwrap().state;
        let pole = &s.objects["pole"];
        for id in ["socket", "peg"] {
            let o = &s.objects[id];
            assert!(pole.footprint.distance_to(&pole.pose, &o.footprint, &o.pose) > 0.0);
        }
    }
}

/// Every timestep in which an arm holds an object keeps the object rigidly
/// attached: object ∘ g = gripper.
fn assert_holding_consistent(steps: &[Timestep], arm: &str, object: &str, g: &Pose) {
    for st in steps {
        let expect = st.objects[object] * *g;
        assert!(expect.approx_eq(&st.grippers[arm].pose, 1e-9), "t={}", st.t);
    }
}

fn pick(state: &WorldState, arm: &str, object: &str) -> (WorldState, Pose) {
    let o = &state.objects[object];
    let g = scripted_grasps(&o.footprint)
        .into_iter()
        .find(|g| state.arm(arm).unwrap().reaches((o.pose * *g).xy()))
        .unwrap();
    let (s, _) = exec_primitive(state, &Primitive::Move { arm: arm.into(), to: o.pose * g }).unwrap();
    let (s, _) = exec_primitive(&s, &Primitive::Pick { arm: arm.into(), object: object.into() }).unwrap();
    (s, g)
}

#[test]
fn place_into_bin_and_hold_rigidly() {
    let s0 = sample_scenario(ScenarioName::TableToBin, 3).unwrap().state;
    let (s, g) = pick(&s0, LEFT, "o1");
    let graph = graph_of_state(&s.header(), &s.snapshot()).unwrap();
    assert!(graph.edges_labeled(EdgeLabel::AtGrasp).any(|e| e.src == LEFT && e.dst == "o1"));
    let bin = s.regions["bin"].pose;
    let (s, traj) = exec_primitive(&s, &Primitive::Move { arm: LEFT.into(), to: bin * g }).unwrap();
    assert!(!traj.is_empty());
    assert_holding_consistent(&traj, LEFT, "o1", &g);
    let (s, _) = exec_primitive(&s, &Primitive::Place { arm: LEFT.into() }).unwrap();
    assert!(s.in_region("bin", "o1"));
    assert!(!s.is_held("o1"));
}

#[test]
fn moving_out_of_reach_is_an_error() {
    let s = WorldState::desk();
    let r = exec_primitive(&s, &Primitive::Move { arm: LEFT.into(), to: Pose::planar(0.5, 0.0, 0.0) });
    assert!(matches!(r, Err(SimError::Unreachable { .. })));
}

#[test]
fn demos_hold_rigidly_and_segment() {
    for task in DemoTask::ALL {
        for d in scripted_demos(task, 3, 11).unwrap() {
            assert_eq!(segment(&d).unwrap().contact_rich.len(), 1);
            for w in d.steps.windows(2) {
                let g = graph_of_state(&d.header, &w[1]).unwrap();
                for e in g.edges_labeled(EdgeLabel::AtGrasp) {
                    let prev = graph_of_state(&d.header, &w[0]).unwrap();
                    if !prev.edges_labeled(EdgeLabel::AtGrasp).any(|p| p.src == e.src && p.dst == e.dst) {
                        continue;
                    }
                    // Both grippers may move the object only during the coordinated skill.
                    let holders = g.edges_labeled(EdgeLabel::AtGrasp).filter(|x| x.dst == e.dst).count();
                    if holders > 1 {
                        continue;
                    }
                    let g0 = w[0].objects[&e.dst].inverse() * w[0].grippers[&e.src].pose;
                    let g1 = w[1].objects[&e.dst].inverse() * w[1].grippers[&e.src].pose;
                    assert!(g0.approx_eq(&g1, 1e-9), "{task} t={}", w[1].t);
                }
            }
        }
    }
    assert!(scripted_demos(DemoTask::Insertion, 0, 1).unwrap().is_empty());
    assert_eq!(scripted_demos(DemoTask::Handoff, 20, 1).unwrap().len(), 20);
}

#[test]
fn scenario_and_primitives_replay_bitwise() {
    let run = || {
        let s0 = sample_scenario(ScenarioName::XyhOod, 5).unwrap().state;
        let (s, _) = pick(&s0, LEFT, "socket");
        let (s, traj) = exec_primitive(&s, &Primitive::Move { arm: LEFT.into(), to: Pose::planar(-0.2, 0.1, 0.3) }).unwrap();
        (s, traj)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&ta).unwrap(), serde_json::to_string(&tb).unwrap());
}

/// Rebuilds demonstration `k`'s state at the start of the skill from the
/// emulator's support model.
fn demo_start(emu: &PolicyEmulator, k: usize, shift: [f64; 2]) -> WorldState {
    let sup = &emu.support;
    let mut s = WorldState::desk();
    s.objects.insert("socket".into(), svip::sim::socket(sup.initial_poses["socket"][k]));
    s.objects.insert("peg".into(), svip::sim::peg(sup.initial_poses["peg"][k]));
    for (arm, o) in [(LEFT, "socket"), (RIGHT, "peg")] {
        let to = sup.initial_poses[o][k] * sup.grasps[o][k];
        s = exec_primitive(&s, &Primitive::Move { arm: arm.into(), to }).unwrap().0;
        s = exec_primitive(&s, &Primitive::Pick { arm: arm.into(), object: o.into() }).unwrap().0;
    }
    let d = Pose::planar(shift[0], shift[1], 0.0);
    let q = sup.configs[k];
    exec_primitive(&s, &Primitive::Approach { left: d * q[0], right: d * q[1] }).unwrap().0
}

fn insertion_emulator() -> PolicyEmulator {
    let demos = scripted_demos(DemoTask::Insertion, 20, 4).unwrap();
    PolicyEmulator::fit("insert", DemoTask::Insertion.template(), &demos).unwrap()
}

#[test]
fn emulator_accepts_demonstrated_starts() {
    let emu = insertion_emulator();
    for k in 0..emu.support.configs.len() {
        let s = demo_start(&emu, k, [0.0, 0.0]);
        let (end, out) = exec_policy(&s, &emu);
        assert!(out.success(), "demo {k}: {:?}", out.failure);
        let g = graph_of_state(&end.header(), &end.snapshot()).unwrap();
        let linked = g.keys().into_iter().any(|(a, b, l)| {
            let pair = [a.as_str(), b.as_str()];
            l != EdgeLabel::AtGrasp && (pair == ["socket", "peg"] || pair == ["peg", "socket"])
        });
        assert!(linked, "demo {k}: {:?}", g.keys());
        let again = exec_policy(&s, &emu);
        assert_eq!(again.0, end);
        assert_eq!(again.1.failure, out.failure);
    }
}

#[test]
fn emulator_rejects_displaced_starts() {
    let emu = insertion_emulator();
    let s = demo_start(&emu, 0, [0.0, 0.2]);
    let (end, out) = exec_policy(&s, &emu);
    assert!(matches!(out.failure, Some(PolicyFailure::OutOfSupport { .. })), "{:?}", out.failure);
    assert_eq!(end, s);
}

#[test]
fn emulator_reports_collisions_on_the_coordinated_path() {
    let emu = insertion_emulator();
    let mut s = demo_start(&emu, 0, [0.0, 0.0]);
    // The peg travels straight onto the socket center.
    let (a, b) = (s.objects["peg"].pose.xy(), s.objects["socket"].pose.xy());
    let on_path = a + (b - a) * 0.4;
    let obstacle = pole(Pose::planar(on_path.x, on_path.y, 0.0));
    for (id, o) in &s.objects {
        assert!(obstacle.footprint.distance_to(&obstacle.pose, &o.footprint, &o.pose) > 0.0, "{id}");
    }
    s.objects.insert("pole".into(), obstacle);
    let (_, out) = exec_policy(&s, &emu);
    assert!(
        matches!(&out.failure, Some(PolicyFailure::Collision { obstacle, .. }) if obstacle == "pole"),
        "{:?}",
        out.failure
    );
}

#[test]
fn clouds_lie_on_the_object_and_occlusion_halves_them() {
    let mut s = WorldState::desk();
    s.objects.insert("cup".into(), svip::sim::cup(Pose::planar(0.1, -0.1, 0.4)));
    let exact = CloudOptions {
        sigma: 0.0,
        occlusion: false,
    };
    let c = synth_cloud(&s, "cup", 1, exact).unwrap();
    assert_eq!(c.len(), 256);
    for p in &c.points {
        let r = (p.xy() - nalgebra::Vector2::new(0.1, -0.1)).norm();
        assert!(r <= 0.03 + 1e-9 && p.z >= -1e-9 && p.z <= 0.08 + 1e-9);
    }
    let occluded = synth_cloud(&s, "cup", 1, CloudOptions { occlusion: true, ..exact }).unwrap();
    assert!(occluded.len() as f64 <= 0.6 * c.len() as f64, "{}", occluded.len());
}

fn disk(id: &str, x: f64, y: f64, r: f64) -> SweptBody {
    SweptBody {
        id: id.into(),
        footprint: Footprint::Disk { radius: r },
        pose: Pose::planar(x, y, 0.0),
    }
}

/// Dense sampling of the linearly interpolated path.
fn sampled_clearance(path: &[[f64; 2]], r: f64, at: [f64; 2], obstacle_r: f64) -> f64 {
    let mut best = f64::INFINITY;
    for w in path.windows(2) {
        for i in 0..=2000 {
            let s = i as f64 / 2000.0;
            let p = Vector3::new(w[0][0] + s * (w[1][0] - w[0][0]), w[0][1] + s * (w[1][1] - w[0][1]), 0.0);
            best = best.min(((p.x - at[0]).hypot(p.y - at[1]) - r - obstacle_r).max(0.0));
        }
    }
    best
}

#[test]
fn oracle_matches_dense_sampling_of_swept_disks() {
    let path = [[-0.3, 0.1], [0.0, -0.05], [0.25, 0.2]];
    let traj: Vec<Vec<SweptBody>> = path.iter().map(|p| vec![disk("g", p[0], p[1], 0.03)]).collect();
    for at in [[0.0, 0.1], [0.1, -0.2], [-0.3, 0.3], [0.0, -0.05]] {
        let d = min_distance_oracle(&[traj.clone()], &Footprint::Disk { radius: 0.02 }, &Pose::planar(at[0], at[1], 0.0));
        let oracle = sampled_clearance(&path, 0.03, at, 0.02);
        assert!((d - oracle).abs() < 1e-4, "{at:?}: {d} vs {oracle}");
    }
    // Stationary arm half a meter away.
    let still = vec![vec![disk("g", 0.0, 0.0, 0.03)]];
    let d = min_distance_oracle(&[still], &Footprint::Disk { radius: 0.02 }, &Pose::planar(0.5, 0.0, 0.0));
    assert!((d - 0.45).abs() < 1e-12);
}
