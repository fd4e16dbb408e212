//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::{handoff_trace, match_up_to_renaming, trained_insertion, Handoff, HANDOFF_EFF, HANDOFF_PARAMS, HANDOFF_PRE};
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svip::generator::{
    sample_config, sample_switching_conditions, sample_trajectory, sub_seed, Denoiser, NoiseSchedule,
};
use svip::geometry::{rot6d_decode, rot6d_encode, PointCloud, Pose};
use svip::pipeline::{compile_skill, run_bench, run_trial, SafetyMode, TrainedSkill};
use svip::planner::SolveConfig;
use svip::scenegraph::{segment, EdgeLabel, SceneGraph};
use svip::sim::{
    nearest_demo_replay, sample_scenario, scripted_demos, synth_cloud, CloudOptions, DemoTask, ScenarioName,
};
use svip::symbolic::{parse_domain, parse_problem, serialize_domain, serialize_problem};
use svip::validator::{build_collision_dataset, train_validator, PlacementGrid, ValidatorParams, SAFETY_MARGIN};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn trial_config(seed: u64) -> SolveConfig {
    SolveConfig {
        seed,
        timeout: 60.0,
        ..SolveConfig::default()
    }
}

fn plan_structure(skill: &TrainedSkill) -> Verdict {
    let (mut id_ok, mut un_ok, mut worst, mut total) = (0, 0, 0.0f64, 0.0);
    let mut notes = Vec::new();
    for seed in 0..20 {
        let sc = sample_scenario(ScenarioName::Id, seed).unwrap();
        let r = run_trial(skill, &sc, SafetyMode::Validator, &trial_config(seed)).unwrap().record;
        worst = worst.max(r.compute_seconds);
        total += r.compute_seconds;
        if r.plan_length == Some(7) {
            id_ok += 1;
        } else {
            notes.push(format!("ID {seed}: {:?}", r.plan_length));
        }
        let sc = sample_scenario(ScenarioName::Unreachable, seed).unwrap();
        let r = run_trial(skill, &sc, SafetyMode::Validator, &trial_config(seed)).unwrap().record;
        worst = worst.max(r.compute_seconds);
        total += r.compute_seconds;
        if r.plan_length.is_some_and(|l| l > 7) && !r.relocated.is_empty() {
            un_ok += 1;
        } else {
            notes.push(format!("unreachable {seed}: {:?} {:?}", r.plan_length, r.failure));
        }
    }
    verdict(
        id_ok == 20 && un_ok == 20 && worst < 60.0,
        format!(
            "ID length 7 in {id_ok}/20, unreachable longer with relocation in {un_ok}/20, mean {:.2} s, slowest {worst:.2} s {notes:?}",
            total / 40.0
        ),
    )
}

fn policy_gap(skill: &TrainedSkill) -> Verdict {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..50).collect();
    let cfg = SolveConfig {
        timeout: 60.0,
        ..SolveConfig::default()
    };
    let id = run_bench(skill, ScenarioName::Id, &seeds, SafetyMode::Validator, &cfg).unwrap();
    let ood = run_bench(skill, ScenarioName::XyOod, &seeds, SafetyMode::Validator, &cfg).unwrap();
    let direct = seeds
        .iter()
        .filter(|&&s| nearest_demo_replay(&sample_scenario(ScenarioName::XyOod, s).unwrap().state, &skill.emulator).is_ok())
        .count();
    let direct_rate = 100.0 * direct as f64 / 50.0;
    let (a, b) = (id.aggregates.success_rate, ood.aggregates.success_rate);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        a >= 95.0 && b >= 90.0 && direct_rate <= 60.0 && secs < 600.0,
        format!("pipeline ID {a:.0}%, XY-OOD {b:.0}%; direct policy XY-OOD {direct_rate:.0}%; {secs:.1} s"),
    )
}

fn constraint_handling(skill: &TrainedSkill) -> Verdict {
    let (mut plans, mut relocated, mut clear, mut violations) = (0, 0, 0, 0);
    for seed in 0..20 {
        let sc = sample_scenario(ScenarioName::Unsafe, seed).unwrap();
        let r = run_trial(skill, &sc, SafetyMode::Validator, &trial_config(seed)).unwrap().record;
        if r.plan_length.is_none() {
            continue;
        }
        plans += 1;
        if r.relocated.iter().any(|o| o == "pole") {
            relocated += 1;
        } else if r.clearance.is_some_and(|d| d > 0.05) {
            clear += 1;
        } else {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("{plans}/20 plans: {relocated} relocate the pole, {clear} start with clearance > 0.05 m, {violations} violate"),
    )
}

fn scenario_clouds(state: &svip::sim::WorldState, seed: u64) -> BTreeMap<String, PointCloud> {
    state
        .objects
        .keys()
        .map(|o| (o.clone(), synth_cloud(state, o, seed, CloudOptions::default()).unwrap()))
        .collect()
}

fn equivariance(skill: &TrainedSkill) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let t = Pose::planar(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let state = sample_scenario(ScenarioName::XyOod, i).unwrap().state;
        let clouds = scenario_clouds(&state, i);
        for (o, den) in &skill.generators.trajectories {
            let a = sample_trajectory(den, &clouds[o], i).unwrap();
            let b = sample_trajectory(den, &clouds[o].transformed(&t), i).unwrap();
            for (p, q) in a.iter().zip(&b) {
                let e = t * *p;
                worst = worst.max((e.translation - q.translation).norm()).max(e.rotation.angle_to(&q.rotation));
            }
        }
    }
    verdict(worst <= 1e-6, format!("100 transforms, largest deviation {worst:.2e}"))
}

fn factorization(skill: &TrainedSkill) -> Verdict {
    let gens = &skill.generators;
    let mut equal = 0;
    for seed in 0..100u64 {
        let state = sample_scenario(ScenarioName::Id, seed).unwrap().state;
        let clouds = scenario_clouds(&state, seed);
        let joint = sample_switching_conditions(gens, &clouds, seed).unwrap();
        let (q_pre, q_eff) = sample_config(gens.config.as_ref().unwrap(), sub_seed(seed, "q")).unwrap();
        let bits = |p: &Pose| p.to_array().map(f64::to_bits);
        let mut same = joint.q_pre.iter().zip(&q_pre).chain(joint.q_eff.iter().zip(&q_eff)).all(|(a, b)| bits(a) == bits(b));
        for (o, den) in &gens.trajectories {
            let tau = sample_trajectory(den, &clouds[o], sub_seed(seed, &format!("tau:{o}"))).unwrap();
            same &= joint.trajectories[o].iter().zip(&tau).all(|(a, b)| bits(a) == bits(b));
        }
        equal += usize::from(same);
    }
    verdict(equal == 100, format!("{equal}/100 joint draws bitwise equal to per-factor draws"))
}

fn validator_fidelity() -> Verdict {
    let demos = scripted_demos(DemoTask::Insertion, 10, 2).unwrap();
    let grid = PlacementGrid::default();
    let data = build_collision_dataset(&demos, &grid).unwrap();
    let (_, r) = train_validator("insert", &["socket", "peg"], &data, &ValidatorParams::default()).unwrap();
    verdict(
        r.val_mae <= 0.03 && r.val_agreement >= 0.9,
        format!(
            "{}x{} grid x 10 demos, held-out MAE {:.4} m, agreement {:.1}% at {SAFETY_MARGIN} m",
            grid.nx,
            grid.ny,
            r.val_mae,
            100.0 * r.val_agreement
        ),
    )
}

fn grasps(g: &SceneGraph) -> BTreeSet<String> {
    g.edges_labeled(EdgeLabel::AtGrasp).map(|e| e.src.clone()).collect()
}

fn segmentation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ok = 0;
    for _ in 0..20 {
        let (a, b, c, d) = (
            rng.random_range(2..60),
            rng.random_range(2..60),
            rng.random_range(2..60),
            rng.random_range(2..60),
        );
        let h = Handoff {
            len: a + b + c + d,
            right_grasp: a,
            left_grasp: a + b,
            right_release: a + b + c,
            at: [rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)],
            wobble: 0.02,
        };
        let seq = segment(&handoff_trace(h)).unwrap();
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let good = seq.times() == [0, h.right_grasp, h.left_grasp, h.right_release]
            && seq.contact_rich.len() == 1
            && {
                let s = seq.contact_rich[0];
                (s.pre, s.mid, s.eff) == (1, 2, Some(3))
                    && grasps(seq.pre_graph(&s)) == set(&["right"])
                    && grasps(seq.mid_graph(&s)) == set(&["left", "right"])
                    && seq.eff_graph(&s).is_some_and(|g| grasps(g) == set(&["left"]))
            };
        ok += usize::from(good);
    }
    verdict(ok == 20, format!("{ok}/20 constructed traces segmented exactly"))
}

fn symbolic_fidelity() -> Verdict {
    let demos = scripted_demos(DemoTask::Handoff, 20, 5).unwrap();
    let mut ok = 0;
    let mut example = String::new();
    for d in demos.chunks(1) {
        let (_, a) = compile_skill("handoff", d).unwrap();
        let params: Vec<String> = a.parameters.iter().map(|p| p.name.clone()).collect();
        if let Some(s) = match_up_to_renaming(&params, &a.precondition, &a.effect, &HANDOFF_PARAMS, &HANDOFF_PRE, &HANDOFF_EFF) {
            ok += 1;
            example = format!("{s:?}");
        }
    }
    verdict(ok == 20, format!("{ok}/20 demos match the reference block; renaming {example}"))
}

fn numerical_hygiene() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_grad = 0.0f64;
    for n in 0..10u64 {
        let (d, c) = (rng.random_range(2..6), rng.random_range(0..4));
        let hidden = [rng.random_range(3..9), rng.random_range(3..9)];
        let den = Denoiser::new(d, c, NoiseSchedule::default(), &hidden, n);
        let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cond: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(1..=50);
        let (_, grad) = den.loss_and_grad(&x0, &cond, k, &eps).unwrap();
        let h = 1e-5;
        for i in 0..grad.len() {
            let mut p = den.clone();
            p.net.params_mut()[i] += h;
            let up = p.loss_and_grad(&x0, &cond, k, &eps).unwrap().0;
            p.net.params_mut()[i] -= 2.0 * h;
            let down = p.loss_and_grad(&x0, &cond, k, &eps).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            worst_grad = worst_grad.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
        }
    }
    let mut worst_rot = 0.0f64;
    for _ in 0..1000 {
        let q = UnitQuaternion::from_euler_angles(
            rng.random_range(-3.14..3.14),
            rng.random_range(-3.14..3.14),
            rng.random_range(-3.14..3.14),
        );
        worst_rot = worst_rot.max(rot6d_decode(&rot6d_encode(&q)).unwrap().angle_to(&q));
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let (mut files, mut exact) = (0, 0);
    for dir in ["domains", "tests/corpus"] {
        for e in fs::read_dir(root.join(dir)).unwrap() {
            let text = fs::read_to_string(e.unwrap().path()).unwrap();
            files += 1;
            let same = match parse_domain(&text) {
                Ok(d) => parse_domain(&serialize_domain(&d)).is_ok_and(|r| r == d),
                Err(_) => parse_problem(&text)
                    .is_ok_and(|p| parse_problem(&serialize_problem(&p)).is_ok_and(|r| r == p)),
            };
            exact += usize::from(same);
        }
    }
    verdict(
        worst_grad < 1e-4 && worst_rot < 1e-9 && exact == files,
        format!("gradient rel. error {worst_grad:.1e} on 10 networks; Rot6D error {worst_rot:.1e}; corpus {exact}/{files} exact"),
    )
}

fn main() -> ExitCode {
    let t = Instant::now();
    let skill = trained_insertion();
    println!("trained insertion skill in {:.1} s", t.elapsed().as_secs_f64());
    let criteria: [(&str, Box<dyn Fn() -> Verdict + '_>); 9] = [
        ("plan structure", Box::new(|| plan_structure(&skill))),
        ("hybrid vs policy gap", Box::new(|| policy_gap(&skill))),
        ("constraint handling", Box::new(|| constraint_handling(&skill))),
        ("generator equivariance", Box::new(|| equivariance(&skill))),
        ("factorized sampling", Box::new(|| factorization(&skill))),
        ("validator fidelity", Box::new(validator_fidelity)),
        ("segmentation", Box::new(segmentation)),
        ("symbolic fidelity", Box::new(symbolic_fidelity)),
        ("numerical hygiene", Box::new(numerical_hygiene)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += usize::from(!v.pass);
        println!("{} {}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
