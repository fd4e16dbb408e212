//! The desk domain: problems built from a world state, the stream
//! implementations behind its declarations, and plan execution.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gen_stream, test_stream, FluentState, Plan, StreamInput, StreamRegistry};
use crate::generator::{sample_config, sample_trajectory, SkillGenerators};
use crate::geometry::{Footprint, PointCloud, Pose};
use nalgebra::Vector2;
use crate::scenegraph::Timestep;
use crate::sim::{
    base_of, exec_policy, exec_primitive, min_distance_oracle, PolicyEmulator, Primitive, WorldState, ARM_REACH,
    LEFT, RIGHT, TABLE_HALF_X, TABLE_HALF_Y,
};
use crate::symbolic::{parse_domain, ActionSchema, Atom, Domain, Literal, Problem, SymbolicError, Term};
use crate::validator::{test_reachable, test_safe_biop, ValidatorModel, SAFETY_MARGIN};

pub const DESK_DOMAIN: &str = include_str!("../../domains/desk.svd");

/// Margin used by the planner's safety test: the validator's margin plus a
/// buffer for its regression error.
pub const PLANNER_MARGIN: f64 = SAFETY_MARGIN + 0.03;
/// Clearance between a scripted grasp and the object's surface.
pub const GRASP_GAP: f64 = 0.01;
/// Minimum distance between a sampled placement and other objects.
pub const PLACE_CLEARANCE: f64 = 0.05;
pub const PLACE_TRIES: usize = 200;

const MOVABLE: &str = "movable";

fn v(name: &str) -> Term {
    Term::Var(name.to_string())
}

/// Adds the planner's links to the generators: the start configuration must
/// come from the skill's configuration generator and each grasp from its
/// trajectory generator.
pub fn augment_bioperation(mut a: ActionSchema) -> ActionSchema {
    let skill = a.parameters[0].name.clone();
    if let Some(c) = a.constraint.iter().find(|c| c.atom.predicate == "SafeBiOp").cloned() {
        let (ql, qr) = (c.atom.args[3].clone(), c.atom.args[4].clone());
        a.precondition
            .push(Literal::pos(Atom::new("SwitchConf", vec![v(&skill), ql, qr])));
    }
    let grasps: Vec<Literal> = a
        .precondition
        .iter()
        .filter(|l| l.positive && l.atom.predicate == "AtGrasp")
        .map(|l| {
            Literal::pos(Atom::new(
                "SkillGrasp",
                vec![v(&skill), l.atom.args[1].clone(), l.atom.args[2].clone()],
            ))
        })
        .collect();
    a.precondition.extend(grasps);
    a
}

/// Parses the desk domain and installs compiled bimanual skills.
pub fn desk_domain(skills: &[ActionSchema]) -> Result<Domain, SymbolicError> {
    let mut d = parse_domain(DESK_DOMAIN)?;
    for s in skills {
        for p in &s.parameters {
            if !d.has_type(&p.ty) {
                let parent = if p.ty.ends_with("-skill") { "skill" } else { MOVABLE };
                d.types.insert(p.ty.clone(), parent.to_string());
            }
        }
        d.add_action(augment_bioperation(s.clone()))?;
    }
    Ok(d)
}

pub fn home_handle(arm: &str) -> String {
    format!("q_home_{arm}")
}

pub fn pose_handle(object: &str) -> String {
    format!("p_{object}")
}

/// Declares every object kind in `state` that the domain lacks.
pub fn declare_kinds(domain: &mut Domain, state: &WorldState) {
    for o in state.objects.values() {
        if !domain.has_type(&o.kind) {
            domain.types.insert(o.kind.clone(), MOVABLE.to_string());
        }
    }
}

/// Goal: the skill has run and both arms are back home.
pub fn skill_problem(state: &WorldState, skill: &str, manipulated: &[&str]) -> Problem {
    let g = |p: &str, args: &[&str]| Atom::ground(p, args);
    let mut p = Problem {
        name: format!("desk-{skill}"),
        domain: "desk".into(),
        ..Problem::default()
    };
    p.objects.insert(skill.to_string(), format!("{skill}-skill"));
    p.init.push(g("Skill", &[skill]));
    for (arm, ty) in [(LEFT, "left-gripper"), (RIGHT, "right-gripper")] {
        let q = home_handle(arm);
        p.objects.insert(arm.to_string(), ty.to_string());
        p.objects.insert(q.clone(), "conf".into());
        if let Some(a) = state.arms.get(arm) {
            p.values.insert(q.clone(), a.pose);
        }
        for pred in ["AtConf", "Home", "Conf"] {
            p.init.push(g(pred, &[arm, &q]));
        }
        p.init.push(g("Arm", &[arm]));
        p.init.push(g("HandEmpty", &[arm]));
        p.goal.push(Literal::pos(g("AtConf", &[arm, &q])));
    }
    for (id, o) in &state.objects {
        let h = pose_handle(id);
        p.objects.insert(id.clone(), o.kind.clone());
        p.objects.insert(h.clone(), "pose".into());
        p.values.insert(h.clone(), o.pose);
        p.init.push(g("AtPose", &[id, &h]));
        p.init.push(g("Pose", &[id, &h]));
        if o.graspable {
            p.init.push(g("Graspable", &[id]));
        }
    }
    for o in manipulated {
        p.init.push(g("Manipulates", &[skill, o]));
    }
    p.goal.push(Literal::pos(g("DoneBiOp", &[skill])));
    p
}

/// How the planner certifies `SafeBiOp`.
#[derive(Debug, Clone, Copy)]
pub enum Safety<'a> {
    /// Learned clearance regressor.
    Validator(&'a ValidatorModel),
    /// Analytic clearance of the skill's swept bodies.
    Oracle(&'a PolicyEmulator),
}

/// Analytic clearance between the skill run from `state` and every object
/// it does not manipulate.
pub fn oracle_clearance(emulator: &PolicyEmulator, state: &WorldState) -> Option<f64> {
    let bodies = emulator.template_bodies(state).ok()?;
    let held: Vec<&str> = emulator.template.held_at_start().into_iter().map(|(_, o)| o).collect();
    Some(
        state
            .objects
            .iter()
            .filter(|(id, _)| !held.contains(&id.as_str()))
            .map(|(_, o)| min_distance_oracle(std::slice::from_ref(&bodies), &o.footprint, &o.pose))
            .fold(f64::INFINITY, f64::min),
    )
}

/// The world implied by a symbolic state: placed objects at their poses,
/// held objects following their gripper.
pub fn world_of_fluents(initial: &WorldState, fs: &FluentState) -> Result<WorldState, String> {
    let mut w = initial.clone();
    let val = |n: &Term| fs.value(n.name()).copied().ok_or_else(|| format!("no value for {}", n.name()));
    let mut confs = BTreeMap::new();
    for a in fs.atoms {
        if a.predicate == "AtConf" {
            confs.insert(a.args[0].name().to_string(), val(&a.args[1])?);
        }
    }
    for (arm, q) in &confs {
        if let Some(s) = w.arms.get_mut(arm) {
            s.pose = *q;
            s.held = None;
            s.closed = false;
        }
    }
    for a in fs.atoms {
        match a.predicate.as_str() {
            "AtPose" => {
                if let Some(o) = w.objects.get_mut(a.args[0].name()) {
                    o.pose = val(&a.args[1])?;
                }
            }
            "AtGrasp" => {
                let (arm, obj) = (a.args[0].name(), a.args[1].name());
                let g = val(&a.args[2])?;
                let q = confs.get(arm).copied().ok_or_else(|| format!("{arm} has no configuration"))?;
                if let Some(o) = w.objects.get_mut(obj) {
                    o.pose = q * g.inverse();
                }
                if let Some(s) = w.arms.get_mut(arm) {
                    s.held = Some((obj.to_string(), g));
                    s.closed = true;
                }
            }
            _ => {}
        }
    }
    Ok(w)
}

fn planar(p: &Pose) -> Pose {
    let xy = p.xy();
    Pose::planar(xy.x, xy.y, p.yaw())
}

fn half_length(fp: &Footprint) -> f64 {
    match *fp {
        Footprint::Disk { radius } => radius,
        Footprint::Rect { half_x, .. } => half_x,
    }
}

/// Gripper poses on either end of the object's x axis, facing its center.
pub fn scripted_grasps(fp: &Footprint) -> Vec<Pose> {
    let r = half_length(fp) + GRASP_GAP;
    vec![Pose::planar(-r, 0.0, 0.0), Pose::planar(r, 0.0, PI)]
}

/// A collision-free pose for `object` inside `arm`'s reach and on the table.
pub fn sample_placement(state: &WorldState, object: &str, arm: &str, seed: u64) -> Option<Pose> {
    let obj = state.objects.get(object)?;
    let margin = obj.footprint.bounding_radius();
    let b = base_of(arm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Half the draws stay where both arms reach, so handovers are found.
    let shared = rng.random_bool(0.5);
    for _ in 0..PLACE_TRIES {
        let r = ARM_REACH * rng.random::<f64>().sqrt();
        let th = rng.random_range(-PI..PI);
        let (x, y) = (b[0] + r * th.cos(), b[1] + r * th.sin());
        if x.abs() > TABLE_HALF_X - margin || y.abs() > TABLE_HALF_Y - margin {
            continue;
        }
        if shared && ![LEFT, RIGHT].iter().all(|a| test_reachable(a, Vector2::new(x, y))) {
            continue;
        }
        let p = Pose::planar(x, y, rng.random_range(-PI..PI));
        if state
            .nearest_obstacle(object, &p, &[])
            .is_none_or(|(_, d)| d >= PLACE_CLEARANCE)
        {
            return Some(p);
        }
    }
    None
}

fn value<'v>(inputs: &'v [StreamInput], i: usize) -> Result<&'v Pose, String> {
    inputs[i]
        .value
        .ok_or_else(|| format!("{} has no continuous value", inputs[i].name))
}

/// Everything the desk streams draw on.
pub struct DeskContext<'a> {
    pub state: &'a WorldState,
    pub generators: &'a SkillGenerators,
    pub clouds: &'a BTreeMap<String, PointCloud>,
    pub safety: Safety<'a>,
    pub margin: f64,
    /// Kinematic model of the skill motion; when set, plans whose skill
    /// would leave an arm's reach are rejected.
    pub motion: Option<&'a PolicyEmulator>,
}

/// Registers an implementation for every desk stream plus a plan check that
/// simulates the primitives leading up to the first skill.
pub fn desk_streams<'a>(ctx: &'a DeskContext<'a>) -> StreamRegistry<'a> {
    let mut r = StreamRegistry::new();
    let st = ctx.state;
    r.register(
        "skill-grasp",
        gen_stream(true, move |inp: &[StreamInput], seed| {
            let (skill, o) = (inp[0].name, inp[1].name);
            if skill != ctx.generators.skill {
                return Ok(Vec::new());
            }
            let (Some(den), Some(cloud), Some(obj)) = (
                ctx.generators.trajectories.get(o),
                ctx.clouds.get(o),
                st.objects.get(o),
            ) else {
                return Ok(Vec::new());
            };
            let tau = sample_trajectory(den, cloud, seed).map_err(|e| e.to_string())?;
            let contact = tau.last().ok_or("empty trajectory")?;
            Ok(vec![vec![planar(&(obj.pose.inverse() * *contact))]])
        }),
    );
    r.register(
        "sample-grasp",
        gen_stream(true, move |inp: &[StreamInput], _| {
            Ok(st
                .objects
                .get(inp[0].name)
                .map(|o| scripted_grasps(&o.footprint).into_iter().map(|g| vec![g]).collect())
                .unwrap_or_default())
        }),
    );
    r.register(
        "sample-place",
        gen_stream(false, move |inp: &[StreamInput], seed| {
            Ok(sample_placement(st, inp[0].name, inp[1].name, seed)
                .map(|p| vec![vec![p]])
                .unwrap_or_default())
        }),
    );
    r.register(
        "inverse-kin",
        gen_stream(true, move |inp: &[StreamInput], _| {
            let (p, g) = (value(inp, 2)?, value(inp, 3)?);
            Ok(vec![vec![planar(&(p * g))]])
        }),
    );
    r.register(
        "is-reachable",
        test_stream(true, move |inp: &[StreamInput], _| {
            Ok(test_reachable(inp[0].name, value(inp, 1)?.xy()))
        }),
    );
    r.register(
        "gen-switch",
        gen_stream(false, move |inp: &[StreamInput], seed| {
            if inp[0].name != ctx.generators.skill {
                return Ok(Vec::new());
            }
            let den = ctx.generators.config.as_ref().ok_or("no configuration generator")?;
            let (q, _) = sample_config(den, seed).map_err(|e| e.to_string())?;
            let q = [planar(&q[0]), planar(&q[1])];
            if test_reachable(LEFT, q[0].xy()) && test_reachable(RIGHT, q[1].xy()) {
                Ok(vec![vec![q[0], q[1]]])
            } else {
                Ok(Vec::new())
            }
        }),
    );
    r.register(
        "safe-biop",
        test_stream(false, move |inp: &[StreamInput], fs: Option<&FluentState>| {
            let fs = fs.ok_or("safe-biop needs the symbolic state")?;
            let q = [*value(inp, 3)?, *value(inp, 4)?];
            let mut w = world_of_fluents(st, fs)?;
            Ok(match ctx.safety {
                Safety::Validator(m) => test_safe_biop(m, &w, &q, ctx.margin),
                Safety::Oracle(e) => {
                    for (arm, pose) in [(LEFT, q[0]), (RIGHT, q[1])] {
                        let a = w.arms.get_mut(arm).ok_or("missing arm")?;
                        a.pose = pose;
                    }
                    for a in w.arms.clone().values() {
                        if let Some((o, g)) = &a.held {
                            if let Some(obj) = w.objects.get_mut(o) {
                                obj.pose = a.pose * g.inverse();
                            }
                        }
                    }
                    oracle_clearance(e, &w).is_some_and(|d| d > ctx.margin)
                }
            })
        }),
    );
    let motion = ctx.motion;
    r.set_checker(move |plan: &Plan| {
        let steps = plan_steps(plan)?;
        let mut s = st.clone();
        for step in &steps {
            match step {
                Step::Primitive(p) => s = exec_primitive(&s, p).map_err(|e| e.to_string())?.0,
                Step::Skill { .. } => {
                    if let Some(m) = motion {
                        m.run_template(&s).map_err(|e| format!("skill motion: {e:?}"))?;
                    }
                    break;
                }
            }
        }
        Ok(())
    });
    r
}

/// One executable step of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Step {
    Primitive(Primitive),
    Skill { skill: String },
}

/// Maps each desk action to its primitive or skill invocation.
pub fn plan_steps(plan: &Plan) -> Result<Vec<Step>, String> {
    let val = |n: &str| plan.values.get(n).copied().ok_or_else(|| format!("no value for {n}"));
    plan.actions
        .iter()
        .map(|a| {
            let arg = |i: usize| a.args.get(i).cloned().ok_or_else(|| format!("{a} is missing argument {i}"));
            Ok(match a.name.as_str() {
                "move" => Step::Primitive(Primitive::Move {
                    arm: arg(0)?,
                    to: val(&arg(1)?)?,
                }),
                "pick" => Step::Primitive(Primitive::Pick {
                    arm: arg(0)?,
                    object: arg(1)?,
                }),
                "place" => Step::Primitive(Primitive::Place { arm: arg(0)? }),
                "approach-pair" => Step::Primitive(Primitive::Approach {
                    left: val(&arg(3)?)?,
                    right: val(&arg(4)?)?,
                }),
                "retreat" => Step::Primitive(Primitive::Retreat),
                n if n.starts_with("biop-") => Step::Skill { skill: arg(0)? },
                n => return Err(format!("no executable form for action `{n}`")),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub success: bool,
    pub failure: Option<String>,
    /// Index of the step that failed.
    pub failed_step: Option<usize>,
    pub state: WorldState,
    pub trajectory: Vec<Timestep>,
}

/// Executes `steps` from `state`, running skills through `emulator`.
pub fn rollout(state: &WorldState, steps: &[Step], emulator: &PolicyEmulator) -> RolloutOutcome {
    let mut s = state.clone();
    let mut trajectory = vec![s.snapshot()];
    for (k, step) in steps.iter().enumerate() {
        let fail = |s: WorldState, trajectory, msg: String| RolloutOutcome {
            success: false,
            failure: Some(msg),
            failed_step: Some(k),
            state: s,
            trajectory,
        };
        match step {
            Step::Primitive(p) => match exec_primitive(&s, p) {
                Ok((next, frames)) => {
                    trajectory.extend(frames);
                    s = next;
                }
                Err(e) => return fail(s, trajectory, e.to_string()),
            },
            Step::Skill { skill } => {
                if *skill != emulator.skill {
                    return fail(s, trajectory, format!("no policy for skill `{skill}`"));
                }
                let (next, out) = exec_policy(&s, emulator);
                if let Some(f) = out.failure {
                    return fail(s, trajectory, format!("policy failed: {f:?}"));
                }
                trajectory.extend(out.trajectory);
                s = next;
            }
        }
    }
    RolloutOutcome {
        success: true,
        failure: None,
        failed_step: None,
        state: s,
        trajectory,
    }
}

