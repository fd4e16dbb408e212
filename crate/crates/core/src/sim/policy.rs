//! Distribution-gated stand-in for a learned bimanual visuomotor policy.
//!
//! The emulator succeeds when its start condition (bimanual configuration
//! and the grasp on every held object) lies within the support of the
//! demonstrations and the scripted coordinated motion is collision free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{interpolate, SimError, SweptBody, WorldState, LEFT, OVERLAP_TOL, RIGHT};
use crate::geometry::{Footprint, Pose};
use crate::scenegraph::{graph_of_state, segment, DemoTrace, EdgeLabel, Timestep, GRASP_THRESHOLD};

/// Smallest support radius, meters.
pub const SUPPORT_FLOOR: f64 = 0.025;
/// Support radius as a multiple of the largest nearest-neighbor distance.
pub const SUPPORT_SCALE: f64 = 1.5;
/// Meters per radian when mixing translation and rotation errors.
pub const ROT_WEIGHT: f64 = 0.05;
/// Extra steps the arms hold still at the end of a skill.
const DWELL: usize = 2;
/// Distance the giving gripper backs off after a handoff.
const BACKOFF: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkillTemplate {
    /// `base_arm` holds `base` still while `insert_arm` brings `insert`'s
    /// center onto `base`'s center.
    Insertion {
        base: String,
        base_arm: String,
        insert: String,
        insert_arm: String,
    },
    /// `from` holds `object`; `to` closes on it, then `from` lets go.
    Handoff { object: String, from: String, to: String },
}

impl SkillTemplate {
    pub fn insertion() -> Self {
        SkillTemplate::Insertion {
            base: "socket".into(),
            base_arm: LEFT.into(),
            insert: "peg".into(),
            insert_arm: RIGHT.into(),
        }
    }

    pub fn handoff(object: &str) -> Self {
        SkillTemplate::Handoff {
            object: object.into(),
            from: RIGHT.into(),
            to: LEFT.into(),
        }
    }

    /// Objects that must be held at the start, with their arms.
    pub fn held_at_start(&self) -> Vec<(&str, &str)> {
        match self {
            SkillTemplate::Insertion {
                base,
                base_arm,
                insert,
                insert_arm,
            } => vec![(base_arm, base), (insert_arm, insert)],
            SkillTemplate::Handoff { object, from, .. } => vec![(from, object)],
        }
    }
}

/// Start conditions seen in the demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportModel {
    /// Bimanual start configurations, left then right gripper.
    pub configs: Vec<[Pose; 2]>,
    /// Start grasps per held object, one per demonstration.
    pub grasps: BTreeMap<String, Vec<Pose>>,
    /// Object poses at the first timestep of each demonstration.
    pub initial_poses: BTreeMap<String, Vec<Pose>>,
    /// Grasp taken by the receiving gripper, handoff only.
    pub receive_grasps: Vec<Pose>,
    pub footprints: BTreeMap<String, Footprint>,
    pub radius_q: f64,
    pub radius_g: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEmulator {
    pub skill: String,
    pub template: SkillTemplate,
    pub support: SupportModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum PolicyFailure {
    WrongMode { arm: String, object: String },
    OutOfSupport { factor: String, distance: f64, radius: f64 },
    Collision { body: String, obstacle: String },
    Unreachable { arm: String },
    Miss { object: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub failure: Option<PolicyFailure>,
    pub trajectory: Vec<Timestep>,
}

impl PolicyOutcome {
    pub fn success(&self) -> bool {
        self.failure.is_none()
    }
}

/// Distance between two grasps of the same object, modulo the footprint's
/// symmetries.
pub fn grasp_distance(fp: &Footprint, a: &Pose, b: &Pose) -> f64 {
    let rotated = |theta: f64| Pose::planar(0.0, 0.0, theta) * *a;
    match fp {
        Footprint::Disk { .. } => {
            let (ta, tb) = (a.xy(), b.xy());
            let theta = if ta.norm() > 1e-9 && tb.norm() > 1e-9 {
                tb.y.atan2(tb.x) - ta.y.atan2(ta.x)
            } else {
                b.yaw() - a.yaw()
            };
            rotated(theta).distance(b, ROT_WEIGHT)
        }
        Footprint::Rect { .. } => fp
            .symmetry_angles()
            .into_iter()
            .map(|t| rotated(t).distance(b, ROT_WEIGHT))
            .fold(f64::INFINITY, f64::min),
    }
}

fn config_distance(a: &[Pose; 2], b: &[Pose; 2]) -> f64 {
    a[0].distance(&b[0], ROT_WEIGHT).max(a[1].distance(&b[1], ROT_WEIGHT))
}

fn support_radius<T>(items: &[T], dist: impl Fn(&T, &T) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in items.iter().enumerate() {
        let nn = items
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| dist(a, b))
            .fold(f64::INFINITY, f64::min);
        if nn.is_finite() {
            worst = worst.max(nn);
        }
    }
    (SUPPORT_SCALE * worst).max(SUPPORT_FLOOR)
}

fn nearest<T>(items: &[T], dist: impl Fn(&T) -> f64) -> Option<(usize, f64)> {
    items
        .iter()
        .map(dist)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Index of the last step in `range` where no gripper moved, else its start.
fn dwell_index(trace: &DemoTrace, range: std::ops::Range<usize>) -> usize {
    let still = |i: usize| {
        trace.steps[i].grippers.iter().all(|(h, g)| {
            trace.steps[i - 1].grippers.get(h).is_some_and(|p| p.pose.approx_eq(&g.pose, 1e-12))
        })
    };
    range
        .clone()
        .rev()
        .find(|&i| i > range.start && still(i))
        .unwrap_or(range.start)
}

/// Start and end indices of the skill in a demonstration: the last dwell
/// before contact and the first step after the contact-rich phase.
pub fn skill_window(trace: &DemoTrace) -> Result<(usize, usize), SimError> {
    let seq = segment(trace)?;
    let span = seq.contact_rich.first().ok_or(SimError::DemoFailed {
        task: "skill window".into(),
        attempts: 0,
    })?;
    let (pre, mid, eff) = seq.phase_indices(span);
    let start = dwell_index(trace, pre);
    let end = if eff.is_empty() { mid.end - 1 } else { eff.start };
    Ok((start, end))
}

fn configuration(step: &Timestep) -> [Pose; 2] {
    [step.grippers[LEFT].pose, step.grippers[RIGHT].pose]
}

impl PolicyEmulator {
    /// An emulator with empty support, used to script demonstrations. The
    /// handoff receiver always takes `receive_grasp`.
    pub fn scripted(template: SkillTemplate, receive_grasp: Option<Pose>) -> Self {
        Self {
            skill: String::new(),
            template,
            support: SupportModel {
                configs: Vec::new(),
                grasps: BTreeMap::new(),
                initial_poses: BTreeMap::new(),
                receive_grasps: receive_grasp.into_iter().collect(),
                footprints: BTreeMap::new(),
                radius_q: 0.0,
                radius_g: BTreeMap::new(),
            },
        }
    }

    /// Fits the support model from demonstrations of one skill.
    pub fn fit(skill: &str, template: SkillTemplate, demos: &[DemoTrace]) -> Result<Self, SimError> {
        let mut configs = Vec::new();
        let mut grasps: BTreeMap<String, Vec<Pose>> = BTreeMap::new();
        let mut initial_poses: BTreeMap<String, Vec<Pose>> = BTreeMap::new();
        let mut receive_grasps = Vec::new();
        let mut footprints = BTreeMap::new();
        for d in demos {
            let (start, end) = skill_window(d)?;
            let step = &d.steps[start];
            configs.push(configuration(step));
            let g = graph_of_state(&d.header, step)?;
            for (arm, o) in template.held_at_start() {
                let e = g
                    .edges_labeled(EdgeLabel::AtGrasp)
                    .find(|e| e.src == arm && e.dst == o)
                    .ok_or_else(|| SimError::NotHolding {
                        arm: arm.to_string(),
                        object: o.to_string(),
                    })?;
                grasps.entry(o.to_string()).or_default().push(e.payload);
                initial_poses
                    .entry(o.to_string())
                    .or_default()
                    .push(d.steps[0].objects[o]);
                footprints.insert(o.to_string(), d.header.objects[o].footprint);
            }
            if let SkillTemplate::Handoff { object, to, .. } = &template {
                let g_end = graph_of_state(&d.header, &d.steps[end])?;
                let e = g_end
                    .edges_labeled(EdgeLabel::AtGrasp)
                    .find(|e| &e.src == to && &e.dst == object)
                    .ok_or_else(|| SimError::NotHolding {
                        arm: to.clone(),
                        object: object.clone(),
                    })?;
                receive_grasps.push(e.payload);
            }
        }
        let radius_q = support_radius(&configs, config_distance);
        let radius_g = grasps
            .iter()
            .map(|(o, gs)| {
                let fp = footprints[o];
                (o.clone(), support_radius(gs, |a, b| grasp_distance(&fp, a, b)))
            })
            .collect();
        Ok(Self {
            skill: skill.to_string(),
            template,
            support: SupportModel {
                configs,
                grasps,
                initial_poses,
                receive_grasps,
                footprints,
                radius_q,
                radius_g,
            },
        })
    }

    /// Gate on the start condition read from `state`.
    pub fn gate(&self, state: &WorldState) -> Result<(), PolicyFailure> {
        let mut grasps = BTreeMap::new();
        for (arm, o) in self.template.held_at_start() {
            match state.arms.get(arm).and_then(|a| a.held.as_ref()) {
                Some((held, g)) if held == o => {
                    grasps.insert(o.to_string(), *g);
                }
                _ => {
                    return Err(PolicyFailure::WrongMode {
                        arm: arm.to_string(),
                        object: o.to_string(),
                    })
                }
            }
        }
        let q = [state.arms[LEFT].pose, state.arms[RIGHT].pose];
        self.gate_values(&q, &grasps)
    }

    /// Gate on explicit start-condition values.
    pub fn gate_values(&self, q: &[Pose; 2], grasps: &BTreeMap<String, Pose>) -> Result<(), PolicyFailure> {
        let s = &self.support;
        let dq = nearest(&s.configs, |c| config_distance(c, q)).map_or(f64::INFINITY, |(_, d)| d);
        if dq > s.radius_q {
            return Err(PolicyFailure::OutOfSupport {
                factor: "q".into(),
                distance: dq,
                radius: s.radius_q,
            });
        }
        for (o, g) in grasps {
            let fp = s.footprints[o];
            let train = s.grasps.get(o).map_or(&[][..], Vec::as_slice);
            let dg = nearest(train, |t| grasp_distance(&fp, g, t)).map_or(f64::INFINITY, |(_, d)| d);
            if dg > s.radius_g[o] {
                return Err(PolicyFailure::OutOfSupport {
                    factor: format!("g_{o}"),
                    distance: dg,
                    radius: s.radius_g[o],
                });
            }
        }
        Ok(())
    }

    /// Runs the coordinated motion from `state` without gating, returning
    /// the resulting state and every intermediate step.
    pub fn run_template(&self, state: &WorldState) -> Result<(WorldState, Vec<WorldState>), PolicyFailure> {
        let mut s = state.clone();
        let mut frames = vec![s.clone()];
        let go = |s: &mut WorldState, arm: &str, to: Pose, frames: &mut Vec<WorldState>| {
            if !s.arms[arm].reaches(to.xy()) {
                return Err(PolicyFailure::Unreachable { arm: arm.to_string() });
            }
            for p in interpolate(&s.arms[arm].pose, &to) {
                s.set_arm_pose(arm, p).expect("known arm");
                s.t += 1;
                frames.push(s.clone());
            }
            Ok(())
        };
        match &self.template {
            SkillTemplate::Insertion {
                base,
                insert,
                insert_arm,
                ..
            } => {
                let target = s.objects[base].pose.xy();
                let ins = s.objects[insert].pose;
                let g = s.arms[insert_arm].held.as_ref().expect("gated").1;
                let dest = Pose::planar(target.x, target.y, ins.yaw()) * g;
                go(&mut s, insert_arm, dest, &mut frames)?;
            }
            SkillTemplate::Handoff { object, from, to } => {
                let o = s.objects[object].pose;
                let q_to = [s.arms[LEFT].pose, s.arms[RIGHT].pose];
                let k = nearest(&self.support.configs, |c| config_distance(c, &q_to)).map_or(0, |(i, _)| i);
                let g = self.support.receive_grasps.get(k).copied().unwrap_or_else(Pose::identity);
                go(&mut s, to, o * g, &mut frames)?;
                let fp = s.objects[object].footprint;
                if fp.distance_to_point(&o, s.arms[to].pose.xy()) > GRASP_THRESHOLD + 1e-12 {
                    return Err(PolicyFailure::Miss { object: object.clone() });
                }
                let a = s.arms.get_mut(to).expect("known arm");
                a.closed = true;
                a.held = Some((object.clone(), o.inverse() * a.pose));
                s.t += 1;
                frames.push(s.clone());
                let a = s.arms.get_mut(from).expect("known arm");
                a.closed = false;
                a.held = None;
                s.t += 1;
                frames.push(s.clone());
                let p = s.arms[from].pose;
                let away = p.xy() - o.xy();
                let away = if away.norm() > 1e-9 { away.normalize() } else { away };
                let back = Pose::planar(p.translation.x + BACKOFF * away.x, p.translation.y + BACKOFF * away.y, p.yaw());
                go(&mut s, from, back, &mut frames)?;
            }
        }
        for _ in 0..DWELL {
            s.t += 1;
            frames.push(s.clone());
        }
        Ok((s, frames))
    }

    /// Robot bodies along the coordinated motion started from `state`.
    pub fn template_bodies(&self, state: &WorldState) -> Result<Vec<Vec<SweptBody>>, PolicyFailure> {
        let (_, frames) = self.run_template(state)?;
        Ok(frames.iter().map(WorldState::robot_bodies).collect())
    }
}

fn first_collision(frames: &[WorldState]) -> Option<PolicyFailure> {
    for f in frames {
        for b in f.robot_bodies() {
            for (id, o) in f.free_objects() {
                if b.footprint.distance_to(&b.pose, &o.footprint, &o.pose) <= OVERLAP_TOL {
                    return Some(PolicyFailure::Collision {
                        body: b.id.clone(),
                        obstacle: id.clone(),
                    });
                }
            }
        }
    }
    None
}

/// Executes the emulated policy from the current state. Failure leaves the
/// world unchanged.
pub fn exec_policy(state: &WorldState, emulator: &PolicyEmulator) -> (WorldState, PolicyOutcome) {
    let fail = |f| {
        (
            state.clone(),
            PolicyOutcome {
                failure: Some(f),
                trajectory: Vec::new(),
            },
        )
    };
    if let Err(f) = emulator.gate(state) {
        return fail(f);
    }
    let (end, frames) = match emulator.run_template(state) {
        Ok(r) => r,
        Err(f) => return fail(f),
    };
    if let Some(f) = first_collision(&frames) {
        return fail(f);
    }
    let trajectory = frames[1..].iter().map(WorldState::snapshot).collect();
    (
        end,
        PolicyOutcome {
            failure: None,
            trajectory,
        },
    )
}

/// The policy run directly from a raw initial state: every object is grasped
/// where the nearest demonstration found its object, so the effective grasp
/// inherits the displacement from that demonstration.
pub fn nearest_demo_replay(state: &WorldState, emulator: &PolicyEmulator) -> Result<(), PolicyFailure> {
    let s = &emulator.support;
    let mut grasps = BTreeMap::new();
    for (_, o) in emulator.template.held_at_start() {
        let Some(obj) = state.objects.get(o) else {
            return Err(PolicyFailure::Miss { object: o.to_string() });
        };
        let demos = s.initial_poses.get(o).map_or(&[][..], Vec::as_slice);
        let (k, _) = nearest(demos, |p| (p.xy() - obj.pose.xy()).norm()).ok_or(PolicyFailure::Miss {
            object: o.to_string(),
        })?;
        let gripper = demos[k] * s.grasps[o][k];
        if obj.footprint.distance_to_point(&obj.pose, gripper.xy()) > GRASP_THRESHOLD + 1e-12 {
            return Err(PolicyFailure::Miss { object: o.to_string() });
        }
        grasps.insert(o.to_string(), obj.pose.inverse() * gripper);
    }
    let q = s.configs.first().copied().ok_or(PolicyFailure::Miss {
        object: String::new(),
    })?;
    emulator.gate_values(&q, &grasps)
}
