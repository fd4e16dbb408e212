//! Scripted object-centric primitives with straight-line kinematics.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{SimError, WorldState, OVERLAP_TOL, STEP_LEN, STEP_YAW};
use crate::geometry::{wrap_angle, Pose};
use crate::scenegraph::{Timestep, GRASP_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Primitive {
    /// Transit or transfer of one arm to a gripper pose.
    Move { arm: String, to: Pose },
    /// Close on `object` at the current gripper pose.
    Pick { arm: String, object: String },
    /// Release the held object where it is.
    Place { arm: String },
    /// Both arms move simultaneously.
    Approach { left: Pose, right: Pose },
    /// Both arms release and return home.
    Retreat,
}

/// Poses strictly after `a` up to and including `b`.
pub fn interpolate(a: &Pose, b: &Pose) -> Vec<Pose> {
    let d = (b.translation - a.translation).norm();
    let dyaw = wrap_angle(b.yaw() - a.yaw());
    let n = ((d / STEP_LEN).ceil().max((dyaw.abs() / STEP_YAW).ceil()) as usize).max(1);
    (1..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            if i == n {
                return *b;
            }
            let p: Vector3<f64> = a.translation + (b.translation - a.translation) * s;
            Pose::new(p, UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a.yaw() + dyaw * s))
        })
        .collect()
}

fn check_reach(state: &WorldState, arm: &str, to: &Pose) -> Result<(), SimError> {
    if state.arm(arm)?.reaches(to.xy()) {
        Ok(())
    } else {
        Err(SimError::Unreachable {
            arm: arm.to_string(),
            x: to.translation.x,
            y: to.translation.y,
        })
    }
}

/// Held objects must stay clear of every free object.
fn check_carried(state: &WorldState) -> Result<(), SimError> {
    for a in state.arms.values() {
        let Some((o, _)) = &a.held else { continue };
        let obj = state.object(o)?;
        for (id, other) in state.free_objects() {
            if obj.footprint.distance_to(&obj.pose, &other.footprint, &other.pose) <= OVERLAP_TOL {
                return Err(SimError::Collision {
                    moving: o.clone(),
                    obstacle: id.clone(),
                    t: state.t,
                });
            }
        }
    }
    Ok(())
}

fn step(state: &mut WorldState, out: &mut Vec<Timestep>) {
    state.t += 1;
    out.push(state.snapshot());
}

fn move_arms(state: &mut WorldState, targets: &[(&str, Pose)], out: &mut Vec<Timestep>) -> Result<(), SimError> {
    let mut paths = Vec::new();
    for (arm, to) in targets {
        check_reach(state, arm, to)?;
        paths.push(interpolate(&state.arm(arm)?.pose, to));
    }
    let n = paths.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..n {
        for ((arm, _), path) in targets.iter().zip(&paths) {
            // Shorter paths wait at their goal.
            state.set_arm_pose(arm, path[i.min(path.len() - 1)])?;
        }
        check_carried(state)?;
        step(state, out);
    }
    Ok(())
}

fn release(state: &mut WorldState, arm: &str) -> Result<Option<String>, SimError> {
    let a = state.arm_mut(arm)?;
    a.closed = false;
    Ok(a.held.take().map(|(o, _)| o))
}

/// Executes `p`, returning the new state and the dense trajectory.
pub fn exec_primitive(state: &WorldState, p: &Primitive) -> Result<(WorldState, Vec<Timestep>), SimError> {
    let mut s = state.clone();
    let mut out = Vec::new();
    match p {
        Primitive::Move { arm, to } => move_arms(&mut s, &[(arm, *to)], &mut out)?,
        Primitive::Approach { left, right } => {
            move_arms(&mut s, &[(super::LEFT, *left), (super::RIGHT, *right)], &mut out)?
        }
        Primitive::Pick { arm, object } => {
            let obj = s.object(object)?.clone();
            if !obj.graspable {
                return Err(SimError::NotGraspable(object.clone()));
            }
            let a = s.arm(arm)?;
            if a.held.is_some() {
                return Err(SimError::HandFull(arm.clone()));
            }
            if s.is_held(object) {
                return Err(SimError::GraspMiss {
                    arm: arm.clone(),
                    object: object.clone(),
                });
            }
            if obj.footprint.distance_to_point(&obj.pose, a.pose.xy()) > GRASP_THRESHOLD + 1e-12 {
                return Err(SimError::GraspMiss {
                    arm: arm.clone(),
                    object: object.clone(),
                });
            }
            let g = obj.pose.inverse() * a.pose;
            let a = s.arm_mut(arm)?;
            a.closed = true;
            a.held = Some((object.clone(), g));
            step(&mut s, &mut out);
        }
        Primitive::Place { arm } => {
            let o = release(&mut s, arm)?.ok_or_else(|| SimError::HandEmpty(arm.clone()))?;
            if !s.on_table(&o) {
                return Err(SimError::OffTable(o));
            }
            if let Some((_, d)) = s.nearest_obstacle(&o, &s.object(&o)?.pose, &[]) {
                if d <= OVERLAP_TOL {
                    return Err(SimError::Overlap(o));
                }
            }
            step(&mut s, &mut out);
        }
        Primitive::Retreat => {
            let arms: Vec<String> = s.arms.keys().cloned().collect();
            for a in &arms {
                release(&mut s, a)?;
            }
            step(&mut s, &mut out);
            let homes: Vec<(String, Pose)> = arms.iter().map(|a| (a.clone(), s.arms[a].home)).collect();
            let targets: Vec<(&str, Pose)> = homes.iter().map(|(a, h)| (a.as_str(), *h)).collect();
            move_arms(&mut s, &targets, &mut out)?;
        }
    }
    Ok((s, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Footprint;
    use crate::scenegraph::{graph_of_state, EdgeLabel};
    use crate::sim::{WorldObject, LEFT};

    fn one_cup() -> WorldState {
        let mut s = WorldState::desk();
        s.objects.insert(
            "cup".into(),
            WorldObject::new("cup", Footprint::Disk { radius: 0.03 }, Pose::planar(-0.3, 0.0, 0.0), 0.08),
        );
        s
    }

    #[test]
    fn pick_creates_grasp_edge() {
        let s = one_cup();
        let at = Pose::planar(-0.345, 0.0, 0.0);
        let (s, _) = exec_primitive(&s, &Primitive::Move { arm: LEFT.into(), to: at }).unwrap();
        let (s, _) = exec_primitive(&s, &Primitive::Pick { arm: LEFT.into(), object: "cup".into() }).unwrap();
        let g = graph_of_state(&s.header(), &s.snapshot()).unwrap();
        assert_eq!(g.edges_labeled(EdgeLabel::AtGrasp).count(), 1);
    }

    #[test]
    fn carried_object_follows_gripper() {
        let s = one_cup();
        let at = Pose::planar(-0.345, 0.0, 0.0);
        let (s, _) = exec_primitive(&s, &Primitive::Move { arm: LEFT.into(), to: at }).unwrap();
        let (s, _) = exec_primitive(&s, &Primitive::Pick { arm: LEFT.into(), object: "cup".into() }).unwrap();
        let (s, traj) = exec_primitive(&s, &Primitive::Move { arm: LEFT.into(), to: Pose::planar(-0.2, 0.2, 1.0) }).unwrap();
        let g = s.arms[LEFT].held.as_ref().unwrap().1;
        for st in &traj {
            let expect = st.grippers[LEFT].pose * g.inverse();
            assert!(st.objects["cup"].approx_eq(&expect, 1e-9));
        }
    }

    #[test]
    fn unreachable_target_errors() {
        let s = WorldState::desk();
        let r = exec_primitive(&s, &Primitive::Move { arm: LEFT.into(), to: Pose::planar(0.3, 0.0, 0.0) });
        assert!(matches!(r, Err(SimError::Unreachable { .. })));
    }

    #[test]
    fn interpolation_respects_step_limits() {
        let a = Pose::planar(0.0, 0.0, 0.0);
        let b = Pose::planar(0.1, -0.05, 2.0);
        let path = interpolate(&a, &b);
        let mut prev = a;
        for p in &path {
            assert!((p.translation - prev.translation).norm() <= STEP_LEN + 1e-12);
            assert!(wrap_angle(p.yaw() - prev.yaw()).abs() <= STEP_YAW + 1e-12);
            prev = *p;
        }
        assert_eq!(*path.last().unwrap(), b);
    }
}
