//! Deterministic planar bimanual tabletop: world state, scripted primitives,
//! the policy emulator, synthetic clouds, scenarios and demonstrations.

mod cloud;
mod demos;
mod oracle;
mod policy;
mod primitives;
mod scenario;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Footprint, GeometryError, Pose};
use crate::scenegraph::{GripperState, ObjectSpec, RegionSpec, SceneGraphError, Timestep, TraceHeader};

pub use cloud::{synth_cloud, CloudOptions, CLOUD_POINTS, CLOUD_SIGMA};
pub use demos::{scripted_demos, DemoTask, InsertionDemoParams};
pub use oracle::{min_distance_oracle, robot_obstacle_distance, SweptBody};
pub use policy::{
    exec_policy, grasp_distance, nearest_demo_replay, skill_window, PolicyEmulator, PolicyFailure,
    PolicyOutcome, SkillTemplate, SupportModel, ROT_WEIGHT, SUPPORT_FLOOR, SUPPORT_SCALE,
};
pub use primitives::{exec_primitive, interpolate, Primitive};
pub use scenario::{
    cup, peg, pole, sample_scenario, socket, Scenario, ScenarioName, ID_HALF, OOD_HALF, PEG_CENTER,
    SOCKET_CENTER,
};

pub const TABLE_HALF_X: f64 = 0.6;
pub const TABLE_HALF_Y: f64 = 0.4;
pub const ARM_REACH: f64 = 0.6;
pub const ARM_BASE_X: f64 = 0.55;
pub const GRIPPER_RADIUS: f64 = 0.03;
pub const LEFT: &str = "left";
pub const RIGHT: &str = "right";
/// Largest translation per simulated step, meters.
pub const STEP_LEN: f64 = 0.02;
/// Largest rotation per simulated step, radians.
pub const STEP_YAW: f64 = 0.1;
/// Penetration tolerated between footprints.
pub const OVERLAP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown demonstration task `{0}`")]
    UnknownTask(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown arm `{0}`")]
    UnknownArm(String),
    #[error("arm `{arm}` cannot reach ({x:.3}, {y:.3})")]
    Unreachable { arm: String, x: f64, y: f64 },
    #[error("`{moving}` collides with `{obstacle}` at t={t}")]
    Collision { moving: String, obstacle: String, t: i64 },
    #[error("object `{0}` is not graspable")]
    NotGraspable(String),
    #[error("arm `{arm}` is too far from `{object}` to grasp it")]
    GraspMiss { arm: String, object: String },
    #[error("arm `{0}` already holds an object")]
    HandFull(String),
    #[error("arm `{0}` holds nothing")]
    HandEmpty(String),
    #[error("arm `{arm}` does not hold `{object}`")]
    NotHolding { arm: String, object: String },
    #[error("object `{0}` would leave the table")]
    OffTable(String),
    #[error("`{0}` would overlap another object")]
    Overlap(String),
    #[error("no valid `{task}` demonstration after {attempts} attempts")]
    DemoFailed { task: String, attempts: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    SceneGraph(#[from] SceneGraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub base: [f64; 2],
    pub reach: f64,
    pub home: Pose,
    /// Gripper pose; doubles as the arm configuration.
    pub pose: Pose,
    pub closed: bool,
    /// Held object id and the gripper pose in that object's frame.
    pub held: Option<(String, Pose)>,
}

impl Arm {
    pub fn reaches(&self, p: Vector2<f64>) -> bool {
        (p - Vector2::new(self.base[0], self.base[1])).norm() <= self.reach + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub kind: String,
    pub footprint: Footprint,
    pub pose: Pose,
    pub graspable: bool,
    pub height: f64,
}

impl WorldObject {
    pub fn new(kind: &str, footprint: Footprint, pose: Pose, height: f64) -> Self {
        Self {
            kind: kind.to_string(),
            footprint,
            pose,
            graspable: true,
            height,
        }
    }

    /// Geometric feature `[footprint radius, aspect ratio, graspable]`.
    pub fn nu(&self) -> [f64; 3] {
        [
            self.footprint.bounding_radius(),
            self.footprint.aspect_ratio(),
            if self.graspable { 1.0 } else { 0.0 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: i64,
    pub arms: BTreeMap<String, Arm>,
    pub objects: BTreeMap<String, WorldObject>,
    pub regions: BTreeMap<String, RegionSpec>,
}

pub fn table_spec() -> RegionSpec {
    RegionSpec {
        footprint: Footprint::Rect {
            half_x: TABLE_HALF_X,
            half_y: TABLE_HALF_Y,
        },
        pose: Pose::identity(),
    }
}

pub fn left_home() -> Pose {
    Pose::planar(-0.45, -0.3, 0.0)
}

pub fn right_home() -> Pose {
    Pose::planar(0.45, -0.3, PI)
}

pub fn base_of(arm: &str) -> [f64; 2] {
    if arm == LEFT {
        [-ARM_BASE_X, 0.0]
    } else {
        [ARM_BASE_X, 0.0]
    }
}

impl WorldState {
    /// Empty desk with both arms at home, open.
    pub fn desk() -> Self {
        let mut arms = BTreeMap::new();
        for (name, home) in [(LEFT, left_home()), (RIGHT, right_home())] {
            arms.insert(
                name.to_string(),
                Arm {
                    base: base_of(name),
                    reach: ARM_REACH,
                    home,
                    pose: home,
                    closed: false,
                    held: None,
                },
            );
        }
        Self {
            t: 0,
            arms,
            objects: BTreeMap::new(),
            regions: BTreeMap::new(),
        }
    }

    pub fn arm(&self, name: &str) -> Result<&Arm, SimError> {
        self.arms.get(name).ok_or_else(|| SimError::UnknownArm(name.to_string()))
    }

    pub fn arm_mut(&mut self, name: &str) -> Result<&mut Arm, SimError> {
        self.arms
            .get_mut(name)
            .ok_or_else(|| SimError::UnknownArm(name.to_string()))
    }

    pub fn object(&self, id: &str) -> Result<&WorldObject, SimError> {
        self.objects
            .get(id)
            .ok_or_else(|| SimError::UnknownObject(id.to_string()))
    }

    /// Arm holding `object`, if any.
    pub fn holder(&self, object: &str) -> Option<&str> {
        self.arms
            .iter()
            .find(|(_, a)| a.held.as_ref().is_some_and(|(o, _)| o == object))
            .map(|(n, _)| n.as_str())
    }

    pub fn is_held(&self, object: &str) -> bool {
        self.holder(object).is_some()
    }

    /// Moves an arm and whatever it holds.
    pub fn set_arm_pose(&mut self, arm: &str, pose: Pose) -> Result<(), SimError> {
        let a = self.arm_mut(arm)?;
        a.pose = pose;
        if let Some((o, g)) = a.held.clone() {
            let obj = self
                .objects
                .get_mut(&o)
                .ok_or_else(|| SimError::UnknownObject(o.clone()))?;
            obj.pose = pose * g.inverse();
        }
        Ok(())
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            grippers: self.arms.keys().cloned().collect(),
            objects: self
                .objects
                .iter()
                .map(|(id, o)| {
                    (
                        id.clone(),
                        ObjectSpec {
                            kind: o.kind.clone(),
                            footprint: o.footprint,
                            graspable: o.graspable,
                        },
                    )
                })
                .collect(),
            table: table_spec(),
            regions: self.regions.clone(),
        }
    }

    pub fn snapshot(&self) -> Timestep {
        Timestep {
            t: self.t,
            grippers: self
                .arms
                .iter()
                .map(|(n, a)| {
                    (
                        n.clone(),
                        GripperState {
                            pose: a.pose,
                            closed: a.closed,
                        },
                    )
                })
                .collect(),
            objects: self.objects.iter().map(|(n, o)| (n.clone(), o.pose)).collect(),
            clouds: BTreeMap::new(),
        }
    }

    /// Whether `object`'s footprint lies inside region `region`.
    pub fn in_region(&self, region: &str, object: &str) -> bool {
        match (self.regions.get(region), self.objects.get(object)) {
            (Some(r), Some(o)) => o.footprint.inside(&o.pose, &r.footprint, &r.pose, 1e-9),
            _ => false,
        }
    }

    pub fn on_table(&self, object: &str) -> bool {
        let table = table_spec();
        self.objects.get(object).is_some_and(|o| {
            !self.is_held(object) && o.footprint.inside(&o.pose, &table.footprint, &table.pose, 1e-9)
        })
    }

    /// Closest object (other than `skip`) to `o` placed at `pose`, with distance.
    pub fn nearest_obstacle(&self, o: &str, pose: &Pose, skip: &[&str]) -> Option<(String, f64)> {
        let fp = self.objects.get(o)?.footprint;
        self.objects
            .iter()
            .filter(|(id, _)| id.as_str() != o && !skip.contains(&id.as_str()))
            .map(|(id, other)| (id.clone(), fp.distance_to(pose, &other.footprint, &other.pose)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Bodies of the robot: gripper disks plus held objects.
    pub fn robot_bodies(&self) -> Vec<SweptBody> {
        let mut out = Vec::new();
        for (n, a) in &self.arms {
            out.push(SweptBody {
                id: n.clone(),
                footprint: Footprint::Disk {
                    radius: GRIPPER_RADIUS,
                },
                pose: a.pose,
            });
            if let Some((o, _)) = &a.held {
                if let Some(obj) = self.objects.get(o) {
                    out.push(SweptBody {
                        id: o.clone(),
                        footprint: obj.footprint,
                        pose: obj.pose,
                    });
                }
            }
        }
        out
    }

    /// Objects not held by either arm.
    pub fn free_objects(&self) -> impl Iterator<Item = (&String, &WorldObject)> {
        self.objects.iter().filter(|(id, _)| !self.is_held(id))
    }
}
