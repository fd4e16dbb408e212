//! Randomized initial states.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimError, WorldObject, WorldState};
use crate::geometry::{Footprint, Pose};
use crate::scenegraph::RegionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioName {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "XY-OOD")]
    XyOod,
    #[serde(rename = "XYH-OOD")]
    XyhOod,
    #[serde(rename = "unreachable")]
    Unreachable,
    #[serde(rename = "unsafe")]
    Unsafe,
    #[serde(rename = "table-to-bin")]
    TableToBin,
    #[serde(rename = "insertion-reconfig")]
    InsertionReconfig,
    #[serde(rename = "multi-instruction")]
    MultiInstruction,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 8] = [
        ScenarioName::Id,
        ScenarioName::XyOod,
        ScenarioName::XyhOod,
        ScenarioName::Unreachable,
        ScenarioName::Unsafe,
        ScenarioName::TableToBin,
        ScenarioName::InsertionReconfig,
        ScenarioName::MultiInstruction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Id => "ID",
            ScenarioName::XyOod => "XY-OOD",
            ScenarioName::XyhOod => "XYH-OOD",
            ScenarioName::Unreachable => "unreachable",
            ScenarioName::Unsafe => "unsafe",
            ScenarioName::TableToBin => "table-to-bin",
            ScenarioName::InsertionReconfig => "insertion-reconfig",
            ScenarioName::MultiInstruction => "multi-instruction",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SimError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub seed: u64,
    pub state: WorldState,
}

/// Center of the in-distribution socket square.
pub const SOCKET_CENTER: [f64; 2] = [-0.25, 0.0];
/// Center of the in-distribution peg square.
pub const PEG_CENTER: [f64; 2] = [0.25, 0.0];
/// Half side of the in-distribution squares.
pub const ID_HALF: f64 = 0.1;
/// Half side of the out-of-distribution squares.
pub const OOD_HALF: f64 = 0.125;

pub fn socket(pose: Pose) -> WorldObject {
    WorldObject::new("socket", Footprint::Rect { half_x: 0.05, half_y: 0.03 }, pose, 0.05)
}

pub fn peg(pose: Pose) -> WorldObject {
    WorldObject::new("peg", Footprint::Disk { radius: 0.015 }, pose, 0.08)
}

pub fn pole(pose: Pose) -> WorldObject {
    WorldObject::new("pole", Footprint::Disk { radius: 0.02 }, pose, 0.2)
}

pub fn cup(pose: Pose) -> WorldObject {
    WorldObject::new("cup", Footprint::Disk { radius: 0.03 }, pose, 0.08)
}

fn in_square(rng: &mut ChaCha8Rng, c: [f64; 2], half: f64) -> (f64, f64) {
    (
        rng.random_range(c[0] - half..=c[0] + half),
        rng.random_range(c[1] - half..=c[1] + half),
    )
}

fn clear_of_others(s: &WorldState, id: &str, clearance: f64) -> bool {
    let o = &s.objects[id];
    s.nearest_obstacle(id, &o.pose, &[])
        .is_none_or(|(_, d)| d >= clearance)
}

fn insertion_pair(rng: &mut ChaCha8Rng, half: f64, heading: bool) -> WorldState {
    let mut s = WorldState::desk();
    let yaw = |rng: &mut ChaCha8Rng| if heading { rng.random_range(-0.5 * PI..0.5 * PI) } else { 0.0 };
    let (x, y) = in_square(rng, SOCKET_CENTER, half);
    let ys = yaw(rng);
    s.objects.insert("socket".into(), socket(Pose::planar(x, y, ys)));
    let (x, y) = in_square(rng, PEG_CENTER, half);
    let yp = yaw(rng);
    s.objects.insert("peg".into(), peg(Pose::planar(x, y, yp)));
    s
}

const MAX_RESAMPLES: usize = 1000;

/// Draws an initial state; equal `(name, seed)` gives equal states.
pub fn sample_scenario(name: ScenarioName, seed: u64) -> Result<Scenario, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c3a_u64.wrapping_mul(name as u64 + 1));
    let state = match name {
        ScenarioName::Id => insertion_pair(&mut rng, ID_HALF, false),
        ScenarioName::XyOod => insertion_pair(&mut rng, OOD_HALF, false),
        ScenarioName::XyhOod => insertion_pair(&mut rng, OOD_HALF, true),
        ScenarioName::Unreachable => {
            let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            let mut s = WorldState::desk();
            for _ in 0..MAX_RESAMPLES {
                let draw = |rng: &mut ChaCha8Rng| {
                    let x = side * rng.random_range(0.15..=0.45);
                    let y = rng.random_range(-0.1..=0.1);
                    Pose::planar(x, y, rng.random_range(-PI..PI))
                };
                s.objects.insert("socket".into(), socket(draw(&mut rng)));
                s.objects.insert("peg".into(), peg(draw(&mut rng)));
                if clear_of_others(&s, "peg", 0.08) {
                    break;
                }
            }
            s
        }
        ScenarioName::Unsafe => {
            let mut s = insertion_pair(&mut rng, ID_HALF, false);
            for _ in 0..MAX_RESAMPLES {
                let x = rng.random_range(-0.1..=0.1);
                let y = rng.random_range(-0.15..=0.15);
                s.objects.insert("pole".into(), pole(Pose::planar(x, y, 0.0)));
                if clear_of_others(&s, "pole", 0.02) {
                    break;
                }
            }
            s
        }
        ScenarioName::TableToBin => {
            let mut s = WorldState::desk();
            s.regions.insert(
                "bin".into(),
                RegionSpec {
                    footprint: Footprint::Rect { half_x: 0.1, half_y: 0.08 },
                    pose: Pose::planar(-0.4, 0.28, 0.0),
                },
            );
            for i in 1..=3 {
                let id = format!("o{i}");
                for _ in 0..MAX_RESAMPLES {
                    let x = rng.random_range(-0.3..=0.4);
                    let y = rng.random_range(-0.25..=0.15);
                    s.objects.insert(id.clone(), cup(Pose::planar(x, y, 0.0)));
                    if clear_of_others(&s, &id, 0.08) {
                        break;
                    }
                }
            }
            s
        }
        ScenarioName::InsertionReconfig => {
            let mut s = insertion_pair(&mut rng, OOD_HALF, false);
            for (name, x) in [("leftPad", -0.3), ("rightPad", 0.3)] {
                s.regions.insert(
                    name.into(),
                    RegionSpec {
                        footprint: Footprint::Rect { half_x: 0.08, half_y: 0.06 },
                        pose: Pose::planar(x, -0.28, 0.0),
                    },
                );
            }
            s
        }
        ScenarioName::MultiInstruction => {
            let mut s = insertion_pair(&mut rng, ID_HALF, false);
            for _ in 0..MAX_RESAMPLES {
                let (x, y) = in_square(&mut rng, [0.25, 0.25], 0.05);
                s.objects.insert("cup".into(), cup(Pose::planar(x, y, 0.0)));
                if clear_of_others(&s, "cup", 0.08) {
                    break;
                }
            }
            s
        }
    };
    Ok(Scenario { name, seed, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_state() {
        for name in ScenarioName::ALL {
            assert_eq!(sample_scenario(name, 7).unwrap(), sample_scenario(name, 7).unwrap());
        }
    }

    #[test]
    fn names_round_trip() {
        for name in ScenarioName::ALL {
            assert_eq!(name.as_str().parse::<ScenarioName>().unwrap(), name);
        }
        assert!("sideways".parse::<ScenarioName>().is_err());
    }

    #[test]
    fn unsafe_has_pole_and_id_objects() {
        for seed in 0..50 {
            let s = sample_scenario(ScenarioName::Unsafe, seed).unwrap().state;
            assert!(s.objects.contains_key("pole"));
            let p = s.objects["socket"].pose.xy();
            assert!((p.x - SOCKET_CENTER[0]).abs() <= ID_HALF && p.y.abs() <= ID_HALF);
            let p = s.objects["peg"].pose.xy();
            assert!((p.x - PEG_CENTER[0]).abs() <= ID_HALF && p.y.abs() <= ID_HALF);
        }
    }
}
