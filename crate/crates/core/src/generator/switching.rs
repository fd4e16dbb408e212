//! Per-factor samplers for the decision variables of one skill.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{canonicalize, Denoiser, GeneratorError, HyperParams, NoiseSchedule, TrainReport};
use crate::geometry::{Footprint, PointCloud, Pose, Rot6D};

pub const WAYPOINTS: usize = 16;
/// Translation plus 6D rotation per waypoint.
pub const TRAJ_DIM: usize = WAYPOINTS * 9;
/// Four planar gripper poses as `(x, y, cos, sin)`.
pub const CONFIG_DIM: usize = 16;
pub const MIN_TRAJ_SAMPLES: usize = 20;

/// Left and right gripper poses.
pub type Config = [Pose; 2];

/// `𝒱`: start and end configurations plus one world-frame gripper
/// trajectory per manipulated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVars {
    pub q_pre: Config,
    pub q_eff: Config,
    pub trajectories: BTreeMap<String, Vec<Pose>>,
}

impl DecisionVars {
    /// Final waypoint of an object's trajectory, i.e. the contact pose.
    pub fn contact_pose(&self, object: &str) -> Option<Pose> {
        self.trajectories.get(object).and_then(|t| t.last().copied())
    }
}

pub fn vec_config(q_pre: &Config, q_eff: &Config) -> Vec<f64> {
    q_pre
        .iter()
        .chain(q_eff)
        .flat_map(|p| {
            let (xy, yaw) = (p.xy(), p.yaw());
            [xy.x, xy.y, yaw.cos(), yaw.sin()]
        })
        .collect()
}

pub fn devec_config(v: &[f64]) -> Result<(Config, Config), GeneratorError> {
    if v.len() != CONFIG_DIM {
        return Err(GeneratorError::InconsistentLength {
            expected: CONFIG_DIM,
            got: v.len(),
        });
    }
    let p = |i: usize| Pose::planar(v[4 * i], v[4 * i + 1], v[4 * i + 3].atan2(v[4 * i + 2]));
    Ok(([p(0), p(1)], [p(2), p(3)]))
}

pub fn vec_trajectory(tau: &[Pose]) -> Vec<f64> {
    tau.iter()
        .flat_map(|p| {
            let t = p.translation;
            let r = Rot6D::encode(&p.rotation);
            [t.x, t.y, t.z].into_iter().chain(r.0)
        })
        .collect()
}

pub fn devec_trajectory(v: &[f64]) -> Result<Vec<Pose>, GeneratorError> {
    if v.len() != TRAJ_DIM {
        return Err(GeneratorError::InconsistentLength {
            expected: TRAJ_DIM,
            got: v.len(),
        });
    }
    v.chunks_exact(9)
        .map(|c| {
            let r = Rot6D([c[3], c[4], c[5], c[6], c[7], c[8]]).decode()?;
            Ok(Pose::new(Vector3::new(c[0], c[1], c[2]), r))
        })
        .collect()
}

/// Rotational symmetry of the manipulated object, used to pick one
/// representative of each training trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Symmetry {
    None,
    Discrete(Vec<f64>),
    Continuous,
}

impl Symmetry {
    pub fn of_footprint(fp: &Footprint) -> Self {
        match fp {
            Footprint::Disk { .. } => Symmetry::Continuous,
            Footprint::Rect { .. } => Symmetry::Discrete(fp.symmetry_angles()),
        }
    }

    /// Rotates `tau` about the frame's z axis so its final waypoint lies as
    /// close as the symmetry allows to the -x side.
    fn reduce(&self, tau: &[Pose]) -> Vec<Pose> {
        let Some(last) = tau.last() else {
            return Vec::new();
        };
        let dir = last.xy();
        let bearing = dir.y.atan2(dir.x);
        let alpha = match self {
            Symmetry::None => 0.0,
            Symmetry::Continuous if dir.norm() > 1e-9 => PI - bearing,
            Symmetry::Continuous => 0.0,
            Symmetry::Discrete(angles) => angles
                .iter()
                .copied()
                .min_by(|a, b| (a + bearing).cos().total_cmp(&(b + bearing).cos()))
                .unwrap_or(0.0),
        };
        let r = Pose::planar(0.0, 0.0, alpha);
        tau.iter().map(|p| r * *p).collect()
    }
}

/// Trains `ε_θ(Enc(C), Vec(τ) + ε, k)` on trajectories expressed in each
/// cloud's canonical frame.
pub fn train_traj_generator(
    data: &[(PointCloud, Vec<Pose>)],
    schedule: NoiseSchedule,
    hp: &HyperParams,
    symmetry: &Symmetry,
) -> Result<(Denoiser, TrainReport), GeneratorError> {
    if data.len() < MIN_TRAJ_SAMPLES {
        return Err(GeneratorError::TooFewSamples {
            got: data.len(),
            need: MIN_TRAJ_SAMPLES,
        });
    }
    let mut rows = Vec::with_capacity(data.len());
    for (cloud, tau) in data {
        if tau.len() != WAYPOINTS {
            return Err(GeneratorError::InconsistentLength {
                expected: WAYPOINTS,
                got: tau.len(),
            });
        }
        let enc = canonicalize(cloud)?;
        let inv = enc.frame.inverse();
        let local: Vec<Pose> = tau.iter().map(|p| inv * *p).collect();
        rows.push((enc.descriptor, vec_trajectory(&symmetry.reduce(&local))));
    }
    Denoiser::train(&rows, schedule, hp)
}

/// Trains the unconditional `ε_θ(𝐪, k)`.
pub fn train_config_generator(
    data: &[(Config, Config)],
    schedule: NoiseSchedule,
    hp: &HyperParams,
) -> Result<(Denoiser, TrainReport), GeneratorError> {
    if data.is_empty() {
        return Err(GeneratorError::TooFewSamples { got: 0, need: 1 });
    }
    let rows: Vec<_> = data.iter().map(|(a, b)| (Vec::new(), vec_config(a, b))).collect();
    Denoiser::train(&rows, schedule, hp)
}

pub fn sample_config(den: &Denoiser, seed: u64) -> Result<(Config, Config), GeneratorError> {
    devec_config(&den.sample(&[], seed)?)
}

/// Samples in the cloud's canonical frame and maps the result to the world.
pub fn sample_trajectory(den: &Denoiser, cloud: &PointCloud, seed: u64) -> Result<Vec<Pose>, GeneratorError> {
    let enc = canonicalize(cloud)?;
    let local = devec_trajectory(&den.sample(&enc.descriptor, seed)?)?;
    Ok(local.into_iter().map(|p| enc.frame * p).collect())
}

/// Trained generators of one skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillGenerators {
    pub skill: String,
    pub config: Option<Denoiser>,
    /// Keyed by object id.
    pub trajectories: BTreeMap<String, Denoiser>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one factor's chain, derived from the joint seed.
pub fn sub_seed(seed: u64, factor: &str) -> u64 {
    let h = factor
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    splitmix(seed ^ splitmix(h))
}

/// Draws `𝐪` and every `τ_o` from independent chains with sub-seeds of `seed`.
pub fn sample_switching_conditions(
    gens: &SkillGenerators,
    clouds: &BTreeMap<String, PointCloud>,
    seed: u64,
) -> Result<DecisionVars, GeneratorError> {
    let config = gens
        .config
        .as_ref()
        .ok_or_else(|| GeneratorError::MissingGenerator(format!("{}: q", gens.skill)))?;
    let (q_pre, q_eff) = sample_config(config, sub_seed(seed, "q"))?;
    let mut trajectories = BTreeMap::new();
    for (o, den) in &gens.trajectories {
        let cloud = clouds.get(o).ok_or_else(|| GeneratorError::MissingCloud(o.clone()))?;
        trajectories.insert(o.clone(), sample_trajectory(den, cloud, sub_seed(seed, &format!("tau:{o}")))?);
    }
    Ok(DecisionVars {
        q_pre,
        q_eff,
        trajectories,
    })
}

/// A budgeted stream of fresh switching-condition draws.
#[derive(Debug)]
pub struct SwitchStream<'a> {
    gens: &'a SkillGenerators,
    seed: u64,
    budget: usize,
    calls: usize,
}

impl<'a> SwitchStream<'a> {
    pub fn new(gens: &'a SkillGenerators, seed: u64, budget: usize) -> Self {
        Self {
            gens,
            seed,
            budget,
            calls: 0,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    /// `Ok(None)` once the budget is spent.
    pub fn next(&mut self, clouds: &BTreeMap<String, PointCloud>) -> Result<Option<DecisionVars>, GeneratorError> {
        if self.calls >= self.budget {
            return Ok(None);
        }
        let seed = sub_seed(self.seed, &format!("call:{}", self.calls));
        self.calls += 1;
        sample_switching_conditions(self.gens, clouds, seed).map(Some)
    }
}
