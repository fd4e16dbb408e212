//! Switching-condition generators: diffusion samplers for bimanual start
//! and end configurations and for object-centric gripper trajectories.

mod canon;
mod ddpm;
mod switching;

use thiserror::Error;

pub use canon::{canonicalize, CloudEncoding, DESCRIPTOR_DIM};
pub use ddpm::{step_embedding, Denoiser, HyperParams, NoiseSchedule, TrainReport, BETA_MAX, BETA_MIN, DEFAULT_STEPS, STEP_EMBEDDING};
pub use switching::{
    devec_config, devec_trajectory, sample_config, sample_switching_conditions, sample_trajectory, sub_seed,
    train_config_generator, train_traj_generator, vec_config, vec_trajectory, Config, DecisionVars, SkillGenerators,
    SwitchStream, Symmetry, CONFIG_DIM, MIN_TRAJ_SAMPLES, TRAJ_DIM, WAYPOINTS,
};

use crate::geometry::GeometryError;
use crate::nn::ModelError;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),
    #[error("need at least {need} training samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("inconsistent vector length: expected {expected}, got {got}")]
    InconsistentLength { expected: usize, got: usize },
    #[error("invalid noise schedule: {0}")]
    Schedule(String),
    #[error("training diverged")]
    Diverged,
    #[error("no generator for {0}")]
    MissingGenerator(String),
    #[error("no point cloud for {0}")]
    MissingCloud(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
