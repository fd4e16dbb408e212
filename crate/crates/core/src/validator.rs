//! Feasibility validator `ξ`: a regressor of the minimum robot-obstacle
//! distance during a skill, plus the scripted reachability test.

use std::collections::BTreeSet;

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Footprint, Pose};
use crate::nn::{Activation, Mlp, ModelError, Optimizer, Standardizer};
use crate::scenegraph::{graph_of_state, segment, DemoTrace, EdgeLabel, SceneGraphError};
use crate::sim::{
    base_of, cup, min_distance_oracle, pole, SweptBody, WorldObject, WorldState, ARM_REACH, GRIPPER_RADIUS, LEFT,
    RIGHT, TABLE_HALF_X, TABLE_HALF_Y,
};

/// Safety margin on the predicted distance.
pub const SAFETY_MARGIN: f64 = 0.05;
/// Start configurations sampled per demonstration.
pub const T_SAMPLES: usize = 5;
pub const MIN_VALIDATOR_SAMPLES: usize = 100;
/// Input width: right gripper and obstacle in the left gripper's frame, `ν`.
pub const INPUT_DIM: usize = 4 + 2 + 3;

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("demonstration {0} has an empty pre-contact phase")]
    EmptyPre(usize),
    #[error("demonstration {0} has no contact-rich segment")]
    NoSkill(usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error(transparent)]
    SceneGraph(#[from] SceneGraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSample {
    pub q: [Pose; 2],
    pub p: [f64; 2],
    pub nu: [f64; 3],
    pub delta: f64,
}

/// Obstacle placements: one point per cell of an `nx` x `ny` grid,
/// optionally jittered inside its cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementGrid {
    pub nx: usize,
    pub ny: usize,
    pub half: [f64; 2],
    pub jitter: bool,
    pub seed: u64,
    /// Obstacle shapes, cycled over cells.
    pub obstacles: Vec<WorldObject>,
}

impl Default for PlacementGrid {
    fn default() -> Self {
        Self {
            nx: 5,
            ny: 5,
            half: [TABLE_HALF_X - 0.05, TABLE_HALF_Y - 0.05],
            jitter: true,
            seed: 0,
            obstacles: vec![pole(Pose::identity()), cup(Pose::identity())],
        }
    }
}

impl PlacementGrid {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell_point(&self, i: usize, j: usize, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let (wx, wy) = (2.0 * self.half[0] / self.nx as f64, 2.0 * self.half[1] / self.ny as f64);
        let (ux, uy) = if self.jitter {
            (rng.random::<f64>(), rng.random::<f64>())
        } else {
            (0.5, 0.5)
        };
        [-self.half[0] + wx * (i as f64 + ux), -self.half[1] + wy * (j as f64 + uy)]
    }
}

/// Gripper disks plus every object held at some step of `range`, in a fixed
/// order.
fn swept_frames(trace: &DemoTrace, range: std::ops::Range<usize>) -> Result<Vec<Vec<SweptBody>>, SceneGraphError> {
    let mut carried = BTreeSet::new();
    for i in range.clone() {
        let g = graph_of_state(&trace.header, &trace.steps[i])?;
        carried.extend(g.edges_labeled(EdgeLabel::AtGrasp).map(|e| e.dst.clone()));
    }
    Ok(range
        .map(|i| {
            let step = &trace.steps[i];
            let mut frame: Vec<SweptBody> = [LEFT, RIGHT]
                .iter()
                .map(|h| SweptBody {
                    id: h.to_string(),
                    footprint: Footprint::Disk { radius: GRIPPER_RADIUS },
                    pose: step.grippers[*h].pose,
                })
                .collect();
            frame.extend(carried.iter().map(|o| SweptBody {
                id: o.clone(),
                footprint: trace.header.objects[o].footprint,
                pose: step.objects[o],
            }));
            frame
        })
        .collect())
}

/// `⋃ (q^t_i, p, ν, δ)`: for each demonstration, each sampled `t` in the
/// pre-contact phase and each placement, the oracle distance between the
/// obstacle and the robot from `t` to the end of the skill.
pub fn build_collision_dataset(demos: &[DemoTrace], grid: &PlacementGrid) -> Result<Vec<CollisionSample>, ValidatorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let mut out = Vec::with_capacity(demos.len() * T_SAMPLES * grid.len());
    for (n, d) in demos.iter().enumerate() {
        let seq = segment(d)?;
        let span = seq.contact_rich.first().ok_or(ValidatorError::NoSkill(n))?;
        let (pre, mid, eff) = seq.phase_indices(span);
        if pre.is_empty() {
            return Err(ValidatorError::EmptyPre(n));
        }
        let end = if eff.is_empty() { mid.end } else { eff.end };
        let last = pre.len() - 1;
        for j in 0..T_SAMPLES {
            let t = pre.start + (j * last + (T_SAMPLES - 1) / 2) / (T_SAMPLES - 1).max(1);
            let frames = swept_frames(d, t..end)?;
            let step = &d.steps[t];
            let q = [step.grippers[LEFT].pose, step.grippers[RIGHT].pose];
            for i in 0..grid.nx {
                for k in 0..grid.ny {
                    let p = grid.cell_point(i, k, &mut rng);
                    let cell = n * T_SAMPLES * grid.len() + j * grid.len() + i * grid.ny + k;
                    let obstacle = &grid.obstacles[cell % grid.obstacles.len().max(1)];
                    let at = Pose::planar(p[0], p[1], 0.0);
                    out.push(CollisionSample {
                        q,
                        p,
                        nu: obstacle.nu(),
                        delta: min_distance_oracle(std::slice::from_ref(&frames), &obstacle.footprint, &at),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn features(q: &[Pose; 2], p: [f64; 2], nu: [f64; 3]) -> Vec<f64> {
    let frame = q[0].inverse();
    let r = frame * q[1];
    let o = frame * Pose::planar(p[0], p[1], 0.0);
    let mut v = Vec::with_capacity(INPUT_DIM);
    v.extend([r.translation.x, r.translation.y, r.yaw().cos(), r.yaw().sin()]);
    v.extend([o.translation.x, o.translation.y]);
    v.extend(nu);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ValidatorParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 300,
            batch: 32,
            lr: 2e-3,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorReport {
    pub n_train: usize,
    pub n_val: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    /// Held-out agreement of `δ̂ > margin` with `δ > margin`.
    pub val_agreement: f64,
    pub degenerate_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorModel {
    pub skill: String,
    /// Objects moved by the skill itself; never treated as obstacles.
    pub manipulated: Vec<String>,
    pub net: Mlp,
    pub input_norm: Standardizer,
    pub delta_mean: f64,
    pub delta_std: f64,
}

impl ValidatorModel {
    /// `δ̂`, clipped at zero.
    pub fn predict(&self, q: &[Pose; 2], p: [f64; 2], nu: [f64; 3]) -> Result<f64, ValidatorError> {
        let x = self.input_norm.apply(&features(q, p, nu));
        let y = self.net.forward(&x)?[0];
        Ok((y * self.delta_std + self.delta_mean).max(0.0))
    }

    fn mae_and_agreement(&self, data: &[&CollisionSample], margin: f64) -> Result<(f64, f64), ValidatorError> {
        if data.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let (mut err, mut agree) = (0.0, 0usize);
        for s in data {
            let d = self.predict(&s.q, s.p, s.nu)?;
            err += (d - s.delta).abs();
            agree += usize::from((d > margin) == (s.delta > margin));
        }
        Ok((err / data.len() as f64, agree as f64 / data.len() as f64))
    }
}

/// Fits `ξ` on a seeded train/validation split of `data`.
pub fn train_validator(
    skill: &str,
    manipulated: &[&str],
    data: &[CollisionSample],
    hp: &ValidatorParams,
) -> Result<(ValidatorModel, ValidatorReport), ValidatorError> {
    if data.len() < MIN_VALIDATOR_SAMPLES {
        return Err(ValidatorError::TooFewSamples {
            got: data.len(),
            need: MIN_VALIDATOR_SAMPLES,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((data.len() as f64 * hp.val_fraction).round() as usize).min(data.len() - 1);
    let (val_idx, train_idx) = idx.split_at(n_val);
    let train: Vec<&CollisionSample> = train_idx.iter().map(|&i| &data[i]).collect();
    let val: Vec<&CollisionSample> = val_idx.iter().map(|&i| &data[i]).collect();

    let xs: Vec<Vec<f64>> = train.iter().map(|s| features(&s.q, s.p, s.nu)).collect();
    let input_norm = Standardizer::fit(&xs, 1e-6);
    let xs: Vec<Vec<f64>> = xs.iter().map(|x| input_norm.apply(x)).collect();
    let ys: Vec<f64> = train.iter().map(|s| s.delta).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
    let degenerate = var < 1e-12;
    if degenerate {
        log::warn!("validator labels for {skill} are all identical");
    }
    let std = var.sqrt().max(1e-6);

    let mut sizes = vec![INPUT_DIM];
    sizes.extend_from_slice(&hp.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, Activation::Silu, hp.seed);
    let mut opt = Optimizer::adam(hp.lr, net.num_params());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch.max(1)) {
            let input: Vec<f64> = chunk.iter().flat_map(|&i| xs[i].iter().copied()).collect();
            let cache = net.forward_batch(&input, chunk.len())?;
            let n = chunk.len() as f64;
            let dout: Vec<f64> = cache
                .output()
                .iter()
                .zip(chunk)
                .map(|(o, &i)| 2.0 * (o - (ys[i] - mean) / std) / n)
                .collect();
            let mut grad = vec![0.0; net.num_params()];
            net.backward_batch(&cache, &dout, &mut grad);
            opt.step(net.params_mut(), &grad);
        }
    }
    let model = ValidatorModel {
        skill: skill.to_string(),
        manipulated: manipulated.iter().map(|s| s.to_string()).collect(),
        net,
        input_norm,
        delta_mean: mean,
        delta_std: std,
    };
    let (train_mae, _) = model.mae_and_agreement(&train, SAFETY_MARGIN)?;
    let (val_mae, val_agreement) = model.mae_and_agreement(&val, SAFETY_MARGIN)?;
    Ok((
        model,
        ValidatorReport {
            n_train: train.len(),
            n_val: val.len(),
            train_mae,
            val_mae,
            val_agreement,
            degenerate_labels: degenerate,
        },
    ))
}

/// `SafeBiOp`: every object the skill does not manipulate keeps a predicted
/// distance above `margin`. Prediction errors count as unsafe.
pub fn test_safe_biop(model: &ValidatorModel, state: &WorldState, q: &[Pose; 2], margin: f64) -> bool {
    state
        .objects
        .iter()
        .filter(|(id, _)| !model.manipulated.contains(id))
        .all(|(_, o)| {
            let xy = o.pose.xy();
            model.predict(q, [xy.x, xy.y], o.nu()).is_ok_and(|d| d > margin)
        })
}

/// `IsReachable(h, p)`: within the arm's reach of its base, inclusive.
pub fn test_reachable(arm: &str, p: Vector2<f64>) -> bool {
    let b = base_of(arm);
    (p - Vector2::new(b[0], b[1])).norm() <= ARM_REACH + 1e-12
}
