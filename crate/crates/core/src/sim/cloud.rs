//! Synthetic depth-like point clouds of object footprints.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{SimError, WorldState};
use crate::geometry::{Footprint, PointCloud};

pub const CLOUD_POINTS: usize = 256;
pub const CLOUD_SIGMA: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudOptions {
    pub sigma: f64,
    /// Drop points on the far side from a camera looking along +y.
    pub occlusion: bool,
}

impl Default for CloudOptions {
    fn default() -> Self {
        Self {
            sigma: CLOUD_SIGMA,
            occlusion: false,
        }
    }
}

fn boundary_point(fp: &Footprint, rng: &mut ChaCha8Rng) -> (f64, f64) {
    match *fp {
        Footprint::Disk { radius } => {
            let a = rng.random_range(0.0..2.0 * PI);
            (radius * a.cos(), radius * a.sin())
        }
        Footprint::Rect { half_x, half_y } => {
            let s = rng.random_range(0.0..4.0 * (half_x + half_y));
            let (w, h) = (2.0 * half_x, 2.0 * half_y);
            if s < w {
                (-half_x + s, -half_y)
            } else if s < w + h {
                (half_x, -half_y + (s - w))
            } else if s < 2.0 * w + h {
                (half_x - (s - w - h), half_y)
            } else {
                (-half_x, half_y - (s - 2.0 * w - h))
            }
        }
    }
}

fn top_point(fp: &Footprint, rng: &mut ChaCha8Rng) -> (f64, f64) {
    match *fp {
        Footprint::Disk { radius } => {
            let r = radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            (r * a.cos(), r * a.sin())
        }
        Footprint::Rect { half_x, half_y } => (
            rng.random_range(-half_x..=half_x),
            rng.random_range(-half_y..=half_y),
        ),
    }
}

/// Samples the object's side walls and top surface in its own frame, adds
/// isotropic noise there, then places the points in the world.
pub fn synth_cloud(state: &WorldState, object: &str, seed: u64, opts: CloudOptions) -> Result<PointCloud, SimError> {
    let o = state.object(object)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = if opts.sigma.is_finite() { opts.sigma.max(0.0) } else { 0.0 };
    let noise = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    let mut points = Vec::with_capacity(CLOUD_POINTS);
    for i in 0..CLOUD_POINTS {
        let (x, y, z) = if i % 2 == 0 {
            let (x, y) = boundary_point(&o.footprint, &mut rng);
            (x, y, rng.random_range(0.0..=o.height))
        } else {
            let (x, y) = top_point(&o.footprint, &mut rng);
            (x, y, o.height)
        };
        let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        points.push(o.pose.transform_point(&(Vector3::new(x, y, z) + jitter)));
    }
    if opts.occlusion {
        let cy = o.pose.translation.y;
        points.retain(|p| p.y <= cy);
    }
    Ok(PointCloud::new(points, "world"))
}
