//! Canonical frames and rigid-motion-invariant descriptors of point clouds.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::GeneratorError;
use crate::geometry::{PointCloud, Pose};

pub const DESCRIPTOR_DIM: usize = 32;

const RADIAL_BINS: usize = 12;
const RADIAL_STEP: f64 = 0.0075;
const HEIGHT_CENTERS: [f64; 4] = [-0.06, -0.02, 0.02, 0.06];
const HEIGHT_WIDTH: f64 = 0.02;
/// Relative eigenvalue gap below which the principal axis is undefined.
const ISOTROPY_TOL: f64 = 1e-9;

/// `Enc(C)`: canonical frame plus a descriptor computed in that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudEncoding {
    pub frame: Pose,
    pub descriptor: Vec<f64>,
}

fn degenerate(why: &str) -> GeneratorError {
    GeneratorError::DegenerateCloud(why.to_string())
}

/// Frame at the centroid, yawed onto the principal horizontal axis with the
/// sign chosen by the third moment along it.
///
/// Clouds whose horizontal spread is isotropic keep a world-aligned yaw.
pub fn canonicalize(c: &PointCloud) -> Result<CloudEncoding, GeneratorError> {
    c.validate()?;
    if c.len() < 3 {
        return Err(degenerate("fewer than 3 points"));
    }
    let centroid = c.centroid()?;
    let n = c.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &c.points {
        let d = p - centroid;
        cov += d * d.transpose() / n;
    }
    let mut eig = cov.symmetric_eigenvalues().as_slice().to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    if eig[0] <= 1e-18 || eig[1] <= 1e-12 * eig[0] {
        return Err(degenerate("points are collinear or coincident"));
    }

    let (sxx, syy, sxy) = (cov[(0, 0)], cov[(1, 1)], cov[(0, 1)]);
    let gap = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    let mut yaw = if gap > ISOTROPY_TOL * (sxx + syy) {
        0.5 * (2.0 * sxy).atan2(sxx - syy)
    } else {
        0.0
    };
    let skew: f64 = c
        .points
        .iter()
        .map(|p| {
            let d = p - centroid;
            (d.x * yaw.cos() + d.y * yaw.sin()).powi(3)
        })
        .sum();
    if skew < 0.0 {
        yaw += std::f64::consts::PI;
    }

    let frame = Pose::new(centroid, UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw));
    let inv = frame.inverse();
    let local: Vec<Vector3<f64>> = c.points.iter().map(|p| inv.transform_point(p)).collect();
    Ok(CloudEncoding {
        frame,
        descriptor: descriptor(&local),
    })
}

fn descriptor(pts: &[Vector3<f64>]) -> Vec<f64> {
    let n = pts.len() as f64;
    let mut d = vec![0.0; DESCRIPTOR_DIM];
    let mut max_r: f64 = 0.0;
    for p in pts {
        let r = p.xy().norm();
        let theta = p.y.atan2(p.x);
        max_r = max_r.max(r);
        d[0] += p.x * p.x / n;
        d[1] += p.y * p.y / n;
        d[2] += p.z * p.z / n;
        d[3] += p.x.abs() / n;
        d[4] += p.y.abs() / n;
        d[5] += p.z.abs() / n;
        d[6] += r / n;
        for i in 0..RADIAL_BINS {
            let c = RADIAL_STEP * i as f64;
            d[8 + i] += (-(r - c).powi(2) / (2.0 * RADIAL_STEP * RADIAL_STEP)).exp() / n;
        }
        for k in 1..=4 {
            let a = k as f64 * theta;
            d[20 + 2 * (k - 1)] += r * a.cos() / n;
            d[21 + 2 * (k - 1)] += r * a.sin() / n;
        }
        for (i, c) in HEIGHT_CENTERS.iter().enumerate() {
            d[28 + i] += (-(p.z - c).powi(2) / (2.0 * HEIGHT_WIDTH * HEIGHT_WIDTH)).exp() / n;
        }
    }
    d[7] = max_r;
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(), "world")
    }

    #[test]
    fn unit_square_frame_at_center() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        let e = canonicalize(&c).unwrap();
        assert!((e.frame.translation - Vector3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
        assert_eq!(e.descriptor.len(), DESCRIPTOR_DIM);
    }

    #[test]
    fn collinear_is_degenerate() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 2.0, 0.0]]);
        assert!(matches!(canonicalize(&c), Err(GeneratorError::DegenerateCloud(_))));
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        assert!(canonicalize(&c).is_err());
    }

    #[test]
    fn elongated_cloud_axis_and_sign() {
        // Long along y with the long tail at -y: the axis points toward -y.
        let c = cloud(&[
            [0.0, -1.0, 0.0],
            [0.1, 0.0, 0.0],
            [-0.1, 0.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 0.5, 0.1],
        ]);
        let e = canonicalize(&c).unwrap();
        assert!((e.frame.yaw() + std::f64::consts::FRAC_PI_2).abs() < 1e-9, "{}", e.frame.yaw());
    }
}
