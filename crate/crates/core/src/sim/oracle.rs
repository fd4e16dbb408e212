//! Analytic robot-obstacle distance over swept trajectories.

use serde::{Deserialize, Serialize};

use crate::geometry::{convex_polygon_distance, point_segment_distance, Footprint, Pose};

/// One rigid body of the robot (gripper disk or held object) at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweptBody {
    pub id: String,
    pub footprint: Footprint,
    pub pose: Pose,
}

/// Spacing used when sweeping non-disk bodies between waypoints.
const SWEEP_RESOLUTION: f64 = 0.002;

/// Distance between one frame of robot bodies and an obstacle.
pub fn robot_obstacle_distance(frame: &[SweptBody], obstacle: &Footprint, at: &Pose) -> f64 {
    frame
        .iter()
        .map(|b| b.footprint.distance_to(&b.pose, obstacle, at))
        .fold(f64::INFINITY, f64::min)
}

fn swept_distance(a: &SweptBody, b: &SweptBody, obstacle: &Footprint, at: &Pose) -> f64 {
    match a.footprint {
        Footprint::Disk { radius } => {
            let (p, q) = (a.pose.xy(), b.pose.xy());
            let d = match *obstacle {
                Footprint::Disk { radius: r2 } => point_segment_distance(at.xy(), p, q) - r2,
                Footprint::Rect { .. } => convex_polygon_distance(&[p, q], &obstacle.polygon(at, 0)),
            };
            (d - radius).max(0.0)
        }
        Footprint::Rect { .. } => {
            let travel = (b.pose.translation - a.pose.translation).norm()
                + a.footprint.bounding_radius() * a.pose.rotation.angle_to(&b.pose.rotation);
            let n = ((travel / SWEEP_RESOLUTION).ceil() as usize).max(1);
            (0..=n)
                .map(|i| {
                    let s = i as f64 / n as f64;
                    let t = a.pose.translation + (b.pose.translation - a.pose.translation) * s;
                    let r = a.pose.rotation.slerp(&b.pose.rotation, s);
                    a.footprint.distance_to(&Pose::new(t, r), obstacle, at)
                })
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// `δ`: minimum distance between the robot and `obstacle` over every
/// trajectory, with bodies moving linearly between consecutive frames.
///
/// Frames of one trajectory must list the same bodies in the same order.
pub fn min_distance_oracle(trajectories: &[Vec<Vec<SweptBody>>], obstacle: &Footprint, at: &Pose) -> f64 {
    let mut best = f64::INFINITY;
    for traj in trajectories {
        if let [only] = traj.as_slice() {
            best = best.min(robot_obstacle_distance(only, obstacle, at));
        }
        for w in traj.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                best = best.min(swept_distance(a, b, obstacle, at));
            }
        }
    }
    best
}
