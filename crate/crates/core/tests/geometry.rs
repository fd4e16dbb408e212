use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use proptest::prelude::*;
use svip::geometry::{compose, rot6d_decode, rot6d_encode, transform_cloud, Footprint, PointCloud, Pose, Rot6D};

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-2.0..2.0f64),
        prop::array::uniform3(-PI..PI),
    )
        .prop_map(|(t, r)| {
            Pose::new(
                Vector3::new(t[0], t[1], t[2]),
                UnitQuaternion::from_euler_angles(r[0], r[1], r[2]),
            )
        })
}

fn planar() -> impl Strategy<Value = Pose> {
    (-0.5..0.5f64, -0.5..0.5f64, -PI..PI).prop_map(|(x, y, a)| Pose::planar(x, y, a))
}

fn cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 2..40)
        .prop_map(|pts| PointCloud::new(pts.into_iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(), "o"))
}

proptest! {
    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let l = compose(&compose(&a, &b), &c);
        let r = compose(&a, &compose(&b, &c));
        prop_assert!(l.approx_eq(&r, 1e-9));
    }

    #[test]
    fn inverse_cancels(a in pose()) {
        prop_assert!(compose(&a, &a.inverse()).approx_eq(&Pose::identity(), 1e-9));
        prop_assert!(compose(&a.inverse(), &a).approx_eq(&Pose::identity(), 1e-9));
    }

    #[test]
    fn clouds_move_rigidly(t in pose(), c in cloud()) {
        let m = transform_cloud(&t, &c);
        prop_assert_eq!(m.len(), c.len());
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let before = (c.points[i] - c.points[j]).norm();
                let after = (m.points[i] - m.points[j]).norm();
                prop_assert!((before - after).abs() < 1e-9);
            }
        }
        let moved = t.transform_point(&c.centroid().unwrap());
        prop_assert!((m.centroid().unwrap() - moved).norm() < 1e-9);
    }

    #[test]
    fn rot6d_round_trips(r in prop::array::uniform3(-PI..PI)) {
        let q = UnitQuaternion::from_euler_angles(r[0], r[1], r[2]);
        let back = rot6d_decode(&rot6d_encode(&q)).unwrap();
        prop_assert!(back.angle_to(&q) < 1e-9);
    }

    #[test]
    fn disk_rect_distance_matches_sampling(
        a in planar(), b in planar(),
        r in 0.01..0.08f64, hx in 0.01..0.1f64, hy in 0.01..0.1f64,
    ) {
        let disk = Footprint::Disk { radius: r };
        let rect = Footprint::Rect { half_x: hx, half_y: hy };
        let d = disk.distance_to(&a, &rect, &b);
        prop_assert!((d - rect.distance_to(&b, &disk, &a)).abs() < 1e-12);
        prop_assert!((d - sampled_distance(&disk, &a, &rect, &b)).abs() < 2e-3);
    }

    #[test]
    fn rect_rect_distance_matches_sampling(
        a in planar(), b in planar(),
        s in prop::array::uniform4(0.01..0.1f64),
    ) {
        let p = Footprint::Rect { half_x: s[0], half_y: s[1] };
        let q = Footprint::Rect { half_x: s[2], half_y: s[3] };
        let d = p.distance_to(&a, &q, &b);
        prop_assert!(d >= 0.0);
        prop_assert!((d - sampled_distance(&p, &a, &q, &b)).abs() < 2e-3);
    }
}

/// Brute force: zero if either shape holds a boundary sample of the other,
/// else the closest pair of boundary samples.
fn sampled_distance(p: &Footprint, pa: &Pose, q: &Footprint, qa: &Pose) -> f64 {
    let bp = boundary(p, pa, 800);
    let bq = boundary(q, qa, 800);
    let inside = bp.iter().any(|v| q.contains_point(qa, *v, 0.0)) || bq.iter().any(|v| p.contains_point(pa, *v, 0.0));
    if inside {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for u in &bp {
        for v in &bq {
            best = best.min((u - v).norm());
        }
    }
    best
}

fn boundary(f: &Footprint, at: &Pose, n: usize) -> Vec<Vector2<f64>> {
    let local: Vec<Vector2<f64>> = match *f {
        Footprint::Disk { radius } => (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                Vector2::new(radius * t.cos(), radius * t.sin())
            })
            .collect(),
        Footprint::Rect { half_x, half_y } => {
            let c = [(-half_x, -half_y), (half_x, -half_y), (half_x, half_y), (-half_x, half_y)];
            (0..4)
                .flat_map(|k| {
                    let (a, b) = (c[k], c[(k + 1) % 4]);
                    (0..n / 4).map(move |i| {
                        let s = i as f64 / (n / 4) as f64;
                        Vector2::new(a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1))
                    })
                })
                .collect()
        }
    };
    let (s, c) = at.yaw().sin_cos();
    local
        .into_iter()
        .map(|p| Vector2::new(c * p.x - s * p.y + at.translation.x, s * p.x + c * p.y + at.translation.y))
        .collect()
}

#[test]
fn gram_schmidt_normalizes_scaled_columns() {
    let q = rot6d_decode(&Rot6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
    assert!(q.angle_to(&UnitQuaternion::identity()) < 1e-12);
    // Second column skewed toward the first: the orthogonalized frame is still identity.
    let q = rot6d_decode(&Rot6D([1.0, 0.0, 0.0, 0.5, 1.0, 0.0])).unwrap();
    assert!(q.angle_to(&UnitQuaternion::identity()) < 1e-12);
}

#[test]
fn yaw_half_turn_flips_x() {
    let c = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)], "o");
    let m = transform_cloud(&Pose::planar(0.0, 0.0, PI), &c);
    assert!((m.points[0] - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-9);
}

#[test]
fn decode_rejects_parallel_columns() {
    assert!(rot6d_decode(&Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).is_err());
}
