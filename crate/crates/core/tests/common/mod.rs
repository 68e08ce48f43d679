//! Shared fixtures and independent reference computations.
#![allow(dead_code)]

use mousetrack::geometry::{calibration_matrix, CameraModel, PoseVector, RigidTransform};
use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;

/// Camera on a sphere of radius 300..800 mm looking near the origin, with a
/// random intrinsic matrix (including skew) and roll.
pub fn random_camera<R: Rng>(rng: &mut R, id: usize) -> CameraModel<f64> {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let elev: f64 = rng.random_range(0.2..1.4);
    let dist: f64 = rng.random_range(300.0..800.0);
    let eye = Vector3::new(
        dist * elev.cos() * theta.cos(),
        dist * elev.cos() * theta.sin(),
        dist * elev.sin(),
    );
    let target = Vector3::new(
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
        rng.random_range(-5.0..5.0),
    );
    let up = Vector3::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        1.0,
    );
    let mut k = calibration_matrix(
        rng.random_range(600.0..2000.0),
        rng.random_range(600.0..2000.0),
        rng.random_range(200.0..800.0),
        rng.random_range(200.0..600.0),
    );
    k[(0, 1)] = rng.random_range(-2.0..2.0);
    CameraModel::look_at(id, k, eye, target, up)
}

pub fn random_point<R: Rng>(rng: &mut R, half_extent: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-half_extent..half_extent),
        rng.random_range(-half_extent..half_extent),
        rng.random_range(-half_extent..half_extent) * 0.3,
    )
}

/// Pinhole projection written out coordinate by coordinate.
pub fn oracle_project(cam: &CameraModel<f64>, x: &Vector3<f64>) -> Vector2<f64> {
    let r = &cam.pose_global.rotation;
    let t = &cam.pose_global.translation;
    let mut xc = [0.0; 3];
    for (i, c) in xc.iter_mut().enumerate() {
        *c = r[(i, 0)] * x[0] + r[(i, 1)] * x[1] + r[(i, 2)] * x[2] + t[i];
    }
    let k = &cam.calibration;
    let (a, b) = (xc[0] / xc[2], xc[1] / xc[2]);
    Vector2::new(
        k[(0, 0)] * a + k[(0, 1)] * b + k[(0, 2)],
        k[(1, 1)] * b + k[(1, 2)],
    )
}

/// Rotation of an axis-angle vector via unit quaternions.
pub fn oracle_rotation(r: &Vector3<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_scaled_axis(*r)
        .to_rotation_matrix()
        .into_inner()
}

/// Linear triangulation: null vector of the stacked `u p3 − p1`, `v p3 − p2`
/// rows of the projection matrices.
pub fn oracle_triangulate(obs: &[(&CameraModel<f64>, Vector2<f64>)]) -> Vector3<f64> {
    let mut a = DMatrix::zeros(2 * obs.len(), 4);
    for (j, (cam, px)) in obs.iter().enumerate() {
        let p = cam.projection_matrix().0;
        let p = p / p.norm();
        for c in 0..4 {
            a[(2 * j, c)] = px.x * p[(2, c)] - p[(0, c)];
            a[(2 * j + 1, c)] = px.y * p[(2, c)] - p[(1, c)];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v requested");
    let (idx, _) = svd.singular_values.argmin();
    let h = v_t.row(idx);
    Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3])
}

/// Grid displacement RMS written as an explicit double loop over a box grid.
pub fn oracle_grid_rmse(
    h: &RigidTransform<f64>,
    s: &RigidTransform<f64>,
    grid: &[Vector3<f64>],
) -> f64 {
    let s_inv_r = s.rotation.transpose();
    let mut sum = 0.0;
    for g in grid {
        let local = s_inv_r * (g - s.translation);
        let moved = h.rotation * local + h.translation;
        sum += (moved - g).norm_squared();
    }
    (sum / grid.len() as f64).sqrt()
}

/// Smooth planar track: constant forward speed and constant yaw rate.
pub fn smooth_track(n: usize, speed: f64, yaw_rate: f64) -> Vec<PoseVector<f64>> {
    (0..n)
        .map(|t| {
            let tt = t as f64 - n as f64 / 2.0;
            let yaw = 0.3 + yaw_rate * tt;
            let radius = speed / yaw_rate;
            PoseVector::new(
                Vector3::new(0.0, 0.0, yaw),
                Vector3::new(
                    radius * (yaw.cos() - 0.3f64.cos()) - 20.0,
                    radius * (yaw.sin() - 0.3f64.sin()),
                    0.0,
                ),
            )
        })
        .collect()
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}
