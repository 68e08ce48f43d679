//! Multi-view triangulation of a single point.

use nalgebra::{DVector, Matrix3, Vector2, Vector3};

use super::camera::CameraModel;
use super::refine::refine;
use super::GeometryError;
use crate::scalar::Real;

/// Minimum angle (degrees) between two viewing rays.
pub const MIN_TRIANGULATION_ANGLE_DEG: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Triangulation<T: Real> {
    /// Global point, mm.
    pub point: Vector3<T>,
    /// Reprojection error per observation, pixels.
    pub residuals: Vec<T>,
}

/// Triangulates one point from `(camera, pixel)` observations: least-squares
/// ray midpoint, then reprojection-error refinement.
pub fn triangulate<T: Real>(
    observations: &[(&CameraModel<T>, Vector2<T>)],
) -> Result<Triangulation<T>, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientPoints {
            needed: 2,
            got: observations.len(),
        });
    }
    let rays: Vec<(Vector3<T>, Vector3<T>)> = observations
        .iter()
        .map(|(cam, px)| (cam.center(), cam.ray_direction(px)))
        .collect();

    let min_sin = T::lit(MIN_TRIANGULATION_ANGLE_DEG.to_radians().sin());
    let widest = rays
        .iter()
        .enumerate()
        .flat_map(|(i, a)| rays[i + 1..].iter().map(move |b| a.1.cross(&b.1).norm()))
        .fold(T::zero(), |m, s| m.max(s));
    if widest < min_sin {
        return Err(GeometryError::ParallelRays);
    }

    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (c, d) in &rays {
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * c;
    }
    let midpoint = a.try_inverse().ok_or(GeometryError::ParallelRays)? * b;

    let residual = |p: &DVector<T>| {
        let x = Vector3::new(p[0], p[1], p[2]);
        let mut r = DVector::zeros(2 * observations.len());
        for (i, (cam, px)) in observations.iter().enumerate() {
            let q = cam.project(&x).ok()?;
            r[2 * i] = q.x - px.x;
            r[2 * i + 1] = q.y - px.y;
        }
        Some(r)
    };
    let start = DVector::from_column_slice(midpoint.as_slice());
    let point = if residual(&start).is_some() {
        let out = refine(start, 30, residual);
        Vector3::new(out.params[0], out.params[1], out.params[2])
    } else {
        midpoint
    };
    let residuals = observations
        .iter()
        .map(|(cam, px)| {
            cam.project(&point)
                .map(|q| (q - px).norm())
                .unwrap_or_else(|_| T::max_value().unwrap_or_else(T::one))
        })
        .collect();
    Ok(Triangulation { point, residuals })
}
