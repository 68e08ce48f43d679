//! Closed-form least-squares rigid registration (cross-covariance SVD).

use nalgebra::{Matrix3, Vector3};

use super::transform::RigidTransform;
use super::GeometryError;
use crate::scalar::Real;

/// Rigid transform `H` minimising `Σ |H source_i − target_i|²`.
///
/// Needs at least three non-collinear pairs.
pub fn fit_rigid<T: Real>(
    source: &[Vector3<T>],
    target: &[Vector3<T>],
) -> Result<RigidTransform<T>, GeometryError> {
    assert_eq!(source.len(), target.len(), "paired point sets");
    let n = source.len();
    if n < 3 {
        return Err(GeometryError::InsufficientPoints { needed: 3, got: n });
    }
    let nt = T::lit(n as f64);
    let cs = source.iter().fold(Vector3::zeros(), |a, p| a + p) / nt;
    let ct = target.iter().fold(Vector3::zeros(), |a, p| a + p) / nt;
    let mut cov = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        cov += (t - ct) * (s - cs).transpose();
    }
    let svd = cov.svd(true, true);
    let mut sv = [
        svd.singular_values[0],
        svd.singular_values[1],
        svd.singular_values[2],
    ];
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    // rank ≥ 2 of the cross-covariance means the pairs are not collinear
    if sv[0] <= T::zero() || sv[1] <= T::lit(1e-9) * sv[0] {
        return Err(GeometryError::DegenerateConfiguration(
            "points are collinear",
        ));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = if (u * v_t).determinant() < T::zero() {
        -T::one()
    } else {
        T::one()
    };
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), d)) * v_t;
    let translation = ct - rotation * cs;
    Ok(RigidTransform::new(rotation, translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform::PoseVector;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exact_motion() {
        let src = vec![
            Vector3::new(0.0, 36.0, 2.5),
            Vector3::new(7.75, 16.0, 19.0),
            Vector3::new(-7.75, 16.0, 19.0),
            Vector3::new(0.0, -30.0, -6.0),
        ];
        let truth = PoseVector::new(Vector3::new(0.1, -0.3, 2.0), Vector3::new(5.0, -3.0, 8.0))
            .to_transform();
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let fit = fit_rigid(&src, &dst).unwrap();
        assert_relative_eq!(fit.rotation, truth.rotation, epsilon = 1e-12);
        assert_relative_eq!(fit.translation, truth.translation, epsilon = 1e-10);
    }

    #[test]
    fn collinear_points_are_rejected() {
        let src: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(fit_rigid(&src, &src).is_err());
    }
}
