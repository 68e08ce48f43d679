//! Rigid transforms and their six-parameter Rodrigues representation.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::scalar::Real;

/// Cross-product matrix `[v]x`, so that `skew(a) * b == a.cross(&b)`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Threshold below which the closed-form Rodrigues coefficients switch to
/// their Taylor expansions. Chosen so that the dropped `θ⁴` terms vanish
/// relative to machine epsilon.
fn small_angle<T: Real>() -> T {
    T::default_epsilon().sqrt().sqrt()
}

/// Rotation matrix of a Rodrigues vector (axis times angle in radians).
pub fn rodrigues_to_matrix<T: Real>(r: &Vector3<T>) -> Matrix3<T> {
    let theta2 = r.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < small_angle() {
        (
            T::one() - theta2 / T::lit(6.0),
            T::lit(0.5) - theta2 / T::lit(24.0),
        )
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    let k = skew(r);
    Matrix3::identity() + k * a + k * k * b
}

/// Rodrigues vector of a rotation matrix on the canonical branch `|r| ∈ [0, π]`.
///
/// At exactly `π` the axis sign is fixed so that its first non-zero component
/// is positive.
pub fn matrix_to_rodrigues<T: Real>(rot: &Matrix3<T>) -> Vector3<T> {
    let one = T::one();
    let half = T::lit(0.5);
    let v = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    ) * half;
    let sin_theta = v.norm();
    let cos_theta = ((rot.trace() - one) * half).clamp(-one, one);
    let theta = sin_theta.atan2(cos_theta);

    if theta < small_angle() {
        // θ / sin θ ≈ 1 + θ²/6
        return v * (one + theta * theta / T::lit(6.0));
    }
    if cos_theta > T::lit(-0.5) {
        return v * (theta / sin_theta);
    }

    // Near π the antisymmetric part loses precision; recover the axis from
    // the symmetric part: (R + Rᵀ)/2 = cos θ I + (1 − cos θ) a aᵀ.
    let sym = (rot + rot.transpose()) * half;
    let outer = (sym - Matrix3::identity() * cos_theta) / (one - cos_theta);
    let mut best = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(best, best)] {
            best = i;
        }
    }
    let mut axis: Vector3<T> = outer.column(best).into_owned();
    axis /= axis.norm();

    let tiny = T::default_epsilon() * T::lit(64.0);
    if sin_theta > tiny {
        if axis.dot(&v) < T::zero() {
            axis = -axis;
        }
    } else {
        canonicalize_half_turn_axis(&mut axis, tiny);
    }
    axis * theta
}

fn canonicalize_half_turn_axis<T: Real>(axis: &mut Vector3<T>, tiny: T) {
    for i in 0..3 {
        if axis[i].abs() > tiny {
            if axis[i] < T::zero() {
                *axis = -*axis;
            }
            return;
        }
    }
}

/// Right Jacobian of SO(3) at `r`: `exp(r + δ) ≈ exp(r) exp(J_r(r) δ)`.
pub fn right_jacobian<T: Real>(r: &Vector3<T>) -> Matrix3<T> {
    let theta2 = r.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < small_angle() {
        (
            T::lit(0.5) - theta2 / T::lit(24.0),
            T::lit(1.0 / 6.0) - theta2 / T::lit(120.0),
        )
    } else {
        (
            (T::one() - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = skew(r);
    Matrix3::identity() - k * a + k * k * b
}

/// Derivative of `R(r) x` with respect to the Rodrigues vector `r`.
pub fn d_rotate_d_rodrigues<T: Real>(r: &Vector3<T>, x: &Vector3<T>) -> Matrix3<T> {
    -rodrigues_to_matrix(r) * skew(x) * right_jacobian(r)
}

/// Re-expresses `r` on the `2π`-branch nearest to `reference`.
///
/// The returned vector encodes the same rotation as `r`.
pub fn unwrap_rodrigues<T: Real>(r: &Vector3<T>, reference: &Vector3<T>) -> Vector3<T> {
    let two_pi = T::two_pi();
    let theta = r.norm();
    let axis = if theta > T::default_epsilon() {
        r / theta
    } else {
        let ref_norm = reference.norm();
        if ref_norm <= T::default_epsilon() {
            return *r;
        }
        reference / ref_norm
    };
    let mut best = *r;
    let mut best_dist = (r - reference).norm_squared();
    for k in [-2i32, -1, 1, 2] {
        let candidate = r + axis * (two_pi * T::lit(f64::from(k)));
        let dist = (candidate - reference).norm_squared();
        if dist < best_dist {
            best = candidate;
            best_dist = dist;
        }
    }
    best
}

/// `∂u/∂r` for `u = unwrap_rodrigues(r, ·)`, holding the branch fixed:
/// `u = r + m r̂` gives `I + m (I − r̂ r̂ᵀ) / |r|`.
pub fn d_unwrapped_d_raw<T: Real>(raw: &Vector3<T>, unwrapped: &Vector3<T>) -> Matrix3<T> {
    let theta = raw.norm();
    if unwrapped == raw || theta <= T::default_epsilon() {
        return Matrix3::identity();
    }
    let axis = raw / theta;
    let m = (unwrapped - raw).dot(&axis);
    Matrix3::identity() + (Matrix3::identity() - axis * axis.transpose()) * (m / theta)
}

/// A proper rigid motion `x ↦ R x + t`, lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn apply(&self, point: &Vector3<T>) -> Vector3<T> {
        self.rotation * point + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<T>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Largest entry-wise deviation of `R Rᵀ` from the identity.
    pub fn orthonormality_error(&self) -> T {
        (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax()
    }

    /// Re-orthonormalises the rotation via SVD (nearest proper rotation).
    pub fn orthonormalized(&self) -> Self {
        Self::new(nearest_rotation(&self.rotation), self.translation)
    }

    /// Geodesic angle between the rotations of two transforms, radians.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        let rel = self.rotation.transpose() * other.rotation;
        matrix_to_rodrigues(&rel).norm()
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        RigidTransform::new(
            self.rotation.map(|x| U::lit(x.as_f64())),
            self.translation.map(|x| U::lit(x.as_f64())),
        )
    }
}

/// Closest rotation matrix (Frobenius) to `m` with determinant +1.
pub fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = if (u * v_t).determinant() < T::zero() {
        -T::one()
    } else {
        T::one()
    };
    u * Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), d)) * v_t
}

/// Six rigid-motion parameters: Rodrigues vector (radians · axis) and
/// translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector<T: Real> {
    pub rodrigues: Vector3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> PoseVector<T> {
    pub fn new(rodrigues: Vector3<T>, translation: Vector3<T>) -> Self {
        Self {
            rodrigues,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn to_transform(&self) -> RigidTransform<T> {
        RigidTransform::new(rodrigues_to_matrix(&self.rodrigues), self.translation)
    }

    /// Canonical-branch parameters of `transform`.
    pub fn from_transform(transform: &RigidTransform<T>) -> Self {
        Self::new(
            matrix_to_rodrigues(&transform.rotation),
            transform.translation,
        )
    }

    pub fn to_array(&self) -> [T; 6] {
        [
            self.rodrigues.x,
            self.rodrigues.y,
            self.rodrigues.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_slice(p: &[T]) -> Self {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
        )
    }

    /// Same pose with the rotation on the canonical branch `|r| <= π`.
    pub fn canonical(&self) -> Self {
        if self.rodrigues.norm() <= T::pi() {
            return *self;
        }
        Self::new(
            matrix_to_rodrigues(&rodrigues_to_matrix(&self.rodrigues)),
            self.translation,
        )
    }

    /// Same rotation, Rodrigues branch nearest `reference`.
    pub fn unwrapped_near(&self, reference: &Self) -> Self {
        Self::new(
            unwrap_rodrigues(&self.rodrigues, &reference.rodrigues),
            self.translation,
        )
    }
}

/// Re-expresses every pose of a sequence on the branch nearest its predecessor.
pub fn unwrap_sequence<T: Real>(poses: &mut [PoseVector<T>]) {
    for i in 1..poses.len() {
        let prev = poses[i - 1];
        poses[i] = poses[i].unwrapped_near(&prev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn zero_rodrigues_is_identity() {
        let r = rodrigues_to_matrix(&Vector3::<f64>::zeros());
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues_to_matrix(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let x = r * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(x, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn half_turn_axis_is_canonical() {
        for axis in [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.6, -0.8),
            Vector3::new(-0.48, 0.6, 0.64),
        ] {
            let r = rodrigues_to_matrix(&(axis * PI));
            let back = matrix_to_rodrigues(&r);
            assert_relative_eq!(back.norm(), PI, epsilon = 1e-9);
            let first = back.iter().find(|c| c.abs() > 1e-9).unwrap();
            assert!(*first > 0.0, "{back:?}");
            assert_relative_eq!(rodrigues_to_matrix(&back), r, epsilon = 1e-12);
        }
    }

    #[test]
    fn near_half_turn_round_trip() {
        let r = Vector3::new(0.3, -2.0, 2.2).normalize() * (PI - 1e-7);
        let back = matrix_to_rodrigues(&rodrigues_to_matrix(&r));
        assert_relative_eq!(back, r, epsilon = 1e-8);
    }

    #[test]
    fn unwrap_keeps_rotation_and_moves_branch() {
        let prev = Vector3::new(0.0, 0.0, 3.0);
        let r = Vector3::new(0.0, 0.0, -3.0);
        let u = unwrap_rodrigues(&r, &prev);
        assert_relative_eq!(u.z, 2.0 * PI - 3.0, epsilon = 1e-12);
        assert_relative_eq!(
            rodrigues_to_matrix(&u),
            rodrigues_to_matrix(&r),
            epsilon = 1e-12
        );
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let r = Vector3::new(0.4, -0.2, 1.1);
        let x = Vector3::new(3.0, -1.0, 2.0);
        let analytic = d_rotate_d_rodrigues(&r, &x);
        let h = 1e-6;
        for j in 0..3 {
            let mut rp = r;
            let mut rm = r;
            rp[j] += h;
            rm[j] -= h;
            let fd = (rodrigues_to_matrix(&rp) * x - rodrigues_to_matrix(&rm) * x) / (2.0 * h);
            assert_relative_eq!(analytic.column(j).into_owned(), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn generic_over_f32() {
        let p = PoseVector::<f32>::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let back = PoseVector::from_transform(&p.to_transform());
        assert!((back.rodrigues - p.rodrigues).norm() < 1e-5);
    }
}
