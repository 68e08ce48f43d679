//! Pinhole cameras: projection, projection-matrix factorisation and the
//! on-disk camera description.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::transform::{nearest_rotation, RigidTransform};
use super::GeometryError;
use crate::scalar::Real;

/// Minimum camera-frame depth (mm) for a point to be projectable.
pub const DEPTH_EPSILON: f64 = 1e-9;

/// A 3×4 homogeneous projection matrix, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix<T: Real>(pub Matrix3x4<T>);

impl<T: Real> ProjectionMatrix<T> {
    pub fn left_block(&self) -> Matrix3<T> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Projects a point given in the matrix's source frame. Errors when the
    /// homogeneous depth is not positive.
    pub fn project(&self, point: &Vector3<T>) -> Result<Vector2<T>, GeometryError> {
        let h = self.0 * Vector4::new(point.x, point.y, point.z, T::one());
        // the third row carries the depth only when the left block has positive determinant
        let depth = if self.left_block().determinant() < T::zero() {
            -h.z
        } else {
            h.z
        };
        if depth <= T::lit(DEPTH_EPSILON) * self.0.row(2).fixed_columns::<3>(0).norm() {
            return Err(GeometryError::NonPositiveDepth {
                depth: depth.as_f64(),
            });
        }
        Ok(Vector2::new(h.x / h.z, h.y / h.z))
    }

    pub fn scaled(&self, s: T) -> Self {
        Self(self.0 * s)
    }
}

/// Calibration `K` (upper triangular, positive diagonal, `K[2][2] = 1`) and
/// the global-to-camera pose of camera `id`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel<T: Real> {
    pub id: usize,
    pub calibration: Matrix3<T>,
    pub pose_global: RigidTransform<T>,
    /// Image width and height in pixels, when known.
    pub image_size: Option<[u32; 2]>,
}

impl<T: Real> CameraModel<T> {
    pub fn new(id: usize, calibration: Matrix3<T>, pose_global: RigidTransform<T>) -> Self {
        Self {
            id,
            calibration,
            pose_global,
            image_size: None,
        }
    }

    pub fn with_image_size(mut self, width: u32, height: u32) -> Self {
        self.image_size = Some([width, height]);
        self
    }

    /// Camera placed at `eye` looking towards `target`; `up` fixes the roll
    /// (image y axis points away from `up`).
    pub fn look_at(
        id: usize,
        calibration: Matrix3<T>,
        eye: Vector3<T>,
        target: Vector3<T>,
        up: Vector3<T>,
    ) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self::new(id, calibration, RigidTransform::new(rotation, translation))
    }

    /// `P = K [I | 0] H_g`.
    pub fn projection_matrix(&self) -> ProjectionMatrix<T> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.pose_global.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&self.pose_global.translation);
        ProjectionMatrix(self.calibration * rt)
    }

    /// Optical centre in global coordinates.
    pub fn center(&self) -> Vector3<T> {
        self.pose_global.inverse().translation
    }

    /// Depth of a global point along the optical axis.
    pub fn depth(&self, point: &Vector3<T>) -> T {
        self.pose_global.apply(point).z
    }

    /// Projects a global point (mm) to pixel coordinates.
    pub fn project(&self, point: &Vector3<T>) -> Result<Vector2<T>, GeometryError> {
        let pc = self.pose_global.apply(point);
        project_camera_frame(&self.calibration, &pc)
    }

    /// Unit viewing ray of a pixel in global coordinates.
    pub fn ray_direction(&self, pixel: &Vector2<T>) -> Vector3<T> {
        let k_inv = self
            .calibration
            .try_inverse()
            .unwrap_or_else(Matrix3::identity);
        let d_cam = k_inv * Vector3::new(pixel.x, pixel.y, T::one());
        (self.pose_global.rotation.transpose() * d_cam).normalize()
    }

    pub fn in_image(&self, pixel: &Vector2<T>) -> bool {
        match self.image_size {
            None => true,
            Some([w, h]) => {
                pixel.x >= T::zero()
                    && pixel.y >= T::zero()
                    && pixel.x < T::lit(f64::from(w))
                    && pixel.y < T::lit(f64::from(h))
            }
        }
    }
}

/// Projects a camera-frame point through `K`.
pub fn project_camera_frame<T: Real>(
    calibration: &Matrix3<T>,
    pc: &Vector3<T>,
) -> Result<Vector2<T>, GeometryError> {
    if pc.z <= T::lit(DEPTH_EPSILON) {
        return Err(GeometryError::NonPositiveDepth {
            depth: pc.z.as_f64(),
        });
    }
    let h = calibration * pc;
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

/// RQ factorisation of a 3×3 matrix: `m = upper * orth`.
fn rq3<T: Real>(m: &Matrix3<T>) -> (Matrix3<T>, Matrix3<T>) {
    let (z, o) = (T::zero(), T::one());
    let e = Matrix3::new(z, z, o, z, o, z, o, z, z);
    let qr = (e * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    (e * r.transpose() * e, e * q.transpose())
}

/// Factors `P ≃ K [I | 0] H` with `K` upper triangular, positive diagonal,
/// `K[2][2] = 1`, and `H` a proper rigid transform.
pub fn decompose_projection<T: Real>(
    p: &ProjectionMatrix<T>,
) -> Result<CameraModel<T>, GeometryError> {
    let m = p.left_block();
    let det = m.determinant();
    let scale = m.norm();
    if !scale.is_finite()
        || scale <= T::zero()
        || det.abs() <= T::lit(1e-12) * scale * scale * scale
    {
        return Err(GeometryError::SingularCamera);
    }
    // fix the homogeneous sign so that the left block has positive determinant
    let p = if det < T::zero() {
        p.scaled(-T::one())
    } else {
        *p
    };
    let m = p.left_block();
    let (upper, orth) = rq3(&m);

    let mut signs = Matrix3::identity();
    for i in 0..3 {
        if upper[(i, i)] < T::zero() {
            signs[(i, i)] = -T::one();
        }
    }
    let k_unscaled = upper * signs;
    let rotation = nearest_rotation(&(signs * orth));
    let k_inv = k_unscaled
        .try_inverse()
        .ok_or(GeometryError::SingularCamera)?;
    let translation = k_inv * p.0.column(3).into_owned();
    let mut calibration = k_unscaled / k_unscaled[(2, 2)];
    calibration[(1, 0)] = T::zero();
    calibration[(2, 0)] = T::zero();
    calibration[(2, 1)] = T::zero();
    Ok(CameraModel::new(
        0,
        calibration,
        RigidTransform::new(rotation, translation),
    ))
}

/// Intrinsic matrix with focal lengths, principal point and zero skew.
pub fn calibration_matrix<T: Real>(fx: T, fy: T, cx: T, cy: T) -> Matrix3<T> {
    let (z, o) = (T::zero(), T::one());
    Matrix3::new(fx, z, cx, z, fy, cy, z, z, o)
}

/// JSON camera record: `K` and `R` row-major, `t` in mm, `image_size` as
/// `[width, height]` pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: usize,
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub image_size: [u32; 2],
}

impl From<&CameraModel<f64>> for CameraRecord {
    fn from(cam: &CameraModel<f64>) -> Self {
        let row_major = |m: &Matrix3<f64>| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[3 * r + c] = m[(r, c)];
                }
            }
            out
        };
        let t = cam.pose_global.translation;
        Self {
            id: cam.id,
            k: row_major(&cam.calibration),
            r: row_major(&cam.pose_global.rotation),
            t: [t.x, t.y, t.z],
            image_size: cam.image_size.unwrap_or([0, 0]),
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<CameraModel<f64>, GeometryError> {
        let k = Matrix3::from_row_slice(&self.k);
        let r = Matrix3::from_row_slice(&self.r);
        let pose = RigidTransform::new(r, Vector3::from(self.t));
        if pose.orthonormality_error() > 1e-6 || r.determinant() < 0.0 {
            return Err(GeometryError::InvalidCamera(format!(
                "camera {}: R is not a proper rotation",
                self.id
            )));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 || k[(2, 2)] <= 0.0 {
            return Err(GeometryError::InvalidCamera(format!(
                "camera {}: K must have a positive diagonal",
                self.id
            )));
        }
        let mut cam = CameraModel::new(self.id, k / k[(2, 2)], pose);
        if self.image_size != [0, 0] {
            cam.image_size = Some(self.image_size);
        }
        Ok(cam)
    }
}
