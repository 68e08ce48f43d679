//! Spatial resection: camera from 3D–2D correspondences.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};

use super::camera::{decompose_projection, project_camera_frame, CameraModel, ProjectionMatrix};
use super::refine::refine;
use super::transform::{nearest_rotation, PoseVector, RigidTransform};
use super::GeometryError;
use crate::scalar::Real;

const REFINE_ITERATIONS: usize = 50;

/// Result of a resection: the camera and its reprojection RMSE (pixels,
/// root of the mean squared 2D error).
#[derive(Debug, Clone)]
pub struct Resection<T: Real> {
    pub camera: CameraModel<T>,
    pub reprojection_rmse: T,
}

/// Hartley similarity for 2D points: centroid to origin, mean distance √2.
pub(crate) fn normalizing_transform_2d<T: Real>(pts: &[Vector2<T>]) -> Matrix3<T> {
    let n = T::lit(pts.len() as f64);
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean = pts
        .iter()
        .map(|p| (p - c).norm())
        .fold(T::zero(), |a, d| a + d)
        / n;
    let s = if mean > T::zero() {
        T::lit(std::f64::consts::SQRT_2) / mean
    } else {
        T::one()
    };
    let z = T::zero();
    Matrix3::new(s, z, -s * c.x, z, s, -s * c.y, z, z, T::one())
}

/// Hartley similarity for 3D points: centroid to origin, mean distance √3.
pub(crate) fn normalizing_transform_3d<T: Real>(pts: &[Vector3<T>]) -> Matrix4<T> {
    let n = T::lit(pts.len() as f64);
    let c = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mean = pts
        .iter()
        .map(|p| (p - c).norm())
        .fold(T::zero(), |a, d| a + d)
        / n;
    let s = if mean > T::zero() {
        T::lit(3f64.sqrt()) / mean
    } else {
        T::one()
    };
    let mut m = Matrix4::identity() * s;
    m[(3, 3)] = T::one();
    m[(0, 3)] = -s * c.x;
    m[(1, 3)] = -s * c.y;
    m[(2, 3)] = -s * c.z;
    m
}

/// Unit vector minimising `‖A v‖`.
pub(crate) fn null_vector<T: Real>(a: DMatrix<T>) -> DVector<T> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        a.resize_vertically(cols, T::zero())
    } else {
        a
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut best = 0;
    for i in 1..svd.singular_values.len() {
        if svd.singular_values[i] < svd.singular_values[best] {
            best = i;
        }
    }
    v_t.row(best).transpose()
}

/// Singular values of the centred point cloud, descending.
fn spread<T: Real>(pts: &[Vector3<T>]) -> (Vector3<T>, Matrix3<T>, Vector3<T>) {
    let n = T::lit(pts.len() as f64);
    let c = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = Vector3::new(
        eig.eigenvalues[order[0]].max(T::zero()).sqrt(),
        eig.eigenvalues[order[1]].max(T::zero()).sqrt(),
        eig.eigenvalues[order[2]].max(T::zero()).sqrt(),
    );
    let basis = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    (c, basis, vals)
}

/// Normalised DLT estimate of a 3×4 projection matrix (needs ≥ 6 points).
fn dlt_projection<T: Real>(world: &[Vector3<T>], image: &[Vector2<T>]) -> Matrix3x4<T> {
    let t2 = normalizing_transform_2d(image);
    let t3 = normalizing_transform_3d(world);
    let n = world.len();
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (w, x)) in world.iter().zip(image).enumerate() {
        let wh = t3 * w.push(T::one());
        let xh = t2 * x.push(T::one());
        let (u, v) = (xh.x / xh.z, xh.y / xh.z);
        for j in 0..4 {
            a[(2 * i, j)] = wh[j];
            a[(2 * i, 8 + j)] = -u * wh[j];
            a[(2 * i + 1, 4 + j)] = wh[j];
            a[(2 * i + 1, 8 + j)] = -v * wh[j];
        }
    }
    let v = null_vector(a);
    let p_norm = Matrix3x4::from_row_slice(v.as_slice());
    let t2_inv = t2.try_inverse().expect("similarity is invertible");
    t2_inv * p_norm * t3
}

fn rmse<T: Real>(cam: &CameraModel<T>, world: &[Vector3<T>], image: &[Vector2<T>]) -> T {
    let mut sum = T::zero();
    for (w, x) in world.iter().zip(image) {
        match cam.project(w) {
            Ok(p) => sum += (p - x).norm_squared(),
            Err(_) => return T::max_value().unwrap_or_else(T::one),
        }
    }
    (sum / T::lit(world.len() as f64)).sqrt()
}

/// Estimates a camera from correspondences `(global point mm, pixel)`.
///
/// Without `known_calibration` this is a Hartley-normalised DLT (≥ 6
/// non-coplanar points) refined over all eleven camera parameters. With a
/// known `K`, four points suffice and planar layouts are allowed; only the
/// six pose parameters are refined.
pub fn resect<T: Real>(
    correspondences: &[(Vector3<T>, Vector2<T>)],
    known_calibration: Option<&Matrix3<T>>,
) -> Result<Resection<T>, GeometryError> {
    let world: Vec<_> = correspondences.iter().map(|c| c.0).collect();
    let image: Vec<_> = correspondences.iter().map(|c| c.1).collect();
    let n = world.len();
    let needed = if known_calibration.is_some() { 4 } else { 6 };
    if n < needed {
        return Err(GeometryError::InsufficientPoints { needed, got: n });
    }
    let (_, _, sv) = spread(&world);
    let tol = T::lit(1e-6) * sv.x;
    if sv.x <= T::zero() || sv.y <= tol {
        return Err(GeometryError::DegenerateConfiguration(
            "points are collinear",
        ));
    }
    let coplanar = sv.z <= tol;

    match known_calibration {
        None => {
            if coplanar {
                return Err(GeometryError::DegenerateConfiguration(
                    "coplanar points need a known calibration",
                ));
            }
            let p = dlt_projection(&world, &image);
            let init = decompose_projection(&ProjectionMatrix(p))?;
            let camera = refine_full(init, &world, &image);
            let reprojection_rmse = rmse(&camera, &world, &image);
            Ok(Resection {
                camera,
                reprojection_rmse,
            })
        }
        Some(k) => {
            let k = k / k[(2, 2)];
            let k_inv = k.try_inverse().ok_or(GeometryError::SingularCamera)?;
            let rays: Vec<Vector2<T>> = image
                .iter()
                .map(|x| {
                    let m = k_inv * x.push(T::one());
                    Vector2::new(m.x / m.z, m.y / m.z)
                })
                .collect();
            let init = if !coplanar && n >= 6 {
                let p = dlt_projection(&world, &rays);
                decompose_projection(&ProjectionMatrix(p))?.pose_global
            } else {
                planar_pose(&world, &rays)?
            };
            let pose = refine_pose(&k, init, &world, &image);
            let camera = CameraModel::new(0, k, pose);
            let reprojection_rmse = rmse(&camera, &world, &image);
            Ok(Resection {
                camera,
                reprojection_rmse,
            })
        }
    }
}

/// Pose from the homography between the best-fit plane of `world` and the
/// normalised image coordinates `rays`.
fn planar_pose<T: Real>(
    world: &[Vector3<T>],
    rays: &[Vector2<T>],
) -> Result<RigidTransform<T>, GeometryError> {
    let (c, basis, _) = spread(world);
    let e1 = basis.column(0).into_owned();
    let e2 = basis.column(1).into_owned();
    let normal = e1.cross(&e2);
    let plane_rot = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), normal.transpose()]);
    let plane_pts: Vec<Vector2<T>> = world
        .iter()
        .map(|w| {
            let q = plane_rot * (w - c);
            Vector2::new(q.x, q.y)
        })
        .collect();

    let ts = normalizing_transform_2d(&plane_pts);
    let td = normalizing_transform_2d(rays);
    let n = world.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for i in 0..n {
        let s = ts * plane_pts[i].push(T::one());
        let d = td * rays[i].push(T::one());
        let (u, v) = (d.x / d.z, d.y / d.z);
        for j in 0..3 {
            a[(2 * i, j)] = s[j];
            a[(2 * i, 6 + j)] = -u * s[j];
            a[(2 * i + 1, 3 + j)] = s[j];
            a[(2 * i + 1, 6 + j)] = -v * s[j];
        }
    }
    let h_norm = Matrix3::from_row_slice(null_vector(a).as_slice());
    let td_inv = td.try_inverse().ok_or(GeometryError::SingularCamera)?;
    let h = td_inv * h_norm * ts;

    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let mut lambda = T::lit(2.0) / (h1.norm() + h2.norm());
    if h3.z * lambda < T::zero() {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r_plane = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let t_plane = h3 * lambda;
    let rotation = r_plane * plane_rot;
    let translation = t_plane - rotation * c;
    Ok(RigidTransform::new(rotation, translation))
}

fn stack_residuals<T: Real>(
    k: &Matrix3<T>,
    pose: &RigidTransform<T>,
    world: &[Vector3<T>],
    image: &[Vector2<T>],
) -> Option<DVector<T>> {
    let mut r = DVector::zeros(2 * world.len());
    for (i, (w, x)) in world.iter().zip(image).enumerate() {
        let p = project_camera_frame(k, &pose.apply(w)).ok()?;
        r[2 * i] = p.x - x.x;
        r[2 * i + 1] = p.y - x.y;
    }
    Some(r)
}

fn refine_pose<T: Real>(
    k: &Matrix3<T>,
    init: RigidTransform<T>,
    world: &[Vector3<T>],
    image: &[Vector2<T>],
) -> RigidTransform<T> {
    let p0 = PoseVector::from_transform(&init);
    let out = refine(
        DVector::from_row_slice(&p0.to_array()),
        REFINE_ITERATIONS,
        |p| {
            stack_residuals(
                k,
                &PoseVector::from_slice(p.as_slice()).to_transform(),
                world,
                image,
            )
        },
    );
    PoseVector::from_slice(out.params.as_slice()).to_transform()
}

fn refine_full<T: Real>(
    init: CameraModel<T>,
    world: &[Vector3<T>],
    image: &[Vector2<T>],
) -> CameraModel<T> {
    let k = init.calibration;
    let pose = PoseVector::from_transform(&init.pose_global).to_array();
    let mut p0 = vec![k[(0, 0)], k[(0, 1)], k[(0, 2)], k[(1, 1)], k[(1, 2)]];
    p0.extend_from_slice(&pose);
    let unpack = |p: &DVector<T>| {
        let (z, o) = (T::zero(), T::one());
        let k = Matrix3::new(p[0], p[1], p[2], z, p[3], p[4], z, z, o);
        (k, PoseVector::from_slice(&p.as_slice()[5..]).to_transform())
    };
    let out = refine(DVector::from_vec(p0), REFINE_ITERATIONS, |p| {
        let (k, pose) = unpack(p);
        stack_residuals(&k, &pose, world, image)
    });
    let (k, pose) = unpack(&out.params);
    CameraModel::new(init.id, k, pose)
}
