//! Motion-track smoothness constraint.
//!
//! Each epoch's pose is compared with the cubic through four temporal
//! neighbours. The comparison displaces a lattice of model-frame points by
//! `H S⁻¹`; the per-point displacements are the residuals and their RMS is
//! the grid RMSE.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::transform::{
    d_rotate_d_rodrigues, d_unwrapped_d_raw, rodrigues_to_matrix, unwrap_sequence,
};
use crate::geometry::{PoseVector, RigidTransform};
use crate::model::RigidMouseModel;
use crate::scalar::Real;

/// Epochs needed for one constraint window.
pub const WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackError {
    #[error("consecutive Rodrigues vectors differ by {jump} rad (> π/2); unwrapping failed")]
    BranchDiscontinuity { jump: f64 },
    #[error("track has {0} epochs; the smoothness window needs at least {WINDOW}")]
    TooShort(usize),
    #[error("epoch {epoch} outside a track of {len} epochs")]
    EpochOutOfRange { epoch: usize, len: usize },
}

/// Lattice of model-frame points over which two transforms are compared.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonGrid<T: Real> {
    pub points: Vec<Vector3<T>>,
}

/// Optional JSON grid description; `extent_mm` holds half-extents per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub extent_mm: [f64; 3],
}

impl GridConfig {
    /// 3×3×3 lattice centred on the model origin whose half-extents reach the
    /// farthest part coordinate on each axis.
    pub fn for_model<T: Real>(model: &RigidMouseModel<T>) -> Self {
        let (lo, hi) = model.bounding_box();
        let half = |i: usize| lo[i].abs().max(hi[i].abs()).as_f64();
        Self {
            nx: 3,
            ny: 3,
            nz: 3,
            extent_mm: [half(0), half(1), half(2)],
        }
    }
}

impl<T: Real> ComparisonGrid<T> {
    pub fn from_config(cfg: &GridConfig) -> Self {
        let axis = |n: usize, half: f64| -> Vec<T> {
            if n <= 1 {
                return vec![T::zero()];
            }
            (0..n)
                .map(|i| T::lit(-half + 2.0 * half * i as f64 / (n - 1) as f64))
                .collect()
        };
        let xs = axis(cfg.nx, cfg.extent_mm[0]);
        let ys = axis(cfg.ny, cfg.extent_mm[1]);
        let zs = axis(cfg.nz, cfg.extent_mm[2]);
        let mut points = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &z in &zs {
            for &y in &ys {
                for &x in &xs {
                    points.push(Vector3::new(x, y, z));
                }
            }
        }
        Self { points }
    }

    pub fn for_model(model: &RigidMouseModel<T>) -> Self {
        Self::from_config(&GridConfig::for_model(model))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl<T: Real> Default for ComparisonGrid<T> {
    fn default() -> Self {
        Self::for_model(&RigidMouseModel::table())
    }
}

/// Lagrange basis weights of the cubic through `nodes`, evaluated at `at`.
pub fn lagrange_weights<T: Real>(nodes: [T; 4], at: T) -> [T; 4] {
    let mut w = [T::one(); 4];
    for (j, wj) in w.iter_mut().enumerate() {
        for (m, &node) in nodes.iter().enumerate() {
            if m != j {
                *wj *= (at - node) / (nodes[j] - node);
            }
        }
    }
    w
}

fn check_branches<T: Real>(poses: &[PoseVector<T>]) -> Result<(), TrackError> {
    let limit = T::frac_pi_2();
    for pair in poses.windows(2) {
        let jump = (pair[1].rodrigues - pair[0].rodrigues).norm();
        if jump > limit {
            return Err(TrackError::BranchDiscontinuity {
                jump: jump.as_f64(),
            });
        }
    }
    Ok(())
}

/// Cubic interpolation of all six pose parameters independently through
/// samples at `nodes` (epoch offsets), evaluated at `at`.
///
/// Rotation parameters are first moved to a common Rodrigues branch, each
/// relative to the preceding sample.
pub fn spline_interpolate_at<T: Real>(
    samples: &[PoseVector<T>; 4],
    nodes: [T; 4],
    at: T,
) -> Result<PoseVector<T>, TrackError> {
    let mut s = *samples;
    unwrap_sequence(&mut s);
    check_branches(&s)?;
    let w = lagrange_weights(nodes, at);
    let mut out = PoseVector::new(Vector3::zeros(), Vector3::zeros());
    for (p, wj) in s.iter().zip(w) {
        out.rodrigues += p.rodrigues * wj;
        out.translation += p.translation * wj;
    }
    Ok(out)
}

/// Interpolated pose at `t` from poses at `t−2, t−1, t+1, t+2`.
pub fn spline_interpolate<T: Real>(
    neighbors: &[PoseVector<T>; 4],
) -> Result<PoseVector<T>, TrackError> {
    let nodes = [T::lit(-2.0), -T::one(), T::one(), T::lit(2.0)];
    spline_interpolate_at(neighbors, nodes, T::zero())
}

/// RMS displacement of the grid points under `H S⁻¹`.
pub fn grid_rmse<T: Real>(
    h: &RigidTransform<T>,
    s: &RigidTransform<T>,
    grid: &ComparisonGrid<T>,
) -> T {
    if h == s {
        return T::zero();
    }
    let rel = h.compose(&s.inverse());
    let sum = grid
        .points
        .iter()
        .map(|g| (rel.apply(g) - g).norm_squared())
        .fold(T::zero(), |a, b| a + b);
    (sum / T::lit(grid.len() as f64)).sqrt()
}

/// The four support epochs for the constraint at `t`: `t±1, t±2` in the
/// interior, the four nearest other epochs at the track ends.
pub fn support_epochs(len: usize, t: usize) -> Result<[usize; 4], TrackError> {
    if len < WINDOW {
        return Err(TrackError::TooShort(len));
    }
    if t >= len {
        return Err(TrackError::EpochOutOfRange { epoch: t, len });
    }
    let start = t.saturating_sub(2).min(len - WINDOW);
    let mut out = [0; 4];
    let mut k = 0;
    for e in start..start + WINDOW {
        if e != t {
            out[k] = e;
            k += 1;
        }
    }
    Ok(out)
}

fn support_nodes<T: Real>(support: &[usize; 4], t: usize) -> [T; 4] {
    support.map(|e| T::lit(e as f64 - t as f64))
}

/// Spline prediction `S_t` of the pose at epoch `t` from its support.
pub fn interpolated_pose<T: Real>(
    track: &[PoseVector<T>],
    t: usize,
) -> Result<PoseVector<T>, TrackError> {
    let support = support_epochs(track.len(), t)?;
    let samples = support.map(|e| track[e]);
    spline_interpolate_at(&samples, support_nodes(&support, t), T::zero())
}

/// Per-parameter differences `p_t − S(...)` (diagnostic form).
pub fn parameter_differences<T: Real>(
    track: &[PoseVector<T>],
    t: usize,
) -> Result<[T; 6], TrackError> {
    let s = interpolated_pose(track, t)?;
    let p = track[t].unwrapped_near(&s);
    let (a, b) = (p.to_array(), s.to_array());
    Ok(std::array::from_fn(|i| a[i] - b[i]))
}

/// Grid displacements `H_t S_t⁻¹ g − g` at epoch `t`.
pub fn track_residual<T: Real>(
    track: &[PoseVector<T>],
    t: usize,
    grid: &ComparisonGrid<T>,
) -> Result<Vec<Vector3<T>>, TrackError> {
    let s = interpolated_pose(track, t)?.to_transform();
    let rel = track[t].to_transform().compose(&s.inverse());
    Ok(grid.points.iter().map(|g| rel.apply(g) - g).collect())
}

/// Residual and analytic Jacobian of the constraint at one epoch.
#[derive(Debug, Clone)]
pub struct SmoothnessLinearization<T: Real> {
    /// `epochs[0]` is the constrained epoch, the rest its support.
    pub epochs: [usize; 5],
    /// Stacked grid displacements (3 per grid point).
    pub residual: DVector<T>,
    /// `∂residual/∂p_e` for each entry of `epochs`, `3G × 6`.
    pub jacobians: [DMatrix<T>; 5],
}

pub fn linearize_smoothness<T: Real>(
    track: &[PoseVector<T>],
    t: usize,
    grid: &ComparisonGrid<T>,
) -> Result<SmoothnessLinearization<T>, TrackError> {
    let support = support_epochs(track.len(), t)?;
    let nodes = support_nodes::<T>(&support, t);
    let weights = lagrange_weights(nodes, T::zero());
    let raw = support.map(|e| track[e]);
    let s_pose = spline_interpolate_at(&raw, nodes, T::zero())?;
    let mut unwrapped = raw;
    unwrap_sequence(&mut unwrapped);
    let d_unwrap: [Matrix3<T>; 4] =
        std::array::from_fn(|j| d_unwrapped_d_raw(&raw[j].rodrigues, &unwrapped[j].rodrigues));
    let h_pose = track[t];

    let r_h = rodrigues_to_matrix(&h_pose.rodrigues);
    let r_s = rodrigues_to_matrix(&s_pose.rodrigues);
    let r_s_t = r_s.transpose();
    let neg_rod_s = -s_pose.rodrigues;
    let d_t_s: Matrix3<T> = -(r_h * r_s_t);

    let g = grid.len();
    let mut residual = DVector::zeros(3 * g);
    let mut j_h = DMatrix::zeros(3 * g, 6);
    let mut j_s = DMatrix::zeros(3 * g, 6);
    for (k, pt) in grid.points.iter().enumerate() {
        let y = pt - s_pose.translation;
        let q = r_s_t * y;
        let r = r_h * q + h_pose.translation - pt;
        residual.fixed_rows_mut::<3>(3 * k).copy_from(&r);

        let d_rod_h = d_rotate_d_rodrigues(&h_pose.rodrigues, &q);
        j_h.fixed_view_mut::<3, 3>(3 * k, 0).copy_from(&d_rod_h);
        j_h.fixed_view_mut::<3, 3>(3 * k, 3)
            .copy_from(&Matrix3::identity());

        let d_rod_s = -(r_h * d_rotate_d_rodrigues(&neg_rod_s, &y));
        j_s.fixed_view_mut::<3, 3>(3 * k, 0).copy_from(&d_rod_s);
        j_s.fixed_view_mut::<3, 3>(3 * k, 3).copy_from(&d_t_s);
    }
    let support_jacobian = |j: usize| {
        let mut out = &j_s * weights[j];
        let rot = out.columns(0, 3) * d_unwrap[j];
        out.columns_mut(0, 3).copy_from(&rot);
        out
    };
    let jacobians = [
        j_h,
        support_jacobian(0),
        support_jacobian(1),
        support_jacobian(2),
        support_jacobian(3),
    ];
    Ok(SmoothnessLinearization {
        epochs: [t, support[0], support[1], support[2], support[3]],
        residual,
        jacobians,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_grid_covers_the_model() {
        let grid = ComparisonGrid::<f64>::default();
        assert_eq!(grid.len(), 27);
        let (lo, hi) = grid.points.iter().fold(
            (Vector3::repeat(f64::MAX), Vector3::repeat(f64::MIN)),
            |(l, h), p| (l.inf(p), h.sup(p)),
        );
        assert_eq!(lo, Vector3::new(-13.5, -36.0, -19.0));
        assert_eq!(hi, Vector3::new(13.5, 36.0, 19.0));
        let centroid = grid.points.iter().sum::<Vector3<f64>>() / 27.0;
        assert!(centroid.norm() < 1e-12);
    }

    #[test]
    fn quartic_samples_give_hand_computed_cubic() {
        // cubic through (±1, 1), (±2, 16) is 5t² − 4
        let w = lagrange_weights([-2.0, -1.0, 1.0, 2.0], 0.0);
        assert_relative_eq!(w[0], -1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 2.0 / 3.0, epsilon = 1e-15);
        let quartic = |t: f64| t.powi(4);
        let s: f64 = [-2.0f64, -1.0, 1.0, 2.0]
            .iter()
            .zip(w)
            .map(|(t, wj)| quartic(*t) * wj)
            .sum();
        assert_relative_eq!(s, -4.0, epsilon = 1e-14);
        assert_relative_eq!(quartic(0.0) - s, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn boundary_support_windows() {
        assert_eq!(support_epochs(10, 0).unwrap(), [1, 2, 3, 4]);
        assert_eq!(support_epochs(10, 1).unwrap(), [0, 2, 3, 4]);
        assert_eq!(support_epochs(10, 5).unwrap(), [3, 4, 6, 7]);
        assert_eq!(support_epochs(10, 8).unwrap(), [5, 6, 7, 9]);
        assert_eq!(support_epochs(10, 9).unwrap(), [5, 6, 7, 8]);
        assert_eq!(support_epochs(4, 0), Err(TrackError::TooShort(4)));
    }

    #[test]
    fn branch_jump_is_reported() {
        let p = |z: f64| PoseVector::new(Vector3::new(0.0, 0.0, z), Vector3::zeros());
        // equal rotations on different branches are unwrapped silently
        assert!(spline_interpolate(&[p(3.0), p(3.1), p(-3.1), p(-3.0)]).is_ok());
        let err = spline_interpolate(&[p(0.0), p(0.1), p(2.0), p(2.1)]).unwrap_err();
        assert!(matches!(err, TrackError::BranchDiscontinuity { .. }));
    }

    #[test]
    fn pure_translation_rmse_is_its_length() {
        let grid = ComparisonGrid::<f64>::default();
        let s = PoseVector::new(Vector3::new(0.2, -0.1, 0.5), Vector3::new(3.0, 4.0, 5.0))
            .to_transform();
        let delta = Vector3::new(0.3, -1.2, 2.0);
        let h = RigidTransform::from_translation(delta).compose(&s);
        assert_relative_eq!(grid_rmse(&h, &s, &grid), delta.norm(), epsilon = 1e-12);
        assert_eq!(grid_rmse(&s, &s, &grid), 0.0);
    }
}
