//! Residual blocks of the adjustment and their analytic linearisation.

use nalgebra::{DMatrix, DVector, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{check_camera_ids, AdjustError, MouseStateTrack, SolveMode, StochasticConfig};
use crate::deform::{observed_deformable, DeformPredictor, TokenSequence};
use crate::geometry::camera::DEPTH_EPSILON;
use crate::geometry::transform::d_rotate_d_rodrigues;
use crate::geometry::{rodrigues_to_matrix, CameraModel, GeometryError, PoseVector};
use crate::model::RigidMouseModel;
use crate::simulator::SimulatedDataset;
use crate::track::{linearize_smoothness, ComparisonGrid, WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    RigidReprojection,
    DeformedReprojection,
    TrackSmoothness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub kind: BlockKind,
    /// Observation epoch, or the constrained epoch of a smoothness block.
    pub epoch: usize,
    /// Camera slot of a reprojection block.
    pub camera: Option<usize>,
    pub part: Option<usize>,
    /// `1/σ` for reprojection, `w_s` for smoothness.
    pub weight: f64,
    pub observed: Option<Vector2<f64>>,
    /// Model-frame point (rigid position plus predicted offset).
    pub point: Vector3<f64>,
}

/// Residual and per-epoch Jacobians of one block.
pub struct Linearized {
    pub residual: DVector<f64>,
    pub jacobians: Vec<(usize, DMatrix<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub n_epochs: usize,
    pub cameras: Vec<CameraModel<f64>>,
    pub grid: ComparisonGrid<f64>,
    pub blocks: Vec<ResidualBlock>,
    pub mode: SolveMode,
    pub huber_scale: Option<f64>,
    /// Predicted model-frame offsets per epoch and part (deformed mode).
    pub offsets: Option<Vec<Vec<Vector3<f64>>>>,
}

/// Pixel of a world point and its derivative with respect to the point.
fn project_with_jacobian(
    cam: &CameraModel<f64>,
    world: &Vector3<f64>,
) -> Result<(Vector2<f64>, Matrix2x3<f64>), GeometryError> {
    let pc = cam.pose_global.apply(world);
    if pc.z <= DEPTH_EPSILON {
        return Err(GeometryError::NonPositiveDepth { depth: pc.z });
    }
    let m = cam.calibration * cam.pose_global.rotation;
    let xh = cam.calibration * pc;
    let (u, v) = (xh.x / xh.z, xh.y / xh.z);
    let du = (m.row(0) - m.row(2) * u) / xh.z;
    let dv = (m.row(1) - m.row(2) * v) / xh.z;
    Ok((Vector2::new(u, v), Matrix2x3::from_rows(&[du, dv])))
}

impl Problem {
    pub fn n_params(&self) -> usize {
        6 * self.n_epochs
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind == kind).count()
    }

    /// Largest epoch distance coupled by any block.
    pub fn epoch_bandwidth(&self) -> usize {
        if self
            .active_blocks()
            .any(|b| b.kind == BlockKind::TrackSmoothness)
        {
            WINDOW - 1
        } else {
            0
        }
    }

    pub fn linearize(
        &self,
        block: &ResidualBlock,
        poses: &[PoseVector<f64>],
    ) -> Result<Linearized, AdjustError> {
        match block.kind {
            BlockKind::TrackSmoothness => {
                let lin = linearize_smoothness(poses, block.epoch, &self.grid)?;
                Ok(Linearized {
                    residual: lin.residual * block.weight,
                    jacobians: lin
                        .epochs
                        .iter()
                        .zip(lin.jacobians)
                        .map(|(&e, j)| (e, j * block.weight))
                        .collect(),
                })
            }
            _ => {
                let pose = &poses[block.epoch];
                let cam = &self.cameras[block.camera.expect("reprojection block camera")];
                let rot = rodrigues_to_matrix(&pose.rodrigues);
                let world = rot * block.point + pose.translation;
                let (px, d_px) = project_with_jacobian(cam, &world)?;
                let obs = block.observed.expect("reprojection block observation");
                let residual = (obs - px) * block.weight;
                let d_rot = d_rotate_d_rodrigues(&pose.rodrigues, &block.point);
                let mut jac = DMatrix::zeros(2, 6);
                jac.fixed_view_mut::<2, 3>(0, 0)
                    .copy_from(&(d_px * d_rot * -block.weight));
                jac.fixed_view_mut::<2, 3>(0, 3)
                    .copy_from(&(d_px * -block.weight));
                Ok(Linearized {
                    residual: DVector::from_column_slice(residual.as_slice()),
                    jacobians: vec![(block.epoch, jac)],
                })
            }
        }
    }

    /// Residual without the block weight: pixels for reprojection, grid
    /// displacements in mm for smoothness.
    pub fn raw_residual(
        &self,
        block: &ResidualBlock,
        poses: &[PoseVector<f64>],
    ) -> Result<DVector<f64>, AdjustError> {
        match block.kind {
            BlockKind::TrackSmoothness => {
                Ok(linearize_smoothness(poses, block.epoch, &self.grid)?.residual)
            }
            _ => {
                let pose = &poses[block.epoch];
                let cam = &self.cameras[block.camera.expect("reprojection block camera")];
                let world = pose.to_transform().apply(&block.point);
                let depth = cam.depth(&world);
                if depth <= DEPTH_EPSILON {
                    return Err(GeometryError::NonPositiveDepth { depth }.into());
                }
                let px = cam.project(&world)?;
                let r = block.observed.expect("reprojection block observation") - px;
                Ok(DVector::from_column_slice(r.as_slice()))
            }
        }
    }

    pub fn residual(
        &self,
        block: &ResidualBlock,
        poses: &[PoseVector<f64>],
    ) -> Result<DVector<f64>, AdjustError> {
        Ok(self.raw_residual(block, poses)? * block.weight)
    }

    /// Blocks with a non-zero weight; a zero-weight block contributes
    /// nothing and is not evaluated.
    pub fn active_blocks(&self) -> impl Iterator<Item = &ResidualBlock> {
        self.blocks.iter().filter(|b| b.weight != 0.0)
    }

    /// Robustified cost of a block residual.
    pub fn block_cost(&self, block: &ResidualBlock, r: &DVector<f64>) -> f64 {
        let sq = r.norm_squared();
        match (block.kind, self.huber_scale) {
            (BlockKind::TrackSmoothness, _) | (_, None) => 0.5 * sq,
            (_, Some(k)) => {
                let s = sq.sqrt();
                if s <= k {
                    0.5 * sq
                } else {
                    k * s - 0.5 * k * k
                }
            }
        }
    }

    /// Square root of the IRLS weight of a block residual.
    pub fn robust_sqrt_weight(&self, block: &ResidualBlock, r: &DVector<f64>) -> f64 {
        match (block.kind, self.huber_scale) {
            (BlockKind::TrackSmoothness, _) | (_, None) => 1.0,
            (_, Some(k)) => {
                let s = r.norm();
                if s <= k {
                    1.0
                } else {
                    (k / s).sqrt()
                }
            }
        }
    }

    /// Total cost `Σ ρ(r_b)`; infinite when a block cannot be evaluated.
    pub fn cost(&self, poses: &[PoseVector<f64>]) -> f64 {
        let mut total = 0.0;
        for b in self.active_blocks() {
            match self.residual(b, poses) {
                Ok(r) => total += self.block_cost(b, &r),
                Err(_) => return f64::INFINITY,
            }
        }
        total
    }
}

/// Deformation offsets for every epoch from the predictor, using windows of
/// the current track (epochs clamped at the track ends) and deformable
/// positions triangulated from the observations.
pub fn predict_offsets(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
    track: &MouseStateTrack,
    model: &RigidMouseModel<f64>,
    predictor: &dyn DeformPredictor,
) -> Result<Vec<Vec<Vector3<f64>>>, AdjustError> {
    let n = track.len();
    let half = predictor.half_width();
    let poses = track.poses();
    let observed: Vec<_> = (0..n)
        .map(|t| observed_deformable(dataset, cameras, t))
        .collect();
    (0..n)
        .map(|t| {
            let window: Vec<usize> = (0..2 * half + 1)
                .map(|j| (t + j).saturating_sub(half).min(n - 1))
                .collect();
            let seq = TokenSequence::from_window(
                model,
                t,
                &window.iter().map(|&e| poses[e]).collect::<Vec<_>>(),
                &window
                    .iter()
                    .map(|&e| observed[e].clone())
                    .collect::<Vec<_>>(),
            );
            Ok(predictor.predict_offsets(&seq)?)
        })
        .collect()
}

/// Residual blocks for `dataset` linearised around `track`. With a
/// predictor the reprojection blocks use the predicted deformed parts and the
/// geometric σ; without one the rigid parts and the deformation σ.
pub fn build_problem(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
    track: &MouseStateTrack,
    model: &RigidMouseModel<f64>,
    predictor: Option<&dyn DeformPredictor>,
    stochastic: &StochasticConfig,
) -> Result<Problem, AdjustError> {
    stochastic.validate()?;
    check_camera_ids(dataset, cameras)?;
    let n = dataset.n_epochs();
    if track.len() != n {
        return Err(AdjustError::EpochMismatch {
            track: track.len(),
            dataset: n,
        });
    }
    let offsets = predictor
        .map(|p| predict_offsets(dataset, cameras, track, model, p))
        .transpose()?;
    let (kind, sigma, mode) = match offsets {
        Some(_) => (
            BlockKind::DeformedReprojection,
            stochastic.sigma_px_geometric,
            SolveMode::Deformed,
        ),
        None => (
            BlockKind::RigidReprojection,
            stochastic.sigma_px_deformation,
            SolveMode::Rigid,
        ),
    };
    let parts = model.rigid_part_positions();
    let mut blocks = Vec::new();
    for t in 0..n {
        for k in 0..cameras.len() {
            for (i, x) in parts.iter().enumerate() {
                if let Some(px) = dataset.observation(t, k, i).pixel() {
                    let offset = offsets.as_ref().map_or(Vector3::zeros(), |o| o[t][i]);
                    blocks.push(ResidualBlock {
                        kind,
                        epoch: t,
                        camera: Some(k),
                        part: Some(i),
                        weight: 1.0 / sigma,
                        observed: Some(px),
                        point: x + offset,
                    });
                }
            }
        }
    }
    if n >= WINDOW {
        for t in 0..n {
            blocks.push(ResidualBlock {
                kind: BlockKind::TrackSmoothness,
                epoch: t,
                camera: None,
                part: None,
                weight: stochastic.smoothness_weight,
                observed: None,
                point: Vector3::zeros(),
            });
        }
    }
    Ok(Problem {
        n_epochs: n,
        cameras: cameras.to_vec(),
        grid: ComparisonGrid::for_model(model),
        blocks,
        mode,
        huber_scale: stochastic.huber_scale,
        offsets,
    })
}
