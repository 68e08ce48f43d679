//! Global least-squares estimation of the per-epoch mouse pose from all
//! cameras and epochs: reprojection residuals tied together by the
//! motion-track smoothness constraint, solved by Levenberg-Marquardt on the
//! block-banded normal equations.

mod banded;
mod init;
mod problem;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use banded::{BandCholesky, SymmetricBand};
pub use init::{initialize, local_pose};
pub use problem::{build_problem, predict_offsets, BlockKind, Linearized, Problem, ResidualBlock};
pub use solver::{
    check_block_jacobian, check_jacobian, solve, ConvergenceReason, SolveOptions, SolveReport,
    SolveStatus, JACOBIAN_CHECK_STEP,
};

use crate::deform::{DeformError, DeformPredictor};
use crate::geometry::{CameraModel, GeometryError, PoseVector};
use crate::model::RigidMouseModel;
use crate::simulator::SimulatedDataset;
use crate::track::TrackError;

#[derive(Debug, Error)]
pub enum AdjustError {
    #[error("no epoch has enough observations for a local solution")]
    NoSolvableEpoch,
    #[error("camera ids {given:?} do not match the dataset cameras {expected:?}")]
    InconsistentCameraIds {
        given: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("cost became non-finite")]
    NonFiniteCost,
    #[error("invalid stochastic model: {0}")]
    InvalidStochasticModel(String),
    #[error("track has {track} epochs, dataset has {dataset}")]
    EpochMismatch { track: usize, dataset: usize },
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Two-tier observation weighting plus the smoothness weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticConfig {
    /// Pixel σ of observations explained by the deformed model.
    pub sigma_px_geometric: f64,
    /// Pixel σ when deformation is absorbed as noise by the rigid model.
    pub sigma_px_deformation: f64,
    /// Weight `w_s` on grid displacements (per mm).
    pub smoothness_weight: f64,
    /// Huber threshold on reprojection residuals, in σ units.
    pub huber_scale: Option<f64>,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            sigma_px_geometric: 0.5,
            sigma_px_deformation: 3.0,
            smoothness_weight: 1.0,
            huber_scale: None,
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl StochasticConfig {
    pub fn validate(&self) -> Result<(), AdjustError> {
        let bad = |name: &str, v: f64| {
            Err(AdjustError::InvalidStochasticModel(format!(
                "{name} must be positive and finite, got {v}"
            )))
        };
        if !positive(self.sigma_px_geometric) {
            return bad("sigma_px_geometric", self.sigma_px_geometric);
        }
        if !positive(self.sigma_px_deformation) {
            return bad("sigma_px_deformation", self.sigma_px_deformation);
        }
        if !self.smoothness_weight.is_finite() || self.smoothness_weight < 0.0 {
            return Err(AdjustError::InvalidStochasticModel(format!(
                "smoothness_weight must be finite and non-negative, got {}",
                self.smoothness_weight
            )));
        }
        if let Some(k) = self.huber_scale {
            if !positive(k) {
                return bad("huber_scale", k);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    Rigid,
    Deformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolvedFrom {
    Local,
    Interpolated,
    Adjusted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochState {
    pub pose: PoseVector<f64>,
    pub solved_from: SolvedFrom,
    /// Variances of the six pose parameters.
    pub covariance_diag: Option<[f64; 6]>,
    /// RMS reprojection error of the epoch's observations, px.
    pub residual_rms: Option<f64>,
    /// Deformation offsets used for the epoch, model frame, mm.
    pub part_offsets: Option<Vec<[f64; 3]>>,
}

impl EpochState {
    pub fn new(pose: PoseVector<f64>, solved_from: SolvedFrom) -> Self {
        Self {
            pose,
            solved_from,
            covariance_diag: None,
            residual_rms: None,
            part_offsets: None,
        }
    }

    /// Whether the pose is estimated from data rather than interpolated.
    pub fn is_solved(&self) -> bool {
        self.solved_from != SolvedFrom::Interpolated
    }
}

/// One state per epoch, including epochs without any observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MouseStateTrack {
    pub epochs: Vec<EpochState>,
}

impl MouseStateTrack {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn poses(&self) -> Vec<PoseVector<f64>> {
        self.epochs.iter().map(|e| e.pose).collect()
    }

    pub fn set_poses(&mut self, poses: &[PoseVector<f64>]) {
        for (e, p) in self.epochs.iter_mut().zip(poses) {
            e.pose = *p;
        }
    }

    /// Fraction of epochs whose pose is estimated from data.
    pub fn solved_fraction(&self) -> f64 {
        let n = self.epochs.iter().filter(|e| e.is_solved()).count();
        n as f64 / self.len().max(1) as f64
    }

    pub fn to_records(&self) -> Vec<TrackRecord> {
        self.epochs
            .iter()
            .enumerate()
            .map(|(t, e)| TrackRecord {
                t,
                rodrigues: e.pose.rodrigues.into(),
                translation_mm: e.pose.translation.into(),
                solved_from: e.solved_from,
                residual_rms: e.residual_rms,
                covariance_diag: e.covariance_diag,
                part_offsets_mm: e.part_offsets.clone(),
            })
            .collect()
    }

    pub fn from_records(records: &[TrackRecord]) -> Self {
        Self {
            epochs: records
                .iter()
                .map(|r| EpochState {
                    pose: PoseVector::new(r.rodrigues.into(), r.translation_mm.into()),
                    solved_from: r.solved_from,
                    covariance_diag: r.covariance_diag,
                    residual_rms: r.residual_rms,
                    part_offsets: r.part_offsets_mm.clone(),
                })
                .collect(),
        }
    }
}

/// One line of a track file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub t: usize,
    pub rodrigues: [f64; 3],
    pub translation_mm: [f64; 3],
    pub solved_from: SolvedFrom,
    pub residual_rms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_diag: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_offsets_mm: Option<Vec<[f64; 3]>>,
}

/// Checks that `cameras` are the dataset's cameras, in order.
pub fn check_camera_ids(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
) -> Result<(), AdjustError> {
    let expected: Vec<usize> = dataset.meta.config.cameras.iter().map(|c| c.id).collect();
    let given: Vec<usize> = cameras.iter().map(|c| c.id).collect();
    if given != expected {
        return Err(AdjustError::InconsistentCameraIds { given, expected });
    }
    Ok(())
}

/// Result of [`adjust`]: the rigid solution always, the deformed one when a
/// predictor was supplied.
#[derive(Debug, Clone)]
pub struct Adjustment {
    pub track: MouseStateTrack,
    pub reports: Vec<SolveReport>,
}

/// Initialise, solve in rigid mode and, with a predictor, alternate
/// offset prediction and deformed-mode solves.
pub fn adjust(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
    model: &RigidMouseModel<f64>,
    predictor: Option<&dyn DeformPredictor>,
    stochastic: &StochasticConfig,
    options: &SolveOptions,
) -> Result<Adjustment, AdjustError> {
    let init = initialize(
        dataset,
        cameras,
        model,
        dataset.meta.config.occlusion.min_visible_floor,
    )?;
    let problem = build_problem(dataset, cameras, &init, model, None, stochastic)?;
    let (mut track, report) = solve(&problem, &init, options)?;
    let mut reports = vec![report];
    if let Some(predictor) = predictor {
        for _ in 0..options.outer_iterations.max(1) {
            let problem =
                build_problem(dataset, cameras, &track, model, Some(predictor), stochastic)?;
            let (next, report) = solve(&problem, &track, options)?;
            track = next;
            reports.push(report);
        }
    }
    Ok(Adjustment { track, reports })
}
