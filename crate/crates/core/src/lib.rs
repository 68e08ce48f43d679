pub mod adjustment;
pub mod deform;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod scalar;
pub mod simulator;
pub mod track;

use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use adjustment::AdjustError;
use deform::DeformError;
use evaluation::EvalError;
use geometry::GeometryError;
use model::ModelError;
use plot::PlotError;
use simulator::SimError;
use track::TrackError;

pub type Camera = geometry::CameraModel<f64>;
pub type Transform = geometry::RigidTransform<f64>;
pub type Pose = geometry::PoseVector<f64>;
pub type MouseModel = model::RigidMouseModel<f64>;
pub type Grid = track::ComparisonGrid<f64>;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for invalid input, schema or IO errors.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit status for a failed acceptance check.
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Adjust(#[from] AdjustError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
    #[error("acceptance check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Self::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use AdjustError as A;
        use DeformError as D;
        match self {
            Error::Geometry(_) | Error::Track(TrackError::BranchDiscontinuity { .. }) => {
                EXIT_NUMERICAL
            }
            Error::Sim(SimError::Geometry(_)) => EXIT_NUMERICAL,
            Error::Deform(D::DivergedLoss { .. }) => EXIT_NUMERICAL,
            Error::Adjust(A::NoSolvableEpoch | A::NonFiniteCost | A::Geometry(_)) => EXIT_NUMERICAL,
            Error::Adjust(A::Deform(D::DivergedLoss { .. })) => EXIT_NUMERICAL,
            Error::Adjust(A::Track(TrackError::BranchDiscontinuity { .. })) => EXIT_NUMERICAL,
            Error::Stage { source, .. } => source.exit_code(),
            Error::CheckFailed(_) => EXIT_CHECK,
            _ => EXIT_VALIDATION,
        }
    }
}

/// Short SHA-256 fingerprint of a configuration's canonical JSON form.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    hex::encode(&Sha256::digest(&json)[..8])
}
