//! Homogeneous projective geometry: projection, projection-matrix
//! factorisation, rigid-transform algebra, resection and triangulation.
//!
//! Units are millimetres for object space and pixels for image space.

pub mod camera;
pub mod refine;
pub mod registration;
pub mod resection;
pub mod transform;
pub mod triangulation;

pub use camera::{
    calibration_matrix, decompose_projection, CameraModel, CameraRecord, ProjectionMatrix,
};
pub use registration::fit_rigid;
pub use resection::{resect, Resection};
pub use transform::{
    matrix_to_rodrigues, rodrigues_to_matrix, unwrap_rodrigues, PoseVector, RigidTransform,
};
pub use triangulation::{triangulate, Triangulation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {depth} mm in the camera frame")]
    NonPositiveDepth { depth: f64 },
    #[error("projection matrix has a singular left 3x3 block")]
    SingularCamera,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("viewing rays are (nearly) parallel")]
    ParallelRays,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}
