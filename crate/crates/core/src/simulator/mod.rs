//! Ground-truth scene simulation: a Brownian body track on the table plane,
//! the deforming part model, and noisy, partially missing multi-camera
//! observations.

pub mod dataset;

use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use dataset::{
    DatasetMeta, GroundTruthEpoch, Observation, PartTruth, PoseRecord, SimulatedDataset,
};

use crate::config_hash;
use crate::geometry::{calibration_matrix, CameraModel, CameraRecord, GeometryError, PoseVector};
use crate::model::{DeformationState, GaitConfig, RigidMouseModel};

/// Minimum track length (one smoothness window).
pub const MIN_EPOCHS: usize = 5;

/// Height of the body origin above the table so the paws touch it, mm.
pub const BODY_HEIGHT_MM: f64 = 8.0;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scene needs at least 2 cameras, got {0}")]
    TooFewCameras(usize),
    #[error("track needs at least {MIN_EPOCHS} epochs, got {0}")]
    TooFewEpochs(usize),
    #[error("camera {0} never images the table plane")]
    CameraSeesNothing(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
}

impl SimError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    /// Probability that an observation is independently dropped.
    pub random_dropout_rate: f64,
    /// Fewest parts one camera must see for an epoch to count as locally
    /// solvable. Used for flagging only; no observations are ever restored.
    pub min_visible_floor: usize,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            random_dropout_rate: 0.0,
            min_visible_floor: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub cameras: Vec<CameraRecord>,
    /// The body centre stays inside `[-e, e]²` on the table plane `z = 0`.
    pub plane_half_extent_mm: f64,
    pub seed: u64,
    pub n_epochs: usize,
    /// Per-axis standard deviation of one random-walk step, mm.
    pub step_sigma_mm: f64,
    /// Exponential smoothing factor for the heading direction.
    pub heading_smoothing: f64,
    pub noise_sigma_px: f64,
    pub occlusion: OcclusionConfig,
    /// Animate gait and head; `false` renders the rigid model.
    pub deformation: bool,
    pub gait: GaitConfig,
    /// Speed driving the gait amplitude; the track's mean step length when absent.
    pub body_speed_mm_per_frame: Option<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            cameras: default_cameras().iter().map(CameraRecord::from).collect(),
            plane_half_extent_mm: 150.0,
            seed: 1,
            n_epochs: 200,
            step_sigma_mm: 1.0,
            heading_smoothing: 0.3,
            noise_sigma_px: 0.5,
            occlusion: OcclusionConfig::default(),
            deformation: true,
            gait: GaitConfig::default(),
            body_speed_mm_per_frame: None,
        }
    }
}

impl SceneConfig {
    /// Rigid model with inflated pixel noise standing in for unmodelled
    /// body-part motion.
    pub fn deformation_as_noise() -> Self {
        Self {
            noise_sigma_px: 3.0,
            deformation: false,
            ..Self::default()
        }
    }

    pub fn camera_models(&self) -> Result<Vec<CameraModel<f64>>, SimError> {
        self.cameras
            .iter()
            .map(|c| c.to_camera().map_err(SimError::from))
            .collect()
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Three cameras roughly 70–90° apart: top, side and front, 700 mm from the
/// table centre, 1280×960 px, f = 1400 px.
pub fn default_cameras() -> Vec<CameraModel<f64>> {
    let k = calibration_matrix(1400.0, 1400.0, 640.0, 480.0);
    let dist = 700.0;
    let elev = 20f64.to_radians();
    let target = Vector3::zeros();
    vec![
        CameraModel::look_at(0, k, Vector3::new(0.0, 0.0, dist), target, Vector3::y()),
        CameraModel::look_at(
            1,
            k,
            Vector3::new(-dist * elev.cos(), 0.0, dist * elev.sin()),
            target,
            Vector3::z(),
        ),
        CameraModel::look_at(
            2,
            k,
            Vector3::new(0.0, dist * elev.cos(), dist * elev.sin()),
            target,
            Vector3::z(),
        ),
    ]
    .into_iter()
    .map(|c| c.with_image_size(1280, 960))
    .collect()
}

fn reflect(mut x: f64, e: f64) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    while x > e || x < -e {
        x = if x > e { 2.0 * e - x } else { -2.0 * e - x };
    }
    x
}

/// Yaw turning model +Y onto the planar direction `d`.
fn yaw_of(d: &Vector2<f64>) -> f64 {
    (-d.x).atan2(d.y)
}

fn wrap_near(angle: f64, reference: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    angle + two_pi * ((reference - angle) / two_pi).round()
}

/// Body poses of a 2D Brownian walk on `z = 0`, reflected at the plane
/// border. The yaw follows the exponentially smoothed direction of motion
/// and is kept continuous (not wrapped to `(-π, π]`).
pub fn generate_track(config: &SceneConfig) -> Result<Vec<PoseVector<f64>>, SimError> {
    if config.n_epochs < MIN_EPOCHS {
        return Err(SimError::TooFewEpochs(config.n_epochs));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let e = config.plane_half_extent_mm;
    let alpha = config.heading_smoothing;
    let mut pos = Vector2::zeros();
    let mut heading = Vector2::new(0.0, 1.0);
    let mut yaw = 0.0;
    let mut track = Vec::with_capacity(config.n_epochs);
    for t in 0..config.n_epochs {
        track.push(PoseVector::new(
            Vector3::new(0.0, 0.0, yaw),
            Vector3::new(pos.x, pos.y, BODY_HEIGHT_MM),
        ));
        if t + 1 == config.n_epochs {
            break;
        }
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        let next = Vector2::new(
            reflect(pos.x + config.step_sigma_mm * dx, e),
            reflect(pos.y + config.step_sigma_mm * dy, e),
        );
        let step = next - pos;
        let len = step.norm();
        if len > 0.0 {
            let blended = heading * (1.0 - alpha) + step / len * alpha;
            if blended.norm() > 1e-12 {
                heading = blended.normalize();
                yaw = wrap_near(yaw_of(&heading), yaw);
            }
        }
        pos = next;
    }
    Ok(track)
}

/// Mean planar displacement per frame.
pub fn mean_step_length(track: &[PoseVector<f64>]) -> f64 {
    if track.len() < 2 {
        return 0.0;
    }
    let total: f64 = track
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).xy().norm())
        .sum();
    total / (track.len() - 1) as f64
}

fn check_plane_visibility(cam: &CameraModel<f64>, e: f64) -> Result<(), SimError> {
    let n = 10;
    for a in 0..=n {
        for b in 0..=n {
            let p = Vector3::new(
                -e + 2.0 * e * a as f64 / n as f64,
                -e + 2.0 * e * b as f64 / n as f64,
                0.0,
            );
            if let Ok(px) = cam.project(&p) {
                if cam.in_image(&px) {
                    return Ok(());
                }
            }
        }
    }
    Err(SimError::CameraSeesNothing(cam.id))
}

/// Deformation of epoch `t` under `config`.
pub fn deformation_at(
    config: &SceneConfig,
    model: &RigidMouseModel<f64>,
    t: usize,
    body_speed: f64,
) -> DeformationState<f64> {
    if config.deformation {
        config.gait.deform_at_frame(model, t, body_speed)
    } else {
        DeformationState::none(model.len())
    }
}

/// Renders a track into a dataset: deforms the model, projects every part
/// into every camera, adds Gaussian pixel noise, then hides observations by
/// random dropout and by falling outside the image.
///
/// Epoch `t` draws from its own random stream derived from `(seed, t)`.
pub fn render(
    config: &SceneConfig,
    track: &[PoseVector<f64>],
) -> Result<SimulatedDataset, SimError> {
    let cameras = config.camera_models()?;
    if cameras.len() < 2 {
        return Err(SimError::TooFewCameras(cameras.len()));
    }
    if track.len() < MIN_EPOCHS {
        return Err(SimError::TooFewEpochs(track.len()));
    }
    for cam in &cameras {
        check_plane_visibility(cam, config.plane_half_extent_mm)?;
    }
    let model = RigidMouseModel::<f64>::table();
    let body_speed = config
        .body_speed_mm_per_frame
        .unwrap_or_else(|| mean_step_length(track));
    let sigma = config.noise_sigma_px;
    let dropout = config.occlusion.random_dropout_rate;

    let mut ground_truth = Vec::with_capacity(track.len());
    let mut observations = Vec::with_capacity(track.len() * cameras.len() * model.len());
    for (t, pose) in track.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64 + 1);
        let deform = deformation_at(config, &model, t, body_speed);
        let rigid = model.world_part_positions(pose, None);
        let deformable = model.world_part_positions(pose, Some(&deform));
        ground_truth.push(GroundTruthEpoch {
            t,
            pose: pose.into(),
            phase: deform.phase,
            head_angle_rad: deform.head_angle,
            parts: (0..model.len())
                .map(|i| PartTruth {
                    i,
                    rigid_mm: rigid[i].into(),
                    deformable_mm: deformable[i].into(),
                })
                .collect(),
        });
        for cam in &cameras {
            for (i, point) in deformable.iter().enumerate() {
                let nu: f64 = rng.sample(StandardNormal);
                let nv: f64 = rng.sample(StandardNormal);
                let keep = rng.random::<f64>() >= dropout;
                let noise = [sigma * nu, sigma * nv];
                let pixel = cam
                    .project(point)
                    .ok()
                    .map(|p| Vector2::new(p.x + noise[0], p.y + noise[1]))
                    .filter(|p| cam.in_image(p));
                let obs = match pixel {
                    Some(p) if keep => Observation {
                        t,
                        k: cam.id,
                        i,
                        visible: true,
                        u: Some(p.x),
                        v: Some(p.y),
                        noise: Some(noise),
                    },
                    _ => Observation {
                        t,
                        k: cam.id,
                        i,
                        visible: false,
                        u: None,
                        v: None,
                        noise: None,
                    },
                };
                observations.push(obs);
            }
        }
    }
    Ok(SimulatedDataset {
        meta: DatasetMeta {
            format_version: dataset::FORMAT_VERSION,
            config: config.clone(),
            config_hash: config.hash(),
            body_speed_mm_per_frame: body_speed,
        },
        ground_truth,
        observations,
    })
}

/// `generate_track` followed by `render`.
pub fn simulate(config: &SceneConfig) -> Result<SimulatedDataset, SimError> {
    let track = generate_track(config)?;
    render(config, &track)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_stays_inside() {
        assert_eq!(reflect(12.0, 10.0), 8.0);
        assert_eq!(reflect(-13.0, 10.0), -7.0);
        assert_eq!(reflect(35.0, 10.0), -5.0);
    }

    #[test]
    fn stationary_without_steps() {
        let cfg = SceneConfig {
            step_sigma_mm: 0.0,
            n_epochs: 12,
            ..SceneConfig::default()
        };
        let track = generate_track(&cfg).unwrap();
        assert_eq!(track.len(), 12);
        assert!(track.iter().all(|p| *p == track[0]));
    }

    #[test]
    fn default_cameras_see_the_plane() {
        for cam in default_cameras() {
            check_plane_visibility(&cam, 150.0).unwrap();
        }
    }

    #[test]
    fn camera_facing_away_sees_nothing() {
        let mut cfg = SceneConfig::default();
        let away = CameraModel::look_at(
            7,
            calibration_matrix(1400.0, 1400.0, 640.0, 480.0),
            Vector3::new(0.0, 0.0, 700.0),
            Vector3::new(0.0, 0.0, 1400.0),
            Vector3::y(),
        )
        .with_image_size(1280, 960);
        cfg.cameras.push(CameraRecord::from(&away));
        assert!(matches!(
            simulate(&cfg),
            Err(SimError::CameraSeesNothing(7))
        ));
    }
}
