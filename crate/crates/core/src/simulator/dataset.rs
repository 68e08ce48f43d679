//! Simulated dataset: ground truth, per-camera observations and the JSON
//! file that carries them.

use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{SceneConfig, SimError};
use crate::geometry::{CameraModel, PoseVector};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub config: SceneConfig,
    pub config_hash: String,
    /// Body speed driving the gait amplitude, mm/frame.
    pub body_speed_mm_per_frame: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rodrigues: [f64; 3],
    pub translation_mm: [f64; 3],
}

impl From<&PoseVector<f64>> for PoseRecord {
    fn from(p: &PoseVector<f64>) -> Self {
        Self {
            rodrigues: p.rodrigues.into(),
            translation_mm: p.translation.into(),
        }
    }
}

impl From<&PoseRecord> for PoseVector<f64> {
    fn from(p: &PoseRecord) -> Self {
        PoseVector::new(Vector3::from(p.rodrigues), Vector3::from(p.translation_mm))
    }
}

/// One `(i, X̂, X̃)` entry of an epoch tuple, global frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartTruth {
    pub i: usize,
    pub rigid_mm: [f64; 3],
    pub deformable_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEpoch {
    pub t: usize,
    pub pose: PoseRecord,
    pub phase: f64,
    pub head_angle_rad: f64,
    pub parts: Vec<PartTruth>,
}

/// Observation of part `i` in camera `k` at epoch `t`. Pixel values and the
/// noise that was added to them exist only for visible observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub t: usize,
    pub k: usize,
    pub i: usize,
    pub visible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<[f64; 2]>,
}

impl Observation {
    pub fn pixel(&self) -> Option<Vector2<f64>> {
        match (self.visible, self.u, self.v) {
            (true, Some(u), Some(v)) => Some(Vector2::new(u, v)),
            _ => None,
        }
    }
}

/// Observations are stored densely in `(t, camera slot, part)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedDataset {
    pub meta: DatasetMeta,
    pub ground_truth: Vec<GroundTruthEpoch>,
    pub observations: Vec<Observation>,
}

impl SimulatedDataset {
    pub fn n_epochs(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn n_cameras(&self) -> usize {
        self.meta.config.cameras.len()
    }

    pub fn n_parts(&self) -> usize {
        self.ground_truth.first().map_or(0, |e| e.parts.len())
    }

    pub fn cameras(&self) -> Result<Vec<CameraModel<f64>>, SimError> {
        self.meta.config.camera_models()
    }

    pub fn true_pose(&self, t: usize) -> PoseVector<f64> {
        (&self.ground_truth[t].pose).into()
    }

    pub fn true_track(&self) -> Vec<PoseVector<f64>> {
        (0..self.n_epochs()).map(|t| self.true_pose(t)).collect()
    }

    /// Observation of part `i` seen by the camera in slot `slot` at `t`.
    pub fn observation(&self, t: usize, slot: usize, i: usize) -> &Observation {
        let (c, m) = (self.n_cameras(), self.n_parts());
        &self.observations[(t * c + slot) * m + i]
    }

    /// All observations of epoch `t`.
    pub fn epoch_observations(&self, t: usize) -> &[Observation] {
        let stride = self.n_cameras() * self.n_parts();
        &self.observations[t * stride..(t + 1) * stride]
    }

    /// Number of visible parts per camera slot at epoch `t`.
    pub fn visible_counts(&self, t: usize) -> Vec<usize> {
        let m = self.n_parts();
        self.epoch_observations(t)
            .chunks(m)
            .map(|c| c.iter().filter(|o| o.visible).count())
            .collect()
    }

    /// Whether some camera sees at least `floor` parts at epoch `t`.
    pub fn locally_observed(&self, t: usize, floor: usize) -> bool {
        self.visible_counts(t).iter().any(|&c| c >= floor)
    }

    /// Epochs in which every camera sees fewer than `floor` parts.
    pub fn sparse_epochs(&self, floor: usize) -> Vec<usize> {
        (0..self.n_epochs())
            .filter(|&t| !self.locally_observed(t, floor))
            .collect()
    }

    pub fn dropout_fraction(&self) -> f64 {
        let hidden = self.observations.iter().filter(|o| !o.visible).count();
        hidden as f64 / self.observations.len().max(1) as f64
    }

    /// Ground-truth deformable world positions at `t`.
    pub fn deformable_points(&self, t: usize) -> Vec<Vector3<f64>> {
        self.ground_truth[t]
            .parts
            .iter()
            .map(|p| Vector3::from(p.deformable_mm))
            .collect()
    }

    pub fn rigid_points(&self, t: usize) -> Vec<Vector3<f64>> {
        self.ground_truth[t]
            .parts
            .iter()
            .map(|p| Vector3::from(p.rigid_mm))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let ds: Self = serde_json::from_str(text).map_err(|e| SimError::Schema(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn export(&self, path: &Path) -> Result<(), SimError> {
        fs::write(path, self.to_json()).map_err(|e| SimError::io(path, e))
    }

    pub fn import(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            SimError::Schema(msg) => SimError::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Structural checks beyond what the schema enforces.
    pub fn validate(&self) -> Result<(), SimError> {
        let (n, c, m) = (self.n_epochs(), self.n_cameras(), self.n_parts());
        if self.meta.format_version != FORMAT_VERSION {
            return Err(SimError::Schema(format!(
                "meta.format_version: expected {FORMAT_VERSION}, found {}",
                self.meta.format_version
            )));
        }
        if self.observations.len() != n * c * m {
            return Err(SimError::Schema(format!(
                "observations: expected {} entries ({n} epochs x {c} cameras x {m} parts), found {}",
                n * c * m,
                self.observations.len()
            )));
        }
        for (t, e) in self.ground_truth.iter().enumerate() {
            if e.t != t || e.parts.len() != m {
                return Err(SimError::Schema(format!(
                    "ground_truth[{t}]: epoch index or part count mismatch"
                )));
            }
        }
        let ids: Vec<usize> = self.meta.config.cameras.iter().map(|c| c.id).collect();
        for (idx, o) in self.observations.iter().enumerate() {
            let slot = (idx / m) % c.max(1);
            let expected = (idx / (c * m), ids[slot], idx % m);
            if (o.t, o.k, o.i) != expected {
                return Err(SimError::Schema(format!(
                    "observations[{idx}]: expected (t, k, i) = {expected:?}, found ({}, {}, {})",
                    o.t, o.k, o.i
                )));
            }
            let has_pixel = o.u.is_some() && o.v.is_some();
            if o.visible != has_pixel || (!o.visible && o.noise.is_some()) {
                return Err(SimError::Schema(format!(
                    "observations[{idx}]: visibility flag disagrees with stored pixel"
                )));
            }
        }
        Ok(())
    }
}
