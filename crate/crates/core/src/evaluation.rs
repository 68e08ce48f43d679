//! Track accuracy and completeness against the simulator's ground truth.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjustment::MouseStateTrack;
use crate::model::RigidMouseModel;
use crate::simulator::SimulatedDataset;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("track has {track} epochs, dataset has {dataset}")]
    EpochMismatch { track: usize, dataset: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rms: f64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = values.len().max(1) as f64;
        Self {
            rms: (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            mean: values.iter().sum::<f64>() / n,
            p50: percentile(&sorted, 50.0),
            p90: percentile(&sorted, 90.0),
            p95: percentile(&sorted, 95.0),
            max: sorted.last().copied().unwrap_or(0.0),
        }
    }
}

/// Linear interpolation between closest ranks of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = p / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub n_epochs: usize,
    pub position_error_mm: Vec<f64>,
    pub rotation_error_deg: Vec<f64>,
    /// Fraction of epochs where some camera sees at least the visibility
    /// floor of parts.
    pub completeness_input: f64,
    /// Fraction of epochs whose pose is estimated from data.
    pub completeness_output: f64,
    /// Per-part RMSE of the reconstructed deformable 3D positions, mm.
    pub part_rmse_mm: Vec<f64>,
    /// RMSE over all parts and epochs, mm.
    pub part_rmse_total_mm: f64,
    pub position_summary: Summary,
    pub rotation_summary: Summary,
}

/// Deformable world positions implied by an epoch of the track: rigid parts
/// plus the stored offsets, if any.
pub fn reconstructed_parts(
    track: &MouseStateTrack,
    model: &RigidMouseModel<f64>,
    t: usize,
) -> Vec<Vector3<f64>> {
    let state = &track.epochs[t];
    let h = state.pose.to_transform();
    model
        .rigid_part_positions()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let off = state
                .part_offsets
                .as_ref()
                .and_then(|o| o.get(i))
                .map_or(Vector3::zeros(), |o| Vector3::from(*o));
            h.apply(&(x + off))
        })
        .collect()
}

pub fn evaluate(
    track: &MouseStateTrack,
    dataset: &SimulatedDataset,
) -> Result<EvaluationReport, EvalError> {
    let n = dataset.n_epochs();
    if track.len() != n {
        return Err(EvalError::EpochMismatch {
            track: track.len(),
            dataset: n,
        });
    }
    let model = RigidMouseModel::table();
    let floor = dataset.meta.config.occlusion.min_visible_floor;
    let mut position = Vec::with_capacity(n);
    let mut rotation = Vec::with_capacity(n);
    let mut part_sq = vec![0.0; model.len()];
    for t in 0..n {
        let truth = dataset.true_pose(t).to_transform();
        let est = track.epochs[t].pose.to_transform();
        position.push((est.translation - truth.translation).norm());
        rotation.push(est.rotation_angle_to(&truth).to_degrees());
        let gt = dataset.deformable_points(t);
        for (i, p) in reconstructed_parts(track, &model, t).iter().enumerate() {
            part_sq[i] += (p - gt[i]).norm_squared();
        }
    }
    let denom = n.max(1) as f64;
    let part_rmse_mm: Vec<f64> = part_sq.iter().map(|s| (s / denom).sqrt()).collect();
    let part_rmse_total_mm =
        (part_sq.iter().sum::<f64>() / (denom * model.len().max(1) as f64)).sqrt();
    let observed = (0..n)
        .filter(|&t| dataset.locally_observed(t, floor))
        .count();
    let solved = track.epochs.iter().filter(|e| e.is_solved()).count();
    Ok(EvaluationReport {
        config_hash: dataset.meta.config_hash.clone(),
        n_epochs: n,
        position_summary: Summary::of(&position),
        rotation_summary: Summary::of(&rotation),
        position_error_mm: position,
        rotation_error_deg: rotation,
        completeness_input: observed as f64 / denom,
        completeness_output: solved as f64 / denom,
        part_rmse_mm,
        part_rmse_total_mm,
    })
}
