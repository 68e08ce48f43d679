//! Token windows: per epoch and part, the rigid model position paired with
//! the observed deformable position, both in the mid epoch's model frame.

use nalgebra::Vector3;

use super::DeformError;
use crate::geometry::{triangulate, CameraModel, PoseVector};
use crate::model::RigidMouseModel;
use crate::simulator::SimulatedDataset;

/// Cameras that must see a part for its 3D position to count as observed.
pub const MIN_VIEWS_FOR_PRESENCE: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub part_id: usize,
    /// Rigid part position, model frame of the window's mid epoch (mm).
    pub rigid: Vector3<f64>,
    /// Deformable position in the same frame; `None` when masked or missing.
    pub deformable: Option<Vector3<f64>>,
    /// Set on the mid-epoch tokens whose deformable part is to be predicted.
    pub masked: bool,
}

/// Window `[T_{t−n} … T_t … T_{t+n}]`, epoch-major, `M` parts per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub center: usize,
    pub half_width: usize,
    pub parts: usize,
    pub tokens: Vec<Token>,
    /// Ground-truth mid-epoch deformable positions (training only).
    pub target: Option<Vec<Vector3<f64>>>,
}

impl TokenSequence {
    pub fn epochs(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn token(&self, step: usize, part: usize) -> &Token {
        &self.tokens[step * self.parts + part]
    }

    pub fn token_mut(&mut self, step: usize, part: usize) -> &mut Token {
        &mut self.tokens[step * self.parts + part]
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.masked).count()
    }

    /// Mid-epoch rigid positions, one per part.
    pub fn mid_rigid(&self) -> Vec<Vector3<f64>> {
        (0..self.parts)
            .map(|i| self.token(self.half_width, i).rigid)
            .collect()
    }

    /// Same tokens with the epoch order reversed.
    pub fn time_reversed(&self) -> Self {
        let mut out = self.clone();
        let e = self.epochs();
        for s in 0..e {
            for i in 0..self.parts {
                *out.token_mut(s, i) = self.token(e - 1 - s, i).clone();
            }
        }
        out
    }

    /// Builds a window from per-epoch poses and (possibly missing) global
    /// deformable positions. `poses` and `deformable_world` both cover the
    /// `2n + 1` window epochs; the mid epoch's deformable parts are masked.
    pub fn from_window(
        model: &RigidMouseModel<f64>,
        center: usize,
        poses: &[PoseVector<f64>],
        deformable_world: &[Vec<Option<Vector3<f64>>>],
    ) -> Self {
        let epochs = poses.len();
        assert!(epochs % 2 == 1 && deformable_world.len() == epochs);
        let half_width = epochs / 2;
        let to_mid = poses[half_width].to_transform().inverse();
        let parts = model.len();
        let mut tokens = Vec::with_capacity(epochs * parts);
        for (s, pose) in poses.iter().enumerate() {
            let rigid_world = model.world_part_positions(pose, None);
            for i in 0..parts {
                let masked = s == half_width;
                tokens.push(Token {
                    part_id: i,
                    rigid: to_mid.apply(&rigid_world[i]),
                    deformable: if masked {
                        None
                    } else {
                        deformable_world[s][i].map(|p| to_mid.apply(&p))
                    },
                    masked,
                });
            }
        }
        Self {
            center,
            half_width,
            parts,
            tokens,
            target: None,
        }
    }
}

/// Whether part `i` is seen by at least [`MIN_VIEWS_FOR_PRESENCE`] cameras
/// at epoch `t`.
pub fn part_present(dataset: &SimulatedDataset, t: usize, i: usize) -> bool {
    (0..dataset.n_cameras())
        .filter(|&k| dataset.observation(t, k, i).visible)
        .count()
        >= MIN_VIEWS_FOR_PRESENCE
}

/// Deformable part positions at epoch `t` triangulated from the visible
/// observations; `None` for parts seen by fewer than
/// [`MIN_VIEWS_FOR_PRESENCE`] cameras or with degenerate rays.
pub fn observed_deformable(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
    t: usize,
) -> Vec<Option<Vector3<f64>>> {
    (0..dataset.n_parts())
        .map(|i| {
            let obs: Vec<_> = cameras
                .iter()
                .enumerate()
                .filter_map(|(slot, cam)| {
                    dataset.observation(t, slot, i).pixel().map(|px| (cam, px))
                })
                .collect();
            if obs.len() < MIN_VIEWS_FOR_PRESENCE {
                return None;
            }
            triangulate(&obs).ok().map(|tr| tr.point)
        })
        .collect()
}

/// Window centred on `t`: rigid tokens from the true poses, deformable
/// tokens triangulated from the observations, target from ground truth.
pub fn build_tokens(
    dataset: &SimulatedDataset,
    model: &RigidMouseModel<f64>,
    t: usize,
    half_width: usize,
) -> Result<TokenSequence, DeformError> {
    let cameras = dataset
        .cameras()
        .map_err(|e| DeformError::InvalidSequence(e.to_string()))?;
    build_tokens_with(dataset, &cameras, model, t, half_width)
}

fn build_tokens_with(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
    model: &RigidMouseModel<f64>,
    t: usize,
    half_width: usize,
) -> Result<TokenSequence, DeformError> {
    let n = dataset.n_epochs();
    if t < half_width || t + half_width >= n {
        return Err(DeformError::WindowOutOfRange {
            center: t,
            half_width,
            epochs: n,
        });
    }
    let range = t - half_width..=t + half_width;
    let poses: Vec<_> = range.clone().map(|e| dataset.true_pose(e)).collect();
    let deformable: Vec<_> = range
        .map(|e| observed_deformable(dataset, cameras, e))
        .collect();
    let mut seq = TokenSequence::from_window(model, t, &poses, &deformable);
    let to_mid = dataset.true_pose(t).to_transform().inverse();
    seq.target = Some(
        dataset
            .deformable_points(t)
            .iter()
            .map(|p| to_mid.apply(p))
            .collect(),
    );
    Ok(seq)
}

/// Every complete window of a dataset.
pub fn all_windows(
    dataset: &SimulatedDataset,
    model: &RigidMouseModel<f64>,
    half_width: usize,
) -> Vec<TokenSequence> {
    let Ok(cameras) = dataset.cameras() else {
        return Vec::new();
    };
    (half_width..dataset.n_epochs().saturating_sub(half_width))
        .map(|t| {
            build_tokens_with(dataset, &cameras, model, t, half_width).expect("window in range")
        })
        .collect()
}
