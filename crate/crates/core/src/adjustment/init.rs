//! Approximate track from per-epoch local solutions, with the gaps filled by
//! interpolation between solved neighbours.

use nalgebra::{DVector, Vector2, Vector3};

use super::{check_camera_ids, AdjustError, EpochState, MouseStateTrack, SolvedFrom};
use crate::geometry::camera::DEPTH_EPSILON;
use crate::geometry::refine::refine;
use crate::geometry::{fit_rigid, resect, triangulate, CameraModel, PoseVector};
use crate::model::RigidMouseModel;
use crate::simulator::SimulatedDataset;

/// Parts one camera must see for a resection of the model.
const MIN_RESECTION_PARTS: usize = 4;
/// Largest reprojection RMS (px) of an acceptable local solution.
pub const MAX_LOCAL_RMS_PX: f64 = 10.0;
const REFINE_ITERATIONS: usize = 30;

/// Reprojection residuals of the rigid model at `pose` over `obs`, or `None`
/// when a part falls behind a camera.
fn reprojection(
    pose: &PoseVector<f64>,
    obs: &[(usize, Vector3<f64>, Vector2<f64>)],
    cameras: &[CameraModel<f64>],
) -> Option<DVector<f64>> {
    let h = pose.to_transform();
    let mut r = DVector::zeros(2 * obs.len());
    for (j, (k, x, px)) in obs.iter().enumerate() {
        let w = h.apply(x);
        if cameras[*k].depth(&w) <= DEPTH_EPSILON {
            return None;
        }
        let p = cameras[*k].project(&w).ok()?;
        r[2 * j] = px.x - p.x;
        r[2 * j + 1] = px.y - p.y;
    }
    Some(r)
}

/// Pose of epoch `t` from its own observations only.
///
/// Requires some camera to see at least `floor` parts. Candidates come from
/// registering the model to the parts triangulated from two or more cameras
/// (at least three) and from resecting the model in every camera that sees
/// at least four parts. Each candidate is refined on all of the epoch's
/// observations; the best is kept if its reprojection RMS is at most
/// [`MAX_LOCAL_RMS_PX`].
pub fn local_pose(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
    model: &RigidMouseModel<f64>,
    t: usize,
    floor: usize,
) -> Option<PoseVector<f64>> {
    let counts = dataset.visible_counts(t);
    if !counts.iter().any(|&c| c >= floor.max(1)) {
        return None;
    }
    let parts = model.rigid_part_positions();
    let mut obs = Vec::new();
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for (i, x) in parts.iter().enumerate() {
        let seen: Vec<(&CameraModel<f64>, Vector2<f64>)> = cameras
            .iter()
            .enumerate()
            .filter_map(|(k, cam)| {
                let px = dataset.observation(t, k, i).pixel()?;
                obs.push((k, *x, px));
                Some((cam, px))
            })
            .collect();
        if seen.len() >= 2 {
            if let Ok(tr) = triangulate(&seen) {
                src.push(*x);
                dst.push(tr.point);
            }
        }
    }

    let mut candidates = Vec::new();
    if let Ok(h) = fit_rigid(&src, &dst) {
        candidates.push(PoseVector::from_transform(&h));
    }
    for (k, cam) in cameras.iter().enumerate() {
        if counts[k] < MIN_RESECTION_PARTS {
            continue;
        }
        let corr: Vec<(Vector3<f64>, Vector2<f64>)> = obs
            .iter()
            .filter(|o| o.0 == k)
            .map(|o| (o.1, o.2))
            .collect();
        if let Ok(res) = resect(&corr, Some(&cam.calibration)) {
            let model_to_world = cam.pose_global.inverse().compose(&res.camera.pose_global);
            candidates.push(PoseVector::from_transform(&model_to_world));
        }
    }

    let residual =
        |p: &DVector<f64>| reprojection(&PoseVector::from_slice(p.as_slice()), &obs, cameras);
    candidates
        .iter()
        .map(|c| {
            refine(
                DVector::from_row_slice(&c.to_array()),
                REFINE_ITERATIONS,
                residual,
            )
        })
        .filter(|r| r.cost.is_finite())
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .filter(|r| (2.0 * r.cost / obs.len() as f64).sqrt() <= MAX_LOCAL_RMS_PX)
        .map(|r| PoseVector::from_slice(r.params.as_slice()).canonical())
}

/// Drops a local solution whose rotation differs by more than a quarter
/// turn from both neighbouring local solutions while those two agree.
fn reject_isolated_flips(local: &mut [Option<PoseVector<f64>>]) {
    let solved: Vec<usize> = (0..local.len()).filter(|&t| local[t].is_some()).collect();
    let angle = |a: usize, b: usize| {
        let (pa, pb) = (local[a].expect("solved"), local[b].expect("solved"));
        pa.to_transform().rotation_angle_to(&pb.to_transform())
    };
    let limit = std::f64::consts::FRAC_PI_2;
    let flipped: Vec<usize> = solved
        .windows(3)
        .filter(|w| {
            angle(w[1], w[0]) > limit && angle(w[1], w[2]) > limit && angle(w[0], w[2]) <= limit
        })
        .map(|w| w[1])
        .collect();
    for t in flipped {
        local[t] = None;
    }
}

/// Local solutions where possible; other epochs interpolated linearly in the
/// pose parameters between the nearest solved epochs (the later one unwrapped
/// near the earlier), or copied from the nearest solved epoch at the track
/// ends. Rotations are returned on the canonical branch.
pub fn initialize(
    dataset: &SimulatedDataset,
    cameras: &[CameraModel<f64>],
    model: &RigidMouseModel<f64>,
    floor: usize,
) -> Result<MouseStateTrack, AdjustError> {
    check_camera_ids(dataset, cameras)?;
    let n = dataset.n_epochs();
    let local: Vec<Option<PoseVector<f64>>> = (0..n)
        .map(|t| local_pose(dataset, cameras, model, t, floor))
        .collect();
    let mut local = local;
    reject_isolated_flips(&mut local);
    let solved: Vec<usize> = (0..n).filter(|&t| local[t].is_some()).collect();
    if solved.is_empty() {
        return Err(AdjustError::NoSolvableEpoch);
    }

    let anchors: Vec<PoseVector<f64>> = solved
        .iter()
        .map(|&t| local[t].expect("solved epoch"))
        .collect();

    let mut epochs = Vec::with_capacity(n);
    let mut next = 0;
    for t in 0..n {
        while next < solved.len() && solved[next] < t {
            next += 1;
        }
        if next < solved.len() && solved[next] == t {
            epochs.push(EpochState::new(anchors[next], SolvedFrom::Local));
            continue;
        }
        let pose = match (next.checked_sub(1), (next < solved.len()).then_some(next)) {
            (Some(a), Some(b)) => {
                let s = (t - solved[a]) as f64 / (solved[b] - solved[a]) as f64;
                let (pa, pb) = (anchors[a], anchors[b].unwrapped_near(&anchors[a]));
                PoseVector::new(
                    pa.rodrigues + (pb.rodrigues - pa.rodrigues) * s,
                    pa.translation + (pb.translation - pa.translation) * s,
                )
            }
            (Some(a), None) => anchors[a],
            (None, Some(b)) => anchors[b],
            (None, None) => unreachable!("at least one solved epoch"),
        };
        epochs.push(EpochState::new(pose.canonical(), SolvedFrom::Interpolated));
    }
    Ok(MouseStateTrack { epochs })
}
