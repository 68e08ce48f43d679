//! Levenberg-Marquardt on the block-banded normal equations.

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix6};
use serde::{Deserialize, Serialize};

use super::banded::SymmetricBand;
use super::problem::{BlockKind, Problem, ResidualBlock};
use super::{AdjustError, MouseStateTrack, SolveMode, SolvedFrom};
use crate::geometry::PoseVector;

/// Pose-parameter step of the finite-difference Jacobian check.
pub const JACOBIAN_CHECK_STEP: f64 = 1e-6;
/// Reciprocal condition number below which an epoch's own normal block
/// counts as undetermined.
const MIN_BLOCK_RCOND: f64 = 1e-10;
const MAX_LAMBDA: f64 = 1e20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which the solve stops.
    pub function_tolerance: f64,
    /// Gradient ∞-norm below which the solve stops.
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
    pub compute_covariance: bool,
    /// Offset re-predictions in deformed mode.
    pub outer_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            function_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            initial_lambda: 1e-4,
            compute_covariance: true,
            outer_iterations: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Iteration budget exhausted; the best iterate is returned.
    MaxIterationsReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceReason {
    FunctionTolerance,
    GradientTolerance,
    /// No damping produced a cost decrease.
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: SolveMode,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub reason: ConvergenceReason,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Unweighted residual RMS per block kind: pixels per observation for
    /// reprojection, mm per grid point for smoothness.
    pub rms_by_kind: BTreeMap<BlockKind, f64>,
}

struct NormalEquations {
    h: SymmetricBand,
    g: DVector<f64>,
}

fn normal_equations(
    problem: &Problem,
    poses: &[PoseVector<f64>],
) -> Result<NormalEquations, AdjustError> {
    let n = problem.n_params();
    let bw = 6 * (problem.epoch_bandwidth() + 1) - 1;
    let mut h = SymmetricBand::zeros(n, bw);
    let mut g = DVector::zeros(n);
    for block in problem.active_blocks() {
        let lin = problem.linearize(block, poses)?;
        let s = problem.robust_sqrt_weight(block, &lin.residual);
        let r = &lin.residual * s;
        for (a, (ea, ja)) in lin.jacobians.iter().enumerate() {
            let ja = ja * s;
            let ga = ja.tr_mul(&r);
            for c in 0..6 {
                g[6 * ea + c] += ga[c];
            }
            for (eb, jb) in &lin.jacobians[..=a] {
                let jb = jb * s;
                let block_h = ja.tr_mul(&jb);
                for i in 0..6 {
                    for j in 0..6 {
                        let (gi, gj) = (6 * ea + i, 6 * eb + j);
                        if ea != eb || gi >= gj {
                            h.add(gi, gj, block_h[(i, j)]);
                        }
                    }
                }
            }
        }
    }
    Ok(NormalEquations { h, g })
}

fn step(poses: &[PoseVector<f64>], delta: &DVector<f64>) -> Vec<PoseVector<f64>> {
    poses
        .iter()
        .enumerate()
        .map(|(e, p)| {
            let d = delta.fixed_rows::<6>(6 * e);
            PoseVector::new(
                p.rodrigues + d.fixed_rows::<3>(0),
                p.translation + d.fixed_rows::<3>(3),
            )
            .canonical()
        })
        .collect()
}

fn rms_by_kind(problem: &Problem, poses: &[PoseVector<f64>]) -> BTreeMap<BlockKind, f64> {
    let mut acc: BTreeMap<BlockKind, (f64, usize)> = BTreeMap::new();
    for block in &problem.blocks {
        if let Ok(r) = problem.raw_residual(block, poses) {
            let units = match block.kind {
                BlockKind::TrackSmoothness => r.len() / 3,
                _ => 1,
            };
            let e = acc.entry(block.kind).or_default();
            e.0 += r.norm_squared();
            e.1 += units;
        }
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, (s / n.max(1) as f64).sqrt()))
        .collect()
}

fn epoch_block(h: &SymmetricBand, e: usize) -> Matrix6<f64> {
    Matrix6::from_fn(|i, j| h.get(6 * e + i, 6 * e + j))
}

fn well_conditioned(m: &Matrix6<f64>) -> bool {
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    hi > 0.0 && lo > MIN_BLOCK_RCOND * hi
}

/// Minimises the problem's cost starting from `track`.
///
/// Accepted steps never increase the cost. Epochs whose own normal block is
/// well conditioned at the solution are flagged adjusted; the others keep
/// their initial flag.
pub fn solve(
    problem: &Problem,
    track: &MouseStateTrack,
    options: &SolveOptions,
) -> Result<(MouseStateTrack, SolveReport), AdjustError> {
    if track.len() != problem.n_epochs {
        return Err(AdjustError::EpochMismatch {
            track: track.len(),
            dataset: problem.n_epochs,
        });
    }
    let mut poses = track.poses();
    let mut cost = problem.cost(&poses);
    if !cost.is_finite() {
        return Err(AdjustError::NonFiniteCost);
    }
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = options.initial_lambda;
    let mut iterations = 0;
    let mut reason = ConvergenceReason::MaxIterations;

    'outer: while iterations < options.max_iterations {
        let NormalEquations { h, g } = normal_equations(problem, &poses)?;
        if !g.iter().all(|v| v.is_finite()) {
            return Err(AdjustError::NonFiniteCost);
        }
        if g.amax() < options.gradient_tolerance {
            reason = ConvergenceReason::GradientTolerance;
            break;
        }
        let diag = h.diagonal();
        let floor = 1e-9 * diag.amax().max(f64::MIN_POSITIVE);
        iterations += 1;
        loop {
            let mut damped = h.clone();
            for i in 0..diag.len() {
                damped.add(i, i, lambda * diag[i].max(floor));
            }
            let accepted = match damped.cholesky() {
                Ok(chol) => {
                    let candidate = step(&poses, &chol.solve(&-&g));
                    let new_cost = problem.cost(&candidate);
                    (new_cost <= cost).then_some((candidate, new_cost))
                }
                Err(_) => None,
            };
            match accepted {
                Some((candidate, new_cost)) => {
                    let decrease = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    poses = candidate;
                    cost = new_cost;
                    history.push(cost);
                    lambda = (lambda / 3.0).max(1e-12);
                    if decrease < options.function_tolerance {
                        reason = ConvergenceReason::FunctionTolerance;
                        break 'outer;
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > MAX_LAMBDA {
                        reason = ConvergenceReason::NoImprovement;
                        break 'outer;
                    }
                }
            }
        }
    }
    let status = if reason == ConvergenceReason::MaxIterations {
        log::warn!("adjustment stopped after {iterations} iterations");
        SolveStatus::MaxIterationsReached
    } else {
        SolveStatus::Converged
    };

    let NormalEquations { h, .. } = normal_equations(problem, &poses)?;
    let covariance = if options.compute_covariance {
        h.cholesky()
            .ok()
            .map(|chol| chol.inverse_diagonal(0..problem.n_params()))
    } else {
        None
    };

    let mut sq = vec![(0.0, 0usize); problem.n_epochs];
    for block in problem
        .blocks
        .iter()
        .filter(|b| b.kind != BlockKind::TrackSmoothness)
    {
        if let Ok(r) = problem.raw_residual(block, &poses) {
            sq[block.epoch].0 += r.norm_squared();
            sq[block.epoch].1 += 1;
        }
    }

    let mut out = track.clone();
    out.set_poses(&poses);
    for (e, state) in out.epochs.iter_mut().enumerate() {
        if well_conditioned(&epoch_block(&h, e)) {
            state.solved_from = SolvedFrom::Adjusted;
        }
        state.covariance_diag = covariance.as_ref().map(|c| {
            let mut d = [0.0; 6];
            d.copy_from_slice(&c[6 * e..6 * e + 6]);
            d
        });
        state.residual_rms = (sq[e].1 > 0).then(|| (sq[e].0 / sq[e].1 as f64).sqrt());
        state.part_offsets = problem
            .offsets
            .as_ref()
            .map(|o| o[e].iter().map(|v| [v.x, v.y, v.z]).collect());
    }
    let report = SolveReport {
        mode: problem.mode,
        initial_cost,
        final_cost: cost,
        iterations,
        status,
        reason,
        cost_history: history,
        rms_by_kind: rms_by_kind(problem, &poses),
    };
    Ok((out, report))
}

/// Worst relative deviation between the analytic and central-difference
/// Jacobian of one block, or `None` if the block cannot be evaluated.
pub fn check_block_jacobian(
    problem: &Problem,
    block: &ResidualBlock,
    poses: &[PoseVector<f64>],
) -> Option<f64> {
    let lin = problem.linearize(block, poses).ok()?;
    let (mut worst_diff, mut worst_ref) = (0.0_f64, 0.0_f64);
    for (e, jac) in &lin.jacobians {
        for c in 0..6 {
            let mut plus = poses.to_vec();
            let mut minus = poses.to_vec();
            let mut p = plus[*e].to_array();
            p[c] += JACOBIAN_CHECK_STEP;
            plus[*e] = PoseVector::from_slice(&p);
            let mut m = minus[*e].to_array();
            m[c] -= JACOBIAN_CHECK_STEP;
            minus[*e] = PoseVector::from_slice(&m);
            let rp = problem.residual(block, &plus).ok()?;
            let rm = problem.residual(block, &minus).ok()?;
            let fd = (rp - rm) / (2.0 * JACOBIAN_CHECK_STEP);
            worst_diff = worst_diff.max((jac.column(c) - &fd).amax());
            worst_ref = worst_ref.max(fd.amax());
        }
    }
    let dev = worst_diff / worst_ref.max(1e-8);
    dev.is_finite().then_some(dev)
}

/// Worst relative deviation over all blocks of the problem at `track`.
/// Blocks that cannot be evaluated (a point behind a camera) are skipped.
pub fn check_jacobian(problem: &Problem, track: &MouseStateTrack) -> f64 {
    let poses = track.poses();
    problem
        .blocks
        .iter()
        .filter_map(|b| check_block_jacobian(problem, b, &poses))
        .fold(0.0, f64::max)
}
