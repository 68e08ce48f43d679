mod common;

use approx::assert_relative_eq;
use mousetrack::geometry::{PoseVector, RigidTransform};
use mousetrack::track::{
    grid_rmse, interpolated_pose, linearize_smoothness, parameter_differences, spline_interpolate,
    spline_interpolate_at, track_residual, ComparisonGrid, WINDOW,
};
use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

use common::oracle_grid_rmse;

type Cubic = [[f64; 4]; 6];

fn cubic() -> impl Strategy<Value = Cubic> {
    // rotation coefficients stay small so the samples share one branch
    proptest::array::uniform6(proptest::array::uniform4(-1.0..1.0f64)).prop_map(|mut c| {
        for row in c.iter_mut().take(3) {
            for v in row.iter_mut() {
                *v *= 0.05;
            }
        }
        for row in c.iter_mut().skip(3) {
            for v in row.iter_mut() {
                *v *= 40.0;
            }
        }
        c
    })
}

fn eval(c: &Cubic, t: f64) -> PoseVector<f64> {
    let p: Vec<f64> = c
        .iter()
        .map(|k| k[0] + k[1] * t + k[2] * t * t + k[3] * t * t * t)
        .collect();
    PoseVector::from_slice(&p)
}

fn pose() -> impl Strategy<Value = PoseVector<f64>> {
    (
        proptest::array::uniform3(-1.5..1.5f64),
        proptest::array::uniform3(-100.0..100.0f64),
    )
        .prop_map(|(r, t)| PoseVector::new(Vector3::from(r), Vector3::from(t)))
}

fn linear_track(n: usize) -> Vec<PoseVector<f64>> {
    (0..n)
        .map(|t| {
            let t = t as f64;
            PoseVector::new(
                Vector3::new(0.01, -0.02, 0.3) + Vector3::new(0.001, 0.002, 0.05) * t,
                Vector3::new(-20.0, 5.0, 8.0) + Vector3::new(1.5, -0.5, 0.0) * t,
            )
        })
        .collect()
}

#[test]
fn linear_motion_has_zero_residual() {
    let track = linear_track(12);
    let grid = ComparisonGrid::default();
    for t in 0..track.len() {
        for r in track_residual(&track, t, &grid).unwrap() {
            assert!(r.norm() < 1e-9);
        }
        for d in parameter_differences(&track, t).unwrap() {
            assert!(d.abs() < 1e-12);
        }
    }
}

#[test]
fn displaced_epoch_moves_every_grid_point_by_the_displacement() {
    let mut track = linear_track(9);
    let delta = Vector3::new(0.7, -1.1, 0.4);
    track[4].translation += delta;
    let grid = ComparisonGrid::default();
    for r in track_residual(&track, 4, &grid).unwrap() {
        assert_relative_eq!(r, delta, epsilon = 1e-9);
    }
}

#[test]
fn one_degree_rotation_matches_chord_lengths() {
    let grid = ComparisonGrid::<f64>::default();
    let theta = 1f64.to_radians();
    let h = PoseVector::new(Vector3::new(0.0, 0.0, theta), Vector3::zeros()).to_transform();
    let s = RigidTransform::identity();
    // a point at distance ρ from the axis moves along a chord of 2ρ sin(θ/2)
    let chord_sq: f64 = grid
        .points
        .iter()
        .map(|g| (2.0 * (g.x * g.x + g.y * g.y).sqrt() * (theta / 2.0).sin()).powi(2))
        .sum();
    let expected = (chord_sq / grid.len() as f64).sqrt();
    assert_relative_eq!(grid_rmse(&h, &s, &grid), expected, max_relative = 1e-12);
}

#[test]
fn translation_rmse_is_the_translation_length() {
    let grid = ComparisonGrid::<f64>::default();
    let d = Vector3::new(3.0, -4.0, 12.0);
    let h = RigidTransform::from_translation(d);
    assert_relative_eq!(
        grid_rmse(&h, &RigidTransform::identity(), &grid),
        13.0,
        epsilon = 1e-12
    );
}

#[test]
fn short_tracks_are_rejected() {
    let track = linear_track(WINDOW - 1);
    assert!(interpolated_pose(&track, 1).is_err());
    assert!(linearize_smoothness(&track, 1, &ComparisonGrid::default()).is_err());
}

fn smoothness_fd_error(track: &[PoseVector<f64>], t: usize) -> f64 {
    let grid = ComparisonGrid::default();
    let lin = linearize_smoothness(track, t, &grid).unwrap();
    let mut worst: f64 = 0.0;
    for (slot, &e) in lin.epochs.iter().enumerate() {
        for c in 0..6 {
            let h = 1e-6;
            let shifted = |s: f64| {
                let mut tr = track.to_vec();
                let mut p = Vector6::from_row_slice(&tr[e].to_array());
                p[c] += s;
                tr[e] = PoseVector::from_slice(p.as_slice());
                linearize_smoothness(&tr, t, &grid).unwrap().residual
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let an = lin.jacobians[slot].column(c);
            let scale = an.amax().max(fd.amax()).max(1.0);
            worst = worst.max((an - fd).amax() / scale);
        }
    }
    worst
}

#[test]
fn smoothness_jacobian_across_the_half_turn_branch() {
    // yaw crosses π, so the stored canonical vectors flip sign mid-window
    let track: Vec<PoseVector<f64>> = (0..7)
        .map(|t| {
            let yaw = 3.0 + 0.06 * t as f64;
            PoseVector::new(
                Vector3::new(0.01, 0.0, yaw),
                Vector3::new(t as f64, 0.0, 8.0),
            )
            .canonical()
        })
        .collect();
    assert!(track[6].rodrigues.z < 0.0);
    for t in 0..7 {
        assert!(smoothness_fd_error(&track, t) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cubic_trajectories_are_reproduced(c in cubic(), at in -2.0..2.0f64) {
        let samples = [eval(&c, -2.0), eval(&c, -1.0), eval(&c, 1.0), eval(&c, 2.0)];
        let mid = spline_interpolate(&samples).unwrap();
        let truth = eval(&c, 0.0);
        for (a, b) in mid.to_array().iter().zip(truth.to_array()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let off = spline_interpolate_at(&samples, [-2.0, -1.0, 1.0, 2.0], at).unwrap();
        for (a, b) in off.to_array().iter().zip(eval(&c, at).to_array()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_rmse_matches_oracle_and_vanishes_only_at_equality(h in pose(), s in pose()) {
        let grid = ComparisonGrid::default();
        let (h, s) = (h.to_transform(), s.to_transform());
        let ours = grid_rmse(&h, &s, &grid);
        prop_assert!((ours - oracle_grid_rmse(&h, &s, &grid.points)).abs() < 1e-9);
        prop_assert_eq!(grid_rmse(&h, &h, &grid), 0.0);
        let differs = (h.rotation - s.rotation).amax() > 1e-6 || (h.translation - s.translation).amax() > 1e-6;
        if differs {
            prop_assert!(ours > 0.0);
        }
    }

    #[test]
    fn residual_rms_is_the_grid_rmse_to_the_interpolation(
        poses in proptest::collection::vec(pose(), WINDOW..9),
        pick in any::<proptest::sample::Index>(),
    ) {
        // nearby poses so that consecutive rotations share a branch
        let track: Vec<PoseVector<f64>> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| PoseVector::new(p.rodrigues * 0.05 + Vector3::new(0.0, 0.0, 0.02 * i as f64), p.translation))
            .collect();
        let t = pick.index(track.len());
        let grid = ComparisonGrid::default();
        let r = track_residual(&track, t, &grid).unwrap();
        let rms = (r.iter().map(|v| v.norm_squared()).sum::<f64>() / r.len() as f64).sqrt();
        let s = interpolated_pose(&track, t).unwrap().to_transform();
        prop_assert!((rms - grid_rmse(&track[t].to_transform(), &s, &grid)).abs() < 1e-9);
        prop_assert!(smoothness_fd_error(&track, t) < 1e-5);
    }
}
