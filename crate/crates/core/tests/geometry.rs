mod common;

use approx::assert_relative_eq;
use mousetrack::geometry::{
    calibration_matrix, decompose_projection, fit_rigid, matrix_to_rodrigues, resect,
    rodrigues_to_matrix, triangulate, CameraModel, GeometryError, PoseVector, ProjectionMatrix,
    RigidTransform,
};
use mousetrack::model::RigidMouseModel;
use mousetrack::simulator::default_cameras;
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::{oracle_project, oracle_rotation, oracle_triangulate, random_camera, random_point};

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-100.0..100.0, -100.0..100.0, -100.0..100.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Rodrigues vectors strictly inside the canonical ball.
fn rodrigues() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..3.1f64).prop_filter_map(
        "non-zero axis",
        |(x, y, z, a)| {
            let v = Vector3::new(x, y, z);
            (v.norm() > 1e-3).then(|| v.normalize() * a)
        },
    )
}

fn transform() -> impl Strategy<Value = RigidTransform<f64>> {
    (rodrigues(), vec3()).prop_map(|(r, t)| PoseVector::new(r, t).to_transform())
}

#[test]
fn nose_tip_projection_matches_ray_through_pixel() {
    let model = RigidMouseModel::<f64>::table();
    let nose = model.parts[0].position;
    for cam in default_cameras() {
        let px = cam.project(&nose).unwrap();
        assert_relative_eq!(px, oracle_project(&cam, &nose), epsilon = 1e-9);
        // the viewing ray of the pixel passes through the point
        let expected = (nose - cam.center()).normalize();
        assert_relative_eq!(cam.ray_direction(&px), expected, epsilon = 1e-12);
    }
}

#[test]
fn point_behind_camera_is_rejected() {
    let cam = &default_cameras()[0];
    let behind = cam.center() + (cam.center() - Vector3::zeros());
    assert!(matches!(
        cam.project(&behind),
        Err(GeometryError::NonPositiveDepth { .. })
    ));
}

#[test]
fn decomposition_of_known_camera() {
    let k = calibration_matrix(1200.0, 1200.0, 0.0, 0.0);
    let rot = rodrigues_to_matrix(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
    let t = Vector3::new(10.0, 20.0, 30.0);
    let cam = CameraModel::new(0, k, RigidTransform::new(rot, t));
    for scale in [1.0, -5.0] {
        let p = cam.projection_matrix().scaled(scale);
        let back = decompose_projection(&p).unwrap();
        assert_relative_eq!(back.calibration, k, epsilon = 1e-9);
        assert_relative_eq!(back.pose_global.rotation, rot, epsilon = 1e-12);
        assert_relative_eq!(back.pose_global.translation, t, epsilon = 1e-9);
    }
}

#[test]
fn resection_from_eight_exact_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cam = random_camera(&mut rng, 0);
    let corr: Vec<_> = (0..8)
        .map(|_| {
            let x = random_point(&mut rng, 60.0);
            (x, cam.project(&x).unwrap())
        })
        .collect();
    let free = resect(&corr, None).unwrap();
    assert!(free.reprojection_rmse < 1e-6);
    assert_relative_eq!(
        free.camera.calibration,
        cam.calibration,
        max_relative = 1e-6
    );
    assert_relative_eq!(free.camera.center(), cam.center(), epsilon = 1e-4);
    let known = resect(&corr, Some(&cam.calibration)).unwrap();
    assert_relative_eq!(
        known.camera.pose_global.rotation,
        cam.pose_global.rotation,
        epsilon = 1e-9
    );
    assert_relative_eq!(known.camera.center(), cam.center(), epsilon = 1e-6);
}

#[test]
fn resection_needs_enough_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cam = random_camera(&mut rng, 0);
    let corr: Vec<_> = (0..5)
        .map(|_| {
            let x = random_point(&mut rng, 60.0);
            (x, cam.project(&x).unwrap())
        })
        .collect();
    assert_eq!(
        resect(&corr, None).unwrap_err(),
        GeometryError::InsufficientPoints { needed: 6, got: 5 }
    );
    assert!(resect(&corr[..4], Some(&cam.calibration)).is_ok());
    assert_eq!(
        resect(&corr[..3], Some(&cam.calibration)).unwrap_err(),
        GeometryError::InsufficientPoints { needed: 4, got: 3 }
    );
}

#[test]
fn resection_under_half_pixel_noise() {
    // 95th percentile of the reprojection RMSE over 100 draws stays below 1 px
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rmse: Vec<f64> = (0..100)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = random_camera(&mut rng, 0);
            let corr: Vec<_> = (0..20)
                .map(|_| {
                    let x = random_point(&mut rng, 60.0);
                    let px = cam.project(&x).unwrap();
                    (
                        x,
                        px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)),
                    )
                })
                .collect();
            resect(&corr, None).unwrap().reprojection_rmse
        })
        .collect();
    rmse.sort_by(f64::total_cmp);
    assert!(rmse[94] <= 1.0, "p95 {}", rmse[94]);
}

#[test]
fn coplanar_points_need_known_calibration() {
    let cam = &default_cameras()[1];
    let corr: Vec<_> = (0..8)
        .map(|i| {
            let x = Vector3::new((i % 4) as f64 * 20.0, (i / 4) as f64 * 30.0, 0.0);
            (x, cam.project(&x).unwrap())
        })
        .collect();
    assert!(matches!(
        resect(&corr, None),
        Err(GeometryError::DegenerateConfiguration(_))
    ));
    let known = resect(&corr, Some(&cam.calibration)).unwrap();
    assert_relative_eq!(known.camera.center(), cam.center(), epsilon = 1e-6);
}

#[test]
fn perpendicular_cameras_triangulate_exactly() {
    let k = calibration_matrix(1000.0, 1000.0, 500.0, 500.0);
    let a = CameraModel::look_at(
        0,
        k,
        Vector3::new(0.0, 0.0, 500.0),
        Vector3::zeros(),
        Vector3::y(),
    );
    let b = CameraModel::look_at(
        1,
        k,
        Vector3::new(500.0, 0.0, 0.0),
        Vector3::zeros(),
        Vector3::z(),
    );
    let x = Vector3::new(12.0, -7.0, 3.0);
    let obs = [(&a, a.project(&x).unwrap()), (&b, b.project(&x).unwrap())];
    let tr = triangulate(&obs).unwrap();
    assert_relative_eq!(tr.point, x, epsilon = 1e-9);
    assert!(tr.residuals.iter().all(|r| *r < 1e-9));
}

#[test]
fn triangulation_rejects_single_view_and_parallel_rays() {
    let cams = default_cameras();
    let x = Vector3::new(1.0, 2.0, 3.0);
    let one = [(&cams[0], cams[0].project(&x).unwrap())];
    assert!(matches!(
        triangulate(&one),
        Err(GeometryError::InsufficientPoints { .. })
    ));
    let twin = cams[0].clone();
    let two = [(&cams[0], one[0].1), (&twin, one[0].1)];
    assert_eq!(triangulate(&two).unwrap_err(), GeometryError::ParallelRays);
}

#[test]
fn noisy_triangulation_agrees_with_linear_method() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let cams = default_cameras();
    for _ in 0..50 {
        let x = random_point(&mut rng, 50.0);
        let obs: Vec<_> = cams
            .iter()
            .map(|c| {
                (
                    c,
                    c.project(&x).unwrap()
                        + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)),
                )
            })
            .collect();
        let ours = triangulate(&obs).unwrap().point;
        let linear = oracle_triangulate(&obs);
        assert!((ours - x).norm() < 2.0);
        assert!((ours - linear).norm() < 0.5, "{} vs {}", ours, linear);
    }
}

#[test]
fn rodrigues_round_trip_over_thousand_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let r = random_point(&mut rng, 1.0).normalize()
            * rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::PI);
        let m = rodrigues_to_matrix(&r);
        assert_relative_eq!(m, oracle_rotation(&r), epsilon = 1e-12);
        assert_relative_eq!(matrix_to_rodrigues(&m), r, epsilon = 1e-9);
    }
}

#[test]
fn kabsch_recovers_model_motion() {
    let parts = RigidMouseModel::<f64>::table().rigid_part_positions();
    let h = PoseVector::new(Vector3::new(0.1, -0.2, 2.0), Vector3::new(30.0, -12.0, 5.0))
        .to_transform();
    let moved: Vec<_> = parts.iter().map(|p| h.apply(p)).collect();
    let fit = fit_rigid(&parts, &moved).unwrap();
    assert_relative_eq!(fit.rotation, h.rotation, epsilon = 1e-12);
    assert_relative_eq!(fit.translation, h.translation, epsilon = 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rotation_matches_quaternion_oracle(r in rodrigues()) {
        let m = rodrigues_to_matrix(&r);
        prop_assert!((m - oracle_rotation(&r)).amax() < 1e-12);
        prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        prop_assert!((matrix_to_rodrigues(&m) - r).amax() < 1e-9);
    }

    #[test]
    fn compose_is_associative_and_inverts(a in transform(), b in transform(), c in transform(), x in vec3()) {
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!((left.apply(&x) - right.apply(&x)).amax() < 1e-9);
        prop_assert!((a.compose(&b).apply(&x) - a.apply(&b.apply(&x))).amax() < 1e-9);
        let id = a.compose(&a.inverse());
        prop_assert!((id.apply(&x) - x).amax() < 1e-9);
        let m = a.to_homogeneous() * b.to_homogeneous();
        prop_assert!((RigidTransform::from_homogeneous(&m).apply(&x) - a.compose(&b).apply(&x)).amax() < 1e-9);
    }

    #[test]
    fn projection_matches_oracle_and_matrix(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = random_camera(&mut rng, 0);
        let x = random_point(&mut rng, 80.0);
        let px = cam.project(&x).unwrap();
        prop_assert!((px - oracle_project(&cam, &x)).amax() < 1e-9);
        prop_assert!((cam.projection_matrix().project(&x).unwrap() - px).amax() < 1e-9);
    }

    #[test]
    fn projection_is_invariant_to_matrix_scale(seed in any::<u64>(), s in prop_oneof![-50.0..-0.01, 0.01..50.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = random_camera(&mut rng, 0);
        let x = random_point(&mut rng, 80.0);
        let p = cam.projection_matrix();
        let a = p.project(&x).unwrap();
        let b = p.scaled(s).project(&x).unwrap();
        prop_assert!((a - b).amax() < 1e-9);
        let k = decompose_projection(&p.scaled(s)).unwrap();
        prop_assert!((k.calibration - cam.calibration).amax() / cam.calibration.amax() < 1e-9);
    }

    #[test]
    fn decomposition_reassembles(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = random_camera(&mut rng, 0);
        let p = cam.projection_matrix();
        let back = decompose_projection(&p).unwrap();
        let q = back.projection_matrix();
        prop_assert!((q.0 - p.0).amax() / p.0.amax() < 1e-9);
        prop_assert!((back.pose_global.rotation - cam.pose_global.rotation).amax() < 1e-9);
    }

    #[test]
    fn singular_projection_is_rejected(row in 0usize..3) {
        let mut p = default_cameras()[0].projection_matrix().0;
        for c in 0..3 {
            p[(row, c)] = 0.0;
        }
        prop_assert_eq!(decompose_projection(&ProjectionMatrix(p)).unwrap_err(), GeometryError::SingularCamera);
    }

    #[test]
    fn project_then_triangulate(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cams = [random_camera(&mut rng, 0), random_camera(&mut rng, 1)];
        let x = random_point(&mut rng, 80.0);
        let obs: Vec<_> = cams.iter().map(|c| (c, c.project(&x).unwrap())).collect();
        match triangulate(&obs) {
            Ok(tr) => prop_assert!((tr.point - x).norm() < 1e-6),
            Err(e) => prop_assert_eq!(e, GeometryError::ParallelRays),
        }
    }
}
