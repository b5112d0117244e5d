mod common;

use nalgebra::{DMatrix, Matrix3xX};
use nrsfm_core::dcmdr::*;
use nrsfm_core::eval::{aligned_rmse_3d, AlignOptions};
use nrsfm_core::geom::{huber, orthographic_project, ROTATION_TOL};
use nrsfm_core::rigid::rigid_factorize;
use nrsfm_core::synth::{generate_scene, RotationSchedule, SceneConfig, ShapeSource};
use nrsfm_core::{CameraPose, MeasurementMatrix, NormMode, ShapeSequence};
use rand::Rng;

fn rigid_scene(points: usize, frames: usize, seed: u64) -> (MeasurementMatrix, ShapeSequence) {
    let mut r = common::rng(seed);
    let shape = Matrix3xX::from_fn(points, |_, _| r.random_range(-50.0..50.0));
    let scene = generate_scene(&SceneConfig {
        shapes: ShapeSource::Bases(vec![shape.clone(), shape]),
        frames,
        schedule: RotationSchedule::A,
        seed,
    })
    .unwrap();
    (scene.w_clean, scene.gt_shapes)
}

#[test]
fn consistent_instance_has_zero_energy() {
    // Every point at the same location keeps A spatially constant.
    let frames = 4;
    let points = 3;
    let column = [1.0, -2.0, 0.5];
    let shape = Matrix3xX::from_fn(points, |r, _| column[r]);
    let poses: Vec<CameraPose> =
        (0..frames).map(|f| CameraPose::from_axis_angle(&nalgebra::Vector3::y(), 0.2 * f as f64)).collect();
    let w = MeasurementMatrix::from_frames(&poses.iter().map(|p| orthographic_project(p, &shape)).collect::<Vec<_>>())
        .unwrap();
    let s = ShapeSequence::from_frames(&vec![shape; frames]).unwrap();
    let basis = make_dct_basis(frames, 2).unwrap();
    let a = basis.project(s.data());
    let adj = build_adjacency(&grid_layout(1, points), &Connectivity::FourNeighborhood).unwrap();
    let (total, terms) = dcmdr_energy(&w, &s, &poses, &a, &basis, &adj, &DcmdrWeights::default()).unwrap();
    assert!(total < 1e-20, "{total} {terms:?}");
}

#[test]
fn single_entry_probe_matches_fit_residual_change() {
    let inst = common::random_instance(11, 3, 5, 2);
    let weights = DcmdrWeights { alpha: 1.0, beta: 0.0, lambda_link: 0.0, rho: 0.0, ..Default::default() };
    let (base, _) = dcmdr_energy(&inst.w, &inst.s, &inst.poses, &inst.a, &inst.basis, &inst.adj, &weights).unwrap();
    let (f, c, p, delta) = (1, 2, 3, 0.37);
    let mut data = inst.s.data().clone();
    data[(3 * f + c, p)] += delta;
    let moved = ShapeSequence::new(data).unwrap();
    let (after, _) = dcmdr_energy(&inst.w, &moved, &inst.poses, &inst.a, &inst.basis, &inst.adj, &weights).unwrap();

    // Only the two residuals of (f, p) change, by -delta times the camera column.
    let cam = inst.poses[f].camera_rows();
    let x = inst.s.frame(f).column(p).into_owned();
    let mut oracle = 0.0;
    for r in 0..2 {
        let res = inst.w.data()[(2 * f + r, p)] - cam.row(r).dot(&x.transpose());
        oracle += huber(res - delta * cam[(r, c)], 0.1) - huber(res, 0.1);
    }
    assert!((after - base - oracle).abs() < 1e-12);
}

#[test]
fn energy_is_linear_in_weights() {
    let inst = common::random_instance(5, 3, 5, 2);
    let w = DcmdrWeights::default();
    let (one, _) = dcmdr_energy(&inst.w, &inst.s, &inst.poses, &inst.a, &inst.basis, &inst.adj, &w).unwrap();
    let (two, _) = dcmdr_energy(&inst.w, &inst.s, &inst.poses, &inst.a, &inst.basis, &inst.adj, &w.scaled(2.0)).unwrap();
    assert!((two - 2.0 * one).abs() < 1e-12 * one);
}

#[test]
fn energy_rejects_mismatched_dimensions() {
    let inst = common::random_instance(5, 3, 5, 2);
    let other = make_dct_basis(4, 2).unwrap();
    let r = dcmdr_energy(&inst.w, &inst.s, &inst.poses, &inst.a, &other, &inst.adj, &DcmdrWeights::default());
    assert!(matches!(r, Err(nrsfm_core::Error::InvalidInput(_))));
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..10 {
        for mode in [NormMode::Huber, NormMode::Frobenius] {
            let inst = common::random_instance(seed, 3, 5, 2);
            let err = common::max_gradient_error(&inst, mode);
            assert!(err < 1e-4, "seed {seed} {mode:?}: {err}");
        }
    }
}

#[test]
fn zero_iterations_return_rigid_initialization() {
    let (w, _) = rigid_scene(12, 8, 3);
    let cfg = DcmdrConfig { max_iterations: 0, ..Default::default() };
    let res = dcmdr_reconstruct(&w, &cfg, &AdjacencyTable::empty(12)).unwrap();
    let init = rigid_factorize(&w).unwrap();
    assert_eq!(res.poses, init.poses);
    for f in 0..8 {
        assert_eq!(res.shapes.frame(f), init.rest_shape);
    }
    assert_eq!(res.trace.len(), 1);
}

#[test]
fn rigid_scene_is_recovered() {
    let (w, gt) = rigid_scene(40, 20, 9);
    let res = dcmdr_reconstruct(&w, &DcmdrConfig::default(), &AdjacencyTable::empty(40)).unwrap();
    let e = aligned_rmse_3d(&gt, &res.shapes, AlignOptions::default()).unwrap();
    assert!(e < 1e-3, "e_3D = {e}");
}

#[test]
fn trace_is_monotone_and_poses_stay_rotations() {
    let scene = generate_scene(&SceneConfig {
        shapes: ShapeSource::Sheet { rows: 6, cols: 6 },
        frames: 12,
        schedule: RotationSchedule::B,
        seed: 4,
    })
    .unwrap();
    let cfg = DcmdrConfig { rank: Some(4), max_iterations: 15, ..Default::default() };
    let res = dcmdr_reconstruct(&scene.w_clean, &cfg, &common::grid_adjacency(6, 6)).unwrap();
    assert!(res.trace.windows(2).all(|t| t[1] <= t[0]));
    for p in &res.poses {
        assert!(CameraPose::new(*p.matrix()).is_ok());
        assert!((p.matrix().determinant() - 1.0).abs() <= ROTATION_TOL);
    }
}

#[test]
fn stiff_linking_keeps_shapes_in_the_basis() {
    let scene = generate_scene(&SceneConfig {
        shapes: ShapeSource::Sheet { rows: 5, cols: 5 },
        frames: 10,
        schedule: RotationSchedule::A,
        seed: 2,
    })
    .unwrap();
    let mut cfg = DcmdrConfig { rank: Some(2), max_iterations: 10, ..Default::default() };
    cfg.weights.lambda_link = 1e6;
    let res = dcmdr_reconstruct(&scene.w_clean, &cfg, &common::grid_adjacency(5, 5)).unwrap();
    let linked = res.basis.expand(&res.coefficients);
    let rel = (res.shapes.data() - &linked).norm() / linked.norm();
    assert!(rel < 1e-3, "{rel}");
}

#[test]
fn single_point_has_no_regularizer() {
    let inst = common::random_instance(3, 3, 1, 2);
    let w = DcmdrWeights { rho: 0.0, ..Default::default() };
    let (_, terms) = dcmdr_energy(&inst.w, &inst.s, &inst.poses, &inst.a, &inst.basis, &inst.adj, &w).unwrap();
    assert_eq!(terms.reg, 0.0);
    let expected = terms.total(&w);
    let (total, _) = dcmdr_energy(&inst.w, &inst.s, &inst.poses, &inst.a, &inst.basis, &inst.adj, &w).unwrap();
    assert_eq!(total, expected);
}

#[test]
fn rigid_init_failure_propagates() {
    let w = MeasurementMatrix::new(DMatrix::from_fn(4, 6, |r, c| (r + c) as f64)).unwrap();
    assert!(dcmdr_reconstruct(&w, &DcmdrConfig::default(), &AdjacencyTable::empty(6)).is_err());
}
