//! Helpers shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix3, Vector3};
use nrsfm_core::dcmdr::{
    build_adjacency, dcmdr_energy, dcmdr_gradients, grid_layout, make_dct_basis, AdjacencyTable, Connectivity,
    DcmdrWeights, TrajectoryBasis, TrajectoryCoefficients,
};
use nrsfm_core::{CameraPose, MeasurementMatrix, NormMode, RobustNormConfig, ShapeSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pose(rng: &mut impl Rng) -> CameraPose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    CameraPose::from_axis_angle(&axis, rng.random_range(0.0..3.1))
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// A small random D-CMDR instance: tracks, shapes, poses, coefficients,
/// basis and a path-plus-chord adjacency.
pub struct Instance {
    pub w: MeasurementMatrix,
    pub s: ShapeSequence,
    pub poses: Vec<CameraPose>,
    pub a: TrajectoryCoefficients,
    pub basis: TrajectoryBasis,
    pub adj: AdjacencyTable,
}

pub fn random_instance(seed: u64, frames: usize, points: usize, rank: usize) -> Instance {
    let mut r = rng(seed);
    let mut edges: Vec<(usize, usize)> = (1..points).map(|n| (n - 1, n)).collect();
    if points > 2 {
        edges.push((0, points - 1));
    }
    let layout: Vec<(i64, i64)> = (0..points as i64).map(|n| (0, n)).collect();
    Instance {
        w: MeasurementMatrix::new(random_matrix(&mut r, 2 * frames, points, 1.0)).unwrap(),
        s: ShapeSequence::new(random_matrix(&mut r, 3 * frames, points, 1.0)).unwrap(),
        poses: (0..frames).map(|_| random_pose(&mut r)).collect(),
        a: TrajectoryCoefficients::new(random_matrix(&mut r, 3 * rank, points, 1.0)).unwrap(),
        basis: make_dct_basis(frames, rank).unwrap(),
        adj: build_adjacency(&layout, &Connectivity::Edges(edges)).unwrap(),
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Largest relative deviation between every analytic term derivative and a
/// central finite difference of the corresponding energy term.
pub fn max_gradient_error(inst: &Instance, mode: NormMode) -> f64 {
    let norm = RobustNormConfig { epsilon: 0.1, mode };
    let g = dcmdr_gradients(&inst.w, &inst.s, &inst.poses, &inst.a, &inst.basis, &inst.adj, &norm).unwrap();
    let h = 1e-5;
    let term = |s: &ShapeSequence, poses: &[CameraPose], a: &TrajectoryCoefficients, which: usize| {
        let w = DcmdrWeights { mode, ..Default::default() };
        let (_, t) = dcmdr_energy(&inst.w, s, poses, a, &inst.basis, &inst.adj, &w).unwrap();
        [t.fit, t.temp, t.linking, t.reg][which]
    };
    let mut worst: f64 = 0.0;

    let shape_grads = [(0, &g.fit_shapes), (1, &g.temp_shapes), (2, &g.linking_shapes)];
    for i in 0..inst.s.data().len() {
        let mut plus = inst.s.data().clone();
        let mut minus = inst.s.data().clone();
        plus[i] += h;
        minus[i] -= h;
        let (plus, minus) = (ShapeSequence::new(plus).unwrap(), ShapeSequence::new(minus).unwrap());
        for (which, grad) in shape_grads {
            let fd = (term(&plus, &inst.poses, &inst.a, which) - term(&minus, &inst.poses, &inst.a, which)) / (2.0 * h);
            worst = worst.max(rel_err(grad[i], fd));
        }
    }
    let coeff_grads = [(2, &g.linking_coefficients), (3, &g.reg_coefficients)];
    for i in 0..inst.a.data().len() {
        let mut plus = inst.a.data().clone();
        let mut minus = inst.a.data().clone();
        plus[i] += h;
        minus[i] -= h;
        let plus = TrajectoryCoefficients::new(plus).unwrap();
        let minus = TrajectoryCoefficients::new(minus).unwrap();
        for (which, grad) in coeff_grads {
            let fd = (term(&inst.s, &inst.poses, &plus, which) - term(&inst.s, &inst.poses, &minus, which)) / (2.0 * h);
            worst = worst.max(rel_err(grad[i], fd));
        }
    }
    for f in 0..inst.poses.len() {
        for axis in 0..3 {
            let mut d = Vector3::zeros();
            d[axis] = h;
            let turn = |sign: f64| {
                let mut poses = inst.poses.clone();
                let delta = CameraPose::from_axis_angle(&d, sign * h);
                poses[f] = CameraPose::new(delta.matrix() * poses[f].matrix())
                    .unwrap_or_else(|_| delta.compose(&poses[f]));
                poses
            };
            let fd = (term(&inst.s, &turn(1.0), &inst.a, 0) - term(&inst.s, &turn(-1.0), &inst.a, 0)) / (2.0 * h);
            worst = worst.max(rel_err(g.fit_poses[f][axis], fd));
        }
    }
    worst
}

pub fn grid_adjacency(rows: usize, cols: usize) -> AdjacencyTable {
    build_adjacency(&grid_layout(rows, cols), &Connectivity::FourNeighborhood).unwrap()
}

pub fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.amax()
}

/// Rotation by `angle` about the unit `axis`, built with Rodrigues' formula.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Lowest-energy state by scanning every index; ties go to the lower index.
pub fn exhaustive_select(
    w_f: &nalgebra::Matrix2xX<f64>,
    pose: &CameraPose,
    dsp: &nrsfm_core::dsp::DynamicShapePrior,
    s_prev: &nalgebra::Matrix3xX<f64>,
    weights: &nrsfm_core::dspr::DsprWeights,
) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for i in 0..dsp.len() {
        let e = nrsfm_core::dspr::dspr_energy(w_f, dsp.state(i), pose, s_prev, weights).unwrap();
        if e < best.1 {
            best = (i, e);
        }
    }
    best
}

/// Random prior with `q` states of `points` points each.
pub fn random_dsp(rng: &mut impl Rng, q: usize, points: usize) -> nrsfm_core::dsp::DynamicShapePrior {
    let states: Vec<nalgebra::Matrix3xX<f64>> =
        (0..q).map(|_| nalgebra::Matrix3xX::from_fn(points, |_, _| rng.random_range(-1.0..1.0))).collect();
    nrsfm_core::dsp::build_dsp(&states, 0.0).unwrap()
}

/// Prior of progressively scaled copies of one random shape, with a frame
/// observed at a random intermediate scale and a random pose. The data term
/// is convex in the scale, so the energy along the index is unimodal.
pub fn unimodal_instance(
    rng: &mut impl Rng,
    q: usize,
    points: usize,
) -> (nalgebra::Matrix2xX<f64>, CameraPose, nrsfm_core::dsp::DynamicShapePrior) {
    let base = nalgebra::Matrix3xX::from_fn(points, |_, _| rng.random_range(-1.0..1.0));
    let states: Vec<_> = (0..q).map(|i| &base * (1.0 + i as f64 / q as f64)).collect();
    let dsp = nrsfm_core::dsp::build_dsp(&states, 0.0).unwrap();
    let pose = random_pose(rng);
    let scale = rng.random_range(0.9..2.1);
    let w_f = pose.camera_rows() * (&base * scale);
    (w_f, pose, dsp)
}
