//! Sequential reconstruction against a dynamic shape prior.
//!
//! Every incoming frame is explained by one prior state `D_i` seen under a
//! rotation `R_f`. The per-frame energy
//!
//! ```text
//! E(i, R) = alpha ||W_f - I_{2x3} R D_i||_F + beta ||D_i - S_{f-1}||_F + gamma (||l||_0 - 1)^2
//! ```
//!
//! is minimized by alternating a discrete multi-start descent over the
//! norm-ordered state index (rotation fixed) with a closed-form rotation
//! update (state fixed). The indicator `l` is one-hot by construction, so
//! its penalty is identically zero.

use std::time::{Duration, Instant};

use nalgebra::{Matrix2x3, Matrix2xX, Matrix3, Matrix3xX, RowVector3, Vector3};

use crate::dsp::DynamicShapePrior;
use crate::error::{Error, Result};
use crate::geom::{decode_axis_angle, project_to_so3, CameraPose, MeasurementMatrix, RobustNormConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsprWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl DsprWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(self.alpha > 0.0) || !ok(self.alpha) || !ok(self.beta) || !ok(self.gamma) {
            return Err(Error::invalid(format!(
                "weights must be finite and nonnegative with alpha > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for DsprWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.01, gamma: 1.0 }
    }
}

/// One-hot realization of the prior indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DspIndicator {
    index: usize,
}

impl DspIndicator {
    pub fn new(index: usize, cardinality: usize) -> Result<Self> {
        if index >= cardinality {
            return Err(Error::invalid(format!("state {index} out of range for {cardinality} states")));
        }
        Ok(Self { index })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// `||l||_0`; always one.
    pub fn active_count(&self) -> usize {
        1
    }

    /// `gamma (||l||_0 - 1)^2`, zero for every one-hot indicator.
    pub fn penalty(&self, gamma: f64) -> f64 {
        let excess = self.active_count() as f64 - 1.0;
        gamma * excess * excess
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub index: usize,
    pub pose: CameraPose,
    /// `pose * D_index`.
    pub shape: Matrix3xX<f64>,
    pub energy: f64,
    pub iterations: usize,
    /// Local minimum `(index, energy)` reached from each seed of the last selection.
    pub seed_trace: Vec<(usize, f64)>,
    /// Set when the measurements carry too little signal to fit; the
    /// previous state and pose are held.
    pub low_confidence: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsprConfig {
    pub weights: DsprWeights,
    pub seeds: usize,
    pub max_alternations: usize,
    pub rel_tol: f64,
}

impl Default for DsprConfig {
    fn default() -> Self {
        Self { weights: DsprWeights::default(), seeds: 20, max_alternations: 50, rel_tol: 1e-8 }
    }
}

impl DsprConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.seeds == 0 {
            return Err(Error::invalid("at least one seed is required"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("rel_tol must be nonnegative"));
        }
        Ok(())
    }
}

/// Energy of a single frame under the one-hot prior model.
pub fn dspr_energy(
    w_f: &Matrix2xX<f64>,
    state: &Matrix3xX<f64>,
    pose: &CameraPose,
    s_prev: &Matrix3xX<f64>,
    weights: &DsprWeights,
) -> Result<f64> {
    let n = w_f.ncols();
    if state.ncols() != n || s_prev.ncols() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} measurements, {} state points, {} previous points",
            n,
            state.ncols(),
            s_prev.ncols()
        )));
    }
    weights.validate()?;
    let fe = FrameEnergy::new(w_f, s_prev, *weights);
    Ok(fe.total(state, &pose.camera_rows()))
}

struct FrameEnergy<'a> {
    w: &'a Matrix2xX<f64>,
    s_prev: &'a Matrix3xX<f64>,
    weights: DsprWeights,
}

impl<'a> FrameEnergy<'a> {
    fn new(w: &'a Matrix2xX<f64>, s_prev: &'a Matrix3xX<f64>, weights: DsprWeights) -> Self {
        Self { w, s_prev, weights }
    }

    fn data_sq(&self, state: &Matrix3xX<f64>, cam: &Matrix2x3<f64>) -> f64 {
        reprojection_sq(self.w, state, cam)
    }

    fn prev_norm(&self, state: &Matrix3xX<f64>) -> f64 {
        if self.weights.beta == 0.0 {
            return 0.0;
        }
        state
            .as_slice()
            .iter()
            .zip(self.s_prev.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn combine(&self, data_sq: f64, prev_norm: f64) -> f64 {
        // The one-hot indicator penalty is identically zero.
        self.weights.alpha * data_sq.sqrt() + self.weights.beta * prev_norm
    }

    fn total(&self, state: &Matrix3xX<f64>, cam: &Matrix2x3<f64>) -> f64 {
        self.combine(self.data_sq(state, cam), self.prev_norm(state))
    }
}

/// `||W - C S||_F^2` for a 2x3 camera `C`.
fn reprojection_sq(w: &Matrix2xX<f64>, state: &Matrix3xX<f64>, cam: &Matrix2x3<f64>) -> f64 {
    let (c00, c01, c02) = (cam[(0, 0)], cam[(0, 1)], cam[(0, 2)]);
    let (c10, c11, c12) = (cam[(1, 0)], cam[(1, 1)], cam[(1, 2)]);
    let mut acc = 0.0;
    for (wc, sc) in w.as_slice().chunks_exact(2).zip(state.as_slice().chunks_exact(3)) {
        let du = wc[0] - (c00 * sc[0] + c01 * sc[1] + c02 * sc[2]);
        let dv = wc[1] - (c10 * sc[0] + c11 * sc[1] + c12 * sc[2]);
        acc += du * du + dv * dv;
    }
    acc
}

fn check_pose_inputs(w_f: &Matrix2xX<f64>, state: &Matrix3xX<f64>) -> Result<()> {
    if w_f.ncols() != state.ncols() {
        return Err(Error::invalid(format!(
            "{} measurements for {} state points",
            w_f.ncols(),
            state.ncols()
        )));
    }
    Ok(())
}

fn rotation_from_rows(r1: RowVector3<f64>, r2: RowVector3<f64>) -> Result<CameraPose> {
    let r3 = r1.cross(&r2);
    let n3 = r3.norm();
    if n3 <= 1e-12 {
        return Err(Error::DegenerateGeometry("affine camera rows are parallel".into()));
    }
    project_to_so3(&Matrix3::from_rows(&[r1, r2, r3 / n3]))
}

/// Closed-form rotation candidates for one frame.
///
/// Non-planar states: the affine camera minimizing `||W - M S||_F` is
/// completed with the normalized cross product of its rows and projected to
/// SO(3). Planar states only fix the in-plane part of the camera rows; the
/// out-of-plane components follow from unit length and orthogonality up to
/// a joint sign, so both completions are returned.
pub(crate) fn pose_candidates(w_f: &Matrix2xX<f64>, state: &Matrix3xX<f64>) -> Result<Vec<CameraPose>> {
    check_pose_inputs(w_f, state)?;
    let sst = state * state.transpose();
    let eig = sst.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]];
    let l2 = eig.eigenvalues[order[1]];
    let l3 = eig.eigenvalues[order[2]];
    if !(l1 > 0.0) || l2 <= 1e-12 * l1 {
        return Err(Error::DegenerateGeometry("state points are collinear".into()));
    }
    let wst = w_f * state.transpose();
    if l3 > 1e-8 * l1 {
        let inv = sst
            .try_inverse()
            .ok_or_else(|| Error::DegenerateGeometry("state scatter matrix is singular".into()))?;
        let m = wst * inv;
        return Ok(vec![rotation_from_rows(m.row(0).into_owned(), m.row(1).into_owned())?]);
    }

    // Planar state: work in the basis [e1 e2 n] of the state's plane.
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into_owned();
    let normal = e1.cross(&e2);
    let basis = Matrix3::from_columns(&[e1, e2, normal]);
    // In-plane camera block B = W X^T (X X^T)^-1 with X the in-plane coordinates.
    let m_plane = wst * basis.fixed_columns::<2>(0);
    let b1 = [m_plane[(0, 0)] / l1, m_plane[(0, 1)] / l2];
    let b2 = [m_plane[(1, 0)] / l1, m_plane[(1, 1)] / l2];
    let c1 = (1.0 - b1[0] * b1[0] - b1[1] * b1[1]).max(0.0).sqrt();
    let mut c2 = (1.0 - b2[0] * b2[0] - b2[1] * b2[1]).max(0.0).sqrt();
    // Row orthogonality: b1 . b2 + c1 c2 = 0.
    if b1[0] * b2[0] + b1[1] * b2[1] > 0.0 {
        c2 = -c2;
    }
    let mut out = Vec::with_capacity(2);
    for sign in [1.0, -1.0] {
        let r1 = RowVector3::new(b1[0], b1[1], sign * c1);
        let r2 = RowVector3::new(b2[0], b2[1], sign * c2);
        if let Ok(local) = rotation_from_rows(r1, r2) {
            if let Ok(p) = project_to_so3(&(local.matrix() * basis.transpose())) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::DegenerateGeometry("planar pose completion failed".into()));
    }
    Ok(out)
}

/// Closed-form camera rotation for a fixed state.
pub fn update_pose(w_f: &Matrix2xX<f64>, state: &Matrix3xX<f64>) -> Result<CameraPose> {
    let candidates = pose_candidates(w_f, state)?;
    // For planar states both completions reproject identically; take the first.
    Ok(candidates[0])
}

/// Gauss-Newton refinement of a rotation on the data term `sum rho(W - I R S)`,
/// with IRLS weights for robust norms. Steps that do not lower the cost are
/// rejected, so the returned pose is never worse than `init`.
pub fn refine_pose(
    w_f: &Matrix2xX<f64>,
    state: &Matrix3xX<f64>,
    init: &CameraPose,
    norm: &RobustNormConfig,
    max_iterations: usize,
) -> CameraPose {
    let cost = |pose: &CameraPose| -> f64 {
        let cam = pose.camera_rows();
        let mut acc = 0.0;
        for (wc, sc) in w_f.as_slice().chunks_exact(2).zip(state.as_slice().chunks_exact(3)) {
            for r in 0..2 {
                let pred = cam[(r, 0)] * sc[0] + cam[(r, 1)] * sc[1] + cam[(r, 2)] * sc[2];
                acc += norm.rho(wc[r] - pred);
            }
        }
        acc
    };
    let mut pose = *init;
    let mut current = cost(&pose);
    let mut damping = 1e-6;
    for _ in 0..max_iterations {
        let rot = *pose.matrix();
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for (wc, sc) in w_f.as_slice().chunks_exact(2).zip(state.as_slice().chunks_exact(3)) {
            let y = rot * Vector3::new(sc[0], sc[1], sc[2]);
            // r(d) = W - P exp([d]x) R s ~= r0 + P [y]x d
            let ju = Vector3::new(0.0, -y.z, y.y);
            let jv = Vector3::new(y.z, 0.0, -y.x);
            let ru = wc[0] - y.x;
            let rv = wc[1] - y.y;
            let wu = norm.weight(ru);
            let wv = norm.weight(rv);
            h += ju * ju.transpose() * wu + jv * jv.transpose() * wv;
            g += ju * (wu * ru) + jv * (wv * rv);
        }
        let scale = h.trace().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        for _ in 0..8 {
            let lhs = h + Matrix3::identity() * (damping * scale);
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-g))) else {
                damping *= 10.0;
                continue;
            };
            let candidate = match project_to_so3(&(decode_axis_angle(&step).matrix() * rot)) {
                Ok(p) => p,
                Err(_) => break,
            };
            let c = cost(&candidate);
            if c < current {
                let gain = current - c;
                pose = candidate;
                current = c;
                damping = (damping * 0.5).max(1e-12);
                accepted = true;
                if gain <= 1e-15 * current.max(f64::MIN_POSITIVE) || step.norm() < 1e-14 {
                    return pose;
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    pose
}

/// Best rotation for a fixed state, never worse than `current`.
fn improve_pose(fe: &FrameEnergy<'_>, state: &Matrix3xX<f64>, current: &CameraPose) -> CameraPose {
    let ls = RobustNormConfig::least_squares();
    let mut best = *current;
    let mut best_cost = fe.data_sq(state, &current.camera_rows());
    let mut starts = pose_candidates(fe.w, state).unwrap_or_default();
    starts.push(*current);
    for start in starts {
        let refined = refine_pose(fe.w, state, &start, &ls, 20);
        let c = fe.data_sq(state, &refined.camera_rows());
        if c < best_cost {
            best_cost = c;
            best = refined;
        }
    }
    best
}

/// Outcome of [`msgd_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub energy: f64,
    pub seed_trace: Vec<(usize, f64)>,
}

/// Evenly spaced seed indices `round(j (Q-1) / (seeds-1))`.
pub fn seed_positions(cardinality: usize, seeds: usize) -> Vec<usize> {
    let seeds = seeds.clamp(1, cardinality.max(1));
    if seeds == 1 {
        return vec![0];
    }
    (0..seeds)
        .map(|j| ((j as f64) * (cardinality - 1) as f64 / (seeds - 1) as f64).round() as usize)
        .collect()
}

struct IndexSearch<'a, 'b> {
    fe: &'b FrameEnergy<'a>,
    dsp: &'b DynamicShapePrior,
    cam: Matrix2x3<f64>,
    cache: Vec<Option<f64>>,
    prev_cache: &'b mut Vec<Option<f64>>,
}

impl IndexSearch<'_, '_> {
    fn energy(&mut self, i: usize) -> f64 {
        if let Some(e) = self.cache[i] {
            return e;
        }
        let state = self.dsp.state(i);
        let prev = match self.prev_cache[i] {
            Some(p) => p,
            None => {
                let p = self.fe.prev_norm(state);
                self.prev_cache[i] = Some(p);
                p
            }
        };
        let e = self.fe.combine(self.fe.data_sq(state, &self.cam), prev);
        self.cache[i] = Some(e);
        e
    }

    /// Discrete descent: step to the lower neighbor while the energy strictly drops.
    fn descend(&mut self, start: usize) -> (usize, f64) {
        let q = self.dsp.len();
        let mut i = start;
        let mut e = self.energy(i);
        loop {
            let mut next = None;
            if i > 0 {
                let el = self.energy(i - 1);
                if el < e {
                    next = Some((i - 1, el));
                }
            }
            if i + 1 < q {
                let er = self.energy(i + 1);
                if er < next.map_or(e, |n| n.1) {
                    next = Some((i + 1, er));
                }
            }
            match next {
                Some((j, ej)) => {
                    i = j;
                    e = ej;
                }
                None => return (i, e),
            }
        }
    }

    fn run(&mut self, seeds: usize, extra: Option<usize>) -> Selection {
        let mut starts = seed_positions(self.dsp.len(), seeds);
        if let Some(x) = extra {
            starts.push(x);
        }
        let mut seed_trace = Vec::with_capacity(starts.len());
        let mut best = (usize::MAX, f64::INFINITY);
        for s in starts {
            let (i, e) = self.descend(s);
            seed_trace.push((i, e));
            if e < best.1 || (e == best.1 && i < best.0) {
                best = (i, e);
            }
        }
        Selection { index: best.0, energy: best.1, seed_trace }
    }
}

fn validate_frame_inputs(
    w_f: &Matrix2xX<f64>,
    dsp: &DynamicShapePrior,
    s_prev: &Matrix3xX<f64>,
) -> Result<()> {
    if dsp.is_empty() {
        return Err(Error::invalid("empty shape prior"));
    }
    if w_f.ncols() != dsp.points() || s_prev.ncols() != dsp.points() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} measurements, {} prior points, {} previous points",
            w_f.ncols(),
            dsp.points(),
            s_prev.ncols()
        )));
    }
    if !w_f.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("measurements contain non-finite entries"));
    }
    Ok(())
}

/// Multi-start discrete descent over the prior index with the rotation held fixed.
///
/// With `seeds >= Q` every index is a start, which makes the result the
/// exhaustive minimum (lowest index among ties).
pub fn msgd_select(
    w_f: &Matrix2xX<f64>,
    pose: &CameraPose,
    dsp: &DynamicShapePrior,
    s_prev: &Matrix3xX<f64>,
    weights: &DsprWeights,
    seeds: usize,
) -> Result<Selection> {
    validate_frame_inputs(w_f, dsp, s_prev)?;
    weights.validate()?;
    if seeds == 0 {
        return Err(Error::invalid("at least one seed is required"));
    }
    let fe = FrameEnergy::new(w_f, s_prev, *weights);
    let mut prev_cache = vec![None; dsp.len()];
    let mut search = IndexSearch {
        fe: &fe,
        dsp,
        cam: pose.camera_rows(),
        cache: vec![None; dsp.len()],
        prev_cache: &mut prev_cache,
    };
    Ok(search.run(seeds, None))
}

/// Alternates state selection and rotation updates for one frame.
pub fn dspr_frame(
    w_f: &Matrix2xX<f64>,
    dsp: &DynamicShapePrior,
    s_prev: &Matrix3xX<f64>,
    pose_init: &CameraPose,
    config: &DsprConfig,
) -> Result<FrameResult> {
    let started = Instant::now();
    validate_frame_inputs(w_f, dsp, s_prev)?;
    config.validate()?;
    let fe = FrameEnergy::new(w_f, s_prev, config.weights);
    let mut prev_cache = vec![None; dsp.len()];

    let select = |pose: &CameraPose, extra: Option<usize>, prev_cache: &mut Vec<Option<f64>>| {
        let mut search = IndexSearch {
            fe: &fe,
            dsp,
            cam: pose.camera_rows(),
            cache: vec![None; dsp.len()],
            prev_cache,
        };
        search.run(config.seeds, extra)
    };

    let mut pose = *pose_init;
    let mut sel = select(&pose, None, &mut prev_cache);
    let mut iterations = 0;
    while iterations < config.max_alternations {
        iterations += 1;
        let new_pose = improve_pose(&fe, dsp.state(sel.index), &pose);
        let new_sel = select(&new_pose, Some(sel.index), &mut prev_cache);
        debug_assert!(new_sel.energy <= sel.energy + 1e-9 * sel.energy.abs().max(1.0));
        let gain = sel.energy - new_sel.energy;
        pose = new_pose;
        sel = new_sel;
        if gain <= config.rel_tol * sel.energy.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let shape = pose.matrix() * dsp.state(sel.index);
    Ok(FrameResult {
        index: sel.index,
        pose,
        shape,
        energy: sel.energy,
        iterations,
        seed_trace: sel.seed_trace,
        low_confidence: false,
        elapsed: started.elapsed(),
    })
}

fn centered_frame(w: &MeasurementMatrix, f: usize) -> Matrix2xX<f64> {
    let mut frame = w.frame(f);
    for r in 0..2 {
        let mean = frame.row(r).mean();
        frame.row_mut(r).add_scalar_mut(-mean);
    }
    frame
}

/// Reconstructs every frame in order. Measurements are centered per frame;
/// the temporal term of frame `f` compares against the state chosen for
/// frame `f - 1`.
pub fn dspr_sequence(
    w: &MeasurementMatrix,
    dsp: &DynamicShapePrior,
    config: &DsprConfig,
) -> Result<Vec<FrameResult>> {
    dspr_stream(w, dsp, config, |_| Ok(()))
}

/// [`dspr_sequence`] that hands each frame result to `on_frame` as soon as
/// it is available.
pub fn dspr_stream(
    w: &MeasurementMatrix,
    dsp: &DynamicShapePrior,
    config: &DsprConfig,
    mut on_frame: impl FnMut(&FrameResult) -> Result<()>,
) -> Result<Vec<FrameResult>> {
    config.validate()?;
    if dsp.is_empty() {
        return Err(Error::invalid("empty shape prior"));
    }
    if w.points() != dsp.points() {
        return Err(Error::invalid(format!(
            "tracks have {} points, prior has {}",
            w.points(),
            dsp.points()
        )));
    }
    let mut results: Vec<FrameResult> = Vec::with_capacity(w.frames());
    for f in 0..w.frames() {
        let started = Instant::now();
        let w_f = centered_frame(w, f);
        let (s_prev, pose_init) = match results.last() {
            Some(last) => (dsp.state(last.index).clone(), last.pose),
            None => {
                let identity = CameraPose::identity();
                let weights = DsprWeights { beta: 0.0, ..config.weights };
                let sel = msgd_select(&w_f, &identity, dsp, dsp.state(0), &weights, dsp.len())?;
                (dsp.state(sel.index).clone(), identity)
            }
        };
        let signal = w_f.norm();
        let scale = dsp.norms().last().copied().unwrap_or(0.0);
        let result = if signal <= 1e-12 * scale.max(1.0) {
            low_confidence_result(results.last(), dsp, &w_f, &s_prev, &pose_init, config)
        } else {
            dspr_frame(&w_f, dsp, &s_prev, &pose_init, config)?
        };
        let result = FrameResult { elapsed: started.elapsed(), ..result };
        on_frame(&result)?;
        results.push(result);
    }
    Ok(results)
}

fn low_confidence_result(
    last: Option<&FrameResult>,
    dsp: &DynamicShapePrior,
    w_f: &Matrix2xX<f64>,
    s_prev: &Matrix3xX<f64>,
    pose_init: &CameraPose,
    config: &DsprConfig,
) -> FrameResult {
    let index = last.map_or_else(|| dsp.nearest_state(s_prev), |l| l.index);
    let pose = last.map_or(*pose_init, |l| l.pose);
    let fe = FrameEnergy::new(w_f, s_prev, config.weights);
    let energy = fe.total(dsp.state(index), &pose.camera_rows());
    FrameResult {
        index,
        pose,
        shape: pose.matrix() * dsp.state(index),
        energy,
        iterations: 0,
        seed_trace: Vec::new(),
        low_confidence: true,
        elapsed: Duration::ZERO,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::build_dsp;
    use crate::geom::orthographic_project;

    fn blob(n: usize, phase: f64) -> Matrix3xX<f64> {
        Matrix3xX::from_fn(n, |r, c| {
            let t = c as f64 * 0.7 + phase;
            match r {
                0 => 10.0 * t.cos() + c as f64 * 0.3,
                1 => 8.0 * (1.3 * t).sin(),
                _ => 5.0 * (0.9 * t + 0.4).cos(),
            }
        })
    }

    fn scaled_prior(q: usize) -> DynamicShapePrior {
        let base = blob(30, 0.0);
        let states: Vec<_> = (0..q).map(|i| &base * (1.0 + 0.1 * i as f64)).collect();
        build_dsp(&states, 0.0).unwrap()
    }

    #[test]
    fn indicator_penalty_vanishes() {
        let ind = DspIndicator::new(3, 5).unwrap();
        assert_eq!(ind.penalty(123.0), 0.0);
        assert!(DspIndicator::new(5, 5).is_err());
    }

    #[test]
    fn energy_zero_on_perfect_fit() {
        let d = blob(20, 0.3);
        let w = orthographic_project(&CameraPose::identity(), &d);
        let e = dspr_energy(&w, &d, &CameraPose::identity(), &d, &DsprWeights::default()).unwrap();
        assert!(e.abs() < 1e-12);
    }

    #[test]
    fn energy_without_temporal_term_is_reprojection_norm() {
        let d = blob(20, 0.3);
        let prev = blob(20, 1.0);
        let pose = CameraPose::from_axis_angle(&Vector3::new(0.2, 1.0, 0.1), 0.4);
        let w = orthographic_project(&CameraPose::identity(), &d);
        let weights = DsprWeights { alpha: 2.0, beta: 0.0, gamma: 5.0 };
        let e = dspr_energy(&w, &d, &pose, &prev, &weights).unwrap();
        let expected = 2.0 * (w - orthographic_project(&pose, &d)).norm();
        assert!((e - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn energy_dimension_mismatch() {
        let d = blob(20, 0.3);
        let w = Matrix2xX::zeros(19);
        assert!(dspr_energy(&w, &d, &CameraPose::identity(), &d, &DsprWeights::default()).is_err());
    }

    #[test]
    fn update_pose_identity_and_recovery() {
        let d = blob(25, 0.1);
        let w = orthographic_project(&CameraPose::identity(), &d);
        let p = update_pose(&w, &d).unwrap();
        assert!((p.matrix() - Matrix3::identity()).amax() < 1e-9);

        let r = CameraPose::from_axis_angle(&Vector3::new(-0.4, 1.0, 0.3), 1.2);
        let w = orthographic_project(&r, &d);
        let p = update_pose(&w, &d).unwrap();
        assert!((p.matrix() - r.matrix()).norm() < 1e-6);
    }

    #[test]
    fn update_pose_planar_state_reprojects() {
        let mut d = blob(25, 0.1);
        d.row_mut(2).fill(0.0);
        let r = CameraPose::from_axis_angle(&Vector3::new(0.3, 1.0, 0.0), 0.5);
        let w = orthographic_project(&r, &d);
        let cands = pose_candidates(&w, &d).unwrap();
        assert_eq!(cands.len(), 2);
        for c in &cands {
            assert!((orthographic_project(c, &d) - &w).norm() < 1e-6 * w.norm());
        }
        assert!(cands.iter().any(|c| (c.matrix() - r.matrix()).norm() < 1e-6));
    }

    #[test]
    fn update_pose_collinear_is_degenerate() {
        let d = Matrix3xX::from_fn(10, |r, c| (r + 1) as f64 * c as f64);
        let w = orthographic_project(&CameraPose::identity(), &d);
        assert!(matches!(update_pose(&w, &d), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn seeds_are_evenly_spaced() {
        assert_eq!(seed_positions(10, 1), vec![0]);
        assert_eq!(seed_positions(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(seed_positions(3, 20), vec![0, 1, 2]);
    }

    #[test]
    fn singleton_prior() {
        let dsp = scaled_prior(1);
        let w = orthographic_project(&CameraPose::identity(), dsp.state(0));
        for seeds in [1, 5] {
            let sel = msgd_select(&w, &CameraPose::identity(), &dsp, dsp.state(0), &DsprWeights::default(), seeds)
                .unwrap();
            assert_eq!(sel.index, 0);
        }
    }

    #[test]
    fn unimodal_prior_single_seed_finds_minimum() {
        let dsp = scaled_prior(40);
        let pose = CameraPose::from_axis_angle(&Vector3::new(0.1, 1.0, 0.2), 0.3);
        let target = &(dsp.state(0) * 1.0) * 3.17;
        let w = orthographic_project(&pose, &target);
        let weights = DsprWeights::default();
        let sel = msgd_select(&w, &pose, &dsp, dsp.state(0), &weights, 1).unwrap();
        let exhaustive = (0..dsp.len())
            .map(|i| (i, dspr_energy(&w, dsp.state(i), &pose, dsp.state(0), &weights).unwrap()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert_eq!(sel.index, exhaustive.0);
    }

    #[test]
    fn frame_recovers_state_and_pose() {
        let dsp = scaled_prior(12);
        let r = CameraPose::from_axis_angle(&Vector3::new(0.5, 1.0, -0.2), 0.7);
        let j = 7;
        let w = orthographic_project(&r, dsp.state(j));
        let res = dspr_frame(&w, &dsp, dsp.state(j), &CameraPose::identity(), &DsprConfig::default()).unwrap();
        assert_eq!(res.index, j);
        assert!((res.pose.matrix() - r.matrix()).amax() < 1e-4);
        assert!(res.energy < 1e-6);
    }

    #[test]
    fn repeated_measurements_are_stationary() {
        let dsp = scaled_prior(12);
        let r = CameraPose::from_axis_angle(&Vector3::new(0.5, 1.0, -0.2), 0.7);
        let w = orthographic_project(&r, dsp.state(4));
        let cfg = DsprConfig::default();
        let first = dspr_frame(&w, &dsp, dsp.state(4), &CameraPose::identity(), &cfg).unwrap();
        let second = dspr_frame(&w, &dsp, dsp.state(first.index), &first.pose, &cfg).unwrap();
        assert_eq!(second.index, first.index);
        assert_eq!(second.iterations, 1);
        assert!((second.pose.matrix() - first.pose.matrix()).amax() < 1e-9);
    }

    #[test]
    fn empty_frame_is_low_confidence() {
        let dsp = scaled_prior(4);
        let w = MeasurementMatrix::new(nalgebra::DMatrix::zeros(2, 30)).unwrap();
        let res = dspr_sequence(&w, &dsp, &DsprConfig::default()).unwrap();
        assert!(res[0].low_confidence);
    }
}
