//! Batch dense reconstruction from point tracks.
//!
//! Minimizes
//!
//! ```text
//! E(R, S, A) = alpha E_fit(R, S) + beta E_temp(S) + lambda E_linking(S, A) + rho E_reg(A)
//!
//! E_fit     = sum_f |W_f - I_{2x3} R_f S_f|_eps
//! E_temp    = sum_{f>=2} |S_f - S_{f-1}|_eps
//! E_linking = |S - (Theta (x) I_3) A|_eps
//! E_reg     = sum over adjacency edges (n, m) and coefficient rows j of |A_{j,n} - A_{j,m}|_eps
//! ```
//!
//! where `|.|_eps` is the sum of per-element Huber losses and `Theta` is a
//! truncated DCT trajectory basis.
//!
//! The solver starts from a rigid factorization and alternates two blocks
//! per outer iteration: a per-frame rotation update, then a damped
//! Gauss-Newton step in `(S, A)`. Huber residuals are handled by IRLS
//! weights; since all residuals are linear in `(S, A)` for fixed rotations,
//! the weighted problem is a quadratic majorizer of the energy. It is
//! minimized by Gauss-Seidel sweeps over points (the regularizer is the
//! only term coupling points), each point solved exactly through a
//! block-tridiagonal Schur complement.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix2x3, Matrix3, Vector3};

use crate::dspr::{pose_candidates, refine_pose};
use crate::error::{Error, Result};
use crate::geom::{CameraPose, MeasurementMatrix, NormMode, RobustNormConfig, ShapeSequence};
use crate::rigid::{center_measurements, rigid_factorize};

/// DCT trajectory basis `Theta` (F x K).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBasis {
    theta: DMatrix<f64>,
}

/// `theta_{t,k} = sigma_k / sqrt(2) * cos(pi / (2F) * (2t - 1)(k - 1))` with
/// `sigma_1 = 1` and `sigma_k = sqrt(2)` otherwise (1-based `t`, `k`).
pub fn make_dct_basis(frames: usize, rank: usize) -> Result<TrajectoryBasis> {
    if frames == 0 || rank == 0 || rank > frames {
        return Err(Error::invalid(format!(
            "trajectory basis needs 1 <= K <= F, got F = {frames}, K = {rank}"
        )));
    }
    let f = frames as f64;
    let theta = DMatrix::from_fn(frames, rank, |t, k| {
        let sigma = if k == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
        let t1 = (t + 1) as f64;
        sigma / std::f64::consts::SQRT_2
            * (std::f64::consts::PI / (2.0 * f) * (2.0 * t1 - 1.0) * k as f64).cos()
    });
    Ok(TrajectoryBasis { theta })
}

impl TrajectoryBasis {
    pub fn frames(&self) -> usize {
        self.theta.nrows()
    }

    pub fn rank(&self) -> usize {
        self.theta.ncols()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// `(Theta (x) I_3) A`, a `3F x N` matrix.
    pub fn expand(&self, a: &TrajectoryCoefficients) -> DMatrix<f64> {
        let (frames, rank) = (self.frames(), self.rank());
        let n = a.data.ncols();
        let mut out = DMatrix::zeros(3 * frames, n);
        for f in 0..frames {
            for k in 0..rank {
                let t = self.theta[(f, k)];
                for c in 0..3 {
                    for p in 0..n {
                        out[(3 * f + c, p)] += t * a.data[(3 * k + c, p)];
                    }
                }
            }
        }
        out
    }

    /// Least-squares coefficients of `s` in this basis.
    pub fn project(&self, s: &DMatrix<f64>) -> TrajectoryCoefficients {
        let (frames, rank) = (self.frames(), self.rank());
        let gram = self.theta.transpose() * &self.theta;
        let inv = gram.try_inverse().expect("DCT atoms are linearly independent");
        let n = s.ncols();
        let mut data = DMatrix::zeros(3 * rank, n);
        for c in 0..3 {
            let mut chan = DMatrix::zeros(frames, n);
            for f in 0..frames {
                chan.set_row(f, &s.row(3 * f + c));
            }
            let coeff = &inv * self.theta.transpose() * chan;
            for k in 0..rank {
                data.set_row(3 * k + c, &coeff.row(k));
            }
        }
        TrajectoryCoefficients { data }
    }
}

/// Coefficients `A` (3K x N); row `3k + c` holds channel `c` of atom `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCoefficients {
    data: DMatrix<f64>,
}

impl TrajectoryCoefficients {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || !data.nrows().is_multiple_of(3) || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "coefficients must be 3K x N, got {} x {}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("coefficients contain non-finite entries"));
        }
        Ok(Self { data })
    }

    pub fn rank(&self) -> usize {
        self.data.nrows() / 3
    }

    pub fn points(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Symmetric point neighborhoods from the reference-frame layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyTable {
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyTable {
    pub fn new(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(Error::invalid(format!("neighbor {j} of point {i} out of range")));
                }
                if j == i {
                    return Err(Error::invalid(format!("point {i} lists itself as a neighbor")));
                }
                if !neighbors[j].contains(&i) {
                    return Err(Error::invalid(format!("adjacency {i} -> {j} is not symmetric")));
                }
            }
        }
        Ok(Self { neighbors })
    }

    /// No edges; disables the trajectory regularizer.
    pub fn empty(points: usize) -> Self {
        Self { neighbors: vec![Vec::new(); points] }
    }

    pub fn points(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n]
    }

    /// Undirected edges `(n, m)` with `n < m`, each listed once.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (n, list) in self.neighbors.iter().enumerate() {
            for &m in list {
                if n < m {
                    out.push((n, m));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Connectivity {
    /// Links points one grid step apart horizontally or vertically.
    FourNeighborhood,
    Edges(Vec<(usize, usize)>),
}

/// Row-major `(row, col)` cells of a `rows x cols` grid.
pub fn grid_layout(rows: usize, cols: usize) -> Vec<(i64, i64)> {
    (0..rows).flat_map(|r| (0..cols).map(move |c| (r as i64, c as i64))).collect()
}

/// Builds the adjacency table; `layout[n]` is the reference-frame grid cell of point `n`.
pub fn build_adjacency(layout: &[(i64, i64)], connectivity: &Connectivity) -> Result<AdjacencyTable> {
    let mut index = std::collections::HashMap::with_capacity(layout.len());
    for (n, cell) in layout.iter().enumerate() {
        if index.insert(*cell, n).is_some() {
            return Err(Error::invalid(format!("duplicate point id {cell:?}")));
        }
    }
    let mut neighbors = vec![Vec::new(); layout.len()];
    let link = |a: usize, b: usize, neighbors: &mut Vec<Vec<usize>>| {
        if !neighbors[a].contains(&b) {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    };
    match connectivity {
        Connectivity::FourNeighborhood => {
            for (n, &(r, c)) in layout.iter().enumerate() {
                for cell in [(r + 1, c), (r, c + 1)] {
                    if let Some(&m) = index.get(&cell) {
                        link(n, m, &mut neighbors);
                    }
                }
            }
        }
        Connectivity::Edges(edges) => {
            for &(a, b) in edges {
                if a >= layout.len() || b >= layout.len() {
                    return Err(Error::invalid(format!("edge ({a}, {b}) out of range")));
                }
                if a == b {
                    return Err(Error::invalid(format!("self-loop at point {a}")));
                }
                link(a, b, &mut neighbors);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    AdjacencyTable::new(neighbors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmdrWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_link: f64,
    pub rho: f64,
    pub huber_epsilon: f64,
    /// `Huber` by default; `Frobenius` switches every term to plain least squares.
    pub mode: NormMode,
}

impl Default for DcmdrWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1, lambda_link: 1.0, rho: 1.0, huber_epsilon: 0.1, mode: NormMode::Huber }
    }
}

impl DcmdrWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.alpha) && ok(self.beta) && ok(self.lambda_link) && ok(self.rho)) || !(self.alpha > 0.0) {
            return Err(Error::invalid(format!(
                "weights must be finite and nonnegative with alpha > 0, got {self:?}"
            )));
        }
        self.norm().validate()
    }

    pub fn norm(&self) -> RobustNormConfig {
        RobustNormConfig { epsilon: self.huber_epsilon, mode: self.mode }
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha: self.alpha * factor,
            beta: self.beta * factor,
            lambda_link: self.lambda_link * factor,
            rho: self.rho * factor,
            ..*self
        }
    }
}

/// Unweighted values of the four energy terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyTerms {
    pub fit: f64,
    pub temp: f64,
    pub linking: f64,
    pub reg: f64,
}

impl EnergyTerms {
    pub fn total(&self, w: &DcmdrWeights) -> f64 {
        w.alpha * self.fit + w.beta * self.temp + w.lambda_link * self.linking + w.rho * self.reg
    }
}

/// Problem data shared by the energy, its gradient and the solver.
struct Problem<'a> {
    w: &'a DMatrix<f64>,
    basis: &'a TrajectoryBasis,
    edges: Vec<(usize, usize)>,
    norm: RobustNormConfig,
}

impl Problem<'_> {
    fn frames(&self) -> usize {
        self.basis.frames()
    }

    fn fit_residual(cam: &Matrix2x3<f64>, w: &DMatrix<f64>, s: &DMatrix<f64>, f: usize, n: usize, r: usize) -> f64 {
        w[(2 * f + r, n)]
            - (cam[(r, 0)] * s[(3 * f, n)] + cam[(r, 1)] * s[(3 * f + 1, n)] + cam[(r, 2)] * s[(3 * f + 2, n)])
    }

    fn frame_fit(&self, cam: &Matrix2x3<f64>, s: &DMatrix<f64>, f: usize) -> f64 {
        let mut acc = 0.0;
        for n in 0..s.ncols() {
            for r in 0..2 {
                acc += self.norm.rho(Self::fit_residual(cam, self.w, s, f, n, r));
            }
        }
        acc
    }

    fn terms(&self, s: &DMatrix<f64>, cams: &[Matrix2x3<f64>], a: &DMatrix<f64>) -> EnergyTerms {
        let frames = self.frames();
        let fit = (0..frames).map(|f| self.frame_fit(&cams[f], s, f)).sum();
        let mut temp = 0.0;
        for f in 1..frames {
            for n in 0..s.ncols() {
                for c in 0..3 {
                    temp += self.norm.rho(s[(3 * f + c, n)] - s[(3 * (f - 1) + c, n)]);
                }
            }
        }
        let linked = self.basis.expand(&TrajectoryCoefficients { data: a.clone() });
        let linking = s.iter().zip(linked.iter()).map(|(x, y)| self.norm.rho(x - y)).sum();
        let mut reg = 0.0;
        for &(n, m) in &self.edges {
            for j in 0..a.nrows() {
                reg += self.norm.rho(a[(j, n)] - a[(j, m)]);
            }
        }
        EnergyTerms { fit, temp, linking, reg }
    }
}

fn check_dims(
    w: &MeasurementMatrix,
    s: &ShapeSequence,
    poses: &[CameraPose],
    a: &TrajectoryCoefficients,
    basis: &TrajectoryBasis,
    adj: &AdjacencyTable,
) -> Result<()> {
    let (frames, n) = (w.frames(), w.points());
    let ok = s.frames() == frames
        && s.points() == n
        && poses.len() == frames
        && a.points() == n
        && a.rank() == basis.rank()
        && basis.frames() == frames
        && adj.points() == n;
    if !ok {
        return Err(Error::invalid(format!(
            "dimension mismatch: W {}x{}, S {}x{}, {} poses, A {}x{}, basis {}x{}, adjacency over {} points",
            2 * frames,
            n,
            3 * s.frames(),
            s.points(),
            poses.len(),
            3 * a.rank(),
            a.points(),
            basis.frames(),
            basis.rank(),
            adj.points()
        )));
    }
    Ok(())
}

/// Total energy and its unweighted terms.
pub fn dcmdr_energy(
    w: &MeasurementMatrix,
    s: &ShapeSequence,
    poses: &[CameraPose],
    a: &TrajectoryCoefficients,
    basis: &TrajectoryBasis,
    adj: &AdjacencyTable,
    weights: &DcmdrWeights,
) -> Result<(f64, EnergyTerms)> {
    check_dims(w, s, poses, a, basis, adj)?;
    weights.validate()?;
    let problem = Problem { w: w.data(), basis, edges: adj.edges(), norm: weights.norm() };
    let cams: Vec<_> = poses.iter().map(|p| p.camera_rows()).collect();
    let terms = problem.terms(s.data(), &cams, a.data());
    Ok((terms.total(weights), terms))
}

/// Analytic gradients of the unweighted energy terms.
///
/// Rotation gradients are taken with respect to a left perturbation
/// `R_f <- exp([d]x) R_f` at `d = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradients {
    pub fit_shapes: DMatrix<f64>,
    pub fit_poses: Vec<Vector3<f64>>,
    pub temp_shapes: DMatrix<f64>,
    pub linking_shapes: DMatrix<f64>,
    pub linking_coefficients: DMatrix<f64>,
    pub reg_coefficients: DMatrix<f64>,
}

pub fn dcmdr_gradients(
    w: &MeasurementMatrix,
    s: &ShapeSequence,
    poses: &[CameraPose],
    a: &TrajectoryCoefficients,
    basis: &TrajectoryBasis,
    adj: &AdjacencyTable,
    norm: &RobustNormConfig,
) -> Result<TermGradients> {
    check_dims(w, s, poses, a, basis, adj)?;
    norm.validate()?;
    let (frames, n) = (w.frames(), w.points());
    let sd = s.data();
    let ad = a.data();
    let mut fit_shapes = DMatrix::zeros(3 * frames, n);
    let mut fit_poses = vec![Vector3::zeros(); frames];
    for f in 0..frames {
        let rot = poses[f].matrix();
        let cam = poses[f].camera_rows();
        for p in 0..n {
            let x = Vector3::new(sd[(3 * f, p)], sd[(3 * f + 1, p)], sd[(3 * f + 2, p)]);
            let y = rot * x;
            let psi = Vector3::new(
                norm.psi(Problem::fit_residual(&cam, w.data(), sd, f, p, 0)),
                norm.psi(Problem::fit_residual(&cam, w.data(), sd, f, p, 1)),
                0.0,
            );
            // dE/ds = -(I R)^T psi; dE/dd = -y x (I^T psi)
            let g = -(rot.transpose() * psi);
            for c in 0..3 {
                fit_shapes[(3 * f + c, p)] = g[c];
            }
            fit_poses[f] -= y.cross(&psi);
        }
    }
    let mut temp_shapes = DMatrix::zeros(3 * frames, n);
    for f in 1..frames {
        for p in 0..n {
            for c in 0..3 {
                let d = norm.psi(sd[(3 * f + c, p)] - sd[(3 * (f - 1) + c, p)]);
                temp_shapes[(3 * f + c, p)] += d;
                temp_shapes[(3 * (f - 1) + c, p)] -= d;
            }
        }
    }
    let linked = basis.expand(a);
    let linking_shapes = (sd - linked).map(|r| norm.psi(r));
    let mut linking_coefficients = DMatrix::zeros(ad.nrows(), n);
    for f in 0..frames {
        for k in 0..basis.rank() {
            let t = basis.theta()[(f, k)];
            for c in 0..3 {
                for p in 0..n {
                    linking_coefficients[(3 * k + c, p)] -= t * linking_shapes[(3 * f + c, p)];
                }
            }
        }
    }
    let mut reg_coefficients = DMatrix::zeros(ad.nrows(), n);
    for (p, q) in adj.edges() {
        for j in 0..ad.nrows() {
            let d = norm.psi(ad[(j, p)] - ad[(j, q)]);
            reg_coefficients[(j, p)] += d;
            reg_coefficients[(j, q)] -= d;
        }
    }
    Ok(TermGradients {
        fit_shapes,
        fit_poses,
        temp_shapes,
        linking_shapes,
        linking_coefficients,
        reg_coefficients,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcmdrConfig {
    /// Trajectory basis size; `None` picks `min(ceil(F / 10), 32)`.
    pub rank: Option<usize>,
    pub weights: DcmdrWeights,
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// Gauss-Seidel sweeps over points per Gauss-Newton step.
    pub sweeps: usize,
    pub initial_damping: f64,
}

impl Default for DcmdrConfig {
    fn default() -> Self {
        Self {
            rank: None,
            weights: DcmdrWeights::default(),
            max_iterations: 50,
            rel_tol: 1e-6,
            sweeps: 3,
            initial_damping: 1e-3,
        }
    }
}

pub fn default_rank(frames: usize) -> usize {
    frames.div_ceil(10).clamp(1, 32).min(frames)
}

#[derive(Debug, Clone)]
pub struct DcmdrResult {
    pub shapes: ShapeSequence,
    pub poses: Vec<CameraPose>,
    pub coefficients: TrajectoryCoefficients,
    pub basis: TrajectoryBasis,
    /// Total energy before the first iteration and after every accepted one.
    pub trace: Vec<f64>,
    pub terms: EnergyTerms,
    /// Per-frame image centroids removed from the tracks.
    pub translations: Vec<nalgebra::Vector2<f64>>,
}

/// IRLS weights of every residual at the current iterate.
struct IrlsWeights {
    fit: DMatrix<f64>,
    temp: DMatrix<f64>,
    link: DMatrix<f64>,
    reg: DMatrix<f64>,
}

struct Solver<'a> {
    problem: Problem<'a>,
    weights: DcmdrWeights,
    /// `(neighbor, edge id)` per point.
    incident: Vec<Vec<(usize, usize)>>,
    /// `Theta_fk Theta_fk'` per frame, flattened K x K.
    theta_outer: Vec<DMatrix<f64>>,
}

impl Solver<'_> {
    fn energy(&self, s: &DMatrix<f64>, cams: &[Matrix2x3<f64>], a: &DMatrix<f64>) -> f64 {
        self.problem.terms(s, cams, a).total(&self.weights)
    }

    fn irls(&self, s: &DMatrix<f64>, cams: &[Matrix2x3<f64>], a: &DMatrix<f64>) -> IrlsWeights {
        let norm = &self.problem.norm;
        let frames = self.problem.frames();
        let n = s.ncols();
        let w = self.problem.w;
        let fit = DMatrix::from_fn(2 * frames, n, |row, p| {
            norm.weight(Problem::fit_residual(&cams[row / 2], w, s, row / 2, p, row % 2))
        });
        let temp = DMatrix::from_fn(3 * frames, n, |row, p| {
            if row < 3 {
                0.0
            } else {
                norm.weight(s[(row, p)] - s[(row - 3, p)])
            }
        });
        let linked = self.problem.basis.expand(&TrajectoryCoefficients { data: a.clone() });
        let link = (s - linked).map(|r| norm.weight(r));
        let mut reg = DMatrix::zeros(a.nrows(), self.problem.edges.len());
        for (e, &(p, q)) in self.problem.edges.iter().enumerate() {
            for j in 0..a.nrows() {
                reg[(j, e)] = norm.weight(a[(j, p)] - a[(j, q)]);
            }
        }
        IrlsWeights { fit, temp, link, reg }
    }

    /// Minimizes the weighted quadratic over point `p`'s shape trajectory and
    /// coefficients with every other point held fixed.
    fn solve_point(
        &self,
        p: usize,
        cams: &[Matrix2x3<f64>],
        iw: &IrlsWeights,
        damping: f64,
        s: &mut DMatrix<f64>,
        a: &mut DMatrix<f64>,
    ) -> Result<()> {
        let frames = self.problem.frames();
        let rank = self.problem.basis.rank();
        let k3 = 3 * rank;
        let theta = self.problem.basis.theta();
        let wt = &self.weights;
        let w = self.problem.w;

        let mut diag = vec![Matrix3::identity() * damping; frames];
        let mut off = vec![Vector3::zeros(); frames];
        // Column 0: right-hand side for S; columns 1..: the S-A coupling block.
        let mut rhs = DMatrix::zeros(3 * frames, 1 + k3);
        let mut haa = DMatrix::identity(k3, k3) * damping;
        let mut ga = DVector::from_fn(k3, |j, _| damping * a[(j, p)]);

        for f in 0..frames {
            for c in 0..3 {
                rhs[(3 * f + c, 0)] = damping * s[(3 * f + c, p)];
            }
            let cam = &cams[f];
            for r in 0..2 {
                let wr = wt.alpha * iw.fit[(2 * f + r, p)];
                if wr == 0.0 {
                    continue;
                }
                let row = cam.row(r).transpose();
                diag[f] += row * row.transpose() * wr;
                let target = w[(2 * f + r, p)];
                for c in 0..3 {
                    rhs[(3 * f + c, 0)] += wr * row[c] * target;
                }
            }
            if f > 0 && wt.beta > 0.0 {
                for c in 0..3 {
                    let wr = wt.beta * iw.temp[(3 * f + c, p)];
                    diag[f][(c, c)] += wr;
                    diag[f - 1][(c, c)] += wr;
                    off[f][c] = -wr;
                }
            }
            if wt.lambda_link > 0.0 {
                for c in 0..3 {
                    let wr = wt.lambda_link * iw.link[(3 * f + c, p)];
                    diag[f][(c, c)] += wr;
                    for k in 0..rank {
                        rhs[(3 * f + c, 1 + 3 * k + c)] = -wr * theta[(f, k)];
                    }
                    let outer = &self.theta_outer[f];
                    for k in 0..rank {
                        for k2 in 0..rank {
                            haa[(3 * k + c, 3 * k2 + c)] += wr * outer[(k, k2)];
                        }
                    }
                }
            }
        }
        if wt.rho > 0.0 {
            for &(m, e) in &self.incident[p] {
                for j in 0..k3 {
                    let wr = wt.rho * iw.reg[(j, e)];
                    haa[(j, j)] += wr;
                    ga[j] += wr * a[(j, m)];
                }
            }
        }

        let coupling = rhs.columns(1, k3).into_owned();
        solve_block_tridiagonal(&diag, &off, &mut rhs)?;
        let schur = haa - coupling.transpose() * rhs.columns(1, k3);
        let reduced = ga - coupling.transpose() * rhs.column(0);
        let a_new = match Cholesky::new(schur.clone()) {
            Some(ch) => ch.solve(&reduced),
            None => schur
                .lu()
                .solve(&reduced)
                .ok_or_else(|| Error::NumericalFailure(format!("singular coefficient system at point {p}")))?,
        };
        let s_new = rhs.column(0) - rhs.columns(1, k3) * &a_new;
        for j in 0..k3 {
            a[(j, p)] = a_new[j];
        }
        for i in 0..3 * frames {
            s[(i, p)] = s_new[i];
        }
        Ok(())
    }

    /// Per-frame rotation update on the fit term; never increases it.
    fn update_poses(&self, s: &DMatrix<f64>, poses: &mut [CameraPose]) {
        let n = s.ncols();
        for (f, pose) in poses.iter_mut().enumerate() {
            let shape = nalgebra::Matrix3xX::from_fn(n, |c, p| s[(3 * f + c, p)]);
            let w_f = nalgebra::Matrix2xX::from_fn(n, |r, p| self.problem.w[(2 * f + r, p)]);
            let mut best = *pose;
            let mut best_cost = self.problem.frame_fit(&pose.camera_rows(), s, f);
            let mut starts = pose_candidates(&w_f, &shape).unwrap_or_default();
            starts.push(*pose);
            for start in starts {
                let refined = refine_pose(&w_f, &shape, &start, &self.problem.norm, 10);
                let c = self.problem.frame_fit(&refined.camera_rows(), s, f);
                if c < best_cost {
                    best_cost = c;
                    best = refined;
                }
            }
            *pose = best;
        }
    }
}

/// Solves `H X = B` in place for symmetric block-tridiagonal `H` with 3x3
/// diagonal blocks `diag[f]` and diagonal coupling `diag(off[f])` between
/// frames `f - 1` and `f`.
fn solve_block_tridiagonal(diag: &[Matrix3<f64>], off: &[Vector3<f64>], b: &mut DMatrix<f64>) -> Result<()> {
    let frames = diag.len();
    let cols = b.ncols();
    let mut upper: Vec<Matrix3<f64>> = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut m = diag[f];
        if f > 0 {
            let l = Matrix3::from_diagonal(&off[f]);
            m -= l * upper[f - 1];
            let prev = b.rows(3 * (f - 1), 3).into_owned();
            let mut cur = b.rows_mut(3 * f, 3);
            cur -= l * prev;
        }
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure(format!("singular shape block at frame {f}")))?;
        let scaled = inv * b.rows(3 * f, 3);
        b.rows_mut(3 * f, 3).copy_from(&scaled);
        let next = if f + 1 < frames { Matrix3::from_diagonal(&off[f + 1]) } else { Matrix3::zeros() };
        upper.push(inv * next);
    }
    for f in (0..frames.saturating_sub(1)).rev() {
        let next = b.rows(3 * (f + 1), 3).into_owned();
        let mut cur = b.rows_mut(3 * f, 3);
        cur -= upper[f] * next;
    }
    debug_assert_eq!(b.ncols(), cols);
    Ok(())
}

/// Runs the batch solver on raw tracks. Tracks are centered per frame first.
pub fn dcmdr_reconstruct(w: &MeasurementMatrix, config: &DcmdrConfig, adj: &AdjacencyTable) -> Result<DcmdrResult> {
    config.weights.validate()?;
    if !(config.rel_tol >= 0.0) {
        return Err(Error::invalid("rel_tol must be nonnegative"));
    }
    if adj.points() != w.points() {
        return Err(Error::invalid(format!(
            "adjacency covers {} points, tracks have {}",
            adj.points(),
            w.points()
        )));
    }
    let frames = w.frames();
    let rank = config.rank.unwrap_or_else(|| default_rank(frames));
    let basis = make_dct_basis(frames, rank)?;

    let init = rigid_factorize(w)?;
    let (centered, translations) = center_measurements(w);
    let n = w.points();
    let mut s = DMatrix::zeros(3 * frames, n);
    for f in 0..frames {
        s.rows_mut(3 * f, 3).copy_from(&init.rest_shape);
    }
    let mut poses = init.poses;
    let mut a = basis.project(&s).data;

    let edges = adj.edges();
    let mut incident = vec![Vec::new(); n];
    for (e, &(p, q)) in edges.iter().enumerate() {
        incident[p].push((q, e));
        incident[q].push((p, e));
    }
    let theta_outer = (0..frames)
        .map(|f| {
            let row = basis.theta().row(f);
            row.transpose() * row
        })
        .collect();
    let solver = Solver {
        problem: Problem { w: centered.data(), basis: &basis, edges, norm: config.weights.norm() },
        weights: config.weights,
        incident,
        theta_outer,
    };

    let cams_of = |poses: &[CameraPose]| poses.iter().map(|p| p.camera_rows()).collect::<Vec<_>>();
    let mut energy = solver.energy(&s, &cams_of(&poses), &a);
    if !energy.is_finite() {
        return Err(Error::NumericalFailure("initial energy is not finite".into()));
    }
    let mut trace = vec![energy];
    let mut damping = config.initial_damping;

    for _ in 0..config.max_iterations {
        let before = energy;
        solver.update_poses(&s, &mut poses);
        let cams = cams_of(&poses);
        let after_pose = solver.energy(&s, &cams, &a);
        let iw = solver.irls(&s, &cams, &a);

        let mut accepted = None;
        for _ in 0..10 {
            let mut s_try = s.clone();
            let mut a_try = a.clone();
            for _ in 0..config.sweeps.max(1) {
                for p in 0..n {
                    solver.solve_point(p, &cams, &iw, damping, &mut s_try, &mut a_try)?;
                }
            }
            let e = solver.energy(&s_try, &cams, &a_try);
            if !e.is_finite() {
                return Err(Error::NumericalFailure("energy became non-finite".into()));
            }
            if e <= after_pose {
                damping = (damping * 0.5).max(1e-12);
                accepted = Some((s_try, a_try, e));
                break;
            }
            damping *= 10.0;
        }
        energy = match accepted {
            Some((s_new, a_new, e)) => {
                s = s_new;
                a = a_new;
                e
            }
            None => after_pose,
        };
        debug_assert!(energy <= before);
        trace.push(energy);
        if before - energy <= config.rel_tol * before {
            break;
        }
    }

    let cams = cams_of(&poses);
    let terms = solver.problem.terms(&s, &cams, &a);
    Ok(DcmdrResult {
        shapes: ShapeSequence::new(s)?,
        poses,
        coefficients: TrajectoryCoefficients::new(a)?,
        basis,
        trace,
        terms,
        translations,
    })
}
