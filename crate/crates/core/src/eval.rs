//! Reconstruction metrics: 3D error, pose alignment, quaternionic error,
//! convergence pattern and compression ratio.

use nalgebra::{Matrix3, Matrix3xX};

use crate::error::{Error, Result};
use crate::geom::{huber, project_to_so3, rotation_to_quaternion, CameraPose, ShapeSequence};

/// `e_3D = (1/F) sum_f |S'_f - S_f|_F / |S'_f|_F` with `gt` as `S'`.
pub fn rmse_3d(gt: &ShapeSequence, est: &ShapeSequence) -> Result<f64> {
    if gt.frames() != est.frames() || gt.points() != est.points() {
        return Err(Error::invalid(format!(
            "shape sequences differ in size: {}x{} vs {}x{}",
            gt.frames(),
            gt.points(),
            est.frames(),
            est.points()
        )));
    }
    let mut acc = 0.0;
    for f in 0..gt.frames() {
        let g = gt.data().rows(3 * f, 3);
        let e = est.data().rows(3 * f, 3);
        let denom = g.norm();
        if denom == 0.0 {
            return Err(Error::invalid(format!("ground-truth frame {f} has zero norm")));
        }
        acc += (g - e).norm() / denom;
    }
    Ok(acc / gt.frames() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignOptions {
    /// Allow an improper orthogonal transform (reflection).
    pub reflection: bool,
    /// Fit one global scale as well.
    pub scale: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { reflection: true, scale: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeAlignment {
    /// `est` centered per frame and mapped by `scale * transform`.
    pub aligned: ShapeSequence,
    /// Orthogonal; `det = -1` when a reflection was used.
    pub transform: Matrix3<f64>,
    pub scale: f64,
}

/// Removes each frame's centroid from both sequences, then fits a single
/// orthogonal transform (and optionally a scale) of `est` onto `gt` over the
/// whole sequence. The returned `aligned` sequence is compared with the
/// centered ground truth, available via [`center_frames`].
pub fn align_shapes(gt: &ShapeSequence, est: &ShapeSequence, options: AlignOptions) -> Result<ShapeAlignment> {
    if gt.frames() != est.frames() || gt.points() != est.points() {
        return Err(Error::invalid("shape sequences differ in size"));
    }
    let g = center_frames(gt);
    let e = center_frames(est);
    let mut cross = Matrix3::zeros();
    for f in 0..g.frames() {
        cross += g.data().rows(3 * f, 3) * e.data().rows(3 * f, 3).transpose();
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("3x3 SVD"), svd.v_t.expect("3x3 SVD"));
    let mut d = Matrix3::identity();
    if !options.reflection && (u * v_t).determinant() < 0.0 {
        let min = svd.singular_values.imin();
        d[(min, min)] = -1.0;
    }
    let transform = u * d * v_t;
    let scale = if options.scale {
        let num = (svd.singular_values.component_mul(&d.diagonal())).sum();
        let den = e.data().norm_squared();
        if den > 0.0 {
            num / den
        } else {
            1.0
        }
    } else {
        1.0
    };
    let mut data = e.into_data();
    for f in 0..gt.frames() {
        let block = transform * data.rows(3 * f, 3) * scale;
        data.rows_mut(3 * f, 3).copy_from(&block);
    }
    Ok(ShapeAlignment { aligned: ShapeSequence::new(data)?, transform, scale })
}

/// Every frame shifted to zero centroid.
pub fn center_frames(s: &ShapeSequence) -> ShapeSequence {
    let frames: Vec<Matrix3xX<f64>> = s
        .to_frames()
        .into_iter()
        .map(|m| {
            let c = m.column_mean();
            let mut m = m;
            for mut col in m.column_iter_mut() {
                col -= c;
            }
            m
        })
        .collect();
    ShapeSequence::from_frames(&frames).expect("centering preserves validity")
}

/// `e_3D` after [`align_shapes`], against the per-frame centered ground truth.
pub fn aligned_rmse_3d(gt: &ShapeSequence, est: &ShapeSequence, options: AlignOptions) -> Result<f64> {
    let al = align_shapes(gt, est, options)?;
    rmse_3d(&center_frames(gt), &al.aligned)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub corrective: CameraPose,
    /// Whether the estimated poses were conjugated by the depth flip
    /// `Z = diag(1, 1, -1)` (`R_f -> Z R_f Z`) before alignment.
    pub reflected: bool,
    /// `sum_f h_eps(|R'_f - R# R_f|_F)` at the returned rotation.
    pub residual: f64,
}

impl AlignmentResult {
    /// `R# R_f`, applying the depth flip first if it was selected.
    pub fn apply(&self, est: &[CameraPose]) -> Vec<CameraPose> {
        let est = if self.reflected { reflect_poses(est) } else { est.to_vec() };
        est.iter().map(|p| self.corrective.compose(p)).collect()
    }
}

/// `Z R Z` for every pose: the pose stream that explains the same images
/// for the depth-flipped shapes.
pub fn reflect_poses(poses: &[CameraPose]) -> Vec<CameraPose> {
    let z = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0));
    poses
        .iter()
        .map(|p| CameraPose::new(z * p.matrix() * z).unwrap_or_else(|_| project_to_so3(&(z * p.matrix() * z)).unwrap()))
        .collect()
}

fn alignment_residual(gt: &[CameraPose], est: &[CameraPose], r: &Matrix3<f64>, epsilon: f64) -> f64 {
    gt.iter().zip(est).map(|(g, e)| huber((g.matrix() - r * e.matrix()).norm(), epsilon)).sum()
}

/// IRLS: each round solves a weighted orthogonal Procrustes problem in
/// closed form, with frame weights `min(1, eps / |R'_f - R# R_f|_F)`.
fn irls_procrustes(gt: &[CameraPose], est: &[CameraPose], start: Matrix3<f64>, epsilon: f64) -> (Matrix3<f64>, f64) {
    let mut r = start;
    let mut cost = alignment_residual(gt, est, &r, epsilon);
    for _ in 0..20 {
        let mut cross = Matrix3::zeros();
        for (g, e) in gt.iter().zip(est) {
            let d = (g.matrix() - r * e.matrix()).norm();
            let w = if d <= epsilon { 1.0 } else { epsilon / d };
            cross += g.matrix() * e.matrix().transpose() * w;
        }
        let next = match project_to_so3(&cross) {
            Ok(p) => *p.matrix(),
            Err(_) => break,
        };
        let next_cost = alignment_residual(gt, est, &next, epsilon);
        if next_cost > cost {
            break;
        }
        let change = (cost - next_cost) / cost.max(f64::MIN_POSITIVE);
        r = next;
        cost = next_cost;
        if change < 1e-10 {
            break;
        }
    }
    (r, cost)
}

fn best_corrective(gt: &[CameraPose], est: &[CameraPose], epsilon: f64) -> (Matrix3<f64>, f64) {
    let mut best = irls_procrustes(gt, est, Matrix3::identity(), epsilon);
    let mut cross = Matrix3::zeros();
    for (g, e) in gt.iter().zip(est) {
        cross += g.matrix() * e.matrix().transpose();
    }
    if let Ok(p) = project_to_so3(&cross) {
        let alt = irls_procrustes(gt, est, *p.matrix(), epsilon);
        if alt.1 < best.1 {
            best = alt;
        }
    }
    best
}

/// Single rotation `R#` minimizing `sum_f h_eps(|R'_f - R# R_f|_F)`, with the
/// depth-flipped estimate tried as well.
pub fn corrective_rotation(gt: &[CameraPose], est: &[CameraPose], epsilon: f64) -> Result<AlignmentResult> {
    if gt.is_empty() || gt.len() != est.len() {
        return Err(Error::invalid(format!("pose streams of length {} and {}", gt.len(), est.len())));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let (r, residual) = best_corrective(gt, est, epsilon);
    let flipped = reflect_poses(est);
    let (rf, residual_f) = best_corrective(gt, &flipped, epsilon);
    let (r, residual, reflected) = if residual_f < residual { (rf, residual_f, true) } else { (r, residual, false) };
    Ok(AlignmentResult { corrective: project_to_so3(&r)?, reflected, residual })
}

/// Mean Euclidean distance between the quaternions of `gt` and `corrective * est`.
pub fn quaternionic_error(gt: &[CameraPose], est: &[CameraPose], corrective: &CameraPose) -> Result<f64> {
    if gt.is_empty() || gt.len() != est.len() {
        return Err(Error::invalid(format!("pose streams of length {} and {}", gt.len(), est.len())));
    }
    let total: f64 = gt
        .iter()
        .zip(est)
        .map(|(g, e)| {
            let aligned = CameraPose::new(corrective.matrix() * e.matrix())
                .unwrap_or_else(|_| corrective.compose(e));
            (rotation_to_quaternion(g).coords - rotation_to_quaternion(&aligned).coords).norm()
        })
        .sum();
    Ok(total / gt.len() as f64)
}

/// `eta_f = |chosen_f - gt_f|`.
pub fn convergence_pattern(chosen: &[usize], gt: &[usize]) -> Result<Vec<usize>> {
    if chosen.len() != gt.len() {
        return Err(Error::invalid(format!("{} chosen ids for {} frames", chosen.len(), gt.len())));
    }
    Ok(chosen.iter().zip(gt).map(|(&c, &g)| c.abs_diff(g)).collect())
}

/// Tab-separated heat map: one row per noise level (first column), one
/// column per frame.
pub fn eta_heatmap_tsv(rows: &[(f64, Vec<usize>)]) -> String {
    let frames = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let mut out = String::from("noise");
    for f in 0..frames {
        out.push_str(&format!("\t{f}"));
    }
    out.push('\n');
    for (noise, etas) in rows {
        out.push_str(&format!("{noise}"));
        for e in etas {
            out.push_str(&format!("\t{e}"));
        }
        out.push('\n');
    }
    out
}

/// Frames per prior state, `F / Q`.
pub fn compression_ratio(frames: usize, cardinality: usize) -> Result<f64> {
    if cardinality == 0 {
        return Err(Error::invalid("prior cardinality must be at least 1"));
    }
    Ok(frames as f64 / cardinality as f64)
}
