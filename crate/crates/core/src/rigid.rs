//! Rigid orthographic factorization (Tomasi-Kanade) used to seed the batch solver.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, RowVector3, Vector2};

use crate::error::{Error, Result};
use crate::geom::{project_to_so3, CameraPose, MeasurementMatrix};

#[derive(Debug, Clone)]
pub struct RigidInitResult {
    pub poses: Vec<CameraPose>,
    /// Zero-mean 3 x N shape in the first camera's frame (possibly reflected).
    pub rest_shape: Matrix3xX<f64>,
    /// Per-frame image centroids removed before factorizing.
    pub translations: Vec<Vector2<f64>>,
    /// Largest violation of the per-frame orthonormality constraints after the metric upgrade.
    pub orthonormality_residual: f64,
}

/// Subtracts the per-frame centroid from every measurement row pair.
pub fn center_measurements(w: &MeasurementMatrix) -> (MeasurementMatrix, Vec<Vector2<f64>>) {
    let mut data = w.data().clone();
    let mut translations = Vec::with_capacity(w.frames());
    for f in 0..w.frames() {
        let mut c = Vector2::zeros();
        for r in 0..2 {
            let mean = data.row(2 * f + r).mean();
            data.row_mut(2 * f + r).add_scalar_mut(-mean);
            c[r] = mean;
        }
        translations.push(c);
    }
    (MeasurementMatrix::new(data).expect("centering preserves validity"), translations)
}

/// Coefficients of `a G b^T` in the six unknowns of a symmetric `G`.
fn gram_row(a: &RowVector3<f64>, b: &RowVector3<f64>) -> [f64; 6] {
    [
        a[0] * b[0],
        a[0] * b[1] + a[1] * b[0],
        a[0] * b[2] + a[2] * b[0],
        a[1] * b[1],
        a[1] * b[2] + a[2] * b[1],
        a[2] * b[2],
    ]
}

fn complete_rotation(r1: &RowVector3<f64>, r2: &RowVector3<f64>) -> Result<CameraPose> {
    let r3 = r1.cross(r2);
    let m = Matrix3::from_rows(&[*r1, *r2, r3]);
    project_to_so3(&m)
}

pub fn rigid_factorize(w: &MeasurementMatrix) -> Result<RigidInitResult> {
    let frames = w.frames();
    let points = w.points();
    if frames < 3 || points < 4 {
        return Err(Error::invalid(format!(
            "rigid factorization needs F >= 3 and N >= 4, got F = {frames}, N = {points}"
        )));
    }
    let (centered, translations) = center_measurements(w);
    let wc = centered.data();

    let scale = wc.amax().max(f64::MIN_POSITIVE);
    let first = wc.rows(0, 2);
    let static_scene = (1..frames).all(|f| (wc.rows(2 * f, 2) - first).amax() <= 1e-12 * scale);
    if static_scene {
        return Err(Error::DegenerateMotion("all frames carry identical measurements".into()));
    }

    let svd = wc.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("SVD of the measurement matrix failed".into())),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < 3 {
        return Err(Error::DegenerateGeometry("fewer than three singular values".into()));
    }
    let sv: Vec<f64> = order.iter().take(3).map(|&i| svd.singular_values[i]).collect();
    if sv[2] <= 1e-9 * sv[0] {
        return Err(Error::DegenerateGeometry(format!(
            "centered measurements have rank < 3 (singular values {:.3e}, {:.3e}, {:.3e})",
            sv[0], sv[1], sv[2]
        )));
    }
    let mut motion = DMatrix::zeros(2 * frames, 3);
    let mut structure = Matrix3xX::zeros(points);
    for (j, &i) in order.iter().take(3).enumerate() {
        let s = sv[j].sqrt();
        motion.set_column(j, &(u.column(i) * s));
        structure.set_row(j, &(v_t.row(i) * s));
    }

    // Metric upgrade: find symmetric G = Q Q^T making every frame's rows orthonormal.
    let mut system = DMatrix::zeros(3 * frames, 6);
    let mut rhs = DVector::zeros(3 * frames);
    for f in 0..frames {
        let a: RowVector3<f64> = motion.fixed_view::<1, 3>(2 * f, 0).into_owned();
        let b: RowVector3<f64> = motion.fixed_view::<1, 3>(2 * f + 1, 0).into_owned();
        for (k, (x, y, target)) in [(&a, &a, 1.0), (&b, &b, 1.0), (&a, &b, 0.0)].into_iter().enumerate() {
            let row = gram_row(x, y);
            for (c, v) in row.iter().enumerate() {
                system[(3 * f + k, c)] = *v;
            }
            rhs[3 * f + k] = target;
        }
    }
    let sys_svd = system.svd(true, true);
    let smax = sys_svd.singular_values.max();
    let smin = sys_svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(Error::DegenerateMotion(
            "camera rows do not vary enough to fix the metric upgrade".into(),
        ));
    }
    let g = sys_svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::NumericalFailure(format!("metric upgrade solve failed: {e}")))?;
    let gram = Matrix3::new(g[0], g[1], g[2], g[1], g[3], g[4], g[2], g[4], g[5]);
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if lmax <= 0.0 || lmin < -1e-3 * lmax {
        return Err(Error::DegenerateMotion(format!(
            "metric upgrade Gram matrix is not positive definite (eigenvalues {lmin:.3e} .. {lmax:.3e})"
        )));
    }
    let sqrt_eig = eig.eigenvalues.map(|l| l.max(1e-10).sqrt());
    let mut upgrade = eig.eigenvectors * Matrix3::from_diagonal(&sqrt_eig);

    let rows_of = |upgrade: &Matrix3<f64>, f: usize| {
        let block = motion.fixed_view::<2, 3>(2 * f, 0) * upgrade;
        (block.row(0).into_owned(), block.row(1).into_owned())
    };

    // Express everything in the first camera's frame.
    let (a0, b0) = rows_of(&upgrade, 0);
    let first_pose = complete_rotation(&a0, &b0)?;
    upgrade *= first_pose.matrix().transpose();

    let mut poses = Vec::with_capacity(frames);
    let mut orthonormality_residual: f64 = 0.0;
    for f in 0..frames {
        let (a, b) = rows_of(&upgrade, f);
        orthonormality_residual = orthonormality_residual
            .max((a.norm_squared() - 1.0).abs())
            .max((b.norm_squared() - 1.0).abs())
            .max(a.dot(&b).abs());
        poses.push(complete_rotation(&a, &b)?);
    }
    let inverse = upgrade
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("metric upgrade is singular".into()))?;
    let rest_shape = inverse * structure;

    Ok(RigidInitResult { poses, rest_shape, translations, orthonormality_residual })
}
