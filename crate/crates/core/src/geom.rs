//! Numeric containers, norms, the orthographic camera and SO(3) helpers.
//!
//! Measurements are stored as a `2F x N` matrix (a `(u, v)` row pair per
//! frame) and shapes as a `3F x N` matrix (an `(x, y, z)` row triple per
//! frame). Single frames are handed around as `Matrix2xX` / `Matrix3xX`.

use nalgebra::{
    DMatrix, Dim, Matrix, Matrix2x3, Matrix2xX, Matrix3, Matrix3xX, Quaternion, RawStorage,
    Vector3,
};

use crate::error::{Error, Result};

/// Max-abs tolerance for rotation validity checks.
pub const ROTATION_TOL: f64 = 1e-9;

fn ensure_finite<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(
    m: &Matrix<f64, R, C, S>,
    what: &str,
) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite entries")))
    }
}

/// Stacked orthographic observations, two rows per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    data: DMatrix<f64>,
}

impl MeasurementMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || !data.nrows().is_multiple_of(2) || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "measurement matrix must be 2F x N with F, N >= 1, got {} x {}",
                data.nrows(),
                data.ncols()
            )));
        }
        ensure_finite(&data, "measurement matrix")?;
        Ok(Self { data })
    }

    pub fn from_frames(frames: &[Matrix2xX<f64>]) -> Result<Self> {
        let n = frames.first().map(|f| f.ncols()).unwrap_or(0);
        if frames.iter().any(|f| f.ncols() != n) {
            return Err(Error::invalid("frames disagree on the number of points"));
        }
        let mut data = DMatrix::zeros(2 * frames.len(), n);
        for (f, frame) in frames.iter().enumerate() {
            data.rows_mut(2 * f, 2).copy_from(frame);
        }
        Self::new(data)
    }

    pub fn frames(&self) -> usize {
        self.data.nrows() / 2
    }

    pub fn points(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame(&self, f: usize) -> Matrix2xX<f64> {
        let mut out = Matrix2xX::zeros(self.points());
        out.copy_from(&self.data.rows(2 * f, 2));
        out
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }
}

/// Stacked 3D point sets, three rows per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSequence {
    data: DMatrix<f64>,
}

impl ShapeSequence {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || !data.nrows().is_multiple_of(3) || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "shape sequence must be 3F x N with F, N >= 1, got {} x {}",
                data.nrows(),
                data.ncols()
            )));
        }
        ensure_finite(&data, "shape sequence")?;
        Ok(Self { data })
    }

    pub fn from_frames(frames: &[Matrix3xX<f64>]) -> Result<Self> {
        let n = frames.first().map(|f| f.ncols()).unwrap_or(0);
        if frames.iter().any(|f| f.ncols() != n) {
            return Err(Error::invalid("frames disagree on the number of points"));
        }
        let mut data = DMatrix::zeros(3 * frames.len(), n);
        for (f, frame) in frames.iter().enumerate() {
            data.rows_mut(3 * f, 3).copy_from(frame);
        }
        Self::new(data)
    }

    pub fn frames(&self) -> usize {
        self.data.nrows() / 3
    }

    pub fn points(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame(&self, f: usize) -> Matrix3xX<f64> {
        let mut out = Matrix3xX::zeros(self.points());
        out.copy_from(&self.data.rows(3 * f, 3));
        out
    }

    pub fn to_frames(&self) -> Vec<Matrix3xX<f64>> {
        (0..self.frames()).map(|f| self.frame(f)).collect()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }
}

/// A proper rotation, `R^T R = I` and `det R = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
}

impl CameraPose {
    /// Validates `rotation` against [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("rotation contains non-finite entries"));
        }
        let gram_dev = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det_dev = (rotation.determinant() - 1.0).abs();
        if gram_dev > ROTATION_TOL || det_dev > ROTATION_TOL {
            return Err(Error::invalid(format!(
                "not a rotation (orthogonality deviation {gram_dev:.3e}, det deviation {det_dev:.3e})"
            )));
        }
        Ok(Self { rotation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity() }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let norm = axis.norm();
        if norm == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        decode_axis_angle(&(axis * (angle / norm)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn transpose(&self) -> Self {
        Self { rotation: self.rotation.transpose() }
    }

    /// `self * other`.
    pub fn compose(&self, other: &CameraPose) -> Self {
        // Products of rotations drift by a few ulps; re-project to stay valid.
        project_to_so3(&(self.rotation * other.rotation)).unwrap_or(*other)
    }

    /// The two image rows of the camera, `I_{2x3} R`.
    pub fn camera_rows(&self) -> Matrix2x3<f64> {
        self.rotation.fixed_rows::<2>(0).into_owned()
    }
}

/// The constant truncation operator `I_{2x3}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OrthographicProjector;

impl OrthographicProjector {
    pub fn apply(&self, shape: &Matrix3xX<f64>) -> Matrix2xX<f64> {
        shape.fixed_rows::<2>(0).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Per-element Huber loss.
    Huber,
    /// Plain least squares, `1/2 ||m||_F^2`.
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustNormConfig {
    pub epsilon: f64,
    pub mode: NormMode,
}

impl RobustNormConfig {
    pub fn huber(epsilon: f64) -> Result<Self> {
        let cfg = Self { epsilon, mode: NormMode::Huber };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn least_squares() -> Self {
        Self { epsilon: 1.0, mode: NormMode::Frobenius }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Penalty of a single residual.
    #[inline]
    pub fn rho(&self, r: f64) -> f64 {
        match self.mode {
            NormMode::Huber => huber(r, self.epsilon),
            NormMode::Frobenius => 0.5 * r * r,
        }
    }

    /// Derivative of [`rho`](Self::rho).
    #[inline]
    pub fn psi(&self, r: f64) -> f64 {
        match self.mode {
            NormMode::Huber => huber_derivative(r, self.epsilon),
            NormMode::Frobenius => r,
        }
    }

    /// IRLS weight `psi(r) / r`; the weighted quadratic majorizes `rho`.
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        match self.mode {
            NormMode::Huber => {
                let a = r.abs();
                if a <= self.epsilon {
                    1.0
                } else {
                    self.epsilon / a
                }
            }
            NormMode::Frobenius => 1.0,
        }
    }

    /// Sum of per-element penalties.
    pub fn penalty<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(&self, m: &Matrix<f64, R, C, S>) -> f64 {
        m.iter().map(|&r| self.rho(r)).sum()
    }
}

impl Default for RobustNormConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, mode: NormMode::Huber }
    }
}

/// Scalar Huber function: `r^2/2` inside `eps`, `eps |r| - eps^2/2` outside.
#[inline]
pub fn huber(r: f64, eps: f64) -> f64 {
    let a = r.abs();
    if a <= eps {
        0.5 * r * r
    } else {
        eps * a - 0.5 * eps * eps
    }
}

#[inline]
pub fn huber_derivative(r: f64, eps: f64) -> f64 {
    r.clamp(-eps, eps)
}

pub fn frobenius_norm<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> Result<f64> {
    ensure_finite(m, "matrix")?;
    Ok(m.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Sum of per-element Huber losses.
pub fn huber_loss<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(m: &Matrix<f64, R, C, S>, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    ensure_finite(m, "matrix")?;
    Ok(m.iter().map(|&r| huber(r, epsilon)).sum())
}

/// Closest rotation to `m` in the Frobenius sense.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<CameraPose> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("SVD did not converge".into())),
    };
    let sv = svd.singular_values;
    let (min_idx, min_sv) = sv
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if s < acc.1 { (i, s) } else { acc });
    if min_sv <= 1e-12 {
        return Err(Error::DegenerateGeometry(format!(
            "cannot project a rank-deficient matrix to SO(3) (smallest singular value {min_sv:.3e})"
        )));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(min_idx, min_idx)] = -1.0;
    }
    Ok(CameraPose { rotation: u * d * v_t })
}

/// First two rows of `pose * shape`.
pub fn orthographic_project(pose: &CameraPose, shape: &Matrix3xX<f64>) -> Matrix2xX<f64> {
    pose.camera_rows() * shape
}

/// Unit quaternion `(w, x, y, z)` with `w >= 0`.
///
/// When `w` vanishes (half-turns) the vector part is oriented so that its
/// first nonzero component is positive.
pub fn rotation_to_quaternion(pose: &CameraPose) -> Quaternion<f64> {
    let m = &pose.rotation;
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let (w, x, y, z);
    if trace > 0.0 {
        let s = 2.0 * (trace + 1.0).sqrt();
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let mut q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    q /= n;
    if q.w < 0.0 {
        q = -q;
    }
    if q.w <= 1e-12 {
        let first = [q.i, q.j, q.k].into_iter().find(|c| c.abs() > 1e-12).unwrap_or(0.0);
        if first < 0.0 {
            q = Quaternion::new(q.w, -q.i, -q.j, -q.k);
        }
    }
    q
}

pub fn quaternion_to_rotation(q: &Quaternion<f64>) -> CameraPose {
    let q = q / q.norm();
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let rotation = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    CameraPose { rotation }
}

/// Axis scaled by angle, angle in `[0, pi]`.
pub fn encode_axis_angle(pose: &CameraPose) -> Vector3<f64> {
    let q = rotation_to_quaternion(pose);
    let v = Vector3::new(q.i, q.j, q.k);
    let s = v.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

pub fn decode_axis_angle(aa: &Vector3<f64>) -> CameraPose {
    let angle = aa.norm();
    if angle == 0.0 {
        return CameraPose::identity();
    }
    let half = 0.5 * angle;
    let v = aa * (half.sin() / angle);
    quaternion_to_rotation(&Quaternion::new(half.cos(), v.x, v.y, v.z))
}
