//! Synthetic scenes and track corruption for generate-and-recover experiments.

use nalgebra::{DMatrix, Matrix2xX, Matrix3xX, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dcmdr::make_dct_basis;
use crate::error::{Error, Result};
use crate::geom::{orthographic_project, CameraPose, MeasurementMatrix, ShapeSequence};

/// Where the per-frame ground-truth shapes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSource {
    /// Base shapes linearly interpolated along the timeline (at least two).
    Bases(Vec<Matrix3xX<f64>>),
    /// A planar grid bending in depth; see [`sheet_frames`].
    Sheet { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RotationSchedule {
    /// Periodic yaw sweep over +-30 degrees at a fixed 20 degree pitch.
    A,
    /// Combined yaw / pitch oscillation with incommensurate periods.
    B,
    /// One pose per frame.
    Custom(Vec<CameraPose>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub shapes: ShapeSource,
    pub frames: usize,
    pub schedule: RotationSchedule,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub gt_shapes: ShapeSequence,
    pub gt_poses: Vec<CameraPose>,
    /// Nearest base-shape timeline index of every frame.
    pub gt_state_ids: Vec<usize>,
    pub w_clean: MeasurementMatrix,
    pub seed: u64,
}

/// Yaw period of schedule A, in frames.
pub const SCHEDULE_A_PERIOD: f64 = 8.0;

/// Side length of the built-in sheet in image units.
pub const SHEET_EXTENT: f64 = 200.0;
/// Depth-bending temporal profiles use this many leading DCT atoms.
pub const SHEET_ATOMS: usize = 3;

/// A `rows x cols` sheet spanning [`SHEET_EXTENT`], bending in depth with
/// two spatial modes whose temporal profiles combine the first
/// [`SHEET_ATOMS`] DCT atoms and grow monotonically over the sequence. Points are listed row-major, matching
/// [`crate::dcmdr::grid_layout`].
pub fn sheet_frames(rows: usize, cols: usize, frames: usize, seed: u64) -> Result<Vec<Matrix3xX<f64>>> {
    if rows < 2 || cols < 2 || frames == 0 {
        return Err(Error::invalid(format!(
            "sheet needs at least 2 x 2 points and one frame, got {rows} x {cols} over {frames} frames"
        )));
    }
    let atoms = SHEET_ATOMS.min(frames);
    let basis = make_dct_basis(frames, atoms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Atom 1 carries a steady bend so the mean shape is not planar. Atom 2
    // makes the bend grow over the sequence; keeping |c3| < |c2| / 4 and the
    // profile positive makes it grow monotonically, so frames ordered by
    // norm are also ordered by shape.
    let mut coeffs = [[0.0f64; SHEET_ATOMS]; 2];
    for (mode, row) in coeffs.iter_mut().enumerate() {
        row[0] = if mode == 0 { 1.2 } else { 0.9 };
        row[1] = -rng.random_range(0.3..0.5);
        row[2] = rng.random_range(-0.9..0.9) * row[1].abs() / 4.0;
    }
    let half = SHEET_EXTENT / 2.0;
    let n = rows * cols;
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let profile = |mode: usize| (0..atoms).map(|k| coeffs[mode][k] * basis.theta()[(t, k)]).sum::<f64>();
        let (p0, p1) = (profile(0), profile(1));
        let mut shape = Matrix3xX::zeros(n);
        for r in 0..rows {
            for c in 0..cols {
                let x = -half + SHEET_EXTENT * c as f64 / (cols - 1) as f64;
                let y = -half + SHEET_EXTENT * r as f64 / (rows - 1) as f64;
                let (u, v) = (x / half, y / half);
                let bump = (std::f64::consts::FRAC_PI_2 * u).cos() * (std::f64::consts::FRAC_PI_2 * v).cos();
                let twist = u * v;
                let z = 40.0 * p0 * bump + 30.0 * p1 * twist;
                shape.set_column(r * cols + c, &Vector3::new(x, y, z));
            }
        }
        out.push(shape);
    }
    Ok(out)
}

/// Per-frame poses of a built-in or custom schedule.
///
/// Both built-in schedules oscillate with periods of a few frames and keep
/// the camera pitched away from the frontal view, so depth changes always
/// reach the image and the camera motion is not itself a slow trajectory.
pub fn schedule_poses(schedule: &RotationSchedule, frames: usize) -> Result<Vec<CameraPose>> {
    let deg = std::f64::consts::PI / 180.0;
    let tau = 2.0 * std::f64::consts::PI;
    let yaw_pitch = |yaw: f64, pitch: f64| {
        let y = CameraPose::from_axis_angle(&Vector3::y(), yaw);
        let x = CameraPose::from_axis_angle(&Vector3::x(), pitch);
        x.compose(&y)
    };
    match schedule {
        RotationSchedule::A => Ok((0..frames)
            .map(|f| yaw_pitch(30.0 * deg * (tau * f as f64 / SCHEDULE_A_PERIOD).sin(), 20.0 * deg))
            .collect()),
        RotationSchedule::B => Ok((0..frames)
            .map(|f| {
                let t = f as f64;
                yaw_pitch(25.0 * deg * (tau * t / 9.0).cos(), (25.0 + 12.0 * (tau * t / 13.0).sin()) * deg)
            })
            .collect()),
        RotationSchedule::Custom(poses) => {
            if poses.len() != frames {
                return Err(Error::invalid(format!("custom schedule has {} poses for {frames} frames", poses.len())));
            }
            Ok(poses.clone())
        }
    }
}

pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene> {
    let frames = config.frames;
    if frames == 0 {
        return Err(Error::invalid("a scene needs at least one frame"));
    }
    let (shapes, gt_state_ids) = match &config.shapes {
        ShapeSource::Sheet { rows, cols } => (sheet_frames(*rows, *cols, frames, config.seed)?, (0..frames).collect()),
        ShapeSource::Bases(bases) => interpolate_bases(bases, frames)?,
    };
    let gt_poses = schedule_poses(&config.schedule, frames)?;
    let projected: Vec<Matrix2xX<f64>> =
        gt_poses.iter().zip(&shapes).map(|(p, s)| orthographic_project(p, s)).collect();
    Ok(SyntheticScene {
        gt_shapes: ShapeSequence::from_frames(&shapes)?,
        gt_poses,
        gt_state_ids,
        w_clean: MeasurementMatrix::from_frames(&projected)?,
        seed: config.seed,
    })
}

fn interpolate_bases(bases: &[Matrix3xX<f64>], frames: usize) -> Result<(Vec<Matrix3xX<f64>>, Vec<usize>)> {
    if bases.len() < 2 {
        return Err(Error::invalid(format!("need at least two base shapes, got {}", bases.len())));
    }
    let n = bases[0].ncols();
    if n == 0 || bases.iter().any(|b| b.ncols() != n) {
        return Err(Error::invalid("base shapes disagree on the number of points"));
    }
    let span = (bases.len() - 1) as f64;
    let denom = frames.saturating_sub(1).max(1) as f64;
    let mut shapes = Vec::with_capacity(frames);
    let mut ids = Vec::with_capacity(frames);
    for f in 0..frames {
        let u = span * f as f64 / denom;
        let lo = (u.floor() as usize).min(bases.len() - 2);
        let frac = u - lo as f64;
        shapes.push(&bases[lo] * (1.0 - frac) + &bases[lo + 1] * frac);
        ids.push(u.round() as usize);
    }
    Ok((shapes, ids))
}

/// Adds independent uniform noise in `[-magnitude, magnitude]` to every entry.
pub fn perturb_tracks(w: &MeasurementMatrix, magnitude: f64, seed: u64) -> Result<MeasurementMatrix> {
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(Error::invalid(format!("perturbation magnitude must be nonnegative, got {magnitude}")));
    }
    if magnitude == 0.0 {
        return Ok(w.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = w.data().clone();
    for v in data.iter_mut() {
        *v += rng.random_range(-magnitude..=magnitude);
    }
    MeasurementMatrix::new(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnockoutFill {
    /// The point's first-frame position, as a stuck tracker would report.
    #[default]
    FrozenReference,
    Zeros,
}

/// Replaces `round(ratio * F * N)` point-frame pairs, drawn without
/// replacement, with the fill value. Returns the corrupted tracks and the
/// sorted `(frame, point)` pairs that were selected.
pub fn knockout_tracks(
    w: &MeasurementMatrix,
    ratio: f64,
    fill: KnockoutFill,
    seed: u64,
) -> Result<(MeasurementMatrix, Vec<(usize, usize)>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("knockout ratio must lie in [0, 1], got {ratio}")));
    }
    let (frames, n) = (w.frames(), w.points());
    let total = frames * n;
    let count = ((ratio * total as f64).round() as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask: Vec<(usize, usize)> =
        index::sample(&mut rng, total, count).into_iter().map(|i| (i / n, i % n)).collect();
    mask.sort_unstable();
    let src = w.data();
    let mut data: DMatrix<f64> = src.clone();
    for &(f, p) in &mask {
        for r in 0..2 {
            data[(2 * f + r, p)] = match fill {
                KnockoutFill::FrozenReference => src[(r, p)],
                KnockoutFill::Zeros => 0.0,
            };
        }
    }
    Ok((MeasurementMatrix::new(data)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bases() -> Vec<Matrix3xX<f64>> {
        vec![
            Matrix3xX::from_column_slice(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]),
            Matrix3xX::from_column_slice(&[2.0, 4.0, 6.0, -1.0, 0.0, 1.0]),
        ]
    }

    #[test]
    fn midpoint_is_average() {
        let cfg = SceneConfig {
            shapes: ShapeSource::Bases(two_bases()),
            frames: 3,
            schedule: RotationSchedule::Custom(vec![CameraPose::identity(); 3]),
            seed: 1,
        };
        let scene = generate_scene(&cfg).unwrap();
        let b = two_bases();
        assert_eq!(scene.gt_shapes.frame(1), (&b[0] + &b[1]) * 0.5);
        assert_eq!(scene.gt_state_ids, vec![0, 1, 1]);
    }

    #[test]
    fn schedules_decouple_poses_from_shapes() {
        let mk = |schedule| SceneConfig { shapes: ShapeSource::Sheet { rows: 4, cols: 5 }, frames: 12, schedule, seed: 3 };
        let a = generate_scene(&mk(RotationSchedule::A)).unwrap();
        let b = generate_scene(&mk(RotationSchedule::B)).unwrap();
        assert_eq!(a.gt_shapes, b.gt_shapes);
        assert_ne!(a.w_clean, b.w_clean);
        assert_eq!(a, generate_scene(&mk(RotationSchedule::A)).unwrap());
    }

    #[test]
    fn clean_tracks_reproject_exactly() {
        let cfg = SceneConfig { shapes: ShapeSource::Sheet { rows: 3, cols: 3 }, frames: 5, schedule: RotationSchedule::B, seed: 9 };
        let scene = generate_scene(&cfg).unwrap();
        for f in 0..5 {
            assert_eq!(scene.w_clean.frame(f), orthographic_project(&scene.gt_poses[f], &scene.gt_shapes.frame(f)));
        }
    }

    #[test]
    fn mismatched_bases_rejected() {
        let bases = vec![Matrix3xX::zeros(2), Matrix3xX::zeros(3)];
        let cfg = SceneConfig { shapes: ShapeSource::Bases(bases), frames: 4, schedule: RotationSchedule::A, seed: 0 };
        assert!(matches!(generate_scene(&cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn knockout_extremes() {
        let w = MeasurementMatrix::new(DMatrix::from_fn(6, 4, |r, c| (r * 4 + c) as f64)).unwrap();
        let (same, mask) = knockout_tracks(&w, 0.0, KnockoutFill::Zeros, 1).unwrap();
        assert_eq!(same, w);
        assert!(mask.is_empty());
        let (all, mask) = knockout_tracks(&w, 1.0, KnockoutFill::Zeros, 1).unwrap();
        assert_eq!(mask.len(), 12);
        assert!(all.data().iter().all(|&v| v == 0.0));
        let (frozen, _) = knockout_tracks(&w, 1.0, KnockoutFill::FrozenReference, 1).unwrap();
        for f in 0..3 {
            assert_eq!(frozen.frame(f), w.frame(0));
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let w = MeasurementMatrix::new(DMatrix::from_fn(4, 3, |r, c| (r + c) as f64 * 0.1)).unwrap();
        assert_eq!(perturb_tracks(&w, 0.0, 5).unwrap(), w);
        assert!(perturb_tracks(&w, -1.0, 5).is_err());
    }
}
