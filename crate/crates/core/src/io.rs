//! The NRSM1 file family: an ASCII header line `NRSM1 <kind> <count> <N>`
//! followed by little-endian `f64` values in row-major order.
//!
//! | kind  | count | payload                                          |
//! |-------|-------|--------------------------------------------------|
//! | `W`   | F     | `2F x N` measurement matrix                      |
//! | `S`   | F     | `3F x N` shape sequence                          |
//! | `DSP` | Q     | `3Q x N` stacked states, then Q norms            |
//! | `R`   | F     | `3F x 3` stacked rotation matrices (`N` is 3)    |

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Matrix3xX};

use crate::dsp::DynamicShapePrior;
use crate::error::{Error, Result};
use crate::geom::{project_to_so3, CameraPose, MeasurementMatrix, ShapeSequence};

pub const MAGIC: &str = "NRSM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    W,
    S,
    Dsp,
    R,
}

impl Kind {
    fn tag(self) -> &'static str {
        match self {
            Kind::W => "W",
            Kind::S => "S",
            Kind::Dsp => "DSP",
            Kind::R => "R",
        }
    }

    fn rows_per_item(self) -> usize {
        match self {
            Kind::W => 2,
            Kind::S | Kind::Dsp | Kind::R => 3,
        }
    }
}

fn write_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn encode(kind: Kind, count: usize, cols: usize, m: &DMatrix<f64>, extra: &[f64]) -> Vec<u8> {
    let mut out = format!("{MAGIC} {} {count} {cols}\n", kind.tag()).into_bytes();
    out.reserve(8 * (m.len() + extra.len()));
    write_matrix(&mut out, m);
    for v in extra {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// A decoded NRSM1 payload.
struct Decoded {
    count: usize,
    matrix: DMatrix<f64>,
    extra: Vec<f64>,
    /// Bytes consumed, header included.
    len: usize,
}

fn decode(bytes: &[u8], kind: Kind) -> Result<Decoded> {
    let corrupt = |msg: String| Error::CorruptStream(msg);
    if bytes.is_empty() {
        return Err(Error::invalid("empty input"));
    }
    let newline = bytes
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing NRSM1 header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| corrupt("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(corrupt(format!("bad header {header:?}")));
    }
    if fields[1] != kind.tag() {
        return Err(corrupt(format!("expected kind {}, found {}", kind.tag(), fields[1])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| corrupt(format!("bad count {s:?} in header")));
    let (count, cols) = (parse(fields[2])?, parse(fields[3])?);
    let rows = count
        .checked_mul(kind.rows_per_item())
        .ok_or_else(|| corrupt("header counts overflow".into()))?;
    let extra_len = if kind == Kind::Dsp { count } else { 0 };
    let values = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_add(extra_len))
        .ok_or_else(|| corrupt("header counts overflow".into()))?;
    let body = &bytes[newline + 1..];
    let need = values.checked_mul(8).ok_or_else(|| corrupt("header counts overflow".into()))?;
    if body.len() < need {
        return Err(corrupt(format!("payload truncated: need {need} bytes, have {}", body.len())));
    }
    let mut it = body[..need].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let matrix = DMatrix::from_row_iterator(rows, cols, it.by_ref().take(rows * cols));
    let extra = it.collect();
    Ok(Decoded { count, matrix, extra, len: newline + 1 + need })
}

fn exact(decoded: Decoded, total: usize) -> Result<Decoded> {
    if decoded.len != total {
        return Err(Error::CorruptStream(format!("{} trailing bytes after payload", total - decoded.len)));
    }
    Ok(decoded)
}

pub fn measurements_to_bytes(w: &MeasurementMatrix) -> Vec<u8> {
    encode(Kind::W, w.frames(), w.points(), w.data(), &[])
}

pub fn measurements_from_bytes(bytes: &[u8]) -> Result<MeasurementMatrix> {
    let d = exact(decode(bytes, Kind::W)?, bytes.len())?;
    MeasurementMatrix::new(d.matrix)
}

pub fn shapes_to_bytes(s: &ShapeSequence) -> Vec<u8> {
    encode(Kind::S, s.frames(), s.points(), s.data(), &[])
}

pub fn shapes_from_bytes(bytes: &[u8]) -> Result<ShapeSequence> {
    let d = exact(decode(bytes, Kind::S)?, bytes.len())?;
    ShapeSequence::new(d.matrix)
}

pub fn poses_to_bytes(poses: &[CameraPose]) -> Vec<u8> {
    let mut m = DMatrix::zeros(3 * poses.len(), 3);
    for (f, p) in poses.iter().enumerate() {
        m.fixed_view_mut::<3, 3>(3 * f, 0).copy_from(p.matrix());
    }
    encode(Kind::R, poses.len(), 3, &m, &[])
}

pub fn poses_from_bytes(bytes: &[u8]) -> Result<Vec<CameraPose>> {
    let d = exact(decode(bytes, Kind::R)?, bytes.len())?;
    if d.matrix.ncols() != 3 {
        return Err(Error::CorruptStream(format!("pose file must have 3 columns, has {}", d.matrix.ncols())));
    }
    (0..d.count)
        .map(|f| {
            let m: Matrix3<f64> = d.matrix.fixed_view::<3, 3>(3 * f, 0).into_owned();
            CameraPose::new(m).or_else(|_| project_to_so3(&m))
        })
        .collect()
}

pub fn dsp_to_bytes(dsp: &DynamicShapePrior) -> Vec<u8> {
    let n = dsp.points();
    let mut m = DMatrix::zeros(3 * dsp.len(), n);
    for (i, s) in dsp.states().iter().enumerate() {
        m.rows_mut(3 * i, 3).copy_from(s);
    }
    encode(Kind::Dsp, dsp.len(), n, &m, dsp.norms())
}

/// Decodes a prior from the front of `bytes`, returning it with the number
/// of bytes consumed. The format does not store the threshold or source
/// frames; they come back as `0` and `0..Q`.
pub fn dsp_from_prefix(bytes: &[u8]) -> Result<(DynamicShapePrior, usize)> {
    let d = decode(bytes, Kind::Dsp)?;
    let states: Vec<Matrix3xX<f64>> =
        (0..d.count).map(|i| Matrix3xX::from_iterator(d.matrix.ncols(), d.matrix.rows(3 * i, 3).iter().copied())).collect();
    let len = d.len;
    let dsp = DynamicShapePrior::from_parts(states, d.extra, (0..d.count).collect(), 0.0)
        .map_err(|e| Error::CorruptStream(format!("invalid prior payload: {e}")))?;
    Ok((dsp, len))
}

pub fn dsp_from_bytes(bytes: &[u8]) -> Result<DynamicShapePrior> {
    let (dsp, len) = dsp_from_prefix(bytes)?;
    if len != bytes.len() {
        return Err(Error::CorruptStream(format!("{} trailing bytes after payload", bytes.len() - len)));
    }
    Ok(dsp)
}

pub fn read_measurements(path: impl AsRef<Path>) -> Result<MeasurementMatrix> {
    measurements_from_bytes(&fs::read(path)?)
}

pub fn write_measurements(path: impl AsRef<Path>, w: &MeasurementMatrix) -> Result<()> {
    Ok(fs::write(path, measurements_to_bytes(w))?)
}

pub fn read_shapes(path: impl AsRef<Path>) -> Result<ShapeSequence> {
    shapes_from_bytes(&fs::read(path)?)
}

pub fn write_shapes(path: impl AsRef<Path>, s: &ShapeSequence) -> Result<()> {
    Ok(fs::write(path, shapes_to_bytes(s))?)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<CameraPose>> {
    poses_from_bytes(&fs::read(path)?)
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[CameraPose]) -> Result<()> {
    Ok(fs::write(path, poses_to_bytes(poses))?)
}

pub fn read_dsp(path: impl AsRef<Path>) -> Result<DynamicShapePrior> {
    dsp_from_bytes(&fs::read(path)?)
}

pub fn write_dsp(path: impl AsRef<Path>, dsp: &DynamicShapePrior) -> Result<()> {
    Ok(fs::write(path, dsp_to_bytes(dsp))?)
}

/// One index per line.
pub fn read_ids(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|_| Error::invalid(format!("bad index {l:?}"))))
        .collect()
}

pub fn write_ids(path: impl AsRef<Path>, ids: &[usize]) -> Result<()> {
    let text: String = ids.iter().map(|i| format!("{i}\n")).collect();
    Ok(fs::write(path, text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::build_dsp;

    #[test]
    fn header_and_layout() {
        let w = MeasurementMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let bytes = measurements_to_bytes(&w);
        assert!(bytes.starts_with(b"NRSM1 W 1 2\n"));
        assert_eq!(bytes.len(), 12 + 32);
        // Row-major: the first row (1, 2) precedes the second (3, 4).
        for (i, v) in [1.0f64, 2.0, 3.0, 4.0].iter().enumerate() {
            assert_eq!(&bytes[12 + 8 * i..20 + 8 * i], &v.to_le_bytes());
        }
        assert_eq!(measurements_from_bytes(&bytes).unwrap(), w);
    }

    #[test]
    fn round_trips() {
        let s = ShapeSequence::new(DMatrix::from_fn(6, 3, |r, c| r as f64 - 0.5 * c as f64)).unwrap();
        assert_eq!(shapes_from_bytes(&shapes_to_bytes(&s)).unwrap(), s);
        let poses = vec![CameraPose::identity(), CameraPose::from_axis_angle(&nalgebra::Vector3::x(), 0.3)];
        assert_eq!(poses_from_bytes(&poses_to_bytes(&poses)).unwrap(), poses);
        let dsp = build_dsp(&s.to_frames(), 0.0).unwrap();
        let back = dsp_from_bytes(&dsp_to_bytes(&dsp)).unwrap();
        assert_eq!(back.states(), dsp.states());
        assert_eq!(back.norms(), dsp.norms());
    }

    #[test]
    fn corrupt_inputs() {
        let s = ShapeSequence::new(DMatrix::from_fn(3, 2, |r, c| (r + c) as f64)).unwrap();
        let bytes = shapes_to_bytes(&s);
        assert!(matches!(shapes_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::CorruptStream(_))));
        assert!(matches!(measurements_from_bytes(&bytes), Err(Error::CorruptStream(_))));
        assert!(matches!(shapes_from_bytes(b"garbage"), Err(Error::CorruptStream(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(shapes_from_bytes(&long), Err(Error::CorruptStream(_))));
    }
}
