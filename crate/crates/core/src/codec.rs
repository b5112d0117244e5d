//! Compressed reconstructions: the prior once, then one `(state id, pose)`
//! record per frame.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSPC" | version u8 | id_width u8 | Q u32 | N u32 | F u32
//! NRSM1 DSP blob
//! F x [state_id (id_width bytes) | 3 x f32 axis-angle]
//! ```

use nalgebra::Vector3;

use crate::dsp::DynamicShapePrior;
use crate::dspr::{dspr_sequence, DsprConfig, FrameResult};
use crate::error::{Error, Result};
use crate::geom::{decode_axis_angle, encode_axis_angle, CameraPose, MeasurementMatrix, ShapeSequence};
use crate::io::{dsp_from_prefix, dsp_to_bytes};

pub const STREAM_MAGIC: &[u8; 4] = b"DSPC";
pub const STREAM_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 * 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub state_id: usize,
    pub axis_angle: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedStream {
    dsp: DynamicShapePrior,
    records: Vec<FrameRecord>,
}

/// Bytes per state id: 1 when `Q <= 255`, else 2.
pub fn id_width(cardinality: usize) -> Result<usize> {
    match cardinality {
        0..=255 => Ok(1),
        256..=65535 => Ok(2),
        q => Err(Error::IdWidthOverflow(q)),
    }
}

impl CompressedStream {
    pub fn new(dsp: DynamicShapePrior, records: Vec<FrameRecord>) -> Result<Self> {
        id_width(dsp.len())?;
        if let Some(bad) = records.iter().find(|r| r.state_id >= dsp.len()) {
            return Err(Error::invalid(format!("state id {} out of range for {} states", bad.state_id, dsp.len())));
        }
        Ok(Self { dsp, records })
    }

    /// Records the chosen state and pose of every frame result.
    pub fn from_results(dsp: DynamicShapePrior, results: &[FrameResult]) -> Result<Self> {
        let records = results
            .iter()
            .map(|r| {
                let aa = encode_axis_angle(&r.pose);
                FrameRecord { state_id: r.index, axis_angle: [aa.x as f32, aa.y as f32, aa.z as f32] }
            })
            .collect();
        Self::new(dsp, records)
    }

    pub fn dsp(&self) -> &DynamicShapePrior {
        &self.dsp
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    pub fn frames(&self) -> usize {
        self.records.len()
    }

    pub fn id_width(&self) -> usize {
        id_width(self.dsp.len()).expect("checked at construction")
    }

    /// `F / Q`.
    pub fn compression_ratio(&self) -> f64 {
        self.records.len() as f64 / self.dsp.len() as f64
    }

    /// Dequantized per-frame poses.
    pub fn poses(&self) -> Vec<CameraPose> {
        self.records
            .iter()
            .map(|r| decode_axis_angle(&Vector3::new(r.axis_angle[0] as f64, r.axis_angle[1] as f64, r.axis_angle[2] as f64)))
            .collect()
    }

    pub fn state_ids(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.state_id).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.id_width();
        let blob = dsp_to_bytes(&self.dsp);
        let mut out = Vec::with_capacity(HEADER_LEN + blob.len() + self.records.len() * (12 + width));
        out.extend_from_slice(STREAM_MAGIC);
        out.push(STREAM_VERSION);
        out.push(width as u8);
        for v in [self.dsp.len(), self.dsp.points(), self.records.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&blob);
        for r in &self.records {
            out.extend_from_slice(&(r.state_id as u16).to_le_bytes()[..width]);
            for c in r.axis_angle {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| Error::CorruptStream(msg);
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!("stream of {} bytes is shorter than its header", bytes.len())));
        }
        if &bytes[..4] != STREAM_MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        if bytes[4] != STREAM_VERSION {
            return Err(corrupt(format!("unsupported version {}", bytes[4])));
        }
        let width = bytes[5] as usize;
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (q, n, frames) = (u32_at(6), u32_at(10), u32_at(14));
        if id_width(q).ok() != Some(width) {
            return Err(corrupt(format!("id width {width} does not match {q} states")));
        }
        let (dsp, used) = dsp_from_prefix(&bytes[HEADER_LEN..]).map_err(|e| match e {
            Error::CorruptStream(m) => corrupt(format!("prior blob: {m}")),
            other => corrupt(format!("prior blob: {other}")),
        })?;
        if dsp.len() != q || dsp.points() != n {
            return Err(corrupt(format!(
                "header says Q = {q}, N = {n}; prior blob has Q = {}, N = {}",
                dsp.len(),
                dsp.points()
            )));
        }
        let body = &bytes[HEADER_LEN + used..];
        let record_len = 12 + width;
        if body.len() != frames * record_len {
            return Err(corrupt(format!(
                "record section has {} bytes, expected {} for {frames} frames",
                body.len(),
                frames * record_len
            )));
        }
        let mut records = Vec::with_capacity(frames);
        for chunk in body.chunks_exact(record_len) {
            let mut id = [0u8; 2];
            id[..width].copy_from_slice(&chunk[..width]);
            let state_id = u16::from_le_bytes(id) as usize;
            if state_id >= q {
                return Err(corrupt(format!("state id {state_id} out of range for {q} states")));
            }
            let f32_at = |i: usize| f32::from_le_bytes(chunk[width + 4 * i..width + 4 * i + 4].try_into().expect("4 bytes"));
            records.push(FrameRecord { state_id, axis_angle: [f32_at(0), f32_at(1), f32_at(2)] });
        }
        Ok(Self { dsp, records })
    }
}

/// Reconstructs `w` frame by frame against `dsp` and stores the result.
pub fn compress(w: &MeasurementMatrix, dsp: &DynamicShapePrior, config: &DsprConfig) -> Result<CompressedStream> {
    id_width(dsp.len())?;
    let results = dspr_sequence(w, dsp, config)?;
    CompressedStream::from_results(dsp.clone(), &results)
}

/// Frame `f` is `R(axis_angle_f) * D[state_id_f]`.
pub fn decompress(stream: &CompressedStream) -> Result<ShapeSequence> {
    let q = stream.dsp.len();
    let frames = stream
        .records
        .iter()
        .zip(stream.poses())
        .map(|(r, pose)| {
            if r.state_id >= q {
                return Err(Error::CorruptStream(format!("state id {} out of range for {q} states", r.state_id)));
            }
            Ok(pose.matrix() * stream.dsp.state(r.state_id))
        })
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(Error::invalid("stream holds no frames"));
    }
    ShapeSequence::from_frames(&frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::build_dsp;
    use nalgebra::Matrix3xX;

    fn prior(q: usize) -> DynamicShapePrior {
        let states: Vec<_> = (0..q)
            .map(|i| Matrix3xX::from_column_slice(&[1.0 + i as f64, 0.5, -0.25, 0.0, 2.0, 1.0]))
            .collect();
        build_dsp(&states, 0.0).unwrap()
    }

    fn stream(q: usize, frames: usize) -> CompressedStream {
        let records = (0..frames)
            .map(|f| FrameRecord { state_id: f % q, axis_angle: [0.1 * f as f32, -0.2, 0.3] })
            .collect();
        CompressedStream::new(prior(q), records).unwrap()
    }

    #[test]
    fn widths() {
        assert_eq!(id_width(1).unwrap(), 1);
        assert_eq!(id_width(255).unwrap(), 1);
        assert_eq!(id_width(256).unwrap(), 2);
        assert!(matches!(id_width(65536), Err(Error::IdWidthOverflow(65536))));
    }

    #[test]
    fn byte_round_trip_and_size() {
        let s = stream(4, 9);
        let bytes = s.to_bytes();
        let blob = dsp_to_bytes(s.dsp()).len();
        assert_eq!(bytes.len(), HEADER_LEN + blob + 9 * 13);
        assert_eq!(CompressedStream::from_bytes(&bytes).unwrap(), s);
        assert_eq!(s.compression_ratio(), 9.0 / 4.0);
    }

    #[test]
    fn truncation_and_bad_ids_are_corrupt() {
        let bytes = stream(3, 5).to_bytes();
        assert!(matches!(CompressedStream::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::CorruptStream(_))));
        let mut bad = bytes.clone();
        let last = bytes.len() - 13;
        bad[last] = 7;
        assert!(matches!(CompressedStream::from_bytes(&bad), Err(Error::CorruptStream(_))));
        let forged = CompressedStream { dsp: prior(2), records: vec![FrameRecord { state_id: 5, axis_angle: [0.0; 3] }] };
        assert!(matches!(decompress(&forged), Err(Error::CorruptStream(_))));
    }

    #[test]
    fn decompressed_norms_match_states() {
        let s = stream(3, 6);
        let out = decompress(&s).unwrap();
        for (f, r) in s.records().iter().enumerate() {
            let norm = out.frame(f).norm();
            assert!((norm - s.dsp().norms()[r.state_id]).abs() < 1e-12);
        }
    }
}
