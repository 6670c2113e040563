//! Binary feature files.
//!
//! Layout (little-endian): magic `SAGF`, format version u16 = 1, modality
//! u8 (0 visual, 1 audio), reserved u8 = 0, fps f32, frame count u32,
//! feature dimension u32, then T*D f64 values row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"SAGF";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

/// Which input stream a feature sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    fn code(self) -> u8 {
        match self {
            Modality::Visual => 0,
            Modality::Audio => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Visual),
            1 => Some(Modality::Audio),
            _ => None,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Visual => write!(f, "visual"),
            Modality::Audio => write!(f, "audio"),
        }
    }
}

/// One modality's frame-rate-stamped feature matrix for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    modality: Modality,
    fps: f32,
    values: Tensor,
}

impl FeatureSequence {
    /// Validated constructor: `values` must be a finite `[T x D]` matrix
    /// with positive dimensions, `fps` positive and finite.
    pub fn new(modality: Modality, fps: f32, values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(SageError::Shape(format!(
                "feature sequence must be 2-D, got {:?}",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(SageError::Domain("feature sequence contains non-finite values".into()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(SageError::Config(format!("fps must be positive and finite, got {fps}")));
        }
        Ok(FeatureSequence { modality, fps, values })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Rows `[start, end)` as a new tensor (clip extraction).
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.frames() {
            return Err(SageError::Shape(format!(
                "frame slice [{start}, {end}) out of bounds for {} frames",
                self.frames()
            )));
        }
        let d = self.dim();
        let data = self.values.data()[start * d..end * d].to_vec();
        Tensor::new(vec![end - start, d], data)
    }
}

/// Writes `seq` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + seq.values.numel() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(seq.modality.code());
    bytes.push(0);
    bytes.extend_from_slice(&seq.fps.to_le_bytes());
    bytes.extend_from_slice(&(seq.frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    for v in seq.values.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Writes `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| SageError::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp.{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a feature file written by [`write_feature_file`]; defects are
/// reported with the byte offset where they were detected.
pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let bytes = fs::read(path)?;
    parse_feature_bytes(&bytes)
}

fn parse_feature_bytes(bytes: &[u8]) -> Result<FeatureSequence> {
    let fail = |offset: usize, msg: String| SageError::Parse { offset: offset as u64, msg };

    if bytes.len() < HEADER_LEN {
        return Err(fail(
            bytes.len(),
            format!("header truncated: {} bytes, need {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}, expected \"SAGF\"", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(4, format!("unsupported format version {version}")));
    }
    let modality = Modality::from_code(bytes[6])
        .ok_or_else(|| fail(6, format!("unknown modality code {}", bytes[6])))?;
    if bytes[7] != 0 {
        return Err(fail(7, format!("reserved byte must be 0, got {}", bytes[7])));
    }
    let fps = f32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(fail(8, format!("fps must be positive and finite, got {fps}")));
    }
    let frames = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    if frames == 0 {
        return Err(fail(12, "frame count must be >= 1".into()));
    }
    let dim = u32::from_le_bytes([bytes[16], bytes[17], bytes[18], bytes[19]]) as usize;
    if dim == 0 {
        return Err(fail(16, "feature dimension must be >= 1".into()));
    }

    let count = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| fail(12, format!("payload size {frames} x {dim} overflows")))?;
    let have = bytes.len() - HEADER_LEN;
    if have < count {
        return Err(fail(
            bytes.len(),
            format!("payload truncated: {have} bytes, need {count} for {frames} x {dim}"),
        ));
    }
    if have > count {
        return Err(fail(HEADER_LEN + count, format!("{} trailing bytes", have - count)));
    }

    let mut data = Vec::with_capacity(frames * dim);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + i * 8, format!("non-finite value {v} at index {i}")));
        }
        data.push(v);
    }
    FeatureSequence::new(modality, fps, Tensor::new(vec![frames, dim], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(seed: u64, frames: usize, dim: usize) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..frames * dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        FeatureSequence::new(
            Modality::Visual,
            25.0,
            Tensor::new(vec![frames, dim], data).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.sagf");
        let seq = random_sequence(1, 300, 16);
        write_feature_file(&path, &seq).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.fps().to_bits(), seq.fps().to_bits());
    }

    #[test]
    fn round_trip_survives_many_random_instances() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..50 {
            let frames = rng.gen_range(1..40);
            let dim = rng.gen_range(1..12);
            let data: Vec<f64> = (0..frames * dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let modality = if rng.gen_bool(0.5) { Modality::Visual } else { Modality::Audio };
            let fps = rng.gen_range(1.0f32..100.0);
            let seq = FeatureSequence::new(
                modality,
                fps,
                Tensor::new(vec![frames, dim], data).unwrap(),
            )
            .unwrap();
            let path = dir.path().join(format!("seq_{i}.sagf"));
            write_feature_file(&path, &seq).unwrap();
            assert_eq!(read_feature_file(&path).unwrap(), seq);
        }
    }

    #[test]
    fn bad_magic_is_reported_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sagf");
        let seq = random_sequence(2, 4, 2);
        write_feature_file(&path, &seq).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        std::fs::write(&path, &bytes).unwrap();
        match read_feature_file(&path).unwrap_err() {
            SageError::Parse { offset, msg } => {
                assert_eq!(offset, 0);
                assert!(msg.contains("magic"), "{msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.sagf");
        let seq = random_sequence(3, 10, 3);
        write_feature_file(&path, &seq).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match read_feature_file(&path).unwrap_err() {
            SageError::Parse { msg, .. } => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn non_finite_payload_value_is_reported_with_its_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.sagf");
        let seq = random_sequence(4, 5, 2);
        write_feature_file(&path, &seq).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let idx = 7;
        bytes[20 + idx * 8..20 + idx * 8 + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match read_feature_file(&path).unwrap_err() {
            SageError::Parse { offset, .. } => assert_eq!(offset, 20 + idx as u64 * 8),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_modality_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hdr.sagf");
        let seq = random_sequence(5, 2, 2);
        write_feature_file(&path, &seq).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_mod = good.clone();
        bad_mod[6] = 9;
        std::fs::write(&path, &bad_mod).unwrap();
        match read_feature_file(&path).unwrap_err() {
            SageError::Parse { offset, .. } => assert_eq!(offset, 6),
            other => panic!("expected parse error, got {other}"),
        }

        let mut bad_ver = good;
        bad_ver[4..6].copy_from_slice(&7u16.to_le_bytes());
        std::fs::write(&path, &bad_ver).unwrap();
        match read_feature_file(&path).unwrap_err() {
            SageError::Parse { offset, .. } => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn slice_frames_extracts_rows() {
        let seq = FeatureSequence::new(
            Modality::Audio,
            50.0,
            Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        )
        .unwrap();
        let clip = seq.slice_frames(1, 3).unwrap();
        assert_eq!(clip.shape(), &[2, 2]);
        assert_eq!(clip.data(), &[3.0, 4.0, 5.0, 6.0]);
        assert!(seq.slice_frames(2, 2).is_err());
    }
}
