//! Per-frame valence/arousal annotations.
//!
//! Text format: UTF-8 CSV with header `frame,valence,arousal`, one row per
//! frame, frame numbers consecutive from 0. The value -5 in either column
//! marks the frame invalid; all other values must lie in [-1, 1].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SageError};

use super::format::write_atomic;

/// Sentinel marking an unannotated frame.
pub const INVALID_SENTINEL: f64 = -5.0;

/// One video's annotation track with a per-frame validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTrack {
    valence: Vec<f64>,
    arousal: Vec<f64>,
    valid: Vec<bool>,
}

impl AnnotationTrack {
    /// Validated constructor: equal lengths, and every valid frame's
    /// values inside [-1, 1].
    pub fn new(valence: Vec<f64>, arousal: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if valence.len() != arousal.len() || valence.len() != valid.len() {
            return Err(SageError::Shape(format!(
                "annotation track lengths differ: {} valence, {} arousal, {} mask",
                valence.len(),
                arousal.len(),
                valid.len()
            )));
        }
        for t in 0..valence.len() {
            if valid[t] && !(in_range(valence[t]) && in_range(arousal[t])) {
                return Err(SageError::Data {
                    row: t,
                    msg: format!(
                        "valid frame outside [-1, 1]: valence {}, arousal {}",
                        valence[t], arousal[t]
                    ),
                });
            }
        }
        Ok(AnnotationTrack { valence, arousal, valid })
    }

    /// Track with every frame valid.
    pub fn all_valid(valence: Vec<f64>, arousal: Vec<f64>) -> Result<Self> {
        let n = valence.len();
        AnnotationTrack::new(valence, arousal, vec![true; n])
    }

    pub fn frames(&self) -> usize {
        self.valid.len()
    }

    pub fn valence(&self) -> &[f64] {
        &self.valence
    }

    pub fn arousal(&self) -> &[f64] {
        &self.arousal
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Frames `[start, end)` as a new track.
    pub fn slice(&self, start: usize, end: usize) -> Result<AnnotationTrack> {
        if start >= end || end > self.frames() {
            return Err(SageError::Shape(format!(
                "annotation slice [{start}, {end}) out of bounds for {} frames",
                self.frames()
            )));
        }
        Ok(AnnotationTrack {
            valence: self.valence[start..end].to_vec(),
            arousal: self.arousal[start..end].to_vec(),
            valid: self.valid[start..end].to_vec(),
        })
    }
}

fn in_range(v: f64) -> bool {
    (-1.0..=1.0).contains(&v)
}

/// Parses an annotation CSV. Invalid-sentinel rows get `valid = false`;
/// any other out-of-range value is a data error carrying the row number.
pub fn parse_annotations(path: &Path) -> Result<AnnotationTrack> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or(SageError::Data { row: 0, msg: "empty annotation file".into() })?;
    if header.trim() != "frame,valence,arousal" {
        return Err(SageError::Data {
            row: 0,
            msg: format!("bad header {header:?}, expected \"frame,valence,arousal\""),
        });
    }

    let mut valence = Vec::new();
    let mut arousal = Vec::new();
    let mut valid = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (f, v, a) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(f), Some(v), Some(a), None) => (f, v, a),
            _ => {
                return Err(SageError::Data {
                    row,
                    msg: format!("expected 3 comma-separated fields, got {line:?}"),
                })
            }
        };
        let frame: usize = f.trim().parse().map_err(|_| SageError::Data {
            row,
            msg: format!("bad frame number {f:?}"),
        })?;
        if frame != row {
            return Err(SageError::Data {
                row,
                msg: format!("frame numbers must be consecutive from 0, got {frame}"),
            });
        }
        let v = parse_value(v, row, "valence")?;
        let a = parse_value(a, row, "arousal")?;
        let frame_valid = v != INVALID_SENTINEL && a != INVALID_SENTINEL;
        if frame_valid {
            if !in_range(v) {
                return Err(SageError::Data { row, msg: format!("valence {v} outside [-1, 1]") });
            }
            if !in_range(a) {
                return Err(SageError::Data { row, msg: format!("arousal {a} outside [-1, 1]") });
            }
            valence.push(v);
            arousal.push(a);
        } else {
            valence.push(0.0);
            arousal.push(0.0);
        }
        valid.push(frame_valid);
    }
    AnnotationTrack::new(valence, arousal, valid)
}

fn parse_value(s: &str, row: usize, name: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| SageError::Data { row, msg: format!("bad {name} value {s:?}") })?;
    if v.is_nan() {
        return Err(SageError::Data { row, msg: format!("{name} is NaN") });
    }
    Ok(v)
}

/// Writes a track in the CSV format `parse_annotations` reads, atomically.
/// Invalid frames are written with the sentinel in both columns.
pub fn write_annotations(path: &Path, track: &AnnotationTrack) -> Result<()> {
    let mut out = String::from("frame,valence,arousal\n");
    for t in 0..track.frames() {
        if track.valid()[t] {
            writeln!(out, "{},{},{}", t, track.valence()[t], track.arousal()[t])
                .expect("string write");
        } else {
            writeln!(out, "{t},{INVALID_SENTINEL},{INVALID_SENTINEL}").expect("string write");
        }
    }
    write_atomic(path, out.as_bytes())
}
