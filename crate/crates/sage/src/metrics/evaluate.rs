//! Dataset-level evaluation: per-video diagnostics plus overall CCC over
//! the concatenation of every valid frame (challenge protocol).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::AnnotationTrack;
use crate::error::{Result, SageError};
use crate::numerics::Tensor;

use super::ccc::{ccc, ccc_unmasked};

/// Evaluation results. `per_video` is sorted by id and omits videos with
/// no valid frames; the overall numbers are computed over the global
/// concatenation, not by averaging per-video values.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_video: Vec<(String, f64, f64)>,
    pub overall_valence: f64,
    pub overall_arousal: f64,
    pub overall_mean: f64,
    pub valid_frames: usize,
}

impl EvalReport {
    /// The machine-readable summary printed on standard output.
    pub fn summary_line(&self) -> String {
        format!(
            "valence={} arousal={} mean={}",
            self.overall_valence, self.overall_arousal, self.overall_mean
        )
    }

    /// CSV with one row per video and a final OVERALL row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,ccc_v,ccc_a\n");
        for (id, v, a) in &self.per_video {
            writeln!(out, "{id},{v},{a}").expect("string write");
        }
        writeln!(out, "OVERALL,{},{}", self.overall_valence, self.overall_arousal)
            .expect("string write");
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::dataio::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Evaluates predictions against annotations. Both maps are keyed by
/// video id; every annotated video needs a `[T x 2]` prediction of
/// matching length, and unknown prediction ids are rejected.
pub fn evaluate(
    predictions: &BTreeMap<String, Tensor>,
    annotations: &BTreeMap<String, AnnotationTrack>,
) -> Result<EvalReport> {
    if annotations.is_empty() {
        return Err(SageError::Evaluation("no videos to evaluate".into()));
    }
    for id in predictions.keys() {
        if !annotations.contains_key(id) {
            return Err(SageError::Evaluation(format!(
                "prediction for unknown video \"{id}\""
            )));
        }
    }
    for (id, track) in annotations {
        let pred = predictions.get(id).ok_or_else(|| {
            SageError::Evaluation(format!("missing prediction for video \"{id}\""))
        })?;
        if pred.rank() != 2 || pred.cols() != 2 {
            return Err(SageError::Evaluation(format!(
                "video \"{id}\": prediction must be [T x 2], got {:?}",
                pred.shape()
            )));
        }
        if pred.rows() != track.frames() {
            return Err(SageError::Evaluation(format!(
                "video \"{id}\": {} prediction rows vs {} annotated frames",
                pred.rows(),
                track.frames()
            )));
        }
    }

    // Per-video diagnostics, fanned out over worker threads; the ids stay
    // in sorted order so the report is deterministic.
    let jobs: Vec<(&String, &AnnotationTrack, &Tensor)> =
        annotations.iter().map(|(id, track)| (id, track, &predictions[id])).collect();
    let cccs = per_video_cccs(&jobs)?;

    let mut per_video = Vec::new();
    let mut all_pv = Vec::new();
    let mut all_pa = Vec::new();
    let mut all_tv = Vec::new();
    let mut all_ta = Vec::new();
    for ((id, track, pred), cc) in jobs.iter().zip(cccs) {
        for t in 0..track.frames() {
            if track.valid()[t] {
                all_pv.push(pred.at2(t, 0));
                all_pa.push(pred.at2(t, 1));
                all_tv.push(track.valence()[t]);
                all_ta.push(track.arousal()[t]);
            }
        }
        if let Some((v, a)) = cc {
            per_video.push(((*id).clone(), v, a));
        }
    }
    if all_tv.is_empty() {
        return Err(SageError::Evaluation("no valid frames in any video".into()));
    }

    let overall_valence = ccc_unmasked(&all_pv, &all_tv)?;
    let overall_arousal = ccc_unmasked(&all_pa, &all_ta)?;
    Ok(EvalReport {
        per_video,
        overall_valence,
        overall_arousal,
        overall_mean: (overall_valence + overall_arousal) / 2.0,
        valid_frames: all_tv.len(),
    })
}

/// Per-video (ccc_v, ccc_a), `None` for videos with no valid frames.
/// Contiguous chunks of the sorted id list go to `SAGE_THREADS` workers
/// (default: available parallelism) and are reassembled in order.
fn per_video_cccs(
    jobs: &[(&String, &AnnotationTrack, &Tensor)],
) -> Result<Vec<Option<(f64, f64)>>> {
    let threads = thread_count().min(jobs.len()).max(1);
    if threads == 1 {
        return jobs.iter().map(|job| video_ccc(job)).collect();
    }
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<Result<Vec<Option<(f64, f64)>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(video_ccc).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(jobs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn video_ccc(job: &(&String, &AnnotationTrack, &Tensor)) -> Result<Option<(f64, f64)>> {
    let (_, track, pred) = job;
    if track.valid_count() == 0 {
        return Ok(None);
    }
    let t = track.frames();
    let pv: Vec<f64> = (0..t).map(|i| pred.at2(i, 0)).collect();
    let pa: Vec<f64> = (0..t).map(|i| pred.at2(i, 1)).collect();
    let v = ccc(&pv, track.valence(), track.valid())?;
    let a = ccc(&pa, track.arousal(), track.valid())?;
    Ok(Some((v, a)))
}

fn thread_count() -> usize {
    if let Ok(s) = std::env::var("SAGE_THREADS") {
        if let Ok(n) = s.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
