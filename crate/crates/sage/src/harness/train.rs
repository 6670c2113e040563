//! The deterministic training loop and clip-to-video prediction stitching.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{segment_clips, ClipSpan, VideoRecord, DEFAULT_CLIP_LEN, DEFAULT_STRIDE};
use crate::error::{Result, SageError};
use crate::metrics::{ccc_loss, evaluate, EvalReport};
use crate::model::{bind_params, infer, sage_forward, ModelConfig, SageParams};
use crate::numerics::{Graph, Tensor};

use super::kfold::FoldAssignment;
use super::optim::{clip_global_norm, Adam, GRAD_CLIP_NORM};

fn default_clip_len() -> usize {
    DEFAULT_CLIP_LEN
}
fn default_stride() -> usize {
    DEFAULT_STRIDE
}
fn default_batch_size() -> usize {
    4
}
fn default_epochs() -> usize {
    50
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// Everything a training run needs beyond the dataset itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default = "default_clip_len")]
    pub clip_len: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// May be zero: the run then returns the initialization unchanged.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            clip_len: default_clip_len(),
            stride: default_stride(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.clip_len == 0 || self.stride == 0 || self.batch_size == 0 {
            return Err(SageError::Config(
                "clip_len, stride, and batch_size must all be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SageError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(SageError::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(SageError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ccc_v: f64,
    pub val_ccc_a: f64,
    pub val_ccc_mean: f64,
}

/// Result of a training run: the final parameters, the parameters that
/// scored best on the held-out fold (the final ones when nothing was held
/// out), and the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: SageParams,
    pub best_params: SageParams,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
}

/// Renders the log as CSV, one row per epoch.
pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_ccc_v,val_ccc_a,val_ccc_mean\n");
    for row in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            row.epoch, row.train_loss, row.val_ccc_v, row.val_ccc_a, row.val_ccc_mean
        ));
    }
    out
}

#[derive(Clone, Copy)]
struct ClipRef {
    video: usize,
    span: ClipSpan,
}

fn clip_inputs(rec: &VideoRecord, span: ClipSpan) -> Result<(Tensor, Tensor, Tensor, Vec<bool>)> {
    let xv = rec.visual.slice_frames(span.start, span.end)?;
    let xa = rec.audio.slice_frames(span.start, span.end)?;
    let ann = rec.annotations.slice(span.start, span.end)?;
    let t = span.len();
    let mut targets = Vec::with_capacity(t * 2);
    for i in 0..t {
        targets.push(ann.valence()[i]);
        targets.push(ann.arousal()[i]);
    }
    Ok((xv, xa, Tensor::new(vec![t, 2], targets)?, ann.valid().to_vec()))
}

/// Loss and parameter gradients for one clip. A clip with fewer than two
/// valid frames yields `Ok(None)`: there is nothing to fit there.
fn clip_gradients(
    cfg: &ModelConfig,
    params: &SageParams,
    rec: &VideoRecord,
    span: ClipSpan,
) -> Result<Option<(f64, Vec<Vec<f64>>)>> {
    let (xv, xa, targets, mask) = clip_inputs(rec, span)?;
    if mask.iter().filter(|&&m| m).count() < 2 {
        return Ok(None);
    }
    let mut g = Graph::new();
    let bp = bind_params(&mut g, params, true);
    let vv = g.leaf(xv);
    let va = g.leaf(xa);
    let fwd = sage_forward(&mut g, &bp, cfg, vv, va)?;
    let target = g.leaf(targets);
    let loss = ccc_loss(&mut g, fwd.predictions, target, &mask)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let per_param: Vec<Vec<f64>> =
        bp.ordered().iter().map(|&v| grads.wrt(v)).collect();
    Ok(Some((value, per_param)))
}

/// Trains on every video outside `held_out`, logging held-out concordance
/// each epoch. Bit-deterministic for a fixed config, fold, and dataset.
pub fn train(
    cfg: &TrainConfig,
    dataset: &[VideoRecord],
    fold: &FoldAssignment,
    held_out: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(h) = held_out {
        if h >= fold.k() {
            return Err(SageError::Config(format!(
                "held-out fold {h} out of range for k={}",
                fold.k()
            )));
        }
    }
    let mut train_videos = Vec::new();
    let mut val_videos = Vec::new();
    for (i, rec) in dataset.iter().enumerate() {
        let f = fold.fold_of(&rec.id).ok_or_else(|| {
            SageError::Config(format!("video {} missing from the fold assignment", rec.id))
        })?;
        if Some(f) == held_out {
            val_videos.push(i);
        } else {
            train_videos.push(i);
        }
    }
    if train_videos.is_empty() {
        return Err(SageError::Config("no training videos after holding out the fold".into()));
    }

    let mut clips = Vec::new();
    for &vi in &train_videos {
        for span in segment_clips(dataset[vi].frames(), cfg.clip_len, cfg.stride)? {
            clips.push(ClipRef { video: vi, span });
        }
    }

    let mut params = SageParams::init(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best_params = params.clone();
    let mut best_epoch = None;
    let mut best_metric = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Equal-length batches: bucket by clip length, shuffle within each
        // bucket, then shuffle the batch order. All draws come from the one
        // seeded generator.
        let mut by_len: BTreeMap<usize, Vec<ClipRef>> = BTreeMap::new();
        for clip in &clips {
            by_len.entry(clip.span.len()).or_default().push(*clip);
        }
        let mut batches: Vec<Vec<ClipRef>> = Vec::new();
        for bucket in by_len.values_mut() {
            bucket.shuffle(&mut rng);
            for chunk in bucket.chunks(cfg.batch_size) {
                batches.push(chunk.to_vec());
            }
        }
        batches.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut counted_batches = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let mut grads_acc: Vec<Vec<f64>> =
                params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            let mut batch_loss = 0.0;
            let mut used = 0usize;
            for clip in batch {
                let rec = &dataset[clip.video];
                match clip_gradients(&cfg.model, &params, rec, clip.span)? {
                    Some((value, per_param)) => {
                        if !value.is_finite() {
                            return Err(SageError::Training(format!(
                                "non-finite loss {value} in epoch {epoch}, batch {bi} \
                                 (video {}, frames [{}, {}))",
                                rec.id, clip.span.start, clip.span.end
                            )));
                        }
                        for (acc, g) in grads_acc.iter_mut().zip(&per_param) {
                            for (a, &v) in acc.iter_mut().zip(g) {
                                *a += v;
                            }
                        }
                        batch_loss += value;
                        used += 1;
                    }
                    None => {
                        log::warn!(
                            "skipping clip with fewer than two valid frames: video {}, frames [{}, {})",
                            rec.id,
                            clip.span.start,
                            clip.span.end
                        );
                    }
                }
            }
            if used == 0 {
                log::warn!("epoch {epoch}, batch {bi}: every clip skipped");
                continue;
            }
            let inv = 1.0 / used as f64;
            for g in grads_acc.iter_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            clip_global_norm(&mut grads_acc, GRAD_CLIP_NORM);
            adam.step(&mut params, &grads_acc)?;
            loss_sum += batch_loss * inv;
            counted_batches += 1;
        }
        let train_loss = if counted_batches > 0 {
            loss_sum / counted_batches as f64
        } else {
            f64::NAN
        };

        let (val_v, val_a, val_mean) = if val_videos.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let held: Vec<&VideoRecord> = val_videos.iter().map(|&i| &dataset[i]).collect();
            let report = evaluate_videos(&cfg.model, &params, &held, cfg.clip_len, cfg.stride)?;
            (report.overall_valence, report.overall_arousal, report.overall_mean)
        };
        if val_mean.is_finite() && val_mean > best_metric {
            best_metric = val_mean;
            best_params = params.clone();
            best_epoch = Some(epoch);
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_ccc_v: val_v,
            val_ccc_a: val_a,
            val_ccc_mean: val_mean,
        });
    }

    if best_epoch.is_none() {
        best_params = params.clone();
    }
    Ok(TrainOutcome { final_params: params, best_params, best_epoch, log })
}

/// Whole-video prediction assembled from overlapping clips.
#[derive(Debug, Clone)]
pub struct VideoPrediction {
    /// `[T x 2]`, each frame the arithmetic mean over the clips covering it.
    pub predictions: Tensor,
    /// Per-frame reliability weight, averaged the same way.
    pub alpha: Vec<f64>,
    /// How many clips covered each frame.
    pub coverage: Vec<usize>,
}

/// Runs the model over every clip of an aligned feature pair and stitches
/// frame predictions, averaging where clips overlap.
pub fn predict_video(
    cfg: &ModelConfig,
    params: &SageParams,
    visual: &Tensor,
    audio: &Tensor,
    clip_len: usize,
    stride: usize,
) -> Result<VideoPrediction> {
    if visual.rows() != audio.rows() {
        return Err(SageError::Alignment(format!(
            "modalities disagree on length: {} visual vs {} audio frames",
            visual.rows(),
            audio.rows()
        )));
    }
    let frames = visual.rows();
    let spans = segment_clips(frames, clip_len, stride)?;
    let mut pred_sum = vec![0.0; frames * 2];
    let mut alpha_sum = vec![0.0; frames];
    let mut coverage = vec![0usize; frames];
    for span in spans {
        let slice_rows = |t: &Tensor| {
            let d = t.cols();
            Tensor::new(
                vec![span.len(), d],
                t.data()[span.start * d..span.end * d].to_vec(),
            )
        };
        let out = infer(cfg, params, &slice_rows(visual)?, &slice_rows(audio)?)?;
        for (i, frame) in (span.start..span.end).enumerate() {
            pred_sum[frame * 2] += out.predictions.at2(i, 0);
            pred_sum[frame * 2 + 1] += out.predictions.at2(i, 1);
            alpha_sum[frame] += out.alpha.values()[i];
            coverage[frame] += 1;
        }
    }
    for (frame, &c) in coverage.iter().enumerate() {
        if c == 0 {
            return Err(SageError::Contract(format!("frame {frame} covered by no clip")));
        }
        pred_sum[frame * 2] /= c as f64;
        pred_sum[frame * 2 + 1] /= c as f64;
        alpha_sum[frame] /= c as f64;
    }
    Ok(VideoPrediction {
        predictions: Tensor::new(vec![frames, 2], pred_sum)?,
        alpha: alpha_sum,
        coverage,
    })
}

/// Stitched predictions for each video, scored against its annotations.
pub fn evaluate_videos(
    cfg: &ModelConfig,
    params: &SageParams,
    videos: &[&VideoRecord],
    clip_len: usize,
    stride: usize,
) -> Result<EvalReport> {
    let mut predictions = BTreeMap::new();
    let mut annotations = BTreeMap::new();
    for rec in videos {
        let pred = predict_video(
            cfg,
            params,
            rec.visual.values(),
            rec.audio.values(),
            clip_len,
            stride,
        )?;
        predictions.insert(rec.id.clone(), pred.predictions);
        annotations.insert(rec.id.clone(), rec.annotations.clone());
    }
    evaluate(&predictions, &annotations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_dataset, write_video, AnnotationTrack, SynthConfig};
    use crate::harness::kfold::kfold_split;
    use crate::model::save_checkpoint;

    fn tiny_dataset(n_videos: usize, frames: usize, seed: u64) -> Vec<VideoRecord> {
        let cfg = SynthConfig {
            n_videos,
            frames_per_video: frames,
            dim_visual: 6,
            dim_audio: 2,
            corruption_schedule: Vec::new(),
            seed,
        };
        synth_dataset(&cfg)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, (visual, audio, annotations))| VideoRecord {
                id: format!("video_{i:03}"),
                visual,
                audio,
                annotations,
            })
            .collect()
    }

    fn quick_config() -> TrainConfig {
        let mut model = ModelConfig::new(6, 2);
        model.transformer_layers = 1;
        let mut cfg = TrainConfig::new(model);
        cfg.clip_len = 40;
        cfg.stride = 40;
        cfg.batch_size = 2;
        cfg.epochs = 2;
        cfg.learning_rate = 1e-3;
        cfg
    }

    fn all_ids(dataset: &[VideoRecord]) -> Vec<String> {
        dataset.iter().map(|r| r.id.clone()).collect()
    }

    fn assert_params_bit_equal(a: &SageParams, b: &SageParams) {
        for ((na, ta), (_, tb)) in a.iter().zip(b.iter()) {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "parameter {na}");
            }
        }
    }

    #[test]
    fn zero_epochs_return_the_initialization() {
        let dataset = tiny_dataset(2, 80, 0);
        let mut cfg = quick_config();
        cfg.epochs = 0;
        let fold = FoldAssignment::single(&all_ids(&dataset));
        let out = train(&cfg, &dataset, &fold, None).unwrap();
        let init = SageParams::init(&cfg.model, cfg.seed).unwrap();
        assert_params_bit_equal(&out.final_params, &init);
        assert_params_bit_equal(&out.best_params, &init);
        assert!(out.log.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn same_seed_reproduces_parameters_bit_exactly() {
        let dataset = tiny_dataset(2, 80, 1);
        let cfg = quick_config();
        let fold = kfold_split(&all_ids(&dataset), 2, 0).unwrap();
        let a = train(&cfg, &dataset, &fold, Some(1)).unwrap();
        let b = train(&cfg, &dataset, &fold, Some(1)).unwrap();
        assert_params_bit_equal(&a.final_params, &b.final_params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn training_reduces_the_loss() {
        let dataset = tiny_dataset(2, 80, 2);
        let mut cfg = quick_config();
        cfg.epochs = 12;
        cfg.learning_rate = 3e-3;
        let fold = FoldAssignment::single(&all_ids(&dataset));
        let out = train(&cfg, &dataset, &fold, None).unwrap();
        let first = out.log.first().unwrap().train_loss;
        let last = out.log.last().unwrap().train_loss;
        assert!(
            last < first - 0.05,
            "loss did not fall: first {first}, last {last}"
        );
    }

    #[test]
    fn held_out_videos_never_touch_the_parameter_trajectory() {
        let dataset = tiny_dataset(3, 80, 3);
        let cfg = quick_config();
        let fold = kfold_split(&all_ids(&dataset), 3, 0).unwrap();
        let baseline = train(&cfg, &dataset, &fold, Some(2)).unwrap();

        // Zero out every feature of the held-out videos and train again.
        let mut zeroed = dataset.clone();
        for rec in zeroed.iter_mut() {
            if fold.fold_of(&rec.id) == Some(2) {
                let zero_values = |seq: &crate::dataio::FeatureSequence| {
                    crate::dataio::FeatureSequence::new(
                        seq.modality(),
                        seq.fps(),
                        Tensor::zeros(seq.values().shape()),
                    )
                    .unwrap()
                };
                rec.visual = zero_values(&rec.visual);
                rec.audio = zero_values(&rec.audio);
            }
        }
        let perturbed = train(&cfg, &zeroed, &fold, Some(2)).unwrap();
        assert_params_bit_equal(&baseline.final_params, &perturbed.final_params);
        for (a, b) in baseline.log.iter().zip(&perturbed.log) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        }
    }

    #[test]
    fn all_invalid_videos_are_skipped_without_an_update() {
        let mut dataset = tiny_dataset(1, 80, 4);
        let frames = dataset[0].frames();
        dataset[0].annotations =
            AnnotationTrack::new(vec![0.0; frames], vec![0.0; frames], vec![false; frames])
                .unwrap();
        let mut cfg = quick_config();
        cfg.epochs = 1;
        let fold = FoldAssignment::single(&all_ids(&dataset));
        let out = train(&cfg, &dataset, &fold, None).unwrap();
        let init = SageParams::init(&cfg.model, cfg.seed).unwrap();
        assert_params_bit_equal(&out.final_params, &init);
        assert!(out.log[0].train_loss.is_nan());
    }

    #[test]
    fn missing_fold_entry_and_empty_training_set_are_config_errors() {
        let dataset = tiny_dataset(2, 80, 5);
        let cfg = quick_config();
        let fold = kfold_split(&all_ids(&dataset)[..1].to_vec(), 1, 0).unwrap();
        assert!(matches!(train(&cfg, &dataset, &fold, None), Err(SageError::Config(_))));
        let full = FoldAssignment::single(&all_ids(&dataset));
        assert!(matches!(train(&cfg, &dataset, &full, Some(0)), Err(SageError::Config(_))));
        assert!(matches!(train(&cfg, &dataset, &full, Some(3)), Err(SageError::Config(_))));
    }

    #[test]
    fn single_clip_prediction_passes_through_unchanged() {
        let dataset = tiny_dataset(1, 40, 6);
        let model = ModelConfig::new(6, 2);
        let params = SageParams::init(&model, 9).unwrap();
        let rec = &dataset[0];
        let stitched = predict_video(
            &model,
            &params,
            rec.visual.values(),
            rec.audio.values(),
            40,
            40,
        )
        .unwrap();
        let direct = infer(&model, &params, rec.visual.values(), rec.audio.values()).unwrap();
        for (a, b) in stitched.predictions.data().iter().zip(direct.predictions.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(stitched.coverage, vec![1; 40]);
    }

    #[test]
    fn overlapping_clips_average_and_cover_every_frame() {
        let dataset = tiny_dataset(1, 50, 7);
        let model = ModelConfig::new(6, 2);
        let mut params = SageParams::init(&model, 10).unwrap();
        // Zero the head so every clip predicts exactly 0: stitched output
        // must be constant regardless of overlap.
        params.set("head.w2", Tensor::zeros(&[model.head_hidden_dim(), 2]));
        params.set("head.b2", Tensor::zeros(&[2]));
        let rec = &dataset[0];
        let out = predict_video(
            &model,
            &params,
            rec.visual.values(),
            rec.audio.values(),
            30,
            20,
        )
        .unwrap();
        // Spans are [0,30) and [20,50): frames 20-29 are covered twice.
        for (f, &c) in out.coverage.iter().enumerate() {
            let expected = if (20..30).contains(&f) { 2 } else { 1 };
            assert_eq!(c, expected, "frame {f}");
        }
        assert!(out.predictions.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.predictions.rows(), 50);
    }

    #[test]
    fn stitched_evaluation_runs_end_to_end() {
        let dataset = tiny_dataset(2, 60, 8);
        let model = ModelConfig::new(6, 2);
        let params = SageParams::init(&model, 11).unwrap();
        let refs: Vec<&VideoRecord> = dataset.iter().collect();
        let report = evaluate_videos(&model, &params, &refs, 40, 30).unwrap();
        assert_eq!(report.per_video.len(), 2);
        assert!(report.overall_mean.is_finite());
    }

    #[test]
    fn checkpoints_written_during_training_reload() {
        let dataset = tiny_dataset(1, 40, 12);
        let mut cfg = quick_config();
        cfg.epochs = 1;
        let fold = FoldAssignment::single(&all_ids(&dataset));
        let out = train(&cfg, &dataset, &fold, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.sagc");
        save_checkpoint(&path, &cfg.model, &out.best_params).unwrap();
        let (loaded_cfg, loaded) = crate::model::load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, cfg.model);
        assert_params_bit_equal(&loaded, &out.best_params);
        // The dataset round-trips through the directory layout too.
        let data_dir = tempfile::tempdir().unwrap();
        let rec = &dataset[0];
        write_video(data_dir.path(), &rec.id, &rec.visual, &rec.audio, &rec.annotations)
            .unwrap();
        let back = crate::dataio::load_video(data_dir.path(), &rec.id).unwrap();
        assert_eq!(back.frames(), rec.frames());
    }
}
