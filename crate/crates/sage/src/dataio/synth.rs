//! Synthetic multimodal dataset generator.
//!
//! Each video gets smooth latent valence/arousal trajectories (sums of
//! low-frequency sinusoids, clipped to [-1, 1]). A dataset-wide linear map
//! followed by tanh embeds the latents into each modality's feature space,
//! plus a small amount of observation noise. A corruption schedule can
//! replace a modality's features over chosen frame ranges with pure
//! Gaussian noise, destroying that modality's information there while the
//! other modality stays informative.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SageError};
use crate::numerics::Tensor;

use super::annotations::AnnotationTrack;
use super::format::{FeatureSequence, Modality};

/// Replaces one modality's features on `[start, end)` of every video with
/// Gaussian noise of the given standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub start: usize,
    pub end: usize,
    pub modality: Modality,
    pub noise_std: f64,
}

/// Generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub dim_visual: usize,
    pub dim_audio: usize,
    #[serde(default)]
    pub corruption_schedule: Vec<CorruptionSpec>,
    pub seed: u64,
}

/// Frame rate stamped on generated features.
pub const SYNTH_FPS: f32 = 25.0;

const LATENT_COMPONENTS: usize = 3;
const OBSERVATION_NOISE_STD: f64 = 0.02;

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_videos == 0
            || self.frames_per_video == 0
            || self.dim_visual == 0
            || self.dim_audio == 0
        {
            return Err(SageError::Config(format!(
                "all counts must be >= 1: {} videos, {} frames, dims {}/{}",
                self.n_videos, self.frames_per_video, self.dim_visual, self.dim_audio
            )));
        }
        for (i, c) in self.corruption_schedule.iter().enumerate() {
            if c.start >= c.end || c.end > self.frames_per_video {
                return Err(SageError::Config(format!(
                    "corruption entry {i}: range [{}, {}) outside video of {} frames",
                    c.start, c.end, self.frames_per_video
                )));
            }
            if !(c.noise_std >= 0.0 && c.noise_std.is_finite()) {
                return Err(SageError::Config(format!(
                    "corruption entry {i}: bad noise std {}",
                    c.noise_std
                )));
            }
        }
        for modality in [Modality::Visual, Modality::Audio] {
            let mut ranges: Vec<(usize, usize)> = self
                .corruption_schedule
                .iter()
                .filter(|c| c.modality == modality)
                .map(|c| (c.start, c.end))
                .collect();
            ranges.sort_unstable();
            for w in ranges.windows(2) {
                if w[0].1 > w[1].0 {
                    return Err(SageError::Config(format!(
                        "overlapping corruption ranges [{}, {}) and [{}, {}) on {modality}",
                        w[0].0, w[0].1, w[1].0, w[1].1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Latent-to-feature map for one modality: `tanh(w_v * v + w_a * a + b)`
/// per output column, shared across all videos of a dataset.
struct Embedding {
    w_valence: Vec<f64>,
    w_arousal: Vec<f64>,
    bias: Vec<f64>,
}

impl Embedding {
    fn sample(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Embedding {
            w_valence: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            w_arousal: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: (0..dim).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        }
    }

    fn apply(&self, valence: &[f64], arousal: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = self.bias.len();
        let mut out = Vec::with_capacity(valence.len() * dim);
        for t in 0..valence.len() {
            for j in 0..dim {
                let pre = self.w_valence[j] * valence[t] + self.w_arousal[j] * arousal[t]
                    + self.bias[j];
                out.push(pre.tanh() + OBSERVATION_NOISE_STD * sample_normal(rng));
            }
        }
        out
    }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller transform from two uniforms.
    let u1: f64 = loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// One smooth latent trajectory: a sum of low-frequency sinusoids whose
/// amplitudes, frequencies (cycles per video), and phases are drawn per
/// trajectory, clipped to [-1, 1].
fn sample_trajectory(rng: &mut ChaCha8Rng, frames: usize) -> Vec<f64> {
    let amps: Vec<f64> = (0..LATENT_COMPONENTS).map(|_| rng.gen_range(0.2..0.5)).collect();
    let freqs: Vec<f64> = (0..LATENT_COMPONENTS).map(|_| rng.gen_range(0.5..3.0)).collect();
    let phases: Vec<f64> = (0..LATENT_COMPONENTS).map(|_| rng.gen_range(0.0..TAU)).collect();
    (0..frames)
        .map(|t| {
            let x = t as f64 / frames as f64;
            let v: f64 = (0..LATENT_COMPONENTS)
                .map(|i| amps[i] * (TAU * freqs[i] * x + phases[i]).sin())
                .sum();
            v.clamp(-1.0, 1.0)
        })
        .collect()
}

/// Generates the dataset described by `cfg`. Deterministic in `cfg.seed`:
/// the same config yields bit-identical output.
pub fn synth_dataset(
    cfg: &SynthConfig,
) -> Result<Vec<(FeatureSequence, FeatureSequence, AnnotationTrack)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let embed_visual = Embedding::sample(&mut rng, cfg.dim_visual);
    let embed_audio = Embedding::sample(&mut rng, cfg.dim_audio);

    let mut videos = Vec::with_capacity(cfg.n_videos);
    for _ in 0..cfg.n_videos {
        let valence = sample_trajectory(&mut rng, cfg.frames_per_video);
        let arousal = sample_trajectory(&mut rng, cfg.frames_per_video);

        let mut visual = embed_visual.apply(&valence, &arousal, &mut rng);
        let mut audio = embed_audio.apply(&valence, &arousal, &mut rng);
        for c in &cfg.corruption_schedule {
            let (buf, dim) = match c.modality {
                Modality::Visual => (&mut visual, cfg.dim_visual),
                Modality::Audio => (&mut audio, cfg.dim_audio),
            };
            for slot in buf[c.start * dim..c.end * dim].iter_mut() {
                *slot = c.noise_std * sample_normal(&mut rng);
            }
        }

        let visual = FeatureSequence::new(
            Modality::Visual,
            SYNTH_FPS,
            Tensor::new(vec![cfg.frames_per_video, cfg.dim_visual], visual)?,
        )?;
        let audio = FeatureSequence::new(
            Modality::Audio,
            SYNTH_FPS,
            Tensor::new(vec![cfg.frames_per_video, cfg.dim_audio], audio)?,
        )?;
        let track = AnnotationTrack::all_valid(valence, arousal)?;
        videos.push((visual, audio, track));
    }
    Ok(videos)
}
