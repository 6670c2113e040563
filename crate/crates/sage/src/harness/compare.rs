//! Two-arm comparison: reliability gating on versus off, over several
//! seeds, scored on a held-out fold.

use crate::dataio::VideoRecord;
use crate::error::{Result, SageError};
use crate::model::SageParams;

use super::kfold::FoldAssignment;
use super::train::{evaluate_videos, train, TrainConfig};

/// One arm's held-out mean concordance per seed.
#[derive(Debug, Clone)]
pub struct ComparisonArm {
    pub label: String,
    pub per_seed: Vec<(u64, f64)>,
}

impl ComparisonArm {
    pub fn mean(&self) -> f64 {
        self.per_seed.iter().map(|(_, c)| c).sum::<f64>() / self.per_seed.len() as f64
    }
}

/// Gated-versus-ablation outcome across seeds.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub gated: ComparisonArm,
    pub ablation: ComparisonArm,
}

impl ComparisonReport {
    /// CSV: one row per (arm, seed), then per-arm means.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,seed,heldout_ccc_mean\n");
        for arm in [&self.gated, &self.ablation] {
            for &(seed, ccc) in &arm.per_seed {
                out.push_str(&format!("{},{seed},{ccc:.6}\n", arm.label));
            }
        }
        for arm in [&self.gated, &self.ablation] {
            out.push_str(&format!("{},mean,{:.6}\n", arm.label, arm.mean()));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} mean={:.4} vs {} mean={:.4} over {} seeds",
            self.gated.label,
            self.gated.mean(),
            self.ablation.label,
            self.ablation.mean(),
            self.gated.per_seed.len()
        )
    }
}

/// Trains both arms for every seed and scores each best checkpoint on the
/// held-out fold. The gated arm uses the config as given (gating on); the
/// ablation arm disables gating and feeds fused features straight to the
/// transformer.
pub fn reliability_comparison(
    base: &TrainConfig,
    dataset: &[VideoRecord],
    fold: &FoldAssignment,
    held_out: usize,
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(SageError::Config("comparison needs at least one seed".into()));
    }
    if !base.model.use_rgf {
        return Err(SageError::Config(
            "comparison base config must have gating enabled".into(),
        ));
    }
    let held: Vec<&VideoRecord> = dataset
        .iter()
        .filter(|r| fold.fold_of(&r.id) == Some(held_out))
        .collect();
    if held.is_empty() {
        return Err(SageError::Config(format!("held-out fold {held_out} has no videos")));
    }

    let run_arm = |use_rgf: bool, seed: u64| -> Result<(u64, f64)> {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.model.use_rgf = use_rgf;
        let outcome = train(&cfg, dataset, fold, Some(held_out))?;
        if !outcome.final_params.all_finite() {
            return Err(SageError::Training(format!(
                "non-finite parameters after training (gating {}, seed {seed})",
                if use_rgf { "on" } else { "off" }
            )));
        }
        let score = heldout_score(&cfg, &outcome.best_params, &held)?;
        Ok((seed, score))
    };

    let mut gated = Vec::with_capacity(seeds.len());
    let mut ablation = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        gated.push(run_arm(true, seed)?);
        ablation.push(run_arm(false, seed)?);
    }
    Ok(ComparisonReport {
        gated: ComparisonArm { label: "gated".into(), per_seed: gated },
        ablation: ComparisonArm { label: "ablation".into(), per_seed: ablation },
    })
}

fn heldout_score(cfg: &TrainConfig, params: &SageParams, held: &[&VideoRecord]) -> Result<f64> {
    let report = evaluate_videos(&cfg.model, params, held, cfg.clip_len, cfg.stride)?;
    Ok(report.overall_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_dataset, CorruptionSpec, Modality, SynthConfig};
    use crate::harness::kfold::kfold_split;
    use crate::model::ModelConfig;

    fn corrupted_dataset(seed: u64) -> Vec<VideoRecord> {
        let frames = 60;
        let cfg = SynthConfig {
            n_videos: 3,
            frames_per_video: frames,
            dim_visual: 6,
            dim_audio: 2,
            corruption_schedule: vec![CorruptionSpec {
                start: frames / 3,
                end: 2 * frames / 3,
                modality: Modality::Visual,
                noise_std: 3.0,
            }],
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

    #[test]
    fn comparison_runs_both_arms_and_reports() {
        let dataset = corrupted_dataset(21);
        let mut model = ModelConfig::new(6, 2);
        model.transformer_layers = 1;
        model.rgf_rescale = true;
        let mut cfg = TrainConfig::new(model);
        cfg.clip_len = 30;
        cfg.stride = 30;
        cfg.epochs = 2;
        cfg.learning_rate = 1e-3;
        let ids: Vec<String> = dataset.iter().map(|r| r.id.clone()).collect();
        let fold = kfold_split(&ids, 3, 0).unwrap();
        let report = reliability_comparison(&cfg, &dataset, &fold, 2, &[0, 1]).unwrap();
        assert_eq!(report.gated.per_seed.len(), 2);
        assert_eq!(report.ablation.per_seed.len(), 2);
        assert!(report.gated.mean().is_finite());
        assert!(report.ablation.mean().is_finite());
        let csv = report.to_csv();
        assert!(csv.starts_with("arm,seed,heldout_ccc_mean\n"));
        assert_eq!(csv.lines().count(), 1 + 4 + 2);
        assert!(report.summary_line().contains("gated"));
    }

    #[test]
    fn ablation_base_config_is_rejected() {
        let dataset = corrupted_dataset(22);
        let mut model = ModelConfig::new(6, 2);
        model.use_rgf = false;
        let cfg = TrainConfig::new(model);
        let ids: Vec<String> = dataset.iter().map(|r| r.id.clone()).collect();
        let fold = kfold_split(&ids, 3, 0).unwrap();
        assert!(matches!(
            reliability_comparison(&cfg, &dataset, &fold, 0, &[0]),
            Err(SageError::Config(_))
        ));
    }
}
