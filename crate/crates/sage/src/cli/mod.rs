//! Command-line entry point: dataset synthesis, training, evaluation,
//! gradient auditing, and per-frame prediction export.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 runtime or
//! numeric failure, 2 usage, config, or IO failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    load_dataset, load_video, write_atomic, write_video, SynthConfig, DEFAULT_CLIP_LEN,
    DEFAULT_STRIDE,
};
use crate::error::{Result, SageError};
use crate::harness::{
    kfold_split, predict_video, select_best_fold_per_target, train, training_log_csv,
    FoldAssignment, TrainConfig, TrainOutcome,
};
use crate::model::{gradient_suite_scaled, load_checkpoint, save_checkpoint};

#[derive(Parser)]
#[command(name = "sage", version, about = "Stage-adaptive audiovisual emotion regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON config.
    Synth {
        /// JSON file deserializing into the synthesis config.
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving per-video feature files and annotation CSVs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory, single-split or k-fold.
    Train {
        /// JSON file deserializing into the training config.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints, logs, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Number of cross-validation folds; omitted means train on everything.
        #[arg(long)]
        k: Option<usize>,
        /// Train only this fold index (requires --k).
        #[arg(long)]
        fold: Option<usize>,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Rescale gated features by clip length.
        #[arg(long)]
        rgf_rescale: bool,
        /// Ablation: disable reliability gating entirely.
        #[arg(long)]
        no_rgf: bool,
    },
    /// Evaluate a checkpoint over a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory for the report CSV (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit analytic gradients of the full model against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately mis-scale the softmax backward to prove the audit
        /// catches wrong gradients.
        #[arg(long, hide = true)]
        break_softmax: bool,
    },
    /// Export per-frame predictions and reliability weights for one video.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory holding the video.
        #[arg(long)]
        data: PathBuf,
        /// Video id within the dataset directory.
        #[arg(long)]
        video: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Record of everything a training run depends on, written before the run
/// starts so it can be reproduced.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    build: String,
    config: TrainConfig,
    data_dir: String,
    out_dir: String,
    k: Option<usize>,
    fold: Option<usize>,
}

fn exit_code(err: &SageError) -> i32 {
    match err {
        SageError::Config(_)
        | SageError::Parse { .. }
        | SageError::Data { .. }
        | SageError::Io(_)
        | SageError::Alignment(_)
        | SageError::Evaluation(_) => 2,
        SageError::Training(_)
        | SageError::Domain(_)
        | SageError::Shape(_)
        | SageError::Contract(_) => 1,
    }
}

/// Parses arguments from the process environment, runs the selected
/// command, and returns the process exit code.
pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init()
        .ok();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out } => cmd_synth(&config, &out),
        Command::Train { config, data, out, k, fold, seed, rgf_rescale, no_rgf } => {
            cmd_train(&config, &data, &out, k, fold, seed, rgf_rescale, no_rgf)
        }
        Command::Eval { checkpoint, data, out } => cmd_eval(&checkpoint, &data, out.as_deref()),
        Command::Gradcheck { seed, break_softmax } => cmd_gradcheck(seed, break_softmax),
        Command::Export { checkpoint, data, video, out } => {
            cmd_export(&checkpoint, &data, &video, &out)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        SageError::Config(format!("{what} {} is malformed: {e}", path.display()))
    })
}

fn cmd_synth(config_path: &Path, out: &Path) -> Result<()> {
    let cfg: SynthConfig = read_json(config_path, "synthesis config")?;
    let videos = crate::dataio::synth_dataset(&cfg)?;
    fs::create_dir_all(out)?;
    for (i, (visual, audio, annotations)) in videos.iter().enumerate() {
        write_video(out, &format!("video_{i:03}"), visual, audio, annotations)?;
    }
    println!("wrote {} videos to {}", videos.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config_path: &Path,
    data: &Path,
    out: &Path,
    k: Option<usize>,
    fold_index: Option<usize>,
    seed: Option<u64>,
    rgf_rescale: bool,
    no_rgf: bool,
) -> Result<()> {
    let mut cfg: TrainConfig = read_json(config_path, "training config")?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if rgf_rescale {
        cfg.model.rgf_rescale = true;
    }
    if no_rgf {
        cfg.model.use_rgf = false;
    }
    cfg.validate()?;
    if fold_index.is_some() && k.is_none() {
        return Err(SageError::Config("--fold requires --k".into()));
    }

    let dataset = load_dataset(data)?;
    if dataset.is_empty() {
        return Err(SageError::Config(format!("no videos found in {}", data.display())));
    }
    let ids: Vec<String> = dataset.iter().map(|r| r.id.clone()).collect();
    let fold = match k {
        Some(k) => kfold_split(&ids, k, cfg.seed)?,
        None => FoldAssignment::single(&ids),
    };

    fs::create_dir_all(out)?;
    let manifest = RunManifest {
        build: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        config: cfg.clone(),
        data_dir: data.display().to_string(),
        out_dir: out.display().to_string(),
        k,
        fold: fold_index,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SageError::Config(format!("manifest serialization failed: {e}")))?;
    write_atomic(&out.join("manifest.json"), manifest_json.as_bytes())?;

    let folds_to_run: Vec<Option<usize>> = match (k, fold_index) {
        (None, _) => vec![None],
        (Some(_), Some(f)) => vec![Some(f)],
        (Some(k), None) => (0..k).map(Some).collect(),
    };

    let mut fold_reports = Vec::new();
    for held_out in folds_to_run {
        let outcome = train(&cfg, &dataset, &fold, held_out)?;
        let label = match held_out {
            Some(f) => format!("fold{f}"),
            None => "full".to_string(),
        };
        let dir = out.join(&label);
        fs::create_dir_all(&dir)?;
        save_checkpoint(&dir.join("best.sagc"), &cfg.model, &outcome.best_params)?;
        save_checkpoint(&dir.join("final.sagc"), &cfg.model, &outcome.final_params)?;
        write_atomic(&dir.join("training_log.csv"), training_log_csv(&outcome.log).as_bytes())?;
        report_run(&label, &outcome);
        if let Some(f) = held_out {
            let last = outcome.log.last();
            fold_reports.push((
                f,
                last.map_or(f64::NAN, |l| l.val_ccc_v),
                last.map_or(f64::NAN, |l| l.val_ccc_a),
            ));
        }
    }

    if fold_reports.len() > 1 {
        let scores: Vec<(f64, f64)> = fold_reports.iter().map(|&(_, v, a)| (v, a)).collect();
        let (fv, fa) = select_best_fold_per_target(&scores)?;
        let mut csv = String::from("target,fold,val_ccc\n");
        csv.push_str(&format!("valence,{},{:.6}\n", fold_reports[fv].0, scores[fv].0));
        csv.push_str(&format!("arousal,{},{:.6}\n", fold_reports[fa].0, scores[fa].1));
        write_atomic(&out.join("fold_selection.csv"), csv.as_bytes())?;
        println!(
            "selected fold {} for valence, fold {} for arousal",
            fold_reports[fv].0, fold_reports[fa].0
        );
    }
    Ok(())
}

fn report_run(label: &str, outcome: &TrainOutcome) {
    match (outcome.best_epoch, outcome.log.last()) {
        (Some(best), Some(last)) => println!(
            "{label}: {} epochs, final train loss {:.4}, best epoch {best} (val mean {:.4})",
            outcome.log.len(),
            last.train_loss,
            outcome.log[best].val_ccc_mean
        ),
        (None, Some(last)) => println!(
            "{label}: {} epochs, final train loss {:.4}",
            outcome.log.len(),
            last.train_loss
        ),
        _ => println!("{label}: 0 epochs, initialization checkpoint written"),
    }
}

fn cmd_eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let (model, params) = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(data)?;
    if dataset.is_empty() {
        return Err(SageError::Config(format!("no videos found in {}", data.display())));
    }
    let refs: Vec<&crate::dataio::VideoRecord> = dataset.iter().collect();
    let report = crate::harness::evaluate_videos(
        &model,
        &params,
        &refs,
        DEFAULT_CLIP_LEN,
        DEFAULT_STRIDE,
    )?;
    println!("{}", report.summary_line());
    let out_dir = out.unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("eval_report.csv");
    report.write_csv(&csv_path)?;
    println!("report written to {}", csv_path.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64, break_softmax: bool) -> Result<()> {
    let scale = if break_softmax { 1.05 } else { 1.0 };
    let report = gradient_suite_scaled(seed, scale)?;
    println!("{}", report.summary_line());
    if report.passed() {
        println!("gradient check passed");
        Ok(())
    } else {
        Err(SageError::Training(format!(
            "gradient check failed: {}[{}] at T={} has relative error {:.3e}",
            report.worst.param, report.worst.index, report.worst.clip_len, report.worst.rel_error
        )))
    }
}

fn cmd_export(checkpoint: &Path, data: &Path, video: &str, out: &Path) -> Result<()> {
    let (model, params) = load_checkpoint(checkpoint)?;
    let rec = load_video(data, video)?;
    let pred = predict_video(
        &model,
        &params,
        rec.visual.values(),
        rec.audio.values(),
        DEFAULT_CLIP_LEN,
        DEFAULT_STRIDE,
    )?;
    let mut csv = String::from("frame,valence_pred,arousal_pred,alpha\n");
    for frame in 0..pred.predictions.rows() {
        csv.push_str(&format!(
            "{frame},{:.6},{:.6},{:.9}\n",
            pred.predictions.at2(frame, 0),
            pred.predictions.at2(frame, 1),
            pred.alpha[frame]
        ));
    }
    write_atomic(out, csv.as_bytes())?;
    println!("wrote {} frames to {}", pred.predictions.rows(), out.display());
    Ok(())
}
