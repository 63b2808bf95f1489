//! Command-line interface: data generation, training, evaluation, inference,
//! verification, and configuration reports.
//!
//! Machine-readable JSON goes to stdout; human diagnostics go to stderr.
//! Run configs are strict TOML: unknown keys are rejected, and presets
//! `base`/`small` expand to the standard model variants before explicit
//! overrides apply.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::conv::KernelSpec;
use crate::data::{
    ClipKind, Dataset, DatasetManifest, ManifestEntry, PoseClip, Split, SyntheticRig,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, PoseSet};
use crate::model::loss::Reduction;
use crate::model::{census, forward, ModelConfig, ModelWeights};
use crate::tape::Tape;
use crate::train::{
    load_checkpoint, save_checkpoint, train, TrainSettings, TrainerState,
};

#[derive(Parser)]
#[command(name = "ssrstf", version, about = "Dual-stream 2D-to-3D pose lifting")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic paired 2D/3D clips and a manifest.
    GenData(GenDataArgs),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset split.
    Eval(EvalArgs),
    /// Lift a 2D clip to 3D.
    Infer(InferArgs),
    /// Run the verification oracle suites.
    Verify(VerifyArgs),
    /// Report parameter counts and kernel extents for a configuration.
    Info(InfoArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Training clips to generate.
    #[arg(long, default_value_t = 8)]
    clips: usize,
    /// Additional clips tagged as the test split.
    #[arg(long, default_value_t = 2)]
    test_clips: usize,
    #[arg(long, default_value_t = 243)]
    frames: usize,
    #[arg(long, default_value_t = 17)]
    joints: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian 2D keypoint noise sigma, normalized units.
    #[arg(long, default_value_t = 0.0)]
    noise: f32,
    /// Confidence degradation level in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    conf_noise: f32,
    #[arg(long, default_value_t = 50.0)]
    fps: f32,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint with trainer state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// p1 | p2 | pck | auc | all
    #[arg(long, default_value = "all")]
    protocol: String,
    /// Protocol 2 without the uniform-scale degree of freedom.
    #[arg(long, default_value_t = false)]
    strict_rigid: bool,
    /// Write the error histogram as CSV to this path.
    #[arg(long)]
    hist: Option<PathBuf>,
    /// Dataset split to evaluate.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 30.0)]
    hist_bin_mm: f64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// grad | equiv | metrics | all
    #[arg(long, default_value = "all")]
    suite: String,
    /// Run the equivalence suite in 64-bit precision (tighter tolerance).
    #[arg(long = "f64", default_value_t = false)]
    use_f64: bool,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// base | small
    #[arg(long)]
    preset: Option<String>,
}

// ── Run configuration file ──────────────────────────────────────────────

/// Strict TOML schema of a run config. Every field is optional; missing
/// model fields come from the preset (default "base"), missing train fields
/// from the standard recipe.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    preset: Option<String>,
    model: Option<ModelOverrides>,
    train: Option<TrainOverrides>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOverrides {
    n_blocks: Option<usize>,
    channels: Option<usize>,
    repr_channels: Option<usize>,
    frames: Option<usize>,
    joints: Option<usize>,
    kernel: Option<KernelSpec>,
    heads: Option<usize>,
    mlp_ratio: Option<usize>,
    lambda_velocity: Option<f64>,
    literal_sigma: Option<bool>,
    reduction: Option<Reduction>,
    output_scale_mm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    lr_decay: Option<f64>,
    weight_decay: Option<f64>,
    grad_clip: Option<f64>,
    no_grad_clip: Option<bool>,
    seed: Option<u64>,
    max_steps: Option<u64>,
    eval_every: Option<usize>,
    warmup_epochs: Option<usize>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSettings,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&text)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let file: RunConfigFile = toml::from_str(text)
        .map_err(|e| Error::Config(vec![format!("run config: {e}")]))?;
    let mut model = match &file.preset {
        Some(name) => ModelConfig::preset(name)?,
        None => ModelConfig::base(),
    };
    if let Some(m) = &file.model {
        if let Some(v) = m.n_blocks {
            model.n_blocks = v;
        }
        if let Some(v) = m.channels {
            model.channels = v;
        }
        if let Some(v) = m.repr_channels {
            model.repr_channels = v;
        }
        if let Some(v) = m.frames {
            model.frames = v;
        }
        if let Some(v) = m.joints {
            model.joints = v;
        }
        if let Some(v) = m.kernel {
            model.kernel = v;
        }
        if let Some(v) = m.heads {
            model.heads = v;
        }
        if let Some(v) = m.mlp_ratio {
            model.mlp_ratio = v;
        }
        if let Some(v) = m.lambda_velocity {
            model.lambda_velocity = v;
        }
        if let Some(v) = m.literal_sigma {
            model.literal_sigma = v;
        }
        if let Some(v) = m.reduction {
            model.reduction = v;
        }
        if let Some(v) = m.output_scale_mm {
            model.output_scale_mm = v;
        }
    }
    let mut settings = TrainSettings::default();
    if let Some(t) = &file.train {
        if let Some(v) = t.epochs {
            settings.epochs = v;
        }
        if let Some(v) = t.batch_size {
            settings.batch_size = v;
        }
        if let Some(v) = t.learning_rate {
            settings.schedule.initial = v;
        }
        if let Some(v) = t.lr_decay {
            settings.schedule.decay = v;
        }
        if let Some(v) = t.weight_decay {
            settings.weight_decay = v;
        }
        if let Some(v) = t.grad_clip {
            settings.grad_clip = Some(v);
        }
        if t.no_grad_clip == Some(true) {
            settings.grad_clip = None;
        }
        if let Some(v) = t.seed {
            settings.seed = v;
        }
        if let Some(v) = t.max_steps {
            settings.max_steps = Some(v);
        }
        if let Some(v) = t.eval_every {
            settings.eval_every = v.max(1);
        }
        if let Some(v) = t.warmup_epochs {
            settings.warmup_epochs = v;
        }
    }
    // Validate everything up front so problems are listed exhaustively.
    let mut problems = Vec::new();
    if let Err(Error::Config(list)) = model.validate() {
        problems.extend(list);
    }
    if settings.batch_size == 0 {
        problems.push("train.batch_size must be >= 1".into());
    }
    if !(settings.schedule.initial > 0.0 && settings.schedule.initial.is_finite()) {
        problems.push("train.learning_rate must be positive".into());
    }
    if !(settings.schedule.decay > 0.0 && settings.schedule.decay <= 1.0) {
        problems.push("train.lr_decay must be in (0, 1]".into());
    }
    if settings.weight_decay < 0.0 {
        problems.push("train.weight_decay must be >= 0".into());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    Ok(RunConfig { model, train: settings })
}

// ── Command implementations ─────────────────────────────────────────────

pub fn run() -> Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Infer(args) => cmd_infer(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Info(args) => cmd_info(&args),
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<i32> {
    let mut rig = SyntheticRig::chain(args.joints, args.seed)?;
    rig.noise_2d = args.noise;
    rig.confidence_noise = args.conf_noise;
    rig.fps = args.fps;
    rig.validate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut entries = Vec::new();
    let total = args.clips + args.test_clips;
    for i in 0..total {
        let (clip2d, clip3d) = rig.generate_pair(i as u64, args.frames)?;
        let id = format!("clip{i:04}");
        let path_2d = format!("{id}.2d.pseq");
        let path_3d = format!("{id}.3d.pseq");
        clip2d.save(args.out.join(&path_2d))?;
        clip3d.save(args.out.join(&path_3d))?;
        entries.push(ManifestEntry {
            id,
            split: if i < args.clips { Split::Train } else { Split::Test },
            frames: args.frames,
            joints: args.joints,
            crc_2d: clip2d.payload_crc32(),
            crc_3d: clip3d.payload_crc32(),
            path_2d,
            path_3d,
        });
    }
    let manifest = DatasetManifest { rig, entries };
    let manifest_path = manifest.save(&args.out)?;

    let summary = serde_json::json!({
        "out": args.out,
        "manifest": manifest_path,
        "train_clips": args.clips,
        "test_clips": args.test_clips,
        "frames": args.frames,
        "joints": args.joints,
        "seed": args.seed,
        "noise_2d": args.noise,
        "checksums": manifest.entries.iter()
            .map(|e| serde_json::json!({"id": e.id, "crc_2d": e.crc_2d, "crc_3d": e.crc_3d}))
            .collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let run_config = load_run_config(&args.config)?;
    let manifest = DatasetManifest::load(&args.data)?;
    let train_data = Dataset::load(&manifest, &args.data, Split::Train)?;
    let eval_data = Dataset::load(&manifest, &args.data, Split::Test).ok();
    if eval_data.is_none() {
        eprintln!("note: no test split; per-epoch evaluation uses the training split");
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let (mut weights, resume_state) = match &args.resume {
        None => (
            ModelWeights::<f32>::init(run_config.model, run_config.train.seed)?,
            None,
        ),
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            if loaded.weights.config != run_config.model {
                return Err(Error::Config(vec![format!(
                    "checkpoint config {:?} does not match run config {:?}",
                    loaded.weights.config, run_config.model
                )]));
            }
            let trainer = loaded.trainer.ok_or_else(|| {
                Error::invalid("train", "checkpoint has no trainer state; cannot resume")
            })?;
            (loaded.weights, Some(trainer))
        }
    };

    let log_path = args.out.join("train_log.jsonl");
    let ckpt_path = args.out.join("checkpoint.ssrw");
    let mut log_lines: Vec<String> = Vec::new();
    let result = train(
        &mut weights,
        &train_data,
        eval_data.as_ref(),
        &run_config.train,
        resume_state,
        |snapshot| {
            let line = serde_json::to_string(&snapshot.log)?;
            eprintln!("epoch {}: {}", snapshot.log.epoch, line);
            log_lines.push(line);
            std::fs::write(&log_path, log_lines.join("\n") + "\n")
                .map_err(|e| Error::io(&log_path, e))?;
            save_checkpoint(&ckpt_path, snapshot.weights, Some((&snapshot.state, snapshot.optimizer)))
        },
    );

    match result {
        Ok(outcome) => {
            let final_state = TrainerState {
                epoch: outcome.epochs_done,
                global_step: outcome.global_step,
                settings: run_config.train.clone(),
            };
            save_checkpoint(&ckpt_path, &weights, Some((&final_state, &outcome.optimizer)))?;
            let summary = serde_json::json!({
                "checkpoint": ckpt_path,
                "log": log_path,
                "epochs": outcome.epochs_done,
                "steps": outcome.global_step,
                "final": outcome.logs.last(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Err(e) => {
            // Earlier epochs' checkpoint (if any) stays on disk.
            eprintln!("training aborted: {e}");
            if ckpt_path.exists() {
                eprintln!("last good checkpoint retained at {}", ckpt_path.display());
            }
            Err(e)
        }
    }
}

/// Runs the model over every clip of a dataset and pairs predictions with
/// ground truth for the metrics module.
fn predict_dataset(
    weights: &ModelWeights<f32>,
    data: &Dataset,
) -> Result<Vec<(String, PoseSet, PoseSet)>> {
    let mut pairs = Vec::new();
    for pair in &data.pairs {
        let input = pair
            .input_2d
            .to_tensor::<f32>()
            .reshaped(vec![1, pair.input_2d.frames, pair.input_2d.joints, 3])?;
        let mut tape = Tape::new();
        let (_, out) = forward(&mut tape, weights, &input)?;
        pairs.push((
            pair.id.clone(),
            PoseSet::from_tensor(tape.value(out.prediction))?,
            PoseSet::from_clip(&pair.target_3d)?,
        ));
    }
    Ok(pairs)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(Error::invalid("eval", format!("unknown split {other:?}")));
        }
    };
    let options = match args.protocol.as_str() {
        "p1" => EvalOptions { protocol_2: false, pck: false, auc: false, ..Default::default() },
        "p2" => EvalOptions { protocol_1: false, pck: false, auc: false, ..Default::default() },
        "pck" => EvalOptions { protocol_1: false, protocol_2: false, auc: false, ..Default::default() },
        "auc" => EvalOptions { protocol_1: false, protocol_2: false, pck: false, ..Default::default() },
        "all" => EvalOptions::default(),
        other => {
            return Err(Error::invalid(
                "eval",
                format!("unknown protocol {other:?}; expected p1|p2|pck|auc|all"),
            ))
        }
    };
    let options = EvalOptions {
        strict_rigid: args.strict_rigid,
        histogram_bin_mm: args.hist_bin_mm,
        ..options
    };

    let loaded = load_checkpoint(&args.ckpt)?;
    let manifest = DatasetManifest::load(&args.data)?;
    let data = Dataset::load(&manifest, &args.data, split)?;
    let pairs = predict_dataset(&loaded.weights, &data)?;
    let report = evaluate(&pairs, &options)?;
    if let Some(hist_path) = &args.hist {
        std::fs::write(hist_path, report.histogram.to_csv())
            .map_err(|e| Error::io(hist_path, e))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn cmd_infer(args: &InferArgs) -> Result<i32> {
    let loaded = load_checkpoint(&args.ckpt)?;
    let clip = PoseClip::load(&args.input)?;
    if clip.kind != ClipKind::Pose2d {
        return Err(Error::invalid("infer", "input clip must be 2D keypoints with confidence"));
    }
    let input = clip
        .to_tensor::<f32>()
        .reshaped(vec![1, clip.frames, clip.joints, 3])?;
    let mut tape = Tape::new();
    let (_, out) = forward(&mut tape, &loaded.weights, &input)?;
    let prediction = PoseClip::new(
        ClipKind::Pose3d,
        clip.frames,
        clip.joints,
        clip.fps,
        tape.value(out.prediction).data().to_vec(),
    )?;
    prediction.save(&args.out)?;
    let summary = serde_json::json!({
        "input": args.input,
        "out": args.out,
        "frames": prediction.frames,
        "joints": prediction.joints,
        "crc_3d": prediction.payload_crc32(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let reports = crate::verify::run_suites(&args.suite, args.use_f64)?;
    let all_passed = reports.iter().all(|r| r.passed);
    println!("{}", serde_json::to_string_pretty(&reports)?);
    for report in &reports {
        for c in &report.checks {
            eprintln!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
    }
    Ok(if all_passed { 0 } else { 1 })
}

fn cmd_info(args: &InfoArgs) -> Result<i32> {
    let model = match (&args.config, &args.preset) {
        (Some(path), None) => load_run_config(path)?.model,
        (None, Some(name)) => ModelConfig::preset(name)?,
        (None, None) => ModelConfig::base(),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    model.validate()?;
    let counts = census(&model);
    let (long, short) = model.kernel.extents();
    let summary = serde_json::json!({
        "config": model,
        "parameters": counts,
        "parameters_millions": counts.total as f64 / 1e6,
        "kernel_extents": { "long": long, "short": short },
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}
