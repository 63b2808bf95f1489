//! Training: learning-rate schedule, epoch loop, evaluation hook, and
//! checkpoint plumbing.

pub mod adamw;
pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::data::{assemble_batch, batches_of, epoch_windows, Batch, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{mpjpe_mm, PoseSet};
use crate::model::loss::{total_loss, LossValues};
use crate::model::{forward, ModelWeights};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub use adamw::{clip_global_norm, AdamW};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, LoadedCheckpoint, TrainerState,
};

/// Multiplicative per-epoch decay schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { initial: 6e-4, decay: 0.99 }
    }
}

impl LrSchedule {
    /// `initial * decay^epoch`, exactly.
    pub fn at(&self, epoch: usize) -> f64 {
        self.initial * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Optional hard cap on total optimizer steps across all epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Evaluate MPJPE every this many epochs (always on the final epoch).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Linear learning-rate warmup over this many epochs (0 disables):
    /// the scheduled rate is scaled by `(epoch + 1) / warmup_epochs` until
    /// the ramp completes. A non-paper stability aid, off by default.
    #[serde(default)]
    pub warmup_epochs: usize,
}

fn default_eval_every() -> usize {
    1
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 90,
            batch_size: 12,
            schedule: LrSchedule::default(),
            weight_decay: 0.01,
            grad_clip: Some(1.0),
            seed: 0,
            max_steps: None,
            eval_every: 1,
            warmup_epochs: 0,
        }
    }
}

impl TrainSettings {
    /// True when two settings produce the same optimization trajectory.
    /// Budget fields (epochs, max_steps) and evaluation cadence may differ
    /// between an interrupted run and its resumption.
    pub fn trajectory_eq(&self, other: &TrainSettings) -> bool {
        self.batch_size == other.batch_size
            && self.schedule == other.schedule
            && self.weight_decay == other.weight_decay
            && self.grad_clip == other.grad_clip
            && self.seed == other.seed
            && self.warmup_epochs == other.warmup_epochs
    }

    /// Effective learning rate at an epoch: the schedule shaped by the
    /// optional warmup ramp.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let base = self.schedule.at(epoch);
        if epoch < self.warmup_epochs {
            base * (epoch + 1) as f64 / self.warmup_epochs as f64
        } else {
            base
        }
    }
}

/// One line of the JSON training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub l_p: f64,
    pub l_delta: f64,
    pub total: f64,
    /// Null on epochs where evaluation was skipped (`eval_every`).
    pub eval_mpjpe_mm: Option<f64>,
    pub steps: u64,
}

/// Weight snapshot handed to the per-epoch sink (for checkpointing).
pub struct EpochSnapshot<'a> {
    pub weights: &'a ModelWeights<f32>,
    pub optimizer: &'a AdamW<f32>,
    pub state: TrainerState,
    pub log: EpochLog,
}

#[derive(Debug)]
pub struct TrainResult {
    pub logs: Vec<EpochLog>,
    pub optimizer: AdamW<f32>,
    pub epochs_done: usize,
    pub global_step: u64,
}

/// Mean root-aligned MPJPE of full-clip predictions over a dataset.
pub fn eval_mpjpe(weights: &ModelWeights<f32>, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for pair in &data.pairs {
        let input = pair
            .input_2d
            .to_tensor::<f32>()
            .reshaped(vec![1, pair.input_2d.frames, pair.input_2d.joints, 3])?;
        let mut tape = Tape::new();
        let (_, out) = forward(&mut tape, weights, &input)?;
        let pred = PoseSet::from_tensor(tape.value(out.prediction))?;
        let gt = PoseSet::from_clip(&pair.target_3d)?;
        total += mpjpe_mm(&pred, &gt)? * pair.target_3d.frames as f64;
        frames += pair.target_3d.frames;
    }
    Ok(total / frames.max(1) as f64)
}

/// One gradient step over a batch. Returns the loss values.
fn train_step(
    weights: &mut ModelWeights<f32>,
    optimizer: &mut AdamW<f32>,
    batch: &Batch<f32>,
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<LossValues> {
    let config = weights.config;
    let mut tape = Tape::new();
    let (bound, out) = forward(&mut tape, weights, &batch.input_2d)?;
    let target = tape.leaf(batch.target_3d.clone());
    let mask = tape.leaf(batch.frame_mask.clone());
    let losses = total_loss(
        &mut tape,
        out.prediction,
        target,
        config.lambda_velocity,
        config.reduction,
        Some(mask),
    )?;
    let values = losses.values(&tape);
    if !values.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    tape.backward(losses.total)?;
    let mut grads: Vec<Vec<f32>> = bound
        .ids()
        .iter()
        .map(|&id| tape.grad(id).expect("backward ran").to_vec())
        .collect();
    if let Some(max_norm) = grad_clip {
        clip_global_norm(&mut grads, max_norm);
    }
    optimizer.apply(&mut weights.store, &grads, lr)?;
    Ok(values)
}

/// Runs the epoch loop. `resume` continues from a loaded trainer state;
/// training is a pure function of `(weights, data, settings)`, so a resumed
/// run reproduces an uninterrupted one bit for bit.
///
/// The per-epoch sink receives a snapshot after every epoch (for logging and
/// checkpoint writes). On divergence the error carries the epoch and step;
/// whatever the sink persisted earlier is the retained state.
pub fn train(
    weights: &mut ModelWeights<f32>,
    data: &Dataset,
    eval_data: Option<&Dataset>,
    settings: &TrainSettings,
    resume: Option<(TrainerState, AdamW<f32>)>,
    mut per_epoch: impl FnMut(&EpochSnapshot) -> Result<()>,
) -> Result<TrainResult> {
    weights.config.validate()?;
    let window = weights.config.frames;
    let (start_epoch, mut optimizer, mut global_step) = match resume {
        Some((state, optimizer)) => {
            if !state.settings.trajectory_eq(settings) {
                return Err(Error::Config(vec![format!(
                    "resume settings would change the optimization trajectory: {:?} vs checkpoint {:?}",
                    settings, state.settings
                )]));
            }
            (state.epoch, optimizer, state.global_step)
        }
        None => (0, AdamW::new(&weights.store, settings.weight_decay), 0),
    };

    let mut logs = Vec::new();
    let mut epochs_done = start_epoch;
    'epochs: for epoch in start_epoch..settings.epochs {
        let lr = settings.lr_at(epoch);
        let windows = epoch_windows(data, window, settings.seed, epoch);
        let mut sums = (0.0, 0.0, 0.0);
        let mut steps_this_epoch = 0u64;
        for chunk in batches_of(&windows, settings.batch_size) {
            if let Some(cap) = settings.max_steps {
                if global_step >= cap {
                    break 'epochs;
                }
            }
            let batch = assemble_batch::<f32>(data, chunk, window);
            let values = train_step(weights, &mut optimizer, &batch, lr, settings.grad_clip)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::Diverged {
                        epoch,
                        step: global_step,
                        what,
                    },
                    other => other,
                })?;
            sums.0 += values.position;
            sums.1 += values.velocity;
            sums.2 += values.total;
            global_step += 1;
            steps_this_epoch += 1;
        }
        if steps_this_epoch == 0 {
            break;
        }
        epochs_done = epoch + 1;
        let denom = steps_this_epoch as f64;
        let eval_set = eval_data.unwrap_or(data);
        let run_eval = (epoch + 1) % settings.eval_every.max(1) == 0
            || epoch + 1 == settings.epochs
            || settings.max_steps.is_some_and(|cap| global_step >= cap);
        let eval_mpjpe_mm = if run_eval {
            Some(eval_mpjpe(weights, eval_set).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged { epoch, step: global_step, what },
                other => other,
            })?)
        } else {
            None
        };
        let log = EpochLog {
            epoch,
            lr,
            l_p: sums.0 / denom,
            l_delta: sums.1 / denom,
            total: sums.2 / denom,
            eval_mpjpe_mm,
            steps: steps_this_epoch,
        };
        let snapshot = EpochSnapshot {
            weights,
            optimizer: &optimizer,
            state: TrainerState {
                epoch: epoch + 1,
                global_step,
                settings: settings.clone(),
            },
            log: log.clone(),
        };
        per_epoch(&snapshot)?;
        logs.push(log);
    }
    Ok(TrainResult { logs, optimizer, epochs_done, global_step })
}

/// Batch from a single full clip, for tests and inference checks.
pub fn clip_tensor(clip: &crate::data::PoseClip) -> Result<Tensor<f32>> {
    clip.to_tensor::<f32>()
        .reshaped(vec![1, clip.frames, clip.joints, 3])
}
