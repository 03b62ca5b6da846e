//! Contrastive training loop, checkpoints and grid search.
//!
//! Each step encodes the premise, explicit entailment, implied entailment and
//! contradiction of every sample under both views, evaluates the dual loss
//! and applies one AdamW update. Development RTE average accuracy (with `γ`
//! tuned on the same split) is measured every `eval_every` steps and at the
//! end of training; the best encoder seen is retained.

pub mod grid;
pub mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{batch_iter, to_rte_instances, Batch, DatasetSplit, HypothesisKind};
use crate::encoder::tokenizer::Tokenizer;
use crate::encoder::{
    load_encoder, load_external_backbone, save_encoder, Architecture, Backbone, DualEmbedding, Encoder,
    EncoderSpec, SequenceTrace, ToyConfig, View,
};
use crate::error::{Error, Result};
use crate::evaluation::{report_from_scores, rte_scores, tune_threshold, RteReport, RteThreshold};
use crate::objective::{dual_loss_with_grad, BatchEmbeddings, LossVariant, Role, Slot, Temperature};
use optim::{clip_grad_norm, scheduled_lr, warmup_steps, AdamConfig, AdamW};

pub use grid::{grid_search, GridCell, GridResult, GRID_BATCH_SIZES, GRID_LEARNING_RATES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: Temperature,
    pub variant: LossVariant,
    pub epochs: usize,
    pub seed: u64,
    pub encoder: EncoderSpec,
    /// Evaluate every this many steps; `0` evaluates once per epoch.
    pub eval_every: usize,
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Cap on the tokenizer vocabulary built from the training split.
    pub max_vocab: Option<usize>,
}

impl Default for TrainConfig {
    /// Settings for the toy backbone on the synthetic corpus.
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 3e-3,
            tau: Temperature::DEFAULT,
            variant: LossVariant::Full,
            epochs: 3,
            seed: 0,
            encoder: EncoderSpec::default(),
            eval_every: 0,
            warmup_fraction: 0.1,
            adam: AdamConfig::default(),
            max_grad_norm: Some(1.0),
            max_vocab: None,
        }
    }
}

impl TrainConfig {
    /// Batch size 64 and learning rate 5e-5, the selected cross-encoder cell.
    pub fn reference_cross(encoder: EncoderSpec) -> Self {
        Self {
            batch_size: 64,
            learning_rate: 5e-5,
            encoder: EncoderSpec {
                architecture: Architecture::Cross,
                ..encoder
            },
            ..Self::default()
        }
    }

    /// Batch size 32 and learning rate 3e-5, the selected bi-encoder cell.
    pub fn reference_bi(encoder: EncoderSpec) -> Self {
        Self {
            batch_size: 32,
            learning_rate: 3e-5,
            encoder: EncoderSpec {
                architecture: Architecture::Bi,
                ..encoder
            },
            ..Self::default()
        }
    }

    pub fn toy(architecture: Architecture, toy: ToyConfig) -> Self {
        Self {
            encoder: EncoderSpec::toy(architecture, toy),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1]".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("max_grad_norm must be positive".into()));
            }
        }
        self.encoder.validate()
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.batch_size)
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(epoch as u64 + 1)
    }
}

/// Builds the initial encoder: a seeded toy model with a vocabulary from the
/// training split, or the towers of an existing checkpoint.
pub fn init_encoder(config: &TrainConfig, train: &DatasetSplit) -> Result<Encoder> {
    match &config.encoder.backbone {
        Backbone::Toy(_) => {
            let texts = train
                .samples()
                .iter()
                .flat_map(|s| std::iter::once(s.premise.as_str()).chain(HypothesisKind::ALL.map(|k| s.hypothesis(k))));
            let tokenizer = Tokenizer::build(texts, config.max_vocab);
            Encoder::new_toy(config.encoder.clone(), tokenizer, config.seed)
        }
        Backbone::External { locator } => load_external_backbone(locator, &config.encoder),
    }
}

/// One evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    pub dev_rte_avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub config: TrainConfig,
    pub step: usize,
    pub dev_metric: MetricRecord,
    /// Threshold tuned on the development split for this encoder.
    pub gamma: RteThreshold,
}

/// Development metric of an encoder: RTE average with `γ` tuned on `dev`.
pub fn dev_rte(encoder: &Encoder, dev: &DatasetSplit) -> Result<(RteReport, RteThreshold)> {
    let instances = to_rte_instances(dev);
    let scores = rte_scores(encoder, &instances)?;
    let gamma = tune_threshold(&scores)?;
    Ok((report_from_scores(&instances, &scores, gamma), gamma))
}

/// Owns the encoder and optimizer state while training.
pub struct Trainer {
    config: TrainConfig,
    encoder: Encoder,
    optimizer: AdamW,
    step: usize,
    total_steps: usize,
    warmup: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, encoder: Encoder, total_steps: usize) -> Result<Self> {
        config.validate()?;
        if encoder.spec() != &config.encoder {
            return Err(Error::Config("encoder does not match the configured spec".into()));
        }
        let optimizer = AdamW::new(config.adam, encoder.towers());
        let warmup = warmup_steps(config.warmup_fraction, total_steps);
        Ok(Self {
            config,
            encoder,
            optimizer,
            step: 0,
            total_steps,
            warmup,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn into_encoder(self) -> Encoder {
        self.encoder
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        scheduled_lr(self.config.learning_rate, self.step, self.warmup, self.total_steps)
    }

    /// Loss and parameter gradients for one batch, without updating.
    pub fn loss_and_grads(&self, batch: &Batch<'_>) -> Result<(f64, Vec<crate::encoder::transformer::Tower>)> {
        let enc = &self.encoder;
        let n = batch.size();
        let mut traces: Vec<(Slot, usize, SequenceTrace)> = Vec::with_capacity(8 * n);
        let mut duals: [Vec<DualEmbedding>; 4] = Default::default();
        for (i, sample) in batch.samples.iter().enumerate() {
            let texts = [
                sample.premise.as_str(),
                &sample.explicit_entailment,
                &sample.implied_entailment,
                &sample.contradiction,
            ];
            for (r_idx, (role, text)) in Role::ALL.into_iter().zip(texts).enumerate() {
                let (r, tr) = enc.forward_train(text, View::Explicit);
                let (u, tu) = enc.forward_train(text, View::Implicit);
                traces.push((Slot::new(role, View::Explicit), i, tr));
                traces.push((Slot::new(role, View::Implicit), i, tu));
                duals[r_idx].push(DualEmbedding { r, u });
            }
        }
        let batch_id = || format!("batch {} (samples {})", batch.index, batch.ids().join(", "));
        let [p, e, m, c] = duals;
        let embeddings = BatchEmbeddings::new(p, e, m, c).map_err(|err| Error::NonFiniteLoss {
            batch: batch_id(),
            detail: format!("degenerate embedding: {err}"),
        })?;
        let (loss, grads) = dual_loss_with_grad(&embeddings, self.config.tau, self.config.variant)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                batch: batch_id(),
                detail: format!("loss = {loss}"),
            });
        }
        let mut param_grads = enc.zero_grads();
        for (slot, i, trace) in &traces {
            enc.backward(trace, grads.get(*slot, *i), &mut param_grads);
        }
        Ok((loss, param_grads))
    }

    /// One optimizer update on `batch`; returns the batch loss before the update.
    pub fn step(&mut self, batch: &Batch<'_>) -> Result<f64> {
        let (loss, mut grads) = self.loss_and_grads(batch)?;
        if let Some(max) = self.config.max_grad_norm {
            let norm = clip_grad_norm(&mut grads, max);
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: format!("batch {} (samples {})", batch.index, batch.ids().join(", ")),
                    detail: format!("gradient norm = {norm}"),
                });
            }
        }
        let lr = self.current_lr();
        self.optimizer.step(self.encoder.towers_mut(), &grads, lr);
        self.step += 1;
        Ok(loss)
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Best checkpoint by development RTE average.
    pub best: Checkpoint,
    /// Encoder after the final step.
    pub last: Encoder,
    pub history: Vec<MetricRecord>,
    /// Loss of every step, in order.
    pub step_losses: Vec<f64>,
}

pub fn train(config: &TrainConfig, train_split: &DatasetSplit, dev: &DatasetSplit) -> Result<TrainRun> {
    config.validate()?;
    if train_split.is_empty() || dev.is_empty() {
        return Err(Error::Empty("training needs non-empty train and dev splits"));
    }
    let encoder = init_encoder(config, train_split)?;
    train_from(config, encoder, train_split, dev)
}

/// Trains starting from `encoder`, which must match `config.encoder`.
pub fn train_from(
    config: &TrainConfig,
    encoder: Encoder,
    train_split: &DatasetSplit,
    dev: &DatasetSplit,
) -> Result<TrainRun> {
    let per_epoch = config.steps_per_epoch(train_split.len());
    let total = per_epoch * config.epochs;
    let eval_every = if config.eval_every == 0 { per_epoch } else { config.eval_every };
    let mut trainer = Trainer::new(config.clone(), encoder, total)?;
    log::info!(
        "training {} samples: {per_epoch} steps/epoch, {total} steps, {} parameters",
        train_split.len(),
        trainer.encoder().towers().iter().map(|t| t.num_parameters()).sum::<usize>()
    );

    let mut history = Vec::new();
    let mut step_losses = Vec::with_capacity(total);
    let mut best: Option<Checkpoint> = None;
    let mut window = (0.0, 0usize);

    for epoch in 0..config.epochs {
        for batch in batch_iter(train_split, config.batch_size, config.epoch_seed(epoch))? {
            let loss = trainer.step(&batch)?;
            step_losses.push(loss);
            window.0 += loss;
            window.1 += 1;
            let step = trainer.steps_taken();
            if step % eval_every == 0 || step == total {
                let (report, gamma) = dev_rte(trainer.encoder(), dev)?;
                let record = MetricRecord {
                    step,
                    train_loss: window.0 / window.1 as f64,
                    dev_rte_avg: report.avg,
                };
                log::info!(
                    "epoch {} step {step}: loss {:.4}, dev rte avg {:.4}",
                    epoch + 1,
                    record.train_loss,
                    record.dev_rte_avg
                );
                history.push(record);
                window = (0.0, 0);
                if best.as_ref().is_none_or(|b| record.dev_rte_avg > b.dev_metric.dev_rte_avg) {
                    best = Some(Checkpoint {
                        encoder: trainer.encoder().clone(),
                        config: config.clone(),
                        step,
                        dev_metric: record,
                        gamma,
                    });
                }
            }
        }
    }
    Ok(TrainRun {
        best: best.expect("at least one evaluation happens at the final step"),
        last: trainer.into_encoder(),
        history,
        step_losses,
    })
}

pub fn write_metrics_jsonl(path: &Path, history: &[MetricRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in history {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const CHECKPOINT_FORMAT: &str = "dualcse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const TRAINER_FILE: &str = "trainer.json";
const ENCODER_DIR: &str = "encoder";

#[derive(Serialize, Deserialize)]
struct TrainerState {
    format: String,
    version: u32,
    config: TrainConfig,
    step: usize,
    dev_metric: MetricRecord,
    gamma: RteThreshold,
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_encoder(&ckpt.encoder, &dir.join(ENCODER_DIR))?;
    let state = TrainerState {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        step: ckpt.step,
        dev_metric: ckpt.dev_metric,
        gamma: ckpt.gamma,
    };
    let path = dir.join(TRAINER_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&state)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(TRAINER_FILE);
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("{} is not a training checkpoint", dir.display())));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint(format!("{} has an unknown format", path.display())));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            version.map_or("missing".to_string(), |v| v.to_string())
        )));
    }
    let state: TrainerState =
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let encoder = load_encoder(&dir.join(ENCODER_DIR))?;
    if encoder.spec() != &state.config.encoder {
        return Err(Error::Checkpoint("encoder spec differs from the recorded training config".into()));
    }
    Ok(Checkpoint {
        encoder,
        config: state.config,
        step: state.step,
        dev_metric: state.dev_metric,
        gamma: state.gamma,
    })
}

/// Loads a checkpoint and checks that it was built for `spec`.
pub fn load_checkpoint_for(dir: &Path, spec: &EncoderSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(dir)?;
    if ckpt.encoder.spec() != spec {
        return Err(Error::Checkpoint(format!(
            "checkpoint encoder {:?} does not match the requested {:?}",
            ckpt.encoder.spec(),
            spec
        )));
    }
    Ok(ckpt)
}

/// Directory for a checkpoint under `root`.
pub fn checkpoint_dir(root: &Path, name: &str) -> PathBuf {
    root.join("checkpoints").join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::synthetic_splits;

    fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig::toy(
            Architecture::Cross,
            ToyConfig {
                layers: 1,
                heads: 2,
                hidden: 16,
                ffn: 32,
            },
        );
        c.batch_size = 8;
        c.epochs = 2;
        c.encoder.max_sequence_length = 16;
        c
    }

    #[test]
    fn steps_per_epoch_rounds_up() {
        let s = synthetic_splits(1, 20, 8, 8, 40).unwrap();
        let c = tiny_config();
        let run = train(&c, &s.train.split, &s.dev.split).unwrap();
        assert_eq!(c.steps_per_epoch(20), 3);
        assert_eq!(run.step_losses.len(), 6);
        assert_eq!(run.history.iter().map(|r| r.step).collect::<Vec<_>>(), [3, 6]);
        assert!(run.step_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn best_checkpoint_is_the_max_of_history() {
        let s = synthetic_splits(2, 24, 8, 8, 40).unwrap();
        let mut c = tiny_config();
        c.eval_every = 1;
        let run = train(&c, &s.train.split, &s.dev.split).unwrap();
        let max = run.history.iter().map(|r| r.dev_rte_avg).fold(f64::MIN, f64::max);
        assert_eq!(run.best.dev_metric.dev_rte_avg, max);
        let first_max = run.history.iter().find(|r| r.dev_rte_avg == max).unwrap();
        assert_eq!(run.best.step, first_max.step);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let cross = TrainConfig::reference_cross(EncoderSpec::default());
        assert_eq!((cross.batch_size, cross.learning_rate), (64, 5e-5));
        let bi = TrainConfig::reference_bi(EncoderSpec::default());
        assert_eq!((bi.batch_size, bi.learning_rate, bi.encoder.architecture), (32, 3e-5, Architecture::Bi));

        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrainConfig::default());
    }

    #[test]
    fn mismatched_encoder_is_rejected() {
        let s = synthetic_splits(3, 8, 4, 4, 40).unwrap();
        let c = tiny_config();
        let enc = init_encoder(&c, &s.train.split).unwrap();
        let mut other = c.clone();
        other.encoder.architecture = Architecture::Bi;
        assert!(Trainer::new(other, enc, 10).is_err());
    }
}
