//! The training loop: class-distinct batches, both encoders, soft targets,
//! the symmetric loss and scheduled AdamW updates.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::encoder::{backward, forward_image, forward_text, init_params, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{class_retrieval, zero_shot_classify};
use crate::loss::{symmetric_loss_and_gradients, DEFAULT_TAU};
use crate::optim::{adamw_step, lr_at, AdamWConfig, OptimizerState};
use crate::soft_target::{
    build_soft_label_matrix, plan_epoch, validate_smoothing, BatchPlan, SoftLabelMatrix, DEFAULT_ALPHA, DEFAULT_BETA,
};
use crate::synth::{Dataset, Split};
use crate::vocab::{render_all, ContextMode, TokenSequence, Tokenizer, DEFAULT_CONTEXT_LENGTH};

pub const DEFAULT_PROMPT: &str = "a photo of";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub context_mode: ContextMode,
    pub cst_enabled: bool,
    pub prompt: String,
    pub context_length: usize,
    /// `feature_dim` is taken from the dataset at train time.
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            peak_lr: 3e-4,
            weight_decay: 0.2,
            warmup_fraction: 0.1,
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            context_mode: ContextMode::Long,
            cst_enabled: true,
            prompt: DEFAULT_PROMPT.to_string(),
            context_length: DEFAULT_CONTEXT_LENGTH,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction must be in (0, 1), got {}", self.warmup_fraction));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        validate_smoothing(self.alpha, self.beta)?;
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        if self.context_length < 1 {
            return bad("context_length must be >= 1".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn tokenizer(&self) -> Result<Tokenizer> {
        Tokenizer::new(self.context_length, self.encoder.vocab_size)
    }
}

/// SplitMix64 finaliser; gives independent seeds for sub-streams of one run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const INIT_STREAM: u64 = 0;
const EPOCH_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss_i2t: f64,
    pub loss_t2i: f64,
    pub loss_total: f64,
    /// The update was skipped because a gradient was not finite.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean of both retrieval directions on the validation split.
    pub val_r1: Option<f64>,
    pub val_zero_shot: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

impl TrainLog {
    /// One JSON object per line, steps of each epoch followed by its summary.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut steps = self.steps.iter().peekable();
        for e in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.epoch == e.epoch) {
                serde_json::to_writer(&mut w, &LogLine::Step(s))?;
                w.write_all(b"\n")?;
            }
            serde_json::to_writer(&mut w, &LogLine::Epoch(e))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: TrainLog,
}

/// Token sequences for every class caption, indexed by class id.
pub fn class_tokens(dataset: &Dataset, config: &TrainConfig) -> Result<Vec<TokenSequence>> {
    let tokenizer = config.tokenizer()?;
    Ok(render_all(&dataset.vocabulary, config.context_mode, &config.prompt)?
        .iter()
        .map(|c| tokenizer.tokenize(c))
        .collect())
}

/// Unit-norm embeddings of each class caption, one row per class id.
pub fn embed_class_captions(params: &EncoderParams, dataset: &Dataset, config: &TrainConfig) -> Result<Array2<f64>> {
    Ok(forward_text(params, &class_tokens(dataset, config)?)?.0)
}

pub fn embed_images(params: &EncoderParams, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward_image(params, features)?.0)
}

/// Batch plans for every epoch; samples left over from one epoch lead the next.
pub fn plan_training(dataset: &Dataset, config: &TrainConfig) -> Result<Vec<BatchPlan>> {
    let members: Vec<(usize, usize)> = dataset
        .indices(Split::Train)
        .into_iter()
        .map(|i| (i, dataset.samples[i].concept_id))
        .collect();
    if members.is_empty() {
        return Err(Error::EmptySpec("training split is empty".into()));
    }
    let mut plans = Vec::with_capacity(config.epochs);
    let mut deferred = Vec::new();
    for e in 0..config.epochs {
        let plan = plan_epoch(&members, config.batch_size, derive_seed(config.seed, EPOCH_STREAM + e as u64), &deferred)?;
        deferred = plan.deferred.clone();
        plans.push(plan);
    }
    Ok(plans)
}

fn validation_metrics(params: &EncoderParams, dataset: &Dataset, config: &TrainConfig) -> Result<Option<(f64, f64)>> {
    let val = dataset.indices(Split::Val);
    if val.is_empty() {
        return Ok(None);
    }
    let images = embed_images(params, dataset.feature_matrix(&val).view())?;
    let captions = embed_class_captions(params, dataset, config)?;
    let labels = dataset.labels(&val);
    let r = class_retrieval(images.view(), &labels, captions.view(), &[1])?;
    let acc = zero_shot_classify(images.view(), captions.view(), &labels)?;
    Ok(Some((r.mean_r1(), acc)))
}

/// Trains from a seeded initialisation. The result depends only on
/// `config` and `dataset`.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.ensure_nonempty()?;
    let mut enc = config.encoder.clone();
    enc.feature_dim = dataset.feature_dim();
    let mut params = init_params(&enc, derive_seed(config.seed, INIT_STREAM))?;
    let tokens = class_tokens(dataset, config)?;
    let plans = plan_training(dataset, config)?;
    let total: u64 = plans.iter().map(|p| p.batches.len() as u64).sum();
    let adamw = config.adamw();
    let mut state = OptimizerState::new(&params);
    let mut log = TrainLog::default();
    let mut step = 0u64;

    for (epoch, plan) in plans.iter().enumerate() {
        let mut loss_sum = 0.0;
        for batch in &plan.batches {
            let concepts: Vec<_> = batch
                .iter()
                .map(|&i| &dataset.vocabulary.concepts()[dataset.samples[i].concept_id])
                .collect();
            let features = dataset.feature_matrix(batch);
            let batch_tokens: Vec<TokenSequence> = concepts.iter().map(|c| tokens[c.class_id].clone()).collect();
            let (v, image_cache) = forward_image(&params, features.view())?;
            let (t, text_cache) = forward_text(&params, &batch_tokens)?;
            let p = if config.cst_enabled {
                build_soft_label_matrix(&concepts, config.alpha, config.beta)?
            } else {
                SoftLabelMatrix::identity(batch.len())
            };
            let (report, g) = symmetric_loss_and_gradients(v.view(), t.view(), &p, config.tau)?;
            let grads = backward(&params, &image_cache, &text_cache, g.d_image.view(), g.d_text.view())?;
            let lr = lr_at(step, total, config.peak_lr, config.warmup_fraction)?;
            let skipped = match adamw_step(&mut params, &grads, &mut state, lr, &adamw) {
                Ok(()) => false,
                Err(Error::NonFiniteGradient) => true,
                Err(e) => return Err(e),
            };
            loss_sum += report.loss_total;
            log.steps.push(StepRecord {
                step,
                epoch,
                lr,
                loss_i2t: report.loss_i2t,
                loss_t2i: report.loss_t2i,
                loss_total: report.loss_total,
                skipped,
            });
            step += 1;
        }
        let val = validation_metrics(&params, dataset, config)?;
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / plan.batches.len().max(1) as f64,
            val_r1: val.map(|v| v.0),
            val_zero_shot: val.map(|v| v.1),
        });
    }
    Ok(TrainOutcome { params, log })
}
