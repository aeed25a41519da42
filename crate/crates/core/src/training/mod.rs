//! Fine-tuning: configuration, batch sampling, the anchored loss, the
//! warm-restart schedule, and the per-fold training loop.

pub mod loss;
pub mod optimizer;
pub mod sampler;
pub mod schedule;

pub use loss::{compute_loss, LossBreakdown};
pub use sampler::{Batch, BatchSampler};
pub use schedule::lr_at;

use crate::corpus::{subset, CorpusError, Dataset, LooFold, SubsetLevel};
use crate::features::{build_features, Column, FeatureConfig, FeatureError, FrequencyTable};
use crate::lm::{LmError, TinyLm};
use crate::regression::{ridge_fit, RegressionError};
use crate::tape::{Tape, TapeError};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("training configuration error: {0}")]
    Config(String),
    #[error("construction {construction} has {have} usable pairs, batch needs {need}")]
    InsufficientPairs {
        construction: String,
        have: usize,
        need: usize,
    },
    #[error("batch has {have} coefficient rows, at least {need} are required")]
    InsufficientRows { have: usize, need: usize },
    #[error("batch contains no usable target rows")]
    EmptyBatch,
    #[error("non-finite loss at step {step} (batch pairs: {pairs:?})")]
    NonFiniteLoss { step: usize, pairs: Vec<String> },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

/// Fine-tuning hyperparameters.
///
/// `batch_sentences` counts sentences (a pair contributes two); defaults are
/// 66 when training on all three garden-path constructions and 44 for a
/// single construction, with learning-rate bounds paired accordingly.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    /// Weight of the coefficient-anchor penalty.
    pub lambda: f64,
    /// Ridge weight for the per-batch coefficient fit.
    pub rho: f64,
    pub steps: usize,
    pub warmup_steps: usize,
    pub batch_sentences: usize,
    pub max_lr: f64,
    pub min_lr: f64,
    /// Per-restart decay of the cycle maximum.
    pub max_lr_decrease_rate: f64,
    /// Number of cosine cycles after warmup.
    pub restart_cycles: usize,
    /// Decoupled weight decay of the optimizer.
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainingConfig {
    /// Defaults for training on all three garden-path constructions.
    pub fn all_constructions() -> Self {
        TrainingConfig {
            lambda: 100.0,
            rho: 1e-5,
            steps: 500,
            warmup_steps: 3,
            batch_sentences: 66,
            max_lr: 5.25e-5,
            min_lr: 7.8e-8,
            max_lr_decrease_rate: 0.01,
            restart_cycles: 5,
            weight_decay: 0.01,
            seed: 0,
        }
    }

    /// Defaults for training on a single construction.
    pub fn single_construction() -> Self {
        TrainingConfig {
            batch_sentences: 44,
            max_lr: 3.5e-5,
            min_lr: 5.2e-8,
            ..Self::all_constructions()
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.lambda < 0.0 {
            return Err(TrainingError::Config("lambda must be non-negative".into()));
        }
        if self.rho <= 0.0 {
            return Err(TrainingError::Config("rho must be positive".into()));
        }
        if self.min_lr >= self.max_lr {
            return Err(TrainingError::Config(format!(
                "min_lr {} must be below max_lr {}",
                self.min_lr, self.max_lr
            )));
        }
        if self.steps > 0 && self.warmup_steps >= self.steps {
            return Err(TrainingError::Config(
                "warmup_steps must be below steps".into(),
            ));
        }
        Ok(())
    }

    /// Applies a partial key-value config file over this base.
    pub fn apply_toml(&self, text: &str) -> Result<Self, TrainingError> {
        #[derive(serde::Deserialize, Default)]
        #[serde(deny_unknown_fields)]
        struct Partial {
            lambda: Option<f64>,
            rho: Option<f64>,
            steps: Option<usize>,
            warmup_steps: Option<usize>,
            batch_sentences: Option<usize>,
            max_lr: Option<f64>,
            min_lr: Option<f64>,
            max_lr_decrease_rate: Option<f64>,
            restart_cycles: Option<usize>,
            weight_decay: Option<f64>,
            seed: Option<u64>,
        }
        let p: Partial =
            toml::from_str(text).map_err(|e| TrainingError::Config(format!("config file: {e}")))?;
        let mut cfg = self.clone();
        if let Some(v) = p.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = p.rho {
            cfg.rho = v;
        }
        if let Some(v) = p.steps {
            cfg.steps = v;
        }
        if let Some(v) = p.warmup_steps {
            cfg.warmup_steps = v;
        }
        if let Some(v) = p.batch_sentences {
            cfg.batch_sentences = v;
        }
        if let Some(v) = p.max_lr {
            cfg.max_lr = v;
        }
        if let Some(v) = p.min_lr {
            cfg.min_lr = v;
        }
        if let Some(v) = p.max_lr_decrease_rate {
            cfg.max_lr_decrease_rate = v;
        }
        if let Some(v) = p.restart_cycles {
            cfg.restart_cycles = v;
        }
        if let Some(v) = p.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = p.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Ridge coefficients fit on the full training set with the initial model
/// parameters; the anchor of the loss's second term. Computed exactly once
/// per fold before any parameter update.
#[derive(Debug, Clone)]
pub struct AnchorCoefficients {
    pub beta0: Array1<f64>,
    pub columns: Vec<Column>,
}

/// Fits the anchor coefficients on the training set's interior non-ROI rows.
pub fn anchor_coefficients(
    lm: &TinyLm,
    train: &Dataset,
    freq: &FrequencyTable,
    fcfg: &FeatureConfig,
    rho: f64,
) -> Result<AnchorCoefficients, TrainingError> {
    let view = subset(train, SubsetLevel::MinusMinus);
    let design = build_features(lm, &view, freq, fcfg)?;
    let fit = ridge_fit(&design, rho)?;
    Ok(AnchorCoefficients {
        beta0: fit.beta,
        columns: fit.columns,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub mse_term: f64,
    pub anchor_term: f64,
    pub lr: f64,
}

pub type TrainingLog = Vec<StepRecord>;

/// Writes the training log as line-delimited `step,loss,mse_term,anchor_term,lr`.
pub fn write_log(log: &TrainingLog, path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = Vec::new();
    writeln!(out, "step,loss,mse_term,anchor_term,lr")?;
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.loss, r.mse_term, r.anchor_term, r.lr
        )?;
    }
    std::fs::write(path, out)
}

const MAX_RESAMPLE_ATTEMPTS: usize = 16;

/// Fine-tunes a copy of the base model on one fold's training set.
///
/// With `steps == 0` the returned model is bit-identical to the input.
pub fn finetune_fold(
    lm0: &TinyLm,
    fold: &LooFold,
    freq: &FrequencyTable,
    fcfg: &FeatureConfig,
    tcfg: &TrainingConfig,
) -> Result<(TinyLm, TrainingLog), TrainingError> {
    tcfg.validate()?;
    let mut lm = lm0.clone();
    if tcfg.steps == 0 {
        return Ok((lm, Vec::new()));
    }
    let anchors = anchor_coefficients(&lm, &fold.train, freq, fcfg, tcfg.rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(fold.fold_id as u64 + 1);
    let mut batcher = BatchSampler::new(&fold.train, tcfg.batch_sentences, rng)?;
    let mut opt = optimizer::AdamW::new(0.9, 0.999, 1e-8, tcfg.weight_decay);
    let mut log = Vec::with_capacity(tcfg.steps);

    for step in 0..tcfg.steps {
        let lr = lr_at(step, tcfg);
        let mut attempt = 0;
        let (mut tape, tp, graph, batch) = loop {
            let batch = batcher.next_batch();
            let mut tape = Tape::new();
            let tp = lm.tape_params(&mut tape);
            match loss::loss_graph(&lm, &mut tape, &tp, &batch.data, &anchors, freq, fcfg, tcfg) {
                Ok(graph) => break (tape, tp, graph, batch),
                Err(TrainingError::InsufficientRows { .. }) if attempt < MAX_RESAMPLE_ATTEMPTS => {
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        if !graph.breakdown.total.is_finite() {
            return Err(TrainingError::NonFiniteLoss {
                step,
                pairs: batch
                    .pairs
                    .iter()
                    .map(|(c, p)| format!("{}:{}", c.as_str(), p))
                    .collect(),
            });
        }
        let grads = tape.backward(graph.loss);
        let grad_arrays: Vec<ndarray::Array2<f64>> =
            tp.vars().iter().map(|&v| grads.get(&tape, v)).collect();
        opt.step(&mut lm.params.tensors_mut(), &grad_arrays, lr);
        log.push(StepRecord {
            step,
            loss: graph.breakdown.total,
            mse_term: graph.breakdown.mse_term,
            anchor_term: graph.breakdown.anchor_term,
            lr,
        });
        drop(tape);
    }
    Ok((lm, log))
}
