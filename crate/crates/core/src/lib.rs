//! Surprisal-based reading-time alignment toolkit.
//!
//! This crate fine-tunes causal language models so that surprisal-based
//! reading-time estimates align with human self-paced reading times on
//! garden-path sentences, then evaluates the result on held-out garden-path
//! items, naturalistic corpora, and general language-model probes.
//!
//! The pieces, bottom to top:
//!
//! - [`corpus`] — ingest, preprocess, annotate, subset, and split
//!   reading-time datasets (garden-path, filler, naturalistic).
//! - [`lm`] — tokenization, differentiable word-level surprisal, sequence
//!   log-probability, perplexity, and checkpointing for a tiny desk-scale
//!   transformer and a uniform stub backend.
//! - [`tape`] — the reverse-mode autodiff tape that carries gradients from
//!   the training loss through the ridge solve and the transformer.
//! - [`features`] — regression feature vectors (surprisal triple plus
//!   control variables) and design-matrix assembly.
//! - [`regression`] — closed-form ridge regression and Gaussian
//!   linear-model log-likelihoods.
//! - [`training`] — batch sampling, the coefficient-anchored loss, the
//!   warm-restart learning-rate schedule, and the per-fold fine-tuning loop.
//! - [`evaluation`] — garden-path effect alignment, naturalistic
//!   log-likelihood impact, cross-construction transfer, relative-clause
//!   asymmetry, and LM-capability metrics.
//! - [`pipeline`] / [`cli`] — run directories, manifests, and the
//!   `prepare` / `finetune` / `evaluate` / `plot` / `transfer` / `rc`
//!   subcommands.
//! - [`synth`] — a synthetic grammar with planted reading-time effects for
//!   desk-scale end-to-end runs and tests.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod linalg;
pub mod lm;
pub mod pipeline;
pub mod plot;
pub mod regression;
pub mod synth;
pub mod tape;
pub mod training;

pub use corpus::{Condition, Construction, DataPoint, Dataset, DatasetKind, LooFold, SubsetLevel};
pub use features::{DesignMatrix, FeatureConfig, FrequencyTable};
pub use lm::{LanguageModel, ModelSpec, SurprisalSeries, TinyLm, UniformLm};
pub use regression::{GaussianFit, RidgeFit};
pub use training::TrainingConfig;
