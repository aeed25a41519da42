//! Language-model backends: word-level surprisal, sequence log-probability,
//! perplexity, and checkpointing.
//!
//! Two backends ship with the toolkit: [`TinyLm`], a small trainable
//! decoder-only transformer that runs the full pipeline on a CPU, and
//! [`UniformLm`], a stub that assigns every token probability `1/V` and
//! serves as the uniform baseline. Identifiers for pretrained models are
//! accepted by [`ModelSpec::parse`] but constructing them reports that the
//! external weights are not bundled.

mod checkpoint;
pub(crate) mod tiny;
mod tokenizer;
mod uniform;

pub use checkpoint::CHECKPOINT_VERSION;
pub use tiny::{TinyLm, TinyLmConfig};
pub use tokenizer::PieceTokenizer;
pub use uniform::UniformLm;

use crate::corpus::Dataset;
use crate::tape::TapeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("sentence is empty")]
    EmptySentence,
    #[error("word at position {0} is empty")]
    EmptyWord(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("text is empty")]
    EmptyText,
    #[error("sequence of {len} tokens exceeds the model maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("pretrained backend `{id}` requires external model weights and tokenizer files that are not bundled with this toolkit; use `tiny`, `uniform[:V]`, or a checkpoint directory")]
    PretrainedUnavailable { id: String },
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Per-word surprisal for one sentence, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct SurprisalSeries {
    pub words: Vec<String>,
    pub nats: Vec<f64>,
}

impl SurprisalSeries {
    pub fn total(&self) -> f64 {
        self.nats.iter().sum()
    }
}

/// Read-only language-model surface shared by all backends.
pub trait LanguageModel {
    /// Stable identifier used in reports and manifests.
    fn describe(&self) -> String;

    fn vocab_size(&self) -> usize;

    /// Per-word surprisal: the sum of constituent subword surprisals, with a
    /// word's leading-whitespace marker assigned to that word and the
    /// sentence-initial token conditioned on a beginning-of-text marker.
    fn word_surprisals(&self, words: &[String]) -> Result<SurprisalSeries, LmError>;

    /// Per-token negative log-likelihoods for a sentence, in nats.
    fn sentence_token_nlls(&self, words: &[String]) -> Result<Vec<f64>, LmError>;

    /// Total log-probability of a whitespace-tokenized text.
    fn sequence_logprob(&self, text: &str) -> Result<f64, LmError> {
        let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if words.is_empty() {
            return Err(LmError::EmptyText);
        }
        Ok(-kahan_sum(&self.sentence_token_nlls(&words)?))
    }
}

/// exp(mean per-token negative log-likelihood) over every sentence of the
/// corpus.
pub fn perplexity(lm: &dyn LanguageModel, corpus: &Dataset) -> Result<f64, LmError> {
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut total_nll = 0.0;
    let mut comp = 0.0;
    let mut tokens = 0usize;
    for (_, pts) in corpus.sentences() {
        let words: Vec<String> = pts.iter().map(|p| p.word.clone()).collect();
        let nlls = lm.sentence_token_nlls(&words)?;
        tokens += nlls.len();
        for v in nlls {
            // Neumaier-compensated accumulation
            let t = total_nll + v;
            if total_nll.abs() >= v.abs() {
                comp += (total_nll - t) + v;
            } else {
                comp += (v - t) + total_nll;
            }
            total_nll = t;
        }
    }
    Ok(((total_nll + comp) / tokens as f64).exp())
}

fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Backend selector parsed from a model identifier string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Tiny,
    Uniform { vocab_size: usize },
    /// A pretrained-model identifier (e.g. a hub id). Recognized, but this
    /// toolkit does not bundle the weights.
    Pretrained { id: String },
}

impl ModelSpec {
    pub fn parse(s: &str) -> ModelSpec {
        let s = s.trim();
        if s.eq_ignore_ascii_case("tiny") {
            return ModelSpec::Tiny;
        }
        if let Some(rest) = s.strip_prefix("uniform") {
            let vocab_size = rest
                .strip_prefix(':')
                .and_then(|v| v.parse().ok())
                .unwrap_or(50257);
            if rest.is_empty() || rest.starts_with(':') {
                return ModelSpec::Uniform { vocab_size };
            }
        }
        ModelSpec::Pretrained { id: s.to_string() }
    }

    /// Instantiates the backend. `seed` and `word_vocab` only affect the
    /// tiny model.
    pub fn build(
        &self,
        seed: u64,
        word_vocab: &[String],
    ) -> Result<Box<dyn LanguageModel>, LmError> {
        match self {
            ModelSpec::Tiny => Ok(Box::new(TinyLm::new(TinyLmConfig {
                seed,
                word_vocab: word_vocab.to_vec(),
                ..TinyLmConfig::default()
            }))),
            ModelSpec::Uniform { vocab_size } => Ok(Box::new(UniformLm::new(*vocab_size))),
            ModelSpec::Pretrained { id } => Err(LmError::PretrainedUnavailable { id: id.clone() }),
        }
    }

    pub fn as_string(&self) -> String {
        match self {
            ModelSpec::Tiny => "tiny".to_string(),
            ModelSpec::Uniform { vocab_size } => format!("uniform:{vocab_size}"),
            ModelSpec::Pretrained { id } => id.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DataPoint, DatasetKind};

    fn toy_corpus(sentences: &[&[&str]]) -> Dataset {
        let mut points = Vec::new();
        for (si, words) in sentences.iter().enumerate() {
            for (i, w) in words.iter().enumerate() {
                points.push(DataPoint {
                    word: w.to_string(),
                    rt: 300.0,
                    pair_id: None,
                    construction: None,
                    condition: None,
                    position: i,
                    roi: None,
                    sentence_id: format!("s{si}"),
                    is_sentence_final: i + 1 == words.len(),
                    ambiguity_verb: false,
                    excluded: false,
                });
            }
        }
        Dataset::new(DatasetKind::Naturalistic, points).unwrap()
    }

    #[test]
    fn uniform_perplexity_equals_vocab_size() {
        let lm = UniformLm::new(50257);
        let corpus = toy_corpus(&[&["a", "b", "c"], &["d", "e"]]);
        let ppl = perplexity(&lm, &corpus).unwrap();
        assert!(
            (ppl / 50257.0 - 1.0).abs() < 1e-12,
            "uniform perplexity {ppl} should equal the vocabulary size"
        );
    }

    #[test]
    fn perplexity_rejects_empty_corpus() {
        let lm = UniformLm::new(10);
        let corpus = toy_corpus(&[]);
        assert!(matches!(perplexity(&lm, &corpus), Err(LmError::EmptyCorpus)));
    }

    #[test]
    fn model_spec_parsing() {
        assert_eq!(ModelSpec::parse("tiny"), ModelSpec::Tiny);
        assert_eq!(
            ModelSpec::parse("uniform"),
            ModelSpec::Uniform { vocab_size: 50257 }
        );
        assert_eq!(
            ModelSpec::parse("uniform:100"),
            ModelSpec::Uniform { vocab_size: 100 }
        );
        assert_eq!(
            ModelSpec::parse("gpt2"),
            ModelSpec::Pretrained {
                id: "gpt2".to_string()
            }
        );
    }

    #[test]
    fn pretrained_ids_are_recognized_but_unavailable() {
        let spec = ModelSpec::parse("gpt2-medium");
        match spec.build(0, &[]) {
            Err(LmError::PretrainedUnavailable { id }) => assert_eq!(id, "gpt2-medium"),
            other => panic!("expected unavailable error, got {:?}", other.map(|_| ())),
        }
    }
}
