//! Uniform-probability stub backend.
//!
//! Assigns every token probability `1/V` with one token per word. Used as
//! the uniform perplexity baseline and in interface tests.

use super::{LanguageModel, LmError, SurprisalSeries};

#[derive(Debug, Clone)]
pub struct UniformLm {
    vocab_size: usize,
}

impl UniformLm {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > 0, "vocab_size must be positive");
        UniformLm { vocab_size }
    }

    fn token_nll(&self) -> f64 {
        (self.vocab_size as f64).ln()
    }
}

impl LanguageModel for UniformLm {
    fn describe(&self) -> String {
        format!("uniform:{}", self.vocab_size)
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn word_surprisals(&self, words: &[String]) -> Result<SurprisalSeries, LmError> {
        if words.is_empty() {
            return Err(LmError::EmptySentence);
        }
        Ok(SurprisalSeries {
            words: words.to_vec(),
            nats: vec![self.token_nll(); words.len()],
        })
    }

    fn sentence_token_nlls(&self, words: &[String]) -> Result<Vec<f64>, LmError> {
        if words.is_empty() {
            return Err(LmError::EmptySentence);
        }
        Ok(vec![self.token_nll(); words.len()])
    }
}
