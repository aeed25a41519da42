//! Word-piece tokenizer for the tiny model.
//!
//! The vocabulary is three specials (beginning-of-text, unknown, and an
//! explicit inter-word space marker), single characters, and an optional
//! word list. Words are segmented by greedy longest-prefix match, so
//! in-vocabulary words are single pieces and everything else decomposes into
//! characters. The space marker preceding a word belongs to that word's
//! span, which assigns leading-whitespace probability mass to the word it
//! introduces and makes word surprisals sum exactly to the sequence
//! negative log-likelihood.

use super::LmError;
use std::collections::HashMap;

pub const BOS_PIECE: &str = "<bos>";
pub const UNK_PIECE: &str = "<unk>";
pub const SPACE_PIECE: &str = "<sp>";

const CHAR_PIECES: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,;:!?'-\"()";

#[derive(Debug, Clone)]
pub struct PieceTokenizer {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    max_piece_chars: usize,
    bos: usize,
    unk: usize,
    space: usize,
}

impl PieceTokenizer {
    /// Builds the default vocabulary plus the given word list (deduplicated,
    /// insertion order preserved).
    pub fn new(word_vocab: &[String]) -> Self {
        let mut pieces: Vec<String> = vec![
            BOS_PIECE.to_string(),
            UNK_PIECE.to_string(),
            SPACE_PIECE.to_string(),
        ];
        pieces.extend(CHAR_PIECES.chars().map(|c| c.to_string()));
        for w in word_vocab {
            if !w.is_empty() && !pieces.iter().any(|p| p == w) {
                pieces.push(w.clone());
            }
        }
        Self::from_pieces(pieces).expect("default vocabulary is well-formed")
    }

    /// Rebuilds a tokenizer from a stored piece list (checkpoint metadata).
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self, LmError> {
        let mut index = HashMap::new();
        for (i, p) in pieces.iter().enumerate() {
            if index.insert(p.clone(), i).is_some() {
                return Err(LmError::CheckpointFormat(format!("duplicate piece `{p}`")));
            }
        }
        let bos = *index
            .get(BOS_PIECE)
            .ok_or_else(|| LmError::CheckpointFormat("missing <bos> piece".into()))?;
        let unk = *index
            .get(UNK_PIECE)
            .ok_or_else(|| LmError::CheckpointFormat("missing <unk> piece".into()))?;
        let space = *index
            .get(SPACE_PIECE)
            .ok_or_else(|| LmError::CheckpointFormat("missing <sp> piece".into()))?;
        let max_piece_chars = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Self {
            pieces,
            index,
            max_piece_chars,
            bos,
            unk,
            space,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    /// Greedy longest-prefix segmentation of a single word. Unknown
    /// characters map to the unknown piece, so every non-empty word yields
    /// at least one subword.
    pub fn encode_word(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut matched = None;
            let max_len = self.max_piece_chars.min(chars.len() - i);
            for len in (1..=max_len).rev() {
                let candidate: String = chars[i..i + len].iter().collect();
                if let Some(&id) = self.index.get(&candidate) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(self.unk);
                    i += 1;
                }
            }
        }
        out
    }

    /// Encodes a sentence as `<bos>` followed by word pieces with explicit
    /// space markers between words. Returns the token ids and, per word, its
    /// span `[start, end)` over the token sequence; the span of every word
    /// after the first starts at its preceding space marker.
    pub fn encode_sentence(&self, words: &[String]) -> Result<(Vec<usize>, Vec<(usize, usize)>), LmError> {
        if words.is_empty() {
            return Err(LmError::EmptySentence);
        }
        let mut tokens = vec![self.bos];
        let mut spans = Vec::with_capacity(words.len());
        for (k, word) in words.iter().enumerate() {
            if word.is_empty() {
                return Err(LmError::EmptyWord(k));
            }
            let start = tokens.len();
            if k > 0 {
                tokens.push(self.space);
            }
            tokens.extend(self.encode_word(word));
            spans.push((start, tokens.len()));
        }
        Ok((tokens, spans))
    }
}
