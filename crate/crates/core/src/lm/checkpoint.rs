//! Checkpoint directory format for the tiny model.
//!
//! A checkpoint is a directory with `metadata.json` (architecture, seed,
//! vocabulary pieces, format version) and `weights.bin` (named f64 tensors,
//! little-endian). Saving and reloading reproduces every output
//! bit-identically.

use super::tiny::{LayerParams, Params, TinyLm, TinyLmConfig};
use super::tokenizer::PieceTokenizer;
use super::LmError;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"STLM";

#[derive(serde::Serialize, serde::Deserialize)]
struct Metadata {
    format_version: u32,
    kind: String,
    vocab_size: usize,
    seed: u64,
    n_layers: usize,
    n_heads: usize,
    d_model: usize,
    d_ff: usize,
    max_seq: usize,
    pieces: Vec<String>,
}

impl TinyLm {
    /// Writes `metadata.json` and `weights.bin` into `dir` (created if
    /// missing).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), LmError> {
        std::fs::create_dir_all(dir)?;
        let cfg = self.config();
        let meta = Metadata {
            format_version: CHECKPOINT_VERSION,
            kind: "tiny".to_string(),
            vocab_size: self.tokenizer().vocab_size(),
            seed: cfg.seed,
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            d_model: cfg.d_model,
            d_ff: cfg.d_ff,
            max_seq: cfg.max_seq,
            pieces: self.tokenizer().pieces().to_vec(),
        };
        let meta_json = serde_json::to_string_pretty(&meta)
            .map_err(|e| LmError::CheckpointFormat(e.to_string()))?;
        std::fs::write(dir.join("metadata.json"), meta_json)?;

        let tensors = self.params.tensors();
        let mut out = Vec::new();
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u64::<LittleEndian>(tensors.len() as u64)?;
        for (name, tensor) in tensors {
            let name_bytes = name.as_bytes();
            out.write_u32::<LittleEndian>(name_bytes.len() as u32)?;
            out.write_all(name_bytes)?;
            out.write_u64::<LittleEndian>(tensor.nrows() as u64)?;
            out.write_u64::<LittleEndian>(tensor.ncols() as u64)?;
            for v in tensor.iter() {
                out.write_f64::<LittleEndian>(*v)?;
            }
        }
        std::fs::write(dir.join("weights.bin"), out)?;
        Ok(())
    }

    /// Loads a checkpoint directory written by [`TinyLm::save_checkpoint`].
    pub fn load_checkpoint(dir: &Path) -> Result<TinyLm, LmError> {
        let meta_raw = std::fs::read_to_string(dir.join("metadata.json"))?;
        let meta: Metadata = serde_json::from_str(&meta_raw)
            .map_err(|e| LmError::CheckpointFormat(format!("metadata: {e}")))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(LmError::CheckpointVersion {
                found: meta.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if meta.kind != "tiny" {
            return Err(LmError::CheckpointFormat(format!(
                "unsupported checkpoint kind `{}`",
                meta.kind
            )));
        }
        let tokenizer = PieceTokenizer::from_pieces(meta.pieces.clone())?;
        if tokenizer.vocab_size() != meta.vocab_size {
            return Err(LmError::CheckpointFormat(format!(
                "vocab size {} does not match piece list of length {}",
                meta.vocab_size,
                tokenizer.vocab_size()
            )));
        }

        let raw = std::fs::read(dir.join("weights.bin"))?;
        let mut cur = std::io::Cursor::new(raw.as_slice());
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| LmError::CheckpointFormat("weights file truncated".into()))?;
        if &magic != MAGIC {
            return Err(LmError::CheckpointFormat("bad weights magic".into()));
        }
        let version = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| LmError::CheckpointFormat("weights file truncated".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(LmError::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| LmError::CheckpointFormat("weights file truncated".into()))?;
        let mut tensors: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur
                .read_u32::<LittleEndian>()
                .map_err(|_| LmError::CheckpointFormat("weights file truncated".into()))?
                as usize;
            let mut name_bytes = vec![0u8; name_len];
            cur.read_exact(&mut name_bytes)
                .map_err(|_| LmError::CheckpointFormat("weights file truncated".into()))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| LmError::CheckpointFormat("tensor name is not utf-8".into()))?;
            let rows = cur
                .read_u64::<LittleEndian>()
                .map_err(|_| LmError::CheckpointFormat("weights file truncated".into()))?
                as usize;
            let cols = cur
                .read_u64::<LittleEndian>()
                .map_err(|_| LmError::CheckpointFormat("weights file truncated".into()))?
                as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(cur.read_f64::<LittleEndian>().map_err(|_| {
                    LmError::CheckpointFormat("weights file truncated".into())
                })?);
            }
            let tensor = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| LmError::CheckpointFormat(e.to_string()))?;
            tensors.insert(name, tensor);
        }

        let cfg = TinyLmConfig {
            n_layers: meta.n_layers,
            n_heads: meta.n_heads,
            d_model: meta.d_model,
            d_ff: meta.d_ff,
            max_seq: meta.max_seq,
            seed: meta.seed,
            word_vocab: Vec::new(),
        };
        let take = |tensors: &mut BTreeMap<String, Array2<f64>>,
                    name: String,
                    rows: usize,
                    cols: usize|
         -> Result<Array2<f64>, LmError> {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| LmError::CheckpointFormat(format!("missing tensor `{name}`")))?;
            if t.dim() != (rows, cols) {
                return Err(LmError::CheckpointFormat(format!(
                    "tensor `{name}` has shape {:?}, expected ({rows}, {cols})",
                    t.dim()
                )));
            }
            Ok(t)
        };
        let d = cfg.d_model;
        let v = meta.vocab_size;
        let mut t = tensors;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let tok_emb = take(&mut t, "tok_emb".into(), v, d)?;
        let pos_emb = take(&mut t, "pos_emb".into(), cfg.max_seq, d)?;
        for i in 0..cfg.n_layers {
            layers.push(LayerParams {
                ln1_g: take(&mut t, format!("l{i}.ln1_g"), 1, d)?,
                ln1_b: take(&mut t, format!("l{i}.ln1_b"), 1, d)?,
                wq: take(&mut t, format!("l{i}.wq"), d, d)?,
                bq: take(&mut t, format!("l{i}.bq"), 1, d)?,
                wk: take(&mut t, format!("l{i}.wk"), d, d)?,
                bk: take(&mut t, format!("l{i}.bk"), 1, d)?,
                wv: take(&mut t, format!("l{i}.wv"), d, d)?,
                bv: take(&mut t, format!("l{i}.bv"), 1, d)?,
                wo: take(&mut t, format!("l{i}.wo"), d, d)?,
                bo: take(&mut t, format!("l{i}.bo"), 1, d)?,
                ln2_g: take(&mut t, format!("l{i}.ln2_g"), 1, d)?,
                ln2_b: take(&mut t, format!("l{i}.ln2_b"), 1, d)?,
                w_fc: take(&mut t, format!("l{i}.w_fc"), d, cfg.d_ff)?,
                b_fc: take(&mut t, format!("l{i}.b_fc"), 1, cfg.d_ff)?,
                w_proj: take(&mut t, format!("l{i}.w_proj"), cfg.d_ff, d)?,
                b_proj: take(&mut t, format!("l{i}.b_proj"), 1, d)?,
            });
        }
        let params = Params {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: take(&mut t, "lnf_g".into(), 1, d)?,
            lnf_b: take(&mut t, "lnf_b".into(), 1, d)?,
            w_out: take(&mut t, "w_out".into(), d, v)?,
            b_out: take(&mut t, "b_out".into(), 1, v)?,
        };
        if !t.is_empty() {
            return Err(LmError::CheckpointFormat(format!(
                "unexpected tensors in checkpoint: {:?}",
                t.keys().collect::<Vec<_>>()
            )));
        }
        Ok(TinyLm::from_parts(cfg, tokenizer, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LanguageModel;

    #[test]
    fn roundtrip_reproduces_outputs_bit_identically() {
        let lm = TinyLm::new(TinyLmConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_seq: 32,
            seed: 11,
            word_vocab: vec!["probe".to_string()],
        });
        let dir = tempfile::tempdir().unwrap();
        lm.save_checkpoint(dir.path()).unwrap();
        let loaded = TinyLm::load_checkpoint(dir.path()).unwrap();
        let words: Vec<String> = ["probe", "words"].iter().map(|s| s.to_string()).collect();
        let a = lm.word_surprisals(&words).unwrap();
        let b = loaded.word_surprisals(&words).unwrap();
        assert_eq!(a.nats, b.nats);
        assert_eq!(lm, loaded);
    }

    #[test]
    fn corrupt_weights_are_rejected() {
        let lm = TinyLm::new(TinyLmConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_seq: 32,
            seed: 11,
            word_vocab: Vec::new(),
        });
        let dir = tempfile::tempdir().unwrap();
        lm.save_checkpoint(dir.path()).unwrap();
        std::fs::write(dir.path().join("weights.bin"), b"garbage").unwrap();
        assert!(matches!(
            TinyLm::load_checkpoint(dir.path()),
            Err(LmError::CheckpointFormat(_))
        ));
    }

    #[test]
    fn version_mismatch_is_detected() {
        let lm = TinyLm::new(TinyLmConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_seq: 32,
            seed: 11,
            word_vocab: Vec::new(),
        });
        let dir = tempfile::tempdir().unwrap();
        lm.save_checkpoint(dir.path()).unwrap();
        let meta = std::fs::read_to_string(dir.path().join("metadata.json")).unwrap();
        let bumped = meta.replace("\"format_version\": 1", "\"format_version\": 99");
        std::fs::write(dir.path().join("metadata.json"), bumped).unwrap();
        assert!(matches!(
            TinyLm::load_checkpoint(dir.path()),
            Err(LmError::CheckpointVersion { found: 99, .. })
        ));
    }
}
