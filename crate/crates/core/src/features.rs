//! Regression features: the per-word surprisal triple plus control
//! variables, assembled into design matrices over a dataset view.
//!
//! A feature row for a point at position `t` carries surprisal at `t`,
//! `t-1`, `t-2` (spillover), unigram surprisal and word length for the same
//! three positions, the position index, and an intercept. Rows exist only
//! for interior points (the `minus` views guarantee position >= 2), and rows
//! with missing unigram frequencies are excluded.

use crate::corpus::{SubsetLevel, SubsetView};
use crate::lm::{LanguageModel, LmError};
use ndarray::{Array1, Array2};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature rows require a minus or minus-minus view, got {0:?}")]
    UnsupportedLevel(SubsetLevel),
    #[error("surprisal series for sentence {sentence_id} has {got} entries, expected {expected}")]
    Alignment {
        sentence_id: String,
        expected: usize,
        got: usize,
    },
    #[error("frequency table {path}:{line}: {msg}")]
    FrequencyParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// One design-matrix column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Column {
    /// LM surprisal at position t-k.
    Surprisal(u8),
    /// Unigram surprisal at position t-k.
    Unigram(u8),
    /// Word length in characters (punctuation excluded) at position t-k.
    Length(u8),
    /// 0-based position in the sentence.
    Position,
    Intercept,
}

/// Which spillover terms enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeatureConfig {
    /// Include surprisal at t-1 and t-2. Disabled for the relative-clause
    /// asymmetry analysis, which uses surprisal at the current position only.
    pub surprisal_spillover: bool,
    /// Include spillover terms for the control variables (unigram surprisal
    /// and word length).
    pub control_spillover: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            surprisal_spillover: true,
            control_spillover: true,
        }
    }
}

impl FeatureConfig {
    /// Configuration for the relative-clause asymmetry mode: no surprisal
    /// spillover, controls unchanged.
    pub fn no_surprisal_spillover() -> Self {
        FeatureConfig {
            surprisal_spillover: false,
            control_spillover: true,
        }
    }

    pub fn columns(&self) -> Vec<Column> {
        let mut cols = Vec::new();
        let surp_k: &[u8] = if self.surprisal_spillover {
            &[0, 1, 2]
        } else {
            &[0]
        };
        let ctrl_k: &[u8] = if self.control_spillover {
            &[0, 1, 2]
        } else {
            &[0]
        };
        for &k in surp_k {
            cols.push(Column::Surprisal(k));
        }
        for &k in ctrl_k {
            cols.push(Column::Unigram(k));
        }
        for &k in ctrl_k {
            cols.push(Column::Length(k));
        }
        cols.push(Column::Position);
        cols.push(Column::Intercept);
        cols
    }
}

/// Word relative frequencies for unigram surprisal.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    map: HashMap<String, f64>,
}

impl FrequencyTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        let map = entries
            .into_iter()
            .map(|(w, f)| (w.to_lowercase(), f))
            .collect();
        FrequencyTable { map }
    }

    /// Loads a two-column TSV `word, relative_frequency` with a header row.
    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let display = path.display().to_string();
        let content = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: display.clone(),
            source,
        })?;
        let mut map = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let word = parts.next().unwrap_or("").trim();
            let freq_raw = parts.next().unwrap_or("").trim();
            let freq: f64 = freq_raw.parse().map_err(|_| FeatureError::FrequencyParse {
                path: display.clone(),
                line: i + 1,
                msg: format!("bad relative_frequency `{freq_raw}`"),
            })?;
            if !(freq > 0.0 && freq <= 1.0) {
                return Err(FeatureError::FrequencyParse {
                    path: display.clone(),
                    line: i + 1,
                    msg: format!("relative_frequency {freq} outside (0, 1]"),
                });
            }
            map.insert(word.to_lowercase(), freq);
        }
        Ok(FrequencyTable { map })
    }

    /// Negative log relative frequency, or `None` when the word is absent.
    /// Lookups are case-folded, with a punctuation-stripped fallback.
    pub fn unigram_surprisal(&self, word: &str) -> Option<f64> {
        let lower = word.to_lowercase();
        self.map
            .get(&lower)
            .or_else(|| self.map.get(&crate::corpus::normalize_word(word)))
            .map(|f| -f.ln())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Word length in characters, punctuation excluded.
pub fn word_length(word: &str) -> f64 {
    word.chars().filter(|c| c.is_alphanumeric()).count() as f64
}

/// One sentence whose surprisal series the plan needs.
#[derive(Debug, Clone)]
pub struct PlanSentence {
    pub sentence_id: String,
    pub words: Vec<String>,
}

/// One design-matrix row, with control values fixed and surprisal entries
/// described as (column, word-index) placements.
#[derive(Debug, Clone)]
pub struct PlanRow {
    /// Index of the point in the base dataset.
    pub point_index: usize,
    pub sentence: usize,
    pub position: usize,
    pub target_rt: f64,
    pub controls: Vec<f64>,
    pub surprisal_slots: Vec<(usize, usize)>,
}

/// Everything needed to turn per-sentence surprisal series into a design
/// matrix. The row order is canonical (sorted by sentence id and position),
/// so permuting the input never changes the point-to-row mapping.
#[derive(Debug, Clone)]
pub struct FeaturePlan {
    pub columns: Vec<Column>,
    pub rows: Vec<PlanRow>,
    pub sentences: Vec<PlanSentence>,
    /// Dataset point indices excluded for missing unigram frequencies.
    pub excluded_missing_freq: Vec<usize>,
}

/// A realized design matrix with aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub targets: Array1<f64>,
    pub columns: Vec<Column>,
    /// Base-dataset point index per row.
    pub point_indices: Vec<usize>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// Row index for a dataset point, if it survived exclusion.
    pub fn row_of_point(&self, point_index: usize) -> Option<usize> {
        self.point_indices.iter().position(|&p| p == point_index)
    }

    /// A copy restricted to the given columns (same rows and targets).
    pub fn select_columns(&self, keep: &[Column]) -> DesignMatrix {
        let idx: Vec<usize> = keep
            .iter()
            .map(|c| {
                self.columns
                    .iter()
                    .position(|x| x == c)
                    .expect("column to keep must exist")
            })
            .collect();
        let mut x = Array2::<f64>::zeros((self.x.nrows(), idx.len()));
        for (new_c, &old_c) in idx.iter().enumerate() {
            x.column_mut(new_c).assign(&self.x.column(old_c));
        }
        DesignMatrix {
            x,
            targets: self.targets.clone(),
            columns: keep.to_vec(),
            point_indices: self.point_indices.clone(),
        }
    }

    /// The control-only baseline design (all non-surprisal columns).
    pub fn controls_only(&self) -> DesignMatrix {
        let keep: Vec<Column> = self
            .columns
            .iter()
            .filter(|c| !matches!(c, Column::Surprisal(_)))
            .cloned()
            .collect();
        self.select_columns(&keep)
    }
}

/// Builds the assembly plan for a dataset view.
pub fn build_plan(
    view: &SubsetView<'_>,
    freq: &FrequencyTable,
    cfg: &FeatureConfig,
) -> Result<FeaturePlan, FeatureError> {
    if view.level == SubsetLevel::Full {
        return Err(FeatureError::UnsupportedLevel(view.level));
    }
    let columns = cfg.columns();
    let base = view.base;

    // Canonical sentence order: sorted by sentence id.
    let mut sentence_ids: Vec<String> = Vec::new();
    for p in view.points() {
        if !sentence_ids.contains(&p.sentence_id) {
            sentence_ids.push(p.sentence_id.clone());
        }
    }
    sentence_ids.sort();
    let sentences: Vec<PlanSentence> = sentence_ids
        .iter()
        .map(|sid| PlanSentence {
            sentence_id: sid.clone(),
            words: base.sentence_words(sid).expect("sentence exists"),
        })
        .collect();
    let sentence_index: HashMap<&str, usize> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sentence_id.as_str(), i))
        .collect();

    // Canonical row order: sorted by (sentence id, position).
    let mut retained: Vec<usize> = view.retained_indices().to_vec();
    retained.sort_by(|&a, &b| {
        let pa = &base.points()[a];
        let pb = &base.points()[b];
        (pa.sentence_id.as_str(), pa.position).cmp(&(pb.sentence_id.as_str(), pb.position))
    });

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    'point: for &pi in &retained {
        let p = &base.points()[pi];
        debug_assert!(p.position >= 2, "minus views guarantee interior positions");
        let s_idx = sentence_index[p.sentence_id.as_str()];
        let words = &sentences[s_idx].words;
        let mut controls = vec![0.0; columns.len()];
        let mut surprisal_slots = Vec::new();
        for (c_idx, col) in columns.iter().enumerate() {
            match col {
                Column::Surprisal(k) => {
                    surprisal_slots.push((c_idx, p.position - *k as usize));
                }
                Column::Unigram(k) => {
                    let w = &words[p.position - *k as usize];
                    match freq.unigram_surprisal(w) {
                        Some(v) => controls[c_idx] = v,
                        None => {
                            excluded.push(pi);
                            continue 'point;
                        }
                    }
                }
                Column::Length(k) => {
                    controls[c_idx] = word_length(&words[p.position - *k as usize]);
                }
                Column::Position => controls[c_idx] = p.position as f64,
                Column::Intercept => controls[c_idx] = 1.0,
            }
        }
        rows.push(PlanRow {
            point_index: pi,
            sentence: s_idx,
            position: p.position,
            target_rt: p.rt,
            controls,
            surprisal_slots,
        });
    }
    Ok(FeaturePlan {
        columns,
        rows,
        sentences,
        excluded_missing_freq: excluded,
    })
}

/// Fills a plan with per-sentence surprisal series (one per plan sentence,
/// same order).
pub fn realize_design(
    plan: &FeaturePlan,
    surprisals: &[Vec<f64>],
) -> Result<DesignMatrix, FeatureError> {
    assert_eq!(surprisals.len(), plan.sentences.len());
    for (s, series) in plan.sentences.iter().zip(surprisals) {
        if series.len() != s.words.len() {
            return Err(FeatureError::Alignment {
                sentence_id: s.sentence_id.clone(),
                expected: s.words.len(),
                got: series.len(),
            });
        }
    }
    let mut x = Array2::<f64>::zeros((plan.rows.len(), plan.columns.len()));
    let mut targets = Array1::<f64>::zeros(plan.rows.len());
    let mut point_indices = Vec::with_capacity(plan.rows.len());
    for (r, row) in plan.rows.iter().enumerate() {
        for (c, v) in row.controls.iter().enumerate() {
            x[(r, c)] = *v;
        }
        for &(c, w) in &row.surprisal_slots {
            x[(r, c)] = surprisals[row.sentence][w];
        }
        targets[r] = row.target_rt;
        point_indices.push(row.point_index);
    }
    Ok(DesignMatrix {
        x,
        targets,
        columns: plan.columns.clone(),
        point_indices,
    })
}

/// Computes surprisal series for every plan sentence with the given backend.
pub fn surprisals_for_plan(
    lm: &dyn LanguageModel,
    plan: &FeaturePlan,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    plan.sentences
        .iter()
        .map(|s| Ok(lm.word_surprisals(&s.words)?.nats))
        .collect()
}

/// Builds the design matrix for a view with the given backend.
pub fn build_features(
    lm: &dyn LanguageModel,
    view: &SubsetView<'_>,
    freq: &FrequencyTable,
    cfg: &FeatureConfig,
) -> Result<DesignMatrix, FeatureError> {
    let plan = build_plan(view, freq, cfg)?;
    let surprisals = surprisals_for_plan(lm, &plan)?;
    realize_design(&plan, &surprisals)
}
