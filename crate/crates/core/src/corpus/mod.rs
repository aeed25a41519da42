//! Reading-time datasets: ingestion, preprocessing, annotation, subsetting,
//! and leave-one-out splitting.
//!
//! A [`Dataset`] is an ordered collection of word-level [`DataPoint`]s with
//! mean reading times. Garden-path data carries pair/construction/condition
//! annotations and regions of interest (ROI 0 is the disambiguating word,
//! 1 and 2 the two following spillover positions); filler and naturalistic
//! data has no ROI annotations.

mod folds;
mod load;

pub use folds::{make_loo_folds, FoldWarnings, LooFold};
pub use load::{load_dataset, write_tsv, PreprocessReport, RawObservation, Schema};

use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Lower bound for a raw per-subject reading time to be retained, in ms.
pub const RT_MIN_MS: f64 = 100.0;
/// Upper bound for a raw per-subject reading time to be retained, in ms.
pub const RT_MAX_MS: f64 = 3000.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("{path}: missing required column `{column}`")]
    Schema { path: String, column: String },
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
    #[error("construction {0} has {1} usable pairs; at least 2 are required per fold")]
    FoldConstruction(Construction, usize),
    #[error("no data point for pair {pair}, condition {condition}, roi {roi}")]
    NotFound {
        pair: String,
        condition: Condition,
        roi: u8,
    },
    #[error("roi null is not addressable by lookup")]
    NullRoi,
}

/// Garden-path construction (plus the relative-clause contrast used as the
/// negative control).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Construction {
    Mvrr,
    Nps,
    Npz,
    Rc,
}

impl Construction {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MVRR" => Some(Self::Mvrr),
            "NPS" => Some(Self::Nps),
            "NPZ" => Some(Self::Npz),
            "RC" => Some(Self::Rc),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mvrr => "MVRR",
            Self::Nps => "NPS",
            Self::Npz => "NPZ",
            Self::Rc => "RC",
        }
    }

    /// The two conditions of a pair for this construction, ordered
    /// (marked, control): the reading-time delta is marked minus control.
    pub fn condition_pair(&self) -> (Condition, Condition) {
        match self {
            Self::Rc => (Condition::Orc, Condition::Src),
            _ => (Condition::Amb, Condition::Unamb),
        }
    }

    /// ROI positions whose surface words must not overlap between train and
    /// test pairs. The relative-clause contrast exempts ROI 1, which is a
    /// closed-class determiner shared by every item.
    pub fn disjoint_rois(&self) -> &'static [u8] {
        match self {
            Self::Rc => &[0, 2],
            _ => &[0, 1, 2],
        }
    }
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sentence condition within a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Condition {
    Amb,
    Unamb,
    Orc,
    Src,
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "amb" => Some(Self::Amb),
            "unamb" => Some(Self::Unamb),
            "orc" => Some(Self::Orc),
            "src" => Some(Self::Src),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Amb => "amb",
            Self::Unamb => "unamb",
            Self::Orc => "orc",
            Self::Src => "src",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DatasetKind {
    GardenPath,
    Filler,
    Naturalistic,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GardenPath => "garden_path",
            Self::Filler => "filler",
            Self::Naturalistic => "naturalistic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "garden_path" => Some(Self::GardenPath),
            "filler" => Some(Self::Filler),
            "naturalistic" => Some(Self::Naturalistic),
            _ => None,
        }
    }
}

/// One word token with its mean reading time and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub word: String,
    /// Mean reading time across subjects, ms.
    pub rt: f64,
    pub pair_id: Option<String>,
    pub construction: Option<Construction>,
    pub condition: Option<Condition>,
    /// 0-based index in the sentence.
    pub position: usize,
    pub roi: Option<u8>,
    pub sentence_id: String,
    pub is_sentence_final: bool,
    /// Marks the verb that induces the syntactic ambiguity.
    pub ambiguity_verb: bool,
    /// Marks pairs excluded from analysis (e.g. data errors).
    pub excluded: bool,
}

/// Lowercased surface form with outer punctuation stripped; the identity used
/// for verb and ROI-word disjointness checks.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// An ordered collection of data points with sentence and pair indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    points: Vec<DataPoint>,
    /// Point-index ranges per sentence, in first-appearance order.
    sentences: Vec<(String, std::ops::Range<usize>)>,
}

impl Dataset {
    /// Builds a dataset from points grouped by sentence, validating the
    /// structural invariants for the given kind.
    pub fn new(kind: DatasetKind, points: Vec<DataPoint>) -> Result<Self, CorpusError> {
        let mut sentences: Vec<(String, std::ops::Range<usize>)> = Vec::new();
        let mut start = 0usize;
        for i in 0..points.len() {
            let boundary = i + 1 == points.len() || points[i + 1].sentence_id != points[i].sentence_id;
            if boundary {
                sentences.push((points[i].sentence_id.clone(), start..i + 1));
                start = i + 1;
            }
        }
        let ds = Dataset {
            kind,
            points,
            sentences,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for (sid, range) in &self.sentences {
            if !seen.insert(sid.clone()) {
                return Err(CorpusError::Invariant(format!(
                    "sentence {sid} appears in more than one contiguous block"
                )));
            }
            let pts = &self.points[range.clone()];
            for (k, p) in pts.iter().enumerate() {
                if !p.rt.is_finite() {
                    return Err(CorpusError::Invariant(format!(
                        "sentence {sid} position {} has non-finite rt",
                        p.position
                    )));
                }
                if p.position != k {
                    return Err(CorpusError::Invariant(format!(
                        "sentence {sid}: positions must be contiguous from 0, found {} at index {k}",
                        p.position
                    )));
                }
                let expect_final = k + 1 == pts.len();
                if p.is_sentence_final != expect_final {
                    return Err(CorpusError::Invariant(format!(
                        "sentence {sid}: is_sentence_final mismatch at position {}",
                        p.position
                    )));
                }
            }
        }
        match self.kind {
            DatasetKind::GardenPath => self.validate_garden_path(),
            _ => {
                for p in &self.points {
                    if p.roi.is_some() {
                        return Err(CorpusError::Invariant(format!(
                            "{} data must have null roi (sentence {}, position {})",
                            self.kind.as_str(),
                            p.sentence_id,
                            p.position
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    fn validate_garden_path(&self) -> Result<(), CorpusError> {
        // Both conditions per pair, and a well-formed ROI block per sentence.
        let mut pair_conditions: BTreeMap<(Construction, String), Vec<Condition>> = BTreeMap::new();
        for (sid, range) in &self.sentences {
            let pts = &self.points[range.clone()];
            let first = &pts[0];
            let (c, pair, cond) = match (first.construction, &first.pair_id, first.condition) {
                (Some(c), Some(p), Some(cd)) => (c, p.clone(), cd),
                _ => {
                    return Err(CorpusError::Invariant(format!(
                        "garden-path sentence {sid} lacks construction/pair/condition"
                    )))
                }
            };
            pair_conditions.entry((c, pair)).or_default().push(cond);

            let roi0: Vec<usize> = pts
                .iter()
                .filter(|p| p.roi == Some(0))
                .map(|p| p.position)
                .collect();
            if roi0.len() != 1 {
                return Err(CorpusError::Invariant(format!(
                    "sentence {sid}: expected exactly one roi 0, found {}",
                    roi0.len()
                )));
            }
            let r0 = roi0[0];
            for (k, roi) in [(1usize, 1u8), (2, 2)] {
                let expected_pos = r0 + k;
                let found: Vec<usize> = pts
                    .iter()
                    .filter(|p| p.roi == Some(roi))
                    .map(|p| p.position)
                    .collect();
                match found.as_slice() {
                    [] => {
                        // roi 1/2 may be absent only if the sentence ends first
                        if expected_pos < pts.len() {
                            return Err(CorpusError::Invariant(format!(
                                "sentence {sid}: roi {roi} missing although position {expected_pos} exists"
                            )));
                        }
                    }
                    [pos] if *pos == expected_pos => {}
                    _ => {
                        return Err(CorpusError::Invariant(format!(
                            "sentence {sid}: roi {roi} must sit at position {expected_pos}"
                        )))
                    }
                }
            }
        }
        for ((c, pair), conds) in &pair_conditions {
            let (a, b) = c.condition_pair();
            if !(conds.contains(&a) && conds.contains(&b)) {
                return Err(CorpusError::Invariant(format!(
                    "pair {pair} ({c}) must appear with both conditions {a} and {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sentences in first-appearance order as (sentence_id, points) slices.
    pub fn sentences(&self) -> impl Iterator<Item = (&str, &[DataPoint])> {
        self.sentences
            .iter()
            .map(move |(sid, r)| (sid.as_str(), &self.points[r.clone()]))
    }

    pub fn sentence(&self, sentence_id: &str) -> Option<&[DataPoint]> {
        self.sentences
            .iter()
            .find(|(sid, _)| sid == sentence_id)
            .map(|(_, r)| &self.points[r.clone()])
    }

    /// Words of a sentence in position order.
    pub fn sentence_words(&self, sentence_id: &str) -> Option<Vec<String>> {
        self.sentence(sentence_id)
            .map(|pts| pts.iter().map(|p| p.word.clone()).collect())
    }

    /// Constructions present in this dataset, sorted.
    pub fn constructions(&self) -> Vec<Construction> {
        let mut set: Vec<Construction> = Vec::new();
        for p in &self.points {
            if let Some(c) = p.construction {
                if !set.contains(&c) {
                    set.push(c);
                }
            }
        }
        set.sort();
        set
    }

    /// Pair ids of a construction that are not flagged excluded, sorted.
    pub fn usable_pairs(&self, construction: Construction) -> Vec<String> {
        let mut excluded = std::collections::HashSet::new();
        let mut pairs = std::collections::BTreeSet::new();
        for p in &self.points {
            if p.construction == Some(construction) {
                if let Some(pid) = &p.pair_id {
                    pairs.insert(pid.clone());
                    if p.excluded {
                        excluded.insert(pid.clone());
                    }
                }
            }
        }
        pairs.into_iter().filter(|p| !excluded.contains(p)).collect()
    }

    /// Pair ids flagged excluded anywhere in the dataset.
    pub fn excluded_pairs(&self) -> Vec<String> {
        let mut out = std::collections::BTreeSet::new();
        for p in &self.points {
            if p.excluded {
                if let Some(pid) = &p.pair_id {
                    out.insert(pid.clone());
                }
            }
        }
        out.into_iter().collect()
    }

    /// The unique data point for (pair, condition, roi).
    pub fn lookup(
        &self,
        pair: &str,
        condition: Condition,
        roi: Option<u8>,
    ) -> Result<&DataPoint, CorpusError> {
        let roi = roi.ok_or(CorpusError::NullRoi)?;
        self.points
            .iter()
            .find(|p| {
                p.pair_id.as_deref() == Some(pair) && p.condition == Some(condition) && p.roi == Some(roi)
            })
            .ok_or_else(|| CorpusError::NotFound {
                pair: pair.to_string(),
                condition,
                roi,
            })
    }

    /// Index of the unique point for (pair, condition, roi), if present.
    pub fn point_index(&self, pair: &str, condition: Condition, roi: u8) -> Option<usize> {
        self.points.iter().position(|p| {
            p.pair_id.as_deref() == Some(pair) && p.condition == Some(condition) && p.roi == Some(roi)
        })
    }

    /// New dataset restricted to the given (construction, pair) set,
    /// preserving sentence order.
    pub fn restrict_to_pairs(&self, keep: &[(Construction, String)]) -> Dataset {
        let keep_set: std::collections::HashSet<(Construction, &str)> = keep
            .iter()
            .map(|(c, p)| (*c, p.as_str()))
            .collect();
        let mut points = Vec::new();
        for (_, range) in &self.sentences {
            let pts = &self.points[range.clone()];
            let first = &pts[0];
            if let (Some(c), Some(p)) = (first.construction, first.pair_id.as_deref()) {
                if keep_set.contains(&(c, p)) {
                    points.extend_from_slice(pts);
                }
            }
        }
        Dataset::new(self.kind, points).expect("restriction preserves invariants")
    }

    /// Normalized surface forms of ambiguity-inducing verbs for a pair.
    pub fn pair_verbs(&self, construction: Construction, pair: &str) -> Vec<String> {
        let mut out = std::collections::BTreeSet::new();
        for p in &self.points {
            if p.construction == Some(construction)
                && p.pair_id.as_deref() == Some(pair)
                && p.ambiguity_verb
            {
                out.insert(normalize_word(&p.word));
            }
        }
        out.into_iter().collect()
    }

    /// Normalized ROI surface forms for a pair, restricted to the ROI
    /// positions relevant for the construction's disjointness rule.
    pub fn pair_roi_words(&self, construction: Construction, pair: &str) -> Vec<String> {
        let rois = construction.disjoint_rois();
        let mut out = std::collections::BTreeSet::new();
        for p in &self.points {
            if p.construction == Some(construction) && p.pair_id.as_deref() == Some(pair) {
                if let Some(r) = p.roi {
                    if rois.contains(&r) {
                        out.insert(normalize_word(&p.word));
                    }
                }
            }
        }
        out.into_iter().collect()
    }
}

/// Data-subset levels used as regression targets and coefficient sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SubsetLevel {
    Full,
    /// Excludes the first two words of every sentence and sentence-final words.
    Minus,
    /// Additionally excludes all ROI points.
    MinusMinus,
}

/// A filtered view over a dataset; the underlying points are shared.
#[derive(Debug, Clone)]
pub struct SubsetView<'a> {
    pub base: &'a Dataset,
    pub level: SubsetLevel,
    retained: Vec<usize>,
}

impl<'a> SubsetView<'a> {
    pub fn retained_indices(&self) -> &[usize] {
        &self.retained
    }

    pub fn points(&self) -> impl Iterator<Item = &'a DataPoint> + '_ {
        self.retained.iter().map(move |&i| &self.base.points()[i])
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }
}

/// Restricts a dataset to the requested subset level.
pub fn subset(dataset: &Dataset, level: SubsetLevel) -> SubsetView<'_> {
    let retained = dataset
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| match level {
            SubsetLevel::Full => true,
            SubsetLevel::Minus => p.position >= 2 && !p.is_sentence_final,
            SubsetLevel::MinusMinus => p.position >= 2 && !p.is_sentence_final && p.roi.is_none(),
        })
        .map(|(i, _)| i)
        .collect();
    SubsetView {
        base: dataset,
        level,
        retained,
    }
}
