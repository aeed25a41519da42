//! Leave-one-out fold construction with verb and ROI-word disjointness.

use super::{CorpusError, Construction, Dataset};
use std::collections::BTreeSet;

/// One leave-one-out fold: one held-out pair per construction, and the
/// maximal training subset satisfying the non-overlap constraints.
#[derive(Debug, Clone)]
pub struct LooFold {
    pub fold_id: usize,
    /// The held-out pair id (shared across constructions).
    pub test_pair: String,
    pub train: Dataset,
    pub test: Dataset,
}

/// Pairs removed from training sets to preserve disjointness.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct FoldWarnings {
    /// (fold_id, construction, pair_id, reason)
    pub dropped_train_pairs: Vec<(usize, String, String, String)>,
    /// Constructions left with an empty training set in some fold.
    pub empty_train: Vec<(usize, String)>,
}

/// Splits a garden-path dataset into leave-one-out folds.
///
/// Each fold holds out the pair with a given id from every construction in
/// the dataset. Training pairs whose ambiguity verbs or ROI words overlap
/// the held-out pairs are dropped, which keeps both disjointness invariants
/// intact by construction.
pub fn make_loo_folds(gp: &Dataset) -> Result<(Vec<LooFold>, FoldWarnings), CorpusError> {
    let constructions = gp.constructions();
    if constructions.is_empty() {
        return Err(CorpusError::Invariant(
            "garden-path dataset has no constructions".to_string(),
        ));
    }
    for &c in &constructions {
        let usable = gp.usable_pairs(c);
        if usable.len() < 2 {
            return Err(CorpusError::FoldConstruction(c, usable.len()));
        }
    }
    // Fold ids: pair ids usable in every construction present.
    let mut fold_pairs: Option<BTreeSet<String>> = None;
    for &c in &constructions {
        let usable: BTreeSet<String> = gp.usable_pairs(c).into_iter().collect();
        fold_pairs = Some(match fold_pairs {
            None => usable,
            Some(prev) => prev.intersection(&usable).cloned().collect(),
        });
    }
    let fold_pairs: Vec<String> = fold_pairs.unwrap().into_iter().collect();
    if fold_pairs.len() < 2 {
        return Err(CorpusError::Invariant(format!(
            "only {} pair ids are usable across all constructions",
            fold_pairs.len()
        )));
    }

    let mut warnings = FoldWarnings::default();
    let mut folds = Vec::new();
    for (fold_id, held_out) in fold_pairs.iter().enumerate() {
        let test_keep: Vec<(Construction, String)> = constructions
            .iter()
            .map(|&c| (c, held_out.clone()))
            .collect();
        let test = gp.restrict_to_pairs(&test_keep);

        let mut test_verbs: BTreeSet<String> = BTreeSet::new();
        let mut test_roi_words: BTreeSet<String> = BTreeSet::new();
        for &c in &constructions {
            test_verbs.extend(gp.pair_verbs(c, held_out));
            test_roi_words.extend(gp.pair_roi_words(c, held_out));
        }

        let mut train_keep: Vec<(Construction, String)> = Vec::new();
        for &c in &constructions {
            let mut kept = 0usize;
            for pair in gp.usable_pairs(c) {
                if &pair == held_out {
                    continue;
                }
                let verbs: BTreeSet<String> = gp.pair_verbs(c, &pair).into_iter().collect();
                let rois: BTreeSet<String> = gp.pair_roi_words(c, &pair).into_iter().collect();
                if !verbs.is_disjoint(&test_verbs) {
                    warnings.dropped_train_pairs.push((
                        fold_id,
                        c.as_str().to_string(),
                        pair.clone(),
                        "shares an ambiguity verb with the held-out pair".to_string(),
                    ));
                    continue;
                }
                if !rois.is_disjoint(&test_roi_words) {
                    warnings.dropped_train_pairs.push((
                        fold_id,
                        c.as_str().to_string(),
                        pair.clone(),
                        "shares an ROI word with the held-out pair".to_string(),
                    ));
                    continue;
                }
                train_keep.push((c, pair));
                kept += 1;
            }
            if kept == 0 {
                warnings
                    .empty_train
                    .push((fold_id, c.as_str().to_string()));
            }
        }
        let train = gp.restrict_to_pairs(&train_keep);
        folds.push(LooFold {
            fold_id,
            test_pair: held_out.clone(),
            train,
            test,
        });
    }
    Ok((folds, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{normalize_word, Condition, DataPoint, DatasetKind};

    /// Builds a garden-path pair with controllable verb and ROI words.
    fn pair(
        construction: Construction,
        pair_id: &str,
        verb: &str,
        roi_words: [&str; 3],
    ) -> Vec<DataPoint> {
        let mut points = Vec::new();
        let (marked, control) = construction.condition_pair();
        for cond in [marked, control] {
            let sid = format!("{}-{}-{}", construction.as_str(), pair_id, cond.as_str());
            let words = [
                "the", "noun", verb, "the", "other", roi_words[0], roi_words[1], roi_words[2],
                "today",
            ];
            let n = words.len();
            for (i, w) in words.iter().enumerate() {
                points.push(DataPoint {
                    word: w.to_string(),
                    rt: 300.0,
                    pair_id: Some(pair_id.to_string()),
                    construction: Some(construction),
                    condition: Some(cond),
                    position: i,
                    roi: if (5..=7).contains(&i) {
                        Some((i - 5) as u8)
                    } else {
                        None
                    },
                    sentence_id: sid.clone(),
                    is_sentence_final: i + 1 == n,
                    ambiguity_verb: i == 2,
                    excluded: false,
                });
            }
        }
        points
    }

    fn three_construction_dataset(pairs: usize, shared_verb: bool) -> Dataset {
        let mut points = Vec::new();
        for c in [Construction::Mvrr, Construction::Nps, Construction::Npz] {
            for p in 0..pairs {
                let verb = if shared_verb {
                    format!("sharedverb-{}", c.as_str())
                } else {
                    format!("verb-{}-{p}", c.as_str())
                };
                let rois = [
                    format!("roi0-{}-{p}", c.as_str()),
                    format!("roi1-{}-{p}", c.as_str()),
                    format!("roi2-{}-{p}", c.as_str()),
                ];
                points.extend(pair(
                    c,
                    &format!("p{p}"),
                    &verb,
                    [rois[0].as_str(), rois[1].as_str(), rois[2].as_str()],
                ));
            }
        }
        Dataset::new(DatasetKind::GardenPath, points).unwrap()
    }

    /// Brute-force disjointness oracle over surface forms.
    fn oracle_disjoint(fold: &LooFold) -> (bool, bool) {
        let verbs = |ds: &Dataset| -> std::collections::BTreeSet<String> {
            ds.points()
                .iter()
                .filter(|p| p.ambiguity_verb)
                .map(|p| normalize_word(&p.word))
                .collect()
        };
        let rois = |ds: &Dataset| -> std::collections::BTreeSet<String> {
            ds.points()
                .iter()
                .filter(|p| {
                    p.roi.map_or(false, |r| {
                        p.construction
                            .map_or(false, |c| c.disjoint_rois().contains(&r))
                    })
                })
                .map(|p| normalize_word(&p.word))
                .collect()
        };
        (
            verbs(&fold.train).is_disjoint(&verbs(&fold.test)),
            rois(&fold.train).is_disjoint(&rois(&fold.test)),
        )
    }

    #[test]
    fn distinct_words_keep_all_train_pairs() {
        let ds = three_construction_dataset(4, false);
        let (folds, warnings) = make_loo_folds(&ds).unwrap();
        assert_eq!(folds.len(), 4);
        assert!(warnings.dropped_train_pairs.is_empty());
        for fold in &folds {
            for c in [Construction::Mvrr, Construction::Nps, Construction::Npz] {
                assert_eq!(fold.train.usable_pairs(c).len(), 3);
                assert_eq!(fold.test.usable_pairs(c).len(), 1);
            }
            let (v, r) = oracle_disjoint(fold);
            assert!(v && r, "fold {} violates disjointness", fold.fold_id);
        }
    }

    #[test]
    fn shared_verbs_force_empty_train() {
        let ds = three_construction_dataset(2, true);
        let (folds, warnings) = make_loo_folds(&ds).unwrap();
        assert_eq!(folds.len(), 2);
        assert!(!warnings.empty_train.is_empty());
        for fold in &folds {
            assert!(fold.train.is_empty());
        }
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let mut points = Vec::new();
        points.extend(pair(Construction::Mvrr, "p0", "verb0", ["a0", "b0", "c0"]));
        let ds = Dataset::new(DatasetKind::GardenPath, points).unwrap();
        assert!(matches!(
            make_loo_folds(&ds),
            Err(CorpusError::FoldConstruction(Construction::Mvrr, 1))
        ));
    }

    #[test]
    fn excluded_pair_reduces_fold_count() {
        let mut ds = three_construction_dataset(4, false);
        // flag pair p2 of one construction as excluded
        let points: Vec<DataPoint> = ds
            .points()
            .iter()
            .cloned()
            .map(|mut p| {
                if p.pair_id.as_deref() == Some("p2") && p.construction == Some(Construction::Nps) {
                    p.excluded = true;
                }
                p
            })
            .collect();
        ds = Dataset::new(DatasetKind::GardenPath, points).unwrap();
        let (folds, _) = make_loo_folds(&ds).unwrap();
        assert_eq!(folds.len(), 3);
        assert!(folds.iter().all(|f| f.test_pair != "p2"));
    }

    #[test]
    fn fold_test_pairs_cover_all_usable_pairs_once() {
        let ds = three_construction_dataset(5, false);
        let (folds, _) = make_loo_folds(&ds).unwrap();
        for c in [Construction::Mvrr, Construction::Nps, Construction::Npz] {
            let mut held: Vec<String> = folds
                .iter()
                .flat_map(|f| f.test.usable_pairs(c))
                .collect();
            held.sort();
            assert_eq!(held, ds.usable_pairs(c));
        }
    }
}
