//! Batch sampling over garden-path pairs.
//!
//! A batch always contains whole sentence pairs (both conditions together)
//! and equal pair counts from every construction in scope. Pairs are drawn
//! without replacement within an epoch; a fresh shuffled queue starts a new
//! epoch per construction when fewer than a batch's worth remain.

use super::TrainingError;
use crate::corpus::{Construction, Dataset};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Batch {
    pub pairs: Vec<(Construction, String)>,
    pub data: Dataset,
}

pub struct BatchSampler<'a> {
    train: &'a Dataset,
    pairs_per_construction: usize,
    queues: BTreeMap<Construction, Vec<String>>,
    rng: ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(
        train: &'a Dataset,
        batch_sentences: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self, TrainingError> {
        let constructions = train.constructions();
        if constructions.is_empty() {
            return Err(TrainingError::Config(
                "training set has no garden-path constructions".to_string(),
            ));
        }
        let denom = 2 * constructions.len();
        if batch_sentences == 0 || batch_sentences % denom != 0 {
            return Err(TrainingError::Config(format!(
                "batch_sentences {batch_sentences} must be a positive multiple of {denom} (2 x constructions)"
            )));
        }
        let per = batch_sentences / denom;
        for &c in &constructions {
            let usable = train.usable_pairs(c).len();
            if usable < per {
                return Err(TrainingError::InsufficientPairs {
                    construction: c.as_str().to_string(),
                    have: usable,
                    need: per,
                });
            }
        }
        Ok(BatchSampler {
            train,
            pairs_per_construction: per,
            queues: constructions.into_iter().map(|c| (c, Vec::new())).collect(),
            rng,
        })
    }

    pub fn pairs_per_construction(&self) -> usize {
        self.pairs_per_construction
    }

    pub fn next_batch(&mut self) -> Batch {
        let mut pairs = Vec::new();
        let constructions: Vec<Construction> = self.queues.keys().cloned().collect();
        for c in constructions {
            let queue = self.queues.get_mut(&c).unwrap();
            if queue.len() < self.pairs_per_construction {
                // new epoch for this construction
                let mut fresh = self.train.usable_pairs(c);
                fresh.shuffle(&mut self.rng);
                *queue = fresh;
            }
            for _ in 0..self.pairs_per_construction {
                let pair = queue.pop().expect("queue refilled above");
                pairs.push((c, pair));
            }
        }
        let data = self.train.restrict_to_pairs(&pairs);
        Batch { pairs, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Condition, DataPoint, DatasetKind};
    use rand::SeedableRng;

    fn toy_train(constructions: &[Construction], pairs: usize) -> Dataset {
        let mut points = Vec::new();
        for &c in constructions {
            for p in 0..pairs {
                let (a, b) = c.condition_pair();
                for cond in [a, b] {
                    let sid = format!("{}-{p}-{}", c.as_str(), cond.as_str());
                    let words = ["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"];
                    for (i, w) in words.iter().enumerate() {
                        points.push(DataPoint {
                            word: format!("{w}-{}", c.as_str()),
                            rt: 300.0,
                            pair_id: Some(format!("p{p}")),
                            construction: Some(c),
                            condition: Some(cond),
                            position: i,
                            roi: if (4..=6).contains(&i) {
                                Some((i - 4) as u8)
                            } else {
                                None
                            },
                            sentence_id: sid.clone(),
                            is_sentence_final: i + 1 == words.len(),
                            ambiguity_verb: i == 2,
                            excluded: false,
                        });
                    }
                }
            }
        }
        Dataset::new(DatasetKind::GardenPath, points).unwrap()
    }

    fn count_sentences(b: &Batch) -> usize {
        b.data.sentences().count()
    }

    #[test]
    fn batch_66_over_three_constructions_is_11_pairs_each() {
        let all = [Construction::Mvrr, Construction::Nps, Construction::Npz];
        let train = toy_train(&all, 12);
        let mut sampler =
            BatchSampler::new(&train, 66, ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sampler.pairs_per_construction(), 11);
        let batch = sampler.next_batch();
        assert_eq!(count_sentences(&batch), 66);
        for c in all {
            assert_eq!(batch.pairs.iter().filter(|(pc, _)| *pc == c).count(), 11);
        }
    }

    #[test]
    fn batch_44_over_single_construction_is_22_pairs() {
        let train = toy_train(&[Construction::Mvrr], 23);
        let mut sampler =
            BatchSampler::new(&train, 44, ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(sampler.pairs_per_construction(), 22);
        let batch = sampler.next_batch();
        assert_eq!(count_sentences(&batch), 44);
    }

    #[test]
    fn consecutive_batches_in_one_epoch_are_disjoint() {
        let train = toy_train(&[Construction::Mvrr], 12);
        // 12 usable pairs, 4 per batch -> 3 batches per epoch
        let mut sampler = BatchSampler::new(&train, 8, ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b1 = sampler.next_batch();
        let b2 = sampler.next_batch();
        let b3 = sampler.next_batch();
        let set = |b: &Batch| {
            b.pairs
                .iter()
                .map(|(_, p)| p.clone())
                .collect::<std::collections::BTreeSet<_>>()
        };
        assert!(set(&b1).is_disjoint(&set(&b2)));
        assert!(set(&b1).is_disjoint(&set(&b3)));
        assert!(set(&b2).is_disjoint(&set(&b3)));
    }

    #[test]
    fn insufficient_pairs_is_an_error() {
        let train = toy_train(&[Construction::Mvrr], 3);
        assert!(matches!(
            BatchSampler::new(&train, 8, ChaCha8Rng::seed_from_u64(4)),
            Err(TrainingError::InsufficientPairs { .. })
        ));
    }

    #[test]
    fn batches_keep_whole_pairs() {
        let train = toy_train(&[Construction::Npz], 6);
        let mut sampler = BatchSampler::new(&train, 4, ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sampler.next_batch();
        // every sampled pair contributes both conditions
        for (c, p) in &b.pairs {
            let (cond_a, cond_b) = c.condition_pair();
            assert!(b.data.lookup(p, cond_a, Some(0)).is_ok());
            assert!(b.data.lookup(p, cond_b, Some(0)).is_ok());
        }
    }
}
