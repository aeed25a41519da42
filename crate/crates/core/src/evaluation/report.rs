//! Serialized evaluation records and fold aggregation.
//!
//! Per-fold records carry one number each; aggregation is the arithmetic
//! mean across folds with the standard error of the mean (sample standard
//! deviation over the square root of the fold count, absent for a single
//! fold).

use serde::{Deserialize, Serialize};

/// One (model, fold, construction, ROI) alignment record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GpFoldRecord {
    pub model: String,
    pub fold: usize,
    pub construction: String,
    pub roi: u8,
    pub est_delta_ms: f64,
    pub human_delta_ms: f64,
    pub capture_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GpAggregateRecord {
    pub model: String,
    pub construction: String,
    pub roi: u8,
    pub n_folds: usize,
    pub est_delta_ms_mean: f64,
    pub est_delta_ms_se: Option<f64>,
    pub human_delta_ms_mean: f64,
    /// Ratio of mean estimated to mean observed delta.
    pub capture_ratio: Option<f64>,
}

/// Corpus-level record: log-likelihood improvement and perplexity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusRecord {
    pub model: String,
    pub fold: Option<usize>,
    pub corpus: String,
    pub delta_llh: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusAggregateRecord {
    pub model: String,
    pub corpus: String,
    pub n_folds: usize,
    pub delta_llh_mean: f64,
    pub delta_llh_se: Option<f64>,
    pub perplexity_mean: f64,
    pub perplexity_se: Option<f64>,
}

/// Minimal-pair benchmark accuracy record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchmarkRecord {
    pub model: String,
    pub fold: Option<usize>,
    pub benchmark: String,
    pub accuracy: f64,
    pub n_pairs: usize,
}

/// One transfer-matrix cell (ROI 1).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransferRecord {
    pub model: String,
    pub train_construction: String,
    pub eval_construction: String,
    pub roi: u8,
    pub est_delta_ms: f64,
}

/// Arithmetic mean; the caller guarantees a non-empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean: sample SD / sqrt(n). `None` below two values.
pub fn standard_error(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    Some((var / values.len() as f64).sqrt())
}

/// Aggregates per-fold alignment records by (model, construction, roi).
pub fn aggregate_gp(records: &[GpFoldRecord]) -> Vec<GpAggregateRecord> {
    let mut keys: Vec<(String, String, u8)> = Vec::new();
    for r in records {
        let key = (r.model.clone(), r.construction.clone(), r.roi);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort();
    keys.into_iter()
        .map(|(model, construction, roi)| {
            let est: Vec<f64> = records
                .iter()
                .filter(|r| r.model == model && r.construction == construction && r.roi == roi)
                .map(|r| r.est_delta_ms)
                .collect();
            let human: Vec<f64> = records
                .iter()
                .filter(|r| r.model == model && r.construction == construction && r.roi == roi)
                .map(|r| r.human_delta_ms)
                .collect();
            let est_mean = mean(&est);
            let human_mean = mean(&human);
            GpAggregateRecord {
                model,
                construction,
                roi,
                n_folds: est.len(),
                est_delta_ms_mean: est_mean,
                est_delta_ms_se: standard_error(&est),
                human_delta_ms_mean: human_mean,
                capture_ratio: if human_mean != 0.0 {
                    Some(est_mean / human_mean)
                } else {
                    None
                },
            }
        })
        .collect()
}

/// Aggregates corpus records by (model, corpus).
pub fn aggregate_corpus(records: &[CorpusRecord]) -> Vec<CorpusAggregateRecord> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let key = (r.model.clone(), r.corpus.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort();
    keys.into_iter()
        .map(|(model, corpus)| {
            let llh: Vec<f64> = records
                .iter()
                .filter(|r| r.model == model && r.corpus == corpus)
                .map(|r| r.delta_llh)
                .collect();
            let ppl: Vec<f64> = records
                .iter()
                .filter(|r| r.model == model && r.corpus == corpus)
                .map(|r| r.perplexity)
                .collect();
            CorpusAggregateRecord {
                model,
                corpus,
                n_folds: llh.len(),
                delta_llh_mean: mean(&llh),
                delta_llh_se: standard_error(&llh),
                perplexity_mean: mean(&ppl),
                perplexity_se: standard_error(&ppl),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_mean_is_arithmetic_mean_of_fold_values() {
        let records: Vec<GpFoldRecord> = (0..5)
            .map(|fold| GpFoldRecord {
                model: "m".into(),
                fold,
                construction: "MVRR".into(),
                roi: 1,
                est_delta_ms: 10.0 + fold as f64,
                human_delta_ms: 80.0,
                capture_ratio: Some((10.0 + fold as f64) / 80.0),
            })
            .collect();
        let agg = aggregate_gp(&records);
        assert_eq!(agg.len(), 1);
        let values: Vec<f64> = records.iter().map(|r| r.est_delta_ms).collect();
        // exact equality with the independently recomputed arithmetic mean
        assert_eq!(agg[0].est_delta_ms_mean, values.iter().sum::<f64>() / 5.0);
        assert_eq!(agg[0].n_folds, 5);
        assert_eq!(agg[0].human_delta_ms_mean, 80.0);
    }

    #[test]
    fn single_fold_has_no_standard_error() {
        assert_eq!(standard_error(&[1.0]), None);
        let se = standard_error(&[1.0, 3.0]).unwrap();
        // sample SD = sqrt(2), SE = sqrt(2)/sqrt(2) = 1
        assert!((se - 1.0).abs() < 1e-12);
    }
}
