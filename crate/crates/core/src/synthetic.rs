//! Seeded LETOR-like data for desk-scale runs and tests.
//!
//! Each document gets uniform `[0, 1]` features. A hidden linear scorer over
//! the first `informative_features` features plus Gaussian noise gives a
//! latent relevance; within each query the top `top_fraction` documents by
//! latent relevance get the highest grade, the next `mid_fraction` the middle
//! grade(s), everything else 0. A share of queries has no relevant document
//! at all, as in real collections.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureDataset, Grade, QueryGroup, SplitRole};
use crate::rng::{substream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_features: usize,
    pub informative_features: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    pub min_docs: usize,
    pub max_docs: usize,
    /// 2 or 4.
    pub max_grade: Grade,
    /// Standard deviation of the latent-relevance noise.
    pub noise: f64,
    pub top_fraction: f64,
    pub mid_fraction: f64,
    /// Share of queries whose documents are all grade 0.
    pub empty_query_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_features: 24,
            informative_features: 12,
            train_queries: 300,
            test_queries: 150,
            min_docs: 10,
            max_docs: 40,
            max_grade: 2,
            noise: 0.35,
            top_fraction: 0.08,
            mid_fraction: 0.2,
            empty_query_fraction: 0.05,
        }
    }
}

impl SyntheticConfig {
    /// A few dozen short queries; enough for unit tests.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            num_features: 6,
            informative_features: 4,
            train_queries: 40,
            test_queries: 20,
            min_docs: 3,
            max_docs: 12,
            ..Default::default()
        }
    }
}

fn make_query(cfg: &SyntheticConfig, id: String, truth: &[f64], rng: &mut ChaCha8Rng) -> QueryGroup {
    let n = rng.gen_range(cfg.min_docs..=cfg.max_docs);
    let nf = cfg.num_features;
    let features: Vec<f64> = (0..n * nf).map(|_| rng.gen::<f64>()).collect();
    let latent: Vec<f64> = features
        .chunks_exact(nf)
        .map(|row| {
            row.iter().zip(truth).map(|(x, w)| x * w).sum::<f64>() + cfg.noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let mut grades: Vec<Grade> = vec![0; n];
    if rng.gen::<f64>() >= cfg.empty_query_fraction {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]));
        let n_top = ((n as f64 * cfg.top_fraction).round() as usize).max(1);
        let n_mid = (n as f64 * cfg.mid_fraction).round() as usize;
        for (rank, &d) in order.iter().enumerate() {
            grades[d] = if rank < n_top {
                cfg.max_grade
            } else if rank < n_top + n_mid {
                // Spread the middle band over grades 1..max_grade-1.
                let levels = (cfg.max_grade - 1).max(1) as usize;
                let band = (rank - n_top) * levels / n_mid.max(1);
                (levels - band.min(levels - 1)) as Grade
            } else {
                0
            };
        }
    }
    QueryGroup::new(id, nf, features, grades).expect("generator produces well-formed groups")
}

/// Generates a `(train, test)` pair drawn from the same hidden scorer.
pub fn generate(cfg: &SyntheticConfig) -> (FeatureDataset, FeatureDataset) {
    assert!(cfg.informative_features <= cfg.num_features && cfg.min_docs >= 1 && cfg.min_docs <= cfg.max_docs);
    assert!(cfg.max_grade == 2 || cfg.max_grade == 4);
    let mut rng = substream(cfg.seed, Stream::Synthetic, &[0]);
    let truth: Vec<f64> = (0..cfg.num_features)
        .map(|f| {
            if f < cfg.informative_features {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();

    let split = |prefix: &str, count: usize, role: SplitRole, key: u64| {
        let mut rng = substream(cfg.seed, Stream::Synthetic, &[key]);
        let queries = (0..count)
            .map(|i| make_query(cfg, format!("{prefix}{i}"), &truth, &mut rng))
            .collect();
        FeatureDataset::new(queries, cfg.num_features, cfg.max_grade, role).expect("unique synthetic ids")
    };
    (
        split("q", cfg.train_queries, SplitRole::Train, 1),
        split("t", cfg.test_queries, SplitRole::Test, 2),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = SyntheticConfig::default();
        let (a, at) = generate(&cfg);
        let (b, _) = generate(&cfg);
        assert_eq!(a, b);
        assert_eq!((a.len(), at.len()), (300, 150));
        assert_eq!(a.num_features(), 24);
        assert!(a.queries().iter().all(|q| (10..=40).contains(&q.num_docs())));
        assert!(a.queries().iter().any(|q| q.max_grade() == 0));
        assert!(a.queries().iter().any(|q| q.grades().contains(&1)));
        let other = generate(&SyntheticConfig { seed: 1, ..cfg });
        assert_ne!(a, other.0);
    }

    #[test]
    fn five_level_grades() {
        let (a, _) = generate(&SyntheticConfig {
            max_grade: 4,
            max_docs: 60,
            min_docs: 40,
            ..SyntheticConfig::small(3)
        });
        let mut seen = [false; 5];
        for q in a.queries() {
            for &g in q.grades() {
                seen[g as usize] = true;
            }
        }
        assert_eq!(seen, [true; 5]);
    }
}
