//! Synthetic long-tail corpora with cluster-structured attributes.
//!
//! Items belong to latent clusters and carry `centroid + noise` attribute
//! vectors. Popularity follows a Zipf law over a random item ranking. Each
//! user prefers one to three clusters and draws items from them in
//! proportion to popularity, so attributes predict preferences.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{AttributeKind, Event, InteractionDataset};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub user_count: usize,
    pub item_count: usize,
    pub zipf_exponent: f64,
    pub attribute_dim: usize,
    pub cluster_count: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Standard deviation of attribute noise around the cluster centroid.
    pub attribute_noise: f64,
    pub max_preferred_clusters: usize,
    /// Timestamp of the earliest possible first event.
    pub start_timestamp: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            user_count: 500,
            item_count: 1000,
            zipf_exponent: 1.2,
            attribute_dim: 16,
            cluster_count: 20,
            min_interactions: 5,
            max_interactions: 20,
            attribute_noise: 0.3,
            max_preferred_clusters: 3,
            start_timestamp: 1_500_000_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_count == 0 || self.item_count < self.cluster_count {
            return Err(Error::Config(format!(
                "item_count ({}) must be at least cluster_count ({}) > 0",
                self.item_count, self.cluster_count
            )));
        }
        if self.user_count == 0 || self.attribute_dim == 0 {
            return Err(Error::Config("user_count and attribute_dim must be positive".into()));
        }
        if self.min_interactions < 4 || self.max_interactions < self.min_interactions {
            return Err(Error::Config(
                "interaction range must satisfy 4 <= min_interactions <= max_interactions".into(),
            ));
        }
        if !(self.zipf_exponent >= 0.0) || self.max_preferred_clusters == 0 {
            return Err(Error::Config(
                "zipf_exponent must be >= 0 and max_preferred_clusters > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub item_cluster: Vec<usize>,
    /// Zipf weight of each item, `(rank + 1)^-s`.
    pub popularity: Vec<f64>,
    pub user_clusters: Vec<Vec<usize>>,
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<InteractionDataset> {
    generate_with_truth(config, seed).map(|(d, _)| d)
}

pub fn generate_with_truth(config: &SynthConfig, seed: u64) -> Result<(InteractionDataset, SynthTruth)> {
    config.validate()?;
    let mut rng = stream(seed, &[0x5F17]);
    let n_items = config.item_count;
    let k = config.cluster_count;

    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..config.attribute_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut item_cluster: Vec<usize> = (0..n_items).map(|i| i % k).collect();
    item_cluster.shuffle(&mut rng);
    let mut attrs = Tensor::zeros(n_items, config.attribute_dim);
    for (i, &c) in item_cluster.iter().enumerate() {
        for (a, &mu) in attrs.row_mut(i).iter_mut().zip(&centroids[c]) {
            let z: f64 = rng.sample(StandardNormal);
            *a = mu + config.attribute_noise * z;
        }
    }

    let mut ranking: Vec<usize> = (0..n_items).collect();
    ranking.shuffle(&mut rng);
    let mut popularity = vec![0.0; n_items];
    for (rank, &item) in ranking.iter().enumerate() {
        popularity[item] = ((rank + 1) as f64).powf(-config.zipf_exponent);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in item_cluster.iter().enumerate() {
        members[c].push(i);
    }

    let mut sequences = Vec::with_capacity(config.user_count);
    let mut user_clusters = Vec::with_capacity(config.user_count);
    let max_pref = config.max_preferred_clusters.min(k);
    for _ in 0..config.user_count {
        let n_pref = rng.random_range(1..=max_pref);
        let mut prefs: Vec<usize> = rand::seq::index::sample(&mut rng, k, n_pref).into_vec();
        prefs.sort_unstable();
        let pool: Vec<usize> = prefs.iter().flat_map(|&c| members[c].iter().copied()).collect();
        let weights: Vec<f64> = pool.iter().map(|&i| popularity[i]).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        let len = rng.random_range(config.min_interactions..=config.max_interactions);
        let mut t = config.start_timestamp + rng.random_range(0..63_072_000);
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            seq.push(Event {
                item: pool[dist.sample(&mut rng)],
                timestamp: t,
            });
            t += rng.random_range(3_600..1_728_000);
        }
        sequences.push(seq);
        user_clusters.push(prefs);
    }
    let ds = InteractionDataset::from_indexed(sequences, attrs, AttributeKind::Dense)?;
    Ok((
        ds,
        SynthTruth {
            item_cluster,
            popularity,
            user_clusters,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_config() {
        let c = SynthConfig {
            item_count: 5,
            cluster_count: 10,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&c, 1), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_bit_identical() {
        let c = SynthConfig {
            user_count: 50,
            item_count: 100,
            ..SynthConfig::default()
        };
        assert_eq!(generate_synthetic(&c, 3).unwrap(), generate_synthetic(&c, 3).unwrap());
        assert_ne!(generate_synthetic(&c, 3).unwrap(), generate_synthetic(&c, 4).unwrap());
    }

    #[test]
    fn zero_exponent_is_uniform_within_clusters() {
        let c = SynthConfig {
            user_count: 10,
            item_count: 50,
            zipf_exponent: 0.0,
            ..SynthConfig::default()
        };
        let (_, truth) = generate_with_truth(&c, 2).unwrap();
        assert!(truth.popularity.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn users_stay_in_preferred_clusters() {
        let c = SynthConfig {
            user_count: 40,
            item_count: 200,
            ..SynthConfig::default()
        };
        let (ds, truth) = generate_with_truth(&c, 8).unwrap();
        for (u, s) in ds.sequences.iter().enumerate() {
            for e in s {
                assert!(truth.user_clusters[u].contains(&truth.item_cluster[e.item]));
            }
        }
    }

    #[test]
    fn head_items_dominate_under_zipf() {
        let c = SynthConfig {
            user_count: 3000,
            item_count: 10_000,
            zipf_exponent: 1.2,
            cluster_count: 20,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&c, 5).unwrap();
        let mut counts = vec![0usize; ds.item_count()];
        for e in ds.sequences.iter().flatten() {
            counts[e.item] += 1;
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let total: usize = counts.iter().sum();
        let head: usize = counts[..ds.item_count() / 100].iter().sum();
        assert!(head as f64 / total as f64 > 0.2, "head share {}", head as f64 / total as f64);
    }
}
