use std::collections::HashSet;

use rand::Rng;

use super::dataset::InteractionDataset;
use crate::error::{Error, Result};

/// `n` distinct items drawn uniformly from `0..item_count` minus `exclude`.
pub fn sample_excluding<R: Rng>(
    item_count: usize,
    exclude: &HashSet<usize>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let owned = exclude.iter().filter(|&&i| i < item_count).count();
    let pool = item_count - owned;
    if pool < n {
        return Err(Error::Data(format!(
            "only {pool} candidate negatives available, {n} requested"
        )));
    }
    if 4 * n <= pool {
        // Rejection sampling; the pool is large relative to n.
        let mut chosen = Vec::with_capacity(n);
        let mut seen = HashSet::with_capacity(n);
        while chosen.len() < n {
            let i = rng.random_range(0..item_count);
            if !exclude.contains(&i) && seen.insert(i) {
                chosen.push(i);
            }
        }
        Ok(chosen)
    } else {
        let candidates: Vec<usize> = (0..item_count).filter(|i| !exclude.contains(i)).collect();
        Ok(rand::seq::index::sample(rng, candidates.len(), n)
            .into_iter()
            .map(|k| candidates[k])
            .collect())
    }
}

/// Negatives for `user`: distinct items the user never interacted with.
pub fn sample_negatives<R: Rng>(
    dataset: &InteractionDataset,
    user: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    sample_excluding(dataset.item_count(), &dataset.positive_set(user), n, rng)
}

/// With probability `p_cut`, keeps the first `L` events for `L` uniform in
/// `[2, len]`; otherwise returns the whole slice.
pub fn random_sequence_cut<'a, T, R: Rng>(seq: &'a [T], rng: &mut R, p_cut: f64) -> &'a [T] {
    if seq.len() < 2 || p_cut <= 0.0 {
        return seq;
    }
    if rng.random::<f64>() < p_cut {
        let len = rng.random_range(2..=seq.len());
        &seq[..len]
    } else {
        seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn only_option_set() {
        let exclude: HashSet<usize> = [0, 1, 2].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let mut s = sample_excluding(5, &exclude, 2, &mut rng).unwrap();
            s.sort();
            assert_eq!(s, vec![3, 4]);
        }
    }

    #[test]
    fn insufficient_pool() {
        let exclude: HashSet<usize> = [0, 1, 2].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_excluding(5, &exclude, 3, &mut rng), Err(Error::Data(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let exclude: HashSet<usize> = (0..10).collect();
        let a = sample_excluding(1000, &exclude, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_excluding(1000, &exclude, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_over_pool() {
        // Each of the 40 free items should be picked with probability n / 40.
        let exclude: HashSet<usize> = (0..10).collect();
        let draws = 100_000;
        let n = 5;
        for (item_count, label) in [(50usize, "rejection"), (14, "enumeration")] {
            let pool = item_count - 10;
            let n = n.min(pool);
            let mut counts = vec![0usize; item_count];
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..draws {
                for i in sample_excluding(item_count, &exclude, n, &mut rng).unwrap() {
                    counts[i] += 1;
                }
            }
            let p = n as f64 / pool as f64;
            let mean = draws as f64 * p;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            for i in 0..item_count {
                if i < 10 {
                    assert_eq!(counts[i], 0);
                } else {
                    assert!(
                        (counts[i] as f64 - mean).abs() < 3.0 * sd + 1e-9,
                        "{label}: item {i} count {} vs {mean}",
                        counts[i]
                    );
                }
            }
        }
    }

    #[test]
    fn cut_boundaries() {
        let s: Vec<u32> = (0..10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(random_sequence_cut(&s, &mut rng, 0.0), &s[..]);
        assert_eq!(random_sequence_cut(&s[..2], &mut rng, 1.0), &s[..2]);
    }

    #[test]
    fn cut_lengths_uniform() {
        let s: Vec<u32> = (0..10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trials = 10_000;
        let mut counts = [0usize; 11];
        for _ in 0..trials {
            counts[random_sequence_cut(&s, &mut rng, 1.0).len()] += 1;
        }
        let p = 1.0 / 9.0;
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(counts[0] + counts[1], 0);
        for len in 2..=10 {
            assert!((counts[len] as f64 - mean).abs() < 3.0 * sd, "len {len}: {}", counts[len]);
        }
    }
}
