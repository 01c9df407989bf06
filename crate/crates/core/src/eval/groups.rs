use serde::{Deserialize, Serialize};

use crate::encoder::rank_by_frequency;
use crate::error::{Error, Result};

/// Items split into groups of roughly equal occurrence mass; group 0 holds
/// the most frequent items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGroups {
    pub n_groups: usize,
    pub group_of: Vec<usize>,
    pub item_counts: Vec<usize>,
    pub masses: Vec<u64>,
}

/// Sweeps items by descending frequency (ties by ascending id); an item
/// joins group `floor(mass_before * n_groups / total)`.
pub fn frequency_groups(freq: &[u64], n_groups: usize) -> Result<FrequencyGroups> {
    if n_groups == 0 || freq.len() < n_groups {
        return Err(Error::Data(format!(
            "{} items cannot form {n_groups} frequency groups",
            freq.len()
        )));
    }
    let total: u64 = freq.iter().sum();
    let mut group_of = vec![0; freq.len()];
    let mut item_counts = vec![0; n_groups];
    let mut masses = vec![0; n_groups];
    let mut before: u64 = 0;
    for item in rank_by_frequency(freq) {
        let g = if total == 0 {
            0
        } else {
            ((before as u128 * n_groups as u128 / total as u128) as usize).min(n_groups - 1)
        };
        group_of[item] = g;
        item_counts[g] += 1;
        masses[g] += freq[item];
        before += freq[item];
    }
    Ok(FrequencyGroups {
        n_groups,
        group_of,
        item_counts,
        masses,
    })
}
