//! One-shot episodes: one support sample per novel class, the rest are queries.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    /// `(sample index, label)`, one per class, ordered by label.
    pub support: Vec<(usize, usize)>,
    /// Sample indices in dataset order.
    pub query: Vec<usize>,
    pub n_way: usize,
    pub seed: u64,
}

impl Episode {
    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|&(_, l)| l).collect()
    }
}

/// Draws the support uniformly per class from a stream seeded only by `seed`.
pub fn sample_episode(labels: &[usize], seed: u64) -> Result<Episode> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(Error::Episode("no novel samples".into()));
    }
    if let Some((c, v)) = by_class.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Episode(format!("class {c} has {} sample(s); at least 2 are needed", v.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support: Vec<(usize, usize)> = by_class
        .iter()
        .map(|(&c, idx)| (idx[rng.random_range(0..idx.len())], c))
        .collect();
    let chosen: std::collections::BTreeSet<usize> = support.iter().map(|&(i, _)| i).collect();
    let query = (0..labels.len()).filter(|i| !chosen.contains(i)).collect();
    Ok(Episode {
        n_way: support.len(),
        support,
        query,
        seed,
    })
}
