use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{sim, Similarity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Uniform,
    PropSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub similarity: Similarity,
    /// Candidates drawn uniformly before similarity weighting. Capped at
    /// the number of available negatives.
    pub pool_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Uniform,
            similarity: Similarity::InverseKl,
            pool_size: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == SamplerKind::PropSample && self.pool_size < 2 {
            return Err(Error::Config(format!("pool_size must be >= 2, got {}", self.pool_size)));
        }
        Ok(())
    }
}

/// The `rank`-th item (0-based) among `0..num_items` that is not in the
/// sorted `excluded` list.
fn nth_candidate(rank: u32, excluded: &[u32]) -> u32 {
    let mut item = rank;
    for &e in excluded {
        if e <= item {
            item += 1;
        } else {
            break;
        }
    }
    item
}

fn candidate_count(num_items: usize, excluded: &[u32]) -> Result<usize> {
    let n = num_items - excluded.len();
    if n == 0 {
        return Err(Error::Data("user has interacted with every item, no negative to sample".into()));
    }
    Ok(n)
}

/// Uniform draw from the items outside `train` (sorted, deduplicated).
pub fn sample_uniform<R: Rng + ?Sized>(num_items: usize, train: &[u32], rng: &mut R) -> Result<u32> {
    let n = candidate_count(num_items, train)?;
    Ok(nth_candidate(rng.random_range(0..n as u32), train))
}

/// Similarities normalized into selection probabilities.
pub fn pool_probabilities(sims: &[f64]) -> Vec<f64> {
    let total: f64 = sims.iter().sum();
    sims.iter().map(|s| s / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropDraw {
    pub item: u32,
    pub pool: Vec<u32>,
    /// Selection probability of each pool member.
    pub probabilities: Vec<f64>,
}

/// Similarity-weighted draw from a uniformly drawn candidate pool.
/// `item_phi(c)` gives candidate `c`'s property distribution.
pub fn sample_prop<R, F>(
    num_items: usize,
    train: &[u32],
    phi_pos: &[f64],
    item_phi: F,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<PropDraw>
where
    R: Rng + ?Sized,
    F: Fn(u32) -> Vec<f64>,
{
    let n = candidate_count(num_items, train)?;
    let size = cfg.pool_size.min(n);
    let mut ranks = rand::seq::index::sample(rng, n, size).into_vec();
    ranks.sort_unstable();
    let pool: Vec<u32> = ranks.into_iter().map(|r| nth_candidate(r as u32, train)).collect();
    let sims = pool
        .iter()
        .map(|&c| sim(phi_pos, &item_phi(c), cfg.similarity))
        .collect::<Result<Vec<f64>>>()?;
    let probabilities = pool_probabilities(&sims);
    let dist = WeightedIndex::new(&sims).map_err(|e| Error::Numeric(format!("pool weights: {e}")))?;
    let item = pool[dist.sample(rng)];
    Ok(PropDraw { item, pool, probabilities })
}
