//! Seeded synthetic fixtures.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{popularity_from_counts, split_dataset, Dataset, FeatureMatrix, InteractionTable, Modalities, Modality, SplitRatios};
use crate::error::{Error, Result};

/// Items with Zipf-distributed interaction counts and random unit features.
#[derive(Clone, Debug)]
pub struct ZipfItems {
    pub counts: Vec<usize>,
    pub pop: Vec<f64>,
    pub features: Tensor,
}

/// `n_j = round(scale · rank^-exponent) + 1`, ranks assigned by a random
/// permutation.
pub fn zipf_items(n: usize, exponent: f64, scale: f64, dim: usize, seed: u64) -> ZipfItems {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(&mut rng);
    let counts: Vec<usize> = ranks
        .iter()
        .map(|&r| (scale * (r as f64).powf(-exponent)).round() as usize + 1)
        .collect();
    let features = random_unit_rows(n, dim, &mut rng);
    ZipfItems {
        pop: popularity_from_counts(&counts),
        counts,
        features,
    }
}

/// Rows drawn from an isotropic Gaussian and scaled to unit length.
pub fn random_unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        data.extend(row.into_iter().map(|v| v / norm));
    }
    Tensor::matrix(n, d, data).expect("finite samples")
}

/// Users with disjoint block preferences and block-indicator features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    /// Interactions per user, drawn from the user's block.
    pub per_user: usize,
    pub noise: f64,
    pub text_dim: usize,
    pub visual_dim: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 50,
            items: 40,
            blocks: 4,
            per_user: 8,
            noise: 0.1,
            text_dim: 8,
            visual_dim: 12,
        }
    }
}

impl PlantedConfig {
    pub fn block_of_item(&self, i: usize) -> usize {
        i * self.blocks / self.items
    }

    pub fn block_of_user(&self, u: usize) -> usize {
        u % self.blocks
    }

    fn block_items(&self, b: usize) -> Vec<usize> {
        (0..self.items).filter(|&i| self.block_of_item(i) == b).collect()
    }
}

/// Interaction pairs of the planted fixture, user-major.
pub fn planted_interactions(cfg: &PlantedConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if cfg.blocks == 0 || cfg.blocks > cfg.items || cfg.users < cfg.blocks {
        return Err(Error::config(format!("cannot plant {} blocks over {} users and {} items", cfg.blocks, cfg.users, cfg.items)));
    }
    if cfg.text_dim < cfg.blocks || cfg.visual_dim < cfg.blocks {
        return Err(Error::config("feature dimensions must be at least the block count"));
    }
    let mut pairs = Vec::new();
    for u in 0..cfg.users {
        let mut pool = cfg.block_items(cfg.block_of_user(u));
        if pool.len() < cfg.per_user {
            return Err(Error::config(format!("blocks of {} items cannot hold {} interactions per user", pool.len(), cfg.per_user)));
        }
        pool.shuffle(rng);
        let mut chosen = pool[..cfg.per_user].to_vec();
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|i| (u, i)));
    }
    Ok(pairs)
}

/// Block one-hot in the leading coordinates plus Gaussian noise everywhere.
pub fn planted_features(cfg: &PlantedConfig, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, cfg.noise).expect("noise must be finite and non-negative");
    let mut data = Vec::with_capacity(cfg.items * dim);
    for i in 0..cfg.items {
        let b = cfg.block_of_item(i);
        data.extend((0..dim).map(|c| if c == b { 1.0 } else { 0.0 } + normal.sample(rng)));
    }
    Tensor::matrix(cfg.items, dim, data).expect("finite samples")
}

/// Planted dataset split 8:1:1 per user with features attached.
pub fn planted_dataset(cfg: &PlantedConfig, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = planted_interactions(cfg, &mut rng)?;
    let table = InteractionTable::from_indexed(cfg.users, cfg.items, pairs)?;
    let text = planted_features(cfg, cfg.text_dim, &mut rng);
    let visual = planted_features(cfg, cfg.visual_dim, &mut rng);
    split_dataset(&table, SplitRatios::default(), seed)?.with_features(Modalities::new(
        FeatureMatrix::new(Modality::Text, text)?,
        FeatureMatrix::new(Modality::Visual, visual)?,
    )?)
}

/// Interactions whose item counts follow the Zipf fixture, with random
/// unit features. Every user gets at least three interactions.
pub fn zipf_dataset(users: usize, items: &ZipfItems, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = items.counts.len();
    let mut pairs = Vec::new();
    for u in 0..users {
        let mut pool: Vec<usize> = (0..n).collect();
        pool.shuffle(&mut rng);
        pairs.extend(pool[..3].iter().map(|&i| (u, i)));
    }
    for (i, &c) in items.counts.iter().enumerate() {
        let mut pool: Vec<usize> = (0..users).collect();
        pool.shuffle(&mut rng);
        pairs.extend(pool[..c.min(users)].iter().map(|&u| (u, i)));
    }
    let table = InteractionTable::from_indexed(users, n, pairs)?;
    let feats = &items.features;
    let visual = random_unit_rows(n, feats.cols(), &mut rng);
    split_dataset(&table, SplitRatios::default(), seed)?.with_features(Modalities::new(
        FeatureMatrix::new(Modality::Text, feats.clone())?,
        FeatureMatrix::new(Modality::Visual, visual)?,
    )?)
}
