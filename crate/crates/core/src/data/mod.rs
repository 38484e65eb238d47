//! Interaction ingest, k-core filtering, seeded splits and popularity.

mod features;
mod interactions;
mod kcore;
mod split;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use features::{load_features, read_features, write_features, FeatureMatrix, Modalities, Modality};
pub(crate) use features::fnv1a;
pub use interactions::{load_interactions, read_index_map, write_index_map, InteractionTable};
pub use kcore::k_core_filter;
pub use split::{allocation, split_dataset, Split, SplitRatios};

use crate::error::{Error, Result};

/// Interactions with a split assignment per edge, per-item training counts
/// and (optionally attached) modality features.
#[derive(Clone, Debug)]
pub struct Dataset {
    interactions: InteractionTable,
    splits: Vec<Split>,
    item_pop: Vec<usize>,
    train_by_user: Vec<Vec<usize>>,
    valid_by_user: Vec<Vec<usize>>,
    test_by_user: Vec<Vec<usize>>,
    features: Option<Modalities>,
}

impl Dataset {
    pub fn new(interactions: InteractionTable, splits: Vec<Split>) -> Result<Self> {
        if splits.len() != interactions.edges().len() {
            return Err(Error::shape(format!(
                "{} split labels for {} edges",
                splits.len(),
                interactions.edges().len()
            )));
        }
        let nu = interactions.user_count();
        let mut item_pop = vec![0; interactions.item_count()];
        let mut train_by_user = vec![Vec::new(); nu];
        let mut valid_by_user = vec![Vec::new(); nu];
        let mut test_by_user = vec![Vec::new(); nu];
        for (&(u, i), &s) in interactions.edges().iter().zip(&splits) {
            match s {
                Split::Train => {
                    item_pop[i] += 1;
                    train_by_user[u].push(i);
                }
                Split::Valid => valid_by_user[u].push(i),
                Split::Test => test_by_user[u].push(i),
            }
        }
        for lists in [&mut train_by_user, &mut valid_by_user, &mut test_by_user] {
            lists.iter_mut().for_each(|l| l.sort_unstable());
        }
        Ok(Dataset {
            interactions,
            splits,
            item_pop,
            train_by_user,
            valid_by_user,
            test_by_user,
            features: None,
        })
    }

    /// Attaches item features; row counts must equal the item count.
    pub fn with_features(mut self, features: Modalities) -> Result<Self> {
        if features.text.rows() != self.item_count() {
            return Err(Error::shape(format!(
                "features have {} rows for {} items",
                features.text.rows(),
                self.item_count()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn features(&self) -> Result<&Modalities> {
        self.features
            .as_ref()
            .ok_or_else(|| Error::contract("dataset has no modality features attached"))
    }

    pub fn interactions(&self) -> &InteractionTable {
        &self.interactions
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn user_count(&self) -> usize {
        self.interactions.user_count()
    }

    pub fn item_count(&self) -> usize {
        self.interactions.item_count()
    }

    pub fn node_count(&self) -> usize {
        self.user_count() + self.item_count()
    }

    /// Training-interaction count per item.
    pub fn item_pop(&self) -> &[usize] {
        &self.item_pop
    }

    /// Sorted training items of user `u`.
    pub fn train_items(&self, u: usize) -> &[usize] {
        &self.train_by_user[u]
    }

    pub fn valid_items(&self, u: usize) -> &[usize] {
        &self.valid_by_user[u]
    }

    pub fn test_items(&self, u: usize) -> &[usize] {
        &self.test_by_user[u]
    }

    pub fn items_in(&self, split: Split, u: usize) -> &[usize] {
        match split {
            Split::Train => self.train_items(u),
            Split::Valid => self.valid_items(u),
            Split::Test => self.test_items(u),
        }
    }

    /// Training `(user, item)` pairs in user-major, item-ascending order.
    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.train_by_user
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect()
    }

    pub fn train_edge_count(&self) -> usize {
        self.item_pop.iter().sum()
    }

    /// Writes `user_index<TAB>item_index<TAB>split` rows in edge order.
    pub fn write_split_file(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (&(u, i), s) in self.interactions.edges().iter().zip(&self.splits) {
            writeln!(w, "{u}\t{i}\t{}", s.as_str()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a split file written by [`write_split_file`](Self::write_split_file).
    pub fn read_split_file(path: &Path, user_ids: Vec<String>, item_ids: Vec<String>) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        let mut splits = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = |m: &str| Error::format(path, Some(n + 1), m.to_string());
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected user, item and split columns"));
            }
            let u: usize = cols[0].parse().map_err(|_| bad("bad user index"))?;
            let i: usize = cols[1].parse().map_err(|_| bad("bad item index"))?;
            if u >= user_ids.len() || i >= item_ids.len() {
                return Err(bad("index outside the index maps"));
            }
            edges.push((u, i));
            splits.push(Split::parse(cols[2]).ok_or_else(|| bad("unknown split label"))?);
        }
        Dataset::new(InteractionTable::from_parts(user_ids, item_ids, edges), splits)
    }
}

/// `ln(1 + n_j)` from training counts.
pub fn compute_popularity(dataset: &Dataset) -> Vec<f64> {
    popularity_from_counts(dataset.item_pop())
}

pub fn popularity_from_counts(counts: &[usize]) -> Vec<f64> {
    counts.iter().map(|&n| (n as f64).ln_1p()).collect()
}
