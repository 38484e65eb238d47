use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, InteractionTable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Train/valid/test proportions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

/// How many of a user's `n` edges go to (train, valid, test): floor
/// allocation for valid and test, at least one each, remainder to train.
pub fn allocation(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    let take = |r: f64| ((n as f64 * r + 1e-9).floor() as usize).max(1);
    let (valid, test) = (take(ratios.valid), take(ratios.test));
    (n - valid - test, valid, test)
}

/// Per-user seeded split. Each user's edges are shuffled with one shared
/// generator (users visited in index order); the first slots go to valid,
/// the next to test, the rest to train.
pub fn split_dataset(table: &InteractionTable, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let sum = ratios.train + ratios.valid + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train <= 0.0 || ratios.valid < 0.0 || ratios.test < 0.0 {
        return Err(Error::config(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); table.user_count()];
    for (e, &(u, _)) in table.edges().iter().enumerate() {
        by_user[u].push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Train; table.edges().len()];
    for (u, edges) in by_user.iter_mut().enumerate() {
        if edges.len() < 3 {
            return Err(Error::Split(format!(
                "user {} (index {u}) has {} interactions, at least 3 are needed",
                table.user_ids()[u],
                edges.len()
            )));
        }
        edges.sort_by_key(|&e| table.edges()[e].1);
        edges.shuffle(&mut rng);
        let (_, valid, test) = allocation(edges.len(), ratios);
        for (slot, &e) in edges.iter().enumerate() {
            splits[e] = if slot < valid {
                Split::Valid
            } else if slot < valid + test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Dataset::new(table.clone(), splits)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn table_with_degrees(degrees: &[usize]) -> InteractionTable {
        let items = *degrees.iter().max().unwrap();
        InteractionTable::from_indexed(
            degrees.len(),
            items,
            degrees.iter().enumerate().flat_map(|(u, &d)| (0..d).map(move |i| (u, i))),
        )
        .unwrap()
    }

    fn counts(ds: &Dataset, u: usize) -> (usize, usize, usize) {
        (
            ds.train_items(u).len(),
            ds.valid_items(u).len(),
            ds.test_items(u).len(),
        )
    }

    #[test]
    fn ten_edges_split_exactly() {
        let ds = split_dataset(&table_with_degrees(&[10]), SplitRatios::default(), 1).unwrap();
        assert_eq!(counts(&ds, 0), (8, 1, 1));
    }

    #[test]
    fn small_user_keeps_one_valid_and_test() {
        assert_eq!(allocation(5, SplitRatios::default()), (3, 1, 1));
        let ds = split_dataset(&table_with_degrees(&[5, 3, 25]), SplitRatios::default(), 4).unwrap();
        assert_eq!(counts(&ds, 0), (3, 1, 1));
        assert_eq!(counts(&ds, 1), (1, 1, 1));
        assert_eq!(counts(&ds, 2), (21, 2, 2));
    }

    #[test]
    fn too_few_edges_names_user() {
        let t = InteractionTable::from_pairs([("ann", "a"), ("ann", "b"), ("bob", "a"), ("bob", "b"), ("bob", "c")]);
        let err = split_dataset(&t, SplitRatios::default(), 0).unwrap_err();
        assert!(matches!(&err, Error::Split(m) if m.contains("ann")), "{err}");
    }

    #[test]
    fn same_seed_same_assignment() {
        let t = table_with_degrees(&[12, 7, 30, 9]);
        let a = split_dataset(&t, SplitRatios::default(), 42).unwrap();
        let b = split_dataset(&t, SplitRatios::default(), 42).unwrap();
        assert_eq!(a.splits(), b.splits());
        let c = split_dataset(&t, SplitRatios::default(), 43).unwrap();
        assert_ne!(a.splits(), c.splits());
    }

    proptest! {
        #[test]
        fn split_partitions_edges(degrees in prop::collection::vec(3usize..40, 1..12), seed in 0u64..1000) {
            let t = table_with_degrees(&degrees);
            let ds = split_dataset(&t, SplitRatios::default(), seed).unwrap();
            let mut total = 0;
            for u in 0..t.user_count() {
                let (tr, va, te) = counts(&ds, u);
                prop_assert!(tr >= 1);
                prop_assert_eq!(tr + va + te, degrees[u]);
                let mut all: Vec<usize> = ds.train_items(u).iter().chain(ds.valid_items(u)).chain(ds.test_items(u)).copied().collect();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), degrees[u]);
                total += tr;
            }
            prop_assert_eq!(ds.item_pop().iter().sum::<usize>(), total);
        }
    }
}
