//! Full-ranking Top-K evaluation, sparsity groups and graph bias
//! diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::top_k;
use crate::model::{score, Embeddings};
use crate::par;
use crate::sparse::SparseMatrix;
use crate::tensorfile::{write_tensors, EMBEDDING_MAGIC};

pub const DEFAULT_KS: [usize; 2] = [10, 20];
pub const DEFAULT_TAIL_QUANTILE: f64 = 0.8;

/// Inner-product scores of one user against every item row.
pub fn item_scores(e_u: &[f64], items: &Tensor) -> Vec<f64> {
    (0..items.rows()).map(|i| score(e_u, items.row(i))).collect()
}

/// The best `k` items by score, excluded items removed, ties to the lower
/// index.
pub fn top_items(e_u: &[f64], items: &Tensor, exclude: &[usize], k: usize) -> Vec<usize> {
    let mut s = item_scores(e_u, items);
    for &i in exclude {
        s[i] = f64::NEG_INFINITY;
    }
    top_k(&s, k)
}

/// Every non-excluded item in descending score order.
pub fn rank_items(e_u: &[f64], items: &Tensor, exclude: &[usize]) -> Vec<usize> {
    top_items(e_u, items, exclude, items.rows())
}

/// `None` when `relevant` is empty.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let gain = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(pos, _)| gain(pos + 1))
        .sum();
    let idcg: f64 = (1..=k.min(relevant.len())).map(gain).sum();
    Some(dcg / idcg)
}

/// What counts as relevant, and what is excluded from the candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Validation items; training items excluded.
    Valid,
    /// Test items; training items excluded.
    Test,
    /// Training items themselves, nothing excluded.
    Train,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Valid => "valid",
            Target::Test => "test",
            Target::Train => "train",
        }
    }

    pub fn parse(s: &str) -> Option<Target> {
        match s {
            "valid" => Some(Target::Valid),
            "test" => Some(Target::Test),
            "train" => Some(Target::Train),
            _ => None,
        }
    }

    fn relevant(self, ds: &Dataset, u: usize) -> &[usize] {
        match self {
            Target::Valid => ds.items_in(Split::Valid, u),
            Target::Test => ds.items_in(Split::Test, u),
            Target::Train => ds.train_items(u),
        }
    }

    fn exclude(self, ds: &Dataset, u: usize) -> &[usize] {
        match self {
            Target::Train => &[],
            _ => ds.train_items(u),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    /// Aligned with the evaluated `ks`.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

/// Metrics for every user with at least one relevant item, in user order.
pub fn per_user_metrics(emb: &Embeddings, ds: &Dataset, target: Target, ks: &[usize]) -> Result<Vec<UserMetrics>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::config(format!("cutoffs must be positive, got {ks:?}")));
    }
    if emb.user_count != ds.user_count() || emb.final_.rows() != ds.node_count() {
        return Err(Error::shape(format!(
            "embeddings cover {} nodes ({} users), dataset has {} ({} users)",
            emb.final_.rows(),
            emb.user_count,
            ds.node_count(),
            ds.user_count()
        )));
    }
    let items = emb.items();
    let kmax = *ks.iter().max().unwrap();
    let per_user = par::map_range(ds.user_count(), |u| {
        let relevant = target.relevant(ds, u);
        if relevant.is_empty() {
            return None;
        }
        let ranked = top_items(emb.user(u), &items, target.exclude(ds, u), kmax);
        Some(UserMetrics {
            user: u,
            recall: ks.iter().map(|&k| recall_at_k(&ranked, relevant, k).unwrap()).collect(),
            ndcg: ks.iter().map(|&k| ndcg_at_k(&ranked, relevant, k).unwrap()).collect(),
        })
    });
    Ok(per_user.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub users: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

impl RankMetrics {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.get(&k).copied()
    }
}

/// Fixed-order means over users.
pub fn aggregate(ks: &[usize], users: &[&UserMetrics]) -> RankMetrics {
    let n = users.len() as f64;
    let mean = |f: &dyn Fn(&UserMetrics) -> f64| users.iter().map(|m| f(m)).sum::<f64>() / n;
    RankMetrics {
        users: users.len(),
        recall: ks.iter().enumerate().map(|(t, &k)| (k, mean(&|m| m.recall[t]))).collect(),
        ndcg: ks.iter().enumerate().map(|(t, &k)| (k, mean(&|m| m.ndcg[t]))).collect(),
    }
}

/// Mean Recall@K and NDCG@K over users with a nonempty target set.
pub fn evaluate(emb: &Embeddings, ds: &Dataset, target: Target, ks: &[usize]) -> Result<RankMetrics> {
    let per_user = per_user_metrics(emb, ds, target, ks)?;
    if per_user.is_empty() {
        return Err(Error::EmptyData(format!("no user has {} interactions", target.as_str())));
    }
    Ok(aggregate(ks, &per_user.iter().collect::<Vec<_>>()))
}

/// Bucket of every user by training-edge count; a count equal to a
/// boundary falls in the lower bucket.
pub fn sparsity_groups(ds: &Dataset, boundaries: &[usize]) -> Result<Vec<usize>> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!("sparsity boundaries must be strictly ascending, got {boundaries:?}")));
    }
    Ok((0..ds.user_count())
        .map(|u| {
            let n = ds.train_items(u).len();
            boundaries.partition_point(|&b| b < n)
        })
        .collect())
}

/// Human-readable range of training-edge counts for a bucket.
pub fn group_label(boundaries: &[usize], bucket: usize) -> String {
    let lo = if bucket == 0 { 0 } else { boundaries[bucket - 1] + 1 };
    match boundaries.get(bucket) {
        Some(hi) => format!("{lo}-{hi}"),
        None => format!("{lo}+"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub bucket: usize,
    pub label: String,
    /// Users in the bucket, whether or not they have target items.
    pub population: usize,
    pub metrics: RankMetrics,
}

/// Metrics per sparsity bucket; buckets without evaluable users are left
/// out.
pub fn evaluate_per_group(emb: &Embeddings, ds: &Dataset, target: Target, ks: &[usize], boundaries: &[usize]) -> Result<Vec<GroupMetrics>> {
    let groups = sparsity_groups(ds, boundaries)?;
    let per_user = per_user_metrics(emb, ds, target, ks)?;
    let mut out = Vec::new();
    for bucket in 0..=boundaries.len() {
        let members: Vec<&UserMetrics> = per_user.iter().filter(|m| groups[m.user] == bucket).collect();
        if members.is_empty() {
            continue;
        }
        out.push(GroupMetrics {
            bucket,
            label: group_label(boundaries, bucket),
            population: groups.iter().filter(|&&g| g == bucket).count(),
            metrics: aggregate(ks, &members),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    pub avg_pop: f64,
    pub tail_ratio: f64,
    pub edges: usize,
}

/// Interaction count at the `q` quantile; items at or below it are tail.
pub fn tail_threshold(counts: &[usize], q: f64) -> Result<usize> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("tail quantile must lie in (0, 1), got {q}")));
    }
    if counts.is_empty() {
        return Err(Error::EmptyData("no items to take a tail threshold over".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let idx = ((q * counts.len() as f64).ceil() as usize).clamp(1, counts.len()) - 1;
    Ok(sorted[idx])
}

/// Mean `ln(1 + n_j)` over stored edge endpoints `j`, and the fraction of
/// endpoints that are tail items.
pub fn graph_bias_stats(graph: &SparseMatrix, counts: &[usize], tail_quantile: f64) -> Result<BiasStats> {
    if graph.cols() != counts.len() {
        return Err(Error::shape(format!("graph has {} columns for {} items", graph.cols(), counts.len())));
    }
    if graph.nnz() == 0 {
        return Err(Error::contract("bias statistics need at least one edge"));
    }
    let threshold = tail_threshold(counts, tail_quantile)?;
    let ends = graph.indices();
    let avg_pop = ends.iter().map(|&j| (counts[j] as f64).ln_1p()).sum::<f64>() / ends.len() as f64;
    let tail = ends.iter().filter(|&&j| counts[j] <= threshold).count();
    Ok(BiasStats {
        avg_pop,
        tail_ratio: tail as f64 / ends.len() as f64,
        edges: ends.len(),
    })
}

/// Writes `MEM1` with user and item rows of the identity and final
/// embeddings.
pub fn write_embeddings(path: &Path, emb: &Embeddings) -> Result<()> {
    let split = |t: &Tensor| {
        let users: Vec<usize> = (0..emb.user_count).collect();
        let items: Vec<usize> = (emb.user_count..t.rows()).collect();
        (t.select_rows(&users), t.select_rows(&items))
    };
    let (u0, i0) = split(&emb.e0);
    let (uf, itf) = (emb.users(), emb.items());
    write_tensors(
        path,
        EMBEDDING_MAGIC,
        &[("user_identity", &u0), ("item_identity", &i0), ("user_final", &uf), ("item_final", &itf)],
    )
}
