//! Item/user KNN graphs, popularity-penalized counterfactual neighbors and
//! the augmented user-item adjacency used for propagation.
//!
//! Similarities are computed in row blocks of `block_size` so peak memory
//! is `O(block_size · n)`. Blocks are independent and are merged in row
//! order, so the result does not depend on `block_size` or thread count.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{dot, norm};
use crate::autodiff::Tensor;
use crate::data::{compute_popularity, Dataset};
use crate::error::{Error, Result};
use crate::maic::build_user_features;
use crate::par;
use crate::sparse::SparseMatrix;

/// Added to the norm product in cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Neighbors per item in the base item KNN graph.
    pub k_base: usize,
    /// Neighbors per user in the user KNN graph.
    pub k_user: usize,
    /// Counterfactual neighbors per item.
    pub k_cf: usize,
    /// Popularity penalty exponent.
    pub lambda_cf: f64,
    pub epsilon: f64,
    /// Weight of counterfactual edges when fused with the base graph.
    pub eta: f64,
    pub block_size: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k_base: 10,
            k_user: 10,
            k_cf: 10,
            lambda_cf: 0.1,
            epsilon: 1e-8,
            eta: 0.2,
            block_size: 1024,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self, users: usize, items: usize) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.k_base >= items || self.k_cf >= items {
            return fail(format!(
                "k_base ({}) and k_cf ({}) must be below the item count {items}",
                self.k_base, self.k_cf
            ));
        }
        if self.k_user >= users {
            return fail(format!("k_user ({}) must be below the user count {users}", self.k_user));
        }
        if !(self.epsilon > 0.0) || !(self.lambda_cf >= 0.0) || !(self.eta >= 0.0) || !self.eta.is_finite() || !self.lambda_cf.is_finite() {
            return fail(format!(
                "need epsilon > 0, lambda_cf ≥ 0, eta ≥ 0; got {}, {}, {}",
                self.epsilon, self.lambda_cf, self.eta
            ));
        }
        if self.block_size == 0 {
            return fail("block_size must be at least 1".into());
        }
        Ok(())
    }
}

/// `h = α zᵗ + (1 − α) zᵛ`, evaluated as `zᵛ + α(zᵗ − zᵛ)`.
pub fn fuse_item_semantics(z_text: &Tensor, z_visual: &Tensor, alpha_m: f64) -> Result<Tensor> {
    if z_text.shape() != z_visual.shape() {
        return Err(Error::shape(format!(
            "cannot fuse {:?} with {:?}",
            z_text.shape(),
            z_visual.shape()
        )));
    }
    let data = z_text
        .data()
        .iter()
        .zip(z_visual.data())
        .map(|(&t, &v)| v + alpha_m * (t - v))
        .collect();
    Tensor::new(z_text.shape().to_vec(), data)
}

/// Parameter-free semantic space for graph construction: each modality's
/// rows are l2-normalized and the two are concatenated with weights
/// `√α` and `√(1 − α)`. The inner product of two rows is then
/// `α cosᵗ + (1 − α) cosᵛ`, which works for modalities of different width.
pub fn raw_semantics(x_text: &Tensor, x_visual: &Tensor, alpha_m: f64) -> Result<Tensor> {
    if x_text.rows() != x_visual.rows() {
        return Err(Error::shape(format!("{} text rows vs {} visual rows", x_text.rows(), x_visual.rows())));
    }
    if !(0.0..=1.0).contains(&alpha_m) {
        return Err(Error::config(format!("alpha_m must lie in [0, 1], got {alpha_m}")));
    }
    let (wt, wv) = (alpha_m.sqrt(), (1.0 - alpha_m).sqrt());
    let (dt, dv) = (x_text.cols(), x_visual.cols());
    let mut data = Vec::with_capacity(x_text.rows() * (dt + dv));
    for i in 0..x_text.rows() {
        for (row, w) in [(x_text.row(i), wt), (x_visual.row(i), wv)] {
            let n = norm(row);
            let s = if n > 0.0 { w / n } else { 0.0 };
            data.extend(row.iter().map(|v| v * s));
        }
    }
    Tensor::matrix(x_text.rows(), dt + dv, data)
}

pub fn row_norms(h: &Tensor) -> Vec<f64> {
    (0..h.rows()).map(|i| norm(h.row(i))).collect()
}

/// Dense cosine rows `rows × n` for the given row range; the diagonal is
/// set to `-∞` so a row never selects itself.
pub fn cosine_block(h: &Tensor, norms: &[f64], rows: Range<usize>) -> Vec<f64> {
    let n = h.rows();
    let mut out = vec![0.0; rows.len() * n];
    for (r, i) in rows.enumerate() {
        let hi = h.row(i);
        let row = &mut out[r * n..(r + 1) * n];
        for (j, s) in row.iter_mut().enumerate() {
            *s = if i == j {
                f64::NEG_INFINITY
            } else {
                dot(hi, h.row(j)) / (norms[i] * norms[j] + COSINE_EPS)
            };
        }
    }
    out
}

/// `s / (pop + ε)^λ` elementwise; `-∞` sentinels pass through.
pub fn counterfactual_scores(s_row: &[f64], pop: &[f64], lambda_cf: f64, epsilon: f64) -> Vec<f64> {
    s_row
        .iter()
        .zip(pop)
        .map(|(&s, &p)| s / (p + epsilon).powf(lambda_cf))
        .collect()
}

/// Indices of the `k` largest finite scores, best first; ties go to the
/// lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] > f64::NEG_INFINITY).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < cand.len() {
        if k == 0 {
            return Vec::new();
        }
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand
}

/// Per-row selected neighbors with their stored weights, in selection
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborLists {
    pub cols: usize,
    pub lists: Vec<Vec<(usize, f64)>>,
}

impl NeighborLists {
    pub fn neighbor_set(&self, row: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.lists[row].iter().map(|&(j, _)| j).collect();
        v.sort_unstable();
        v
    }

    /// Sparse form; zero-weight selections are not stored.
    pub fn to_sparse(&self) -> SparseMatrix {
        SparseMatrix::from_row_lists(self.lists.len(), self.cols, self.lists.clone())
    }
}

/// Which neighbor lists to extract from each similarity row.
struct Selection<'a> {
    k_base: Option<usize>,
    cf: Option<(usize, &'a [f64], f64, f64)>,
}

fn select_neighbors(h: &Tensor, block_size: usize, sel: &Selection) -> (Option<NeighborLists>, Option<NeighborLists>) {
    let n = h.rows();
    let norms = row_norms(h);
    let block_size = block_size.max(1);
    let blocks = n.div_ceil(block_size);
    type RowOut = (Vec<(usize, f64)>, Vec<(usize, f64)>);
    let per_block: Vec<Vec<RowOut>> = par::map_range(blocks, |b| {
        let range = b * block_size..((b + 1) * block_size).min(n);
        let sims = cosine_block(h, &norms, range.clone());
        (0..range.len())
            .map(|r| {
                let s = &sims[r * n..(r + 1) * n];
                let weighted = |idx: Vec<usize>| idx.into_iter().map(|j| (j, s[j])).collect();
                let base = sel.k_base.map(|k| weighted(top_k(s, k))).unwrap_or_default();
                let cf = sel
                    .cf
                    .map(|(k, pop, lambda, eps)| weighted(top_k(&counterfactual_scores(s, pop, lambda, eps), k)))
                    .unwrap_or_default();
                (base, cf)
            })
            .collect()
    });
    let (mut base, mut cf) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (b, c) in per_block.into_iter().flatten() {
        base.push(b);
        cf.push(c);
    }
    (
        sel.k_base.map(|_| NeighborLists { cols: n, lists: base }),
        sel.cf.map(|_| NeighborLists { cols: n, lists: cf }),
    )
}

/// Top-`k` neighbors by raw cosine, weighted by that cosine. Used for both
/// the base item graph and the user graph.
pub fn knn_graph(h: &Tensor, k: usize, block_size: usize) -> NeighborLists {
    select_neighbors(h, block_size, &Selection { k_base: Some(k), cf: None }).0.unwrap()
}

/// Top-`K_cf` neighbors by popularity-penalized score; each stored weight is
/// the unpenalized cosine.
pub fn topk_counterfactual(h: &Tensor, pop: &[f64], cfg: &GraphConfig) -> Result<NeighborLists> {
    check_pop(h, pop)?;
    let sel = Selection {
        k_base: None,
        cf: Some((cfg.k_cf, pop, cfg.lambda_cf, cfg.epsilon)),
    };
    Ok(select_neighbors(h, cfg.block_size, &sel).1.unwrap())
}

/// Base and counterfactual item graphs from one pass over the similarities.
pub fn item_neighbor_graphs(h: &Tensor, pop: &[f64], cfg: &GraphConfig) -> Result<(NeighborLists, NeighborLists)> {
    check_pop(h, pop)?;
    let sel = Selection {
        k_base: Some(cfg.k_base),
        cf: Some((cfg.k_cf, pop, cfg.lambda_cf, cfg.epsilon)),
    };
    let (b, c) = select_neighbors(h, cfg.block_size, &sel);
    Ok((b.unwrap(), c.unwrap()))
}

fn check_pop(h: &Tensor, pop: &[f64]) -> Result<()> {
    if pop.len() != h.rows() {
        return Err(Error::shape(format!("{} popularity values for {} items", pop.len(), h.rows())));
    }
    Ok(())
}

/// `R_base + η R_cf`.
pub fn fuse_item_graphs(base: &SparseMatrix, cf: &SparseMatrix, eta: f64) -> Result<SparseMatrix> {
    base.add_scaled(cf, eta)
}

/// Binary `users × items` matrix of training interactions.
pub fn interaction_matrix(ds: &Dataset) -> SparseMatrix {
    let lists = (0..ds.user_count())
        .map(|u| ds.train_items(u).iter().map(|&i| (i, 1.0)).collect())
        .collect();
    SparseMatrix::from_row_lists(ds.user_count(), ds.item_count(), lists)
}

/// Assembles `[[R_U, R], [Rᵀ, R_I]]`. The diagonal blocks drop
/// non-positive weights and self loops, then are symmetrized with
/// elementwise max.
pub fn build_augmented_adjacency(r_user: &SparseMatrix, r: &SparseMatrix, r_item: &SparseMatrix) -> Result<SparseMatrix> {
    let (nu, ni) = (r.rows(), r.cols());
    if r_user.rows() != nu || r_user.cols() != nu || r_item.rows() != ni || r_item.cols() != ni {
        return Err(Error::shape(format!(
            "blocks do not conform: R_U {}×{}, R {nu}×{ni}, R_I {}×{}",
            r_user.rows(),
            r_user.cols(),
            r_item.rows(),
            r_item.cols()
        )));
    }
    let prep = |m: &SparseMatrix| m.filter(|i, j, v| i != j && v > 0.0).symmetrize_max();
    let (ru, ri) = (prep(r_user)?, prep(r_item)?);
    let rt = r.transpose();
    let n = nu + ni;
    let mut lists: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for u in 0..nu {
        let (ci, cv) = ru.row(u);
        let (ii, iv) = r.row(u);
        let mut row: Vec<(usize, f64)> = ci.iter().copied().zip(cv.iter().copied()).collect();
        row.extend(ii.iter().zip(iv).map(|(&i, &v)| (nu + i, v)));
        lists.push(row);
    }
    for i in 0..ni {
        let (ui, uv) = rt.row(i);
        let (ji, jv) = ri.row(i);
        let mut row: Vec<(usize, f64)> = ui.iter().copied().zip(uv.iter().copied()).collect();
        row.extend(ji.iter().zip(jv).map(|(&j, &v)| (nu + j, v)));
        lists.push(row);
    }
    Ok(SparseMatrix::from_row_lists(n, n, lists))
}

/// `D^{-1/2} A D^{-1/2}` with weighted degrees; zero-degree rows stay zero.
pub fn normalize_adjacency(a: &SparseMatrix) -> Result<SparseMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::shape(format!("adjacency must be square, got {}×{}", a.rows(), a.cols())));
    }
    if let Some((r, c, v)) = a.iter().find(|&(_, _, v)| v < 0.0) {
        return Err(Error::contract(format!("negative adjacency entry {v} at ({r}, {c})")));
    }
    let inv_sqrt: Vec<f64> = a
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let lists = (0..a.rows())
        .map(|i| {
            let (idx, vals) = a.row(i);
            idx.iter()
                .zip(vals)
                .map(|(&j, &v)| (j, v * inv_sqrt[i] * inv_sqrt[j]))
                .collect()
        })
        .collect();
    Ok(SparseMatrix::from_row_lists(a.rows(), a.cols(), lists))
}

/// All graphs built before training.
#[derive(Clone, Debug)]
pub struct GraphBundle {
    pub item_base: SparseMatrix,
    pub item_cf: SparseMatrix,
    pub item_aug: SparseMatrix,
    pub user_knn: SparseMatrix,
    pub adjacency: SparseMatrix,
    pub normalized: SparseMatrix,
}

/// Builds every graph from raw features of the dataset, independent of
/// model parameters.
pub fn build_graph(ds: &Dataset, cfg: &GraphConfig, alpha_m: f64) -> Result<GraphBundle> {
    cfg.validate(ds.user_count(), ds.item_count())?;
    let f = ds.features()?;
    let items = raw_semantics(f.text.values(), f.visual.values(), alpha_m)?;
    let pop = compute_popularity(ds);
    let (base, cf) = item_neighbor_graphs(&items, &pop, cfg)?;
    let users = raw_semantics(
        &build_user_features(ds, &f.text)?,
        &build_user_features(ds, &f.visual)?,
        alpha_m,
    )?;
    let user_knn = knn_graph(&users, cfg.k_user, cfg.block_size).to_sparse();
    let (item_base, item_cf) = (base.to_sparse(), cf.to_sparse());
    let item_aug = fuse_item_graphs(&item_base, &item_cf, cfg.eta)?;
    let adjacency = build_augmented_adjacency(&user_knn, &interaction_matrix(ds), &item_aug)?;
    let normalized = normalize_adjacency(&adjacency)?;
    Ok(GraphBundle {
        item_base,
        item_cf,
        item_aug,
        user_knn,
        adjacency,
        normalized,
    })
}
