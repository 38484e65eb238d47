//! Graph propagation, preference scoring and every training loss.
//!
//! Node layout follows [`NodeInputs`]: users occupy rows `0..user_count`,
//! items the rows after them. Batch item indices are item-local and are
//! offset by `user_count` when gathering node rows.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::maic::{identity_forward, IdentityConfig, IdentityVars, NodeInputs, ParamVars, ProjectionParams};
use crate::sparse::SparseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Temperature of the ranking loss and the cross-modal InfoNCE.
    pub tau: f64,
    pub tau_a: f64,
    pub tau_d: f64,
    pub lambda_m: f64,
    pub lambda_s: f64,
    pub n_neg: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tau: 0.2,
            tau_a: 0.2,
            tau_d: 0.2,
            lambda_m: 0.1,
            lambda_s: 0.01,
            n_neg: 32,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let temps = [self.tau, self.tau_a, self.tau_d];
        if temps.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::config(format!("temperatures must be positive, got {temps:?}")));
        }
        if !(self.lambda_m >= 0.0 && self.lambda_m.is_finite()) || !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return Err(Error::config(format!(
                "loss weights must be finite and non-negative, got λ_m={} λ_S={}",
                self.lambda_m, self.lambda_s
            )));
        }
        if self.n_neg == 0 {
            return Err(Error::config("n_neg must be at least 1"));
        }
        Ok(())
    }
}

/// Layer outputs `E⁽⁰⁾..E⁽ᴸ⁾` and their mean.
#[derive(Clone, Debug)]
pub struct Propagation {
    pub layers: Vec<Var>,
    pub final_: Var,
}

impl Propagation {
    /// `E⁽¹⁾`, or `E⁽⁰⁾` when there are no layers.
    pub fn first_layer(&self) -> Var {
        self.layers[1.min(self.layers.len() - 1)]
    }
}

pub fn propagate(tape: &mut Tape, a_hat: &Arc<SparseMatrix>, e0: Var, layers: usize) -> Result<Propagation> {
    let mut out = vec![e0];
    for _ in 0..layers {
        let next = tape.sparse_matmul(a_hat, *out.last().unwrap())?;
        out.push(next);
    }
    let mut acc = out[0];
    for &l in &out[1..] {
        acc = tape.add(acc, l)?;
    }
    let final_ = tape.scale(acc, 1.0 / out.len() as f64)?;
    Ok(Propagation { layers: out, final_ })
}

/// Inner-product preference score.
pub fn score(e_u: &[f64], e_i: &[f64]) -> f64 {
    e_u.iter().zip(e_i).map(|(a, b)| a * b).sum()
}

fn mean_all(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).numel();
    let s = tape.sum(x)?;
    tape.scale(s, 1.0 / n as f64)
}

/// Row-wise inner products of two equal-shape matrices, as `r×1`.
fn row_dots(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.value(a).cols();
    let ones = tape.constant(Tensor::full(vec![d, 1], 1.0));
    let prod = tape.mul(a, b)?;
    tape.matmul(prod, ones, false)
}

fn unit_rows(tape: &mut Tape, x: Var, idx: &[usize]) -> Result<Var> {
    let g = tape.gather_rows(x, idx)?;
    tape.l2_normalize_rows(g)
}

fn offset(idx: &[usize], by: usize) -> Vec<usize> {
    idx.iter().map(|&i| i + by).collect()
}

fn distinct(xs: impl Iterator<Item = usize>) -> Vec<usize> {
    xs.collect::<BTreeSet<_>>().into_iter().collect()
}

/// `mean_r [ LSE(logits_r) − LSE(logits_r restricted to mask) ]`.
fn masked_softmax_nll(tape: &mut Tape, logits: Var, mask: &[bool]) -> Result<Var> {
    let all = tape.logsumexp_rows(logits, None)?;
    let pos = tape.logsumexp_rows(logits, Some(mask))?;
    let diff = tape.sub(all, pos)?;
    mean_all(tape, diff)
}

/// Scaled cosine matrix `cos(a_r, b_c) / τ` between row sets.
fn cosine_logits(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Result<Var> {
    let m = tape.matmul(a, b, true)?;
    tape.scale(m, 1.0 / tau)
}

/// Cross-stage alignment between layer-0 identities and layer-1 structural
/// representations, with in-batch candidates on both sides.
pub fn alignment_loss(tape: &mut Tape, e0: Var, e1: Var, user_count: usize, pairs: &[(usize, usize)], tau_a: f64) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::contract("alignment loss needs a nonempty batch"));
    }
    let users = distinct(pairs.iter().map(|p| p.0));
    let items = distinct(pairs.iter().map(|p| p.1));
    let (nu, ni) = (users.len(), items.len());
    let mut mask = vec![false; nu * ni];
    for &(u, i) in pairs {
        let r = users.binary_search(&u).unwrap();
        let c = items.binary_search(&i).unwrap();
        mask[r * ni + c] = true;
    }
    let item_nodes = offset(&items, user_count);

    let u0 = unit_rows(tape, e0, &users)?;
    let i1 = unit_rows(tape, e1, &item_nodes)?;
    let logits = cosine_logits(tape, u0, i1, tau_a)?;
    let user_side = masked_softmax_nll(tape, logits, &mask)?;

    let i0 = unit_rows(tape, e0, &item_nodes)?;
    let u1 = unit_rows(tape, e1, &users)?;
    let logits = cosine_logits(tape, i0, u1, tau_a)?;
    let mask_t: Vec<bool> = (0..ni * nu).map(|t| mask[(t % nu) * ni + t / nu]).collect();
    let item_side = masked_softmax_nll(tape, logits, &mask_t)?;
    tape.add(user_side, item_side)
}

/// One side of the decoupled discrimination loss over the given node rows.
fn discrimination_side(tape: &mut Tape, e0: Var, m: Var, final_: Var, nodes: &[usize], tau_d: f64) -> Result<Var> {
    let a = unit_rows(tape, e0, nodes)?;
    let mm = unit_rows(tape, m, nodes)?;
    let f = unit_rows(tape, final_, nodes)?;
    let num = row_dots(tape, a, mm)?;
    let num = tape.scale(num, 1.0 / tau_d)?;
    let den = cosine_logits(tape, a, f, tau_d)?;
    let den = tape.logsumexp_rows(den, None)?;
    let diff = tape.sub(den, num)?;
    mean_all(tape, diff)
}

/// Numerator pairs each identity with its raw fused semantics `m`; the
/// denominator pairs it with the final representations of the batch.
pub fn discrimination_loss(
    tape: &mut Tape,
    e0: Var,
    m: Var,
    final_: Var,
    user_count: usize,
    pairs: &[(usize, usize)],
    tau_d: f64,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::contract("discrimination loss needs a nonempty batch"));
    }
    let users = distinct(pairs.iter().map(|p| p.0));
    let items = offset(&distinct(pairs.iter().map(|p| p.1)), user_count);
    let user_side = discrimination_side(tape, e0, m, final_, &users, tau_d)?;
    let item_side = discrimination_side(tape, e0, m, final_, &items, tau_d)?;
    tape.add(user_side, item_side)
}

pub fn sce_loss(tape: &mut Tape, alignment: Var, discrimination: Var) -> Result<Var> {
    tape.add(alignment, discrimination)
}

/// Training samples `(u, i⁺, I_u⁻)` for the ranking loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankingBatch {
    pub users: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl RankingBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.users.iter().copied().zip(self.positives.iter().copied()).collect()
    }

    /// Rejects negatives that are training positives of their user, or
    /// repeated within a sample.
    pub fn check_negatives<'a>(&self, train_items: impl Fn(usize) -> &'a [usize]) -> Result<()> {
        for (s, negs) in self.negatives.iter().enumerate() {
            let u = self.users[s];
            let pos = train_items(u);
            for (k, &j) in negs.iter().enumerate() {
                if pos.binary_search(&j).is_ok() || j == self.positives[s] {
                    return Err(Error::contract(format!("negative item {j} of sample {s} is a positive of user {u}")));
                }
                if negs[..k].contains(&j) {
                    return Err(Error::contract(format!("negative item {j} repeated in sample {s}")));
                }
            }
        }
        Ok(())
    }
}

/// `mean_s log Σ_{i⁻} exp((cos(e_u, e_{i⁻}) − cos(e_u, e_{i⁺})) / τ)`.
///
/// Negative logits are evaluated against the union of all sampled
/// negatives and masked per sample.
pub fn ranking_loss(tape: &mut Tape, final_: Var, user_count: usize, batch: &RankingBatch, tau: f64) -> Result<Var> {
    let n = batch.len();
    if n == 0 || batch.positives.len() != n || batch.negatives.len() != n {
        return Err(Error::contract(format!(
            "ranking batch needs equal nonzero lengths, got {} users, {} positives, {} negative lists",
            n,
            batch.positives.len(),
            batch.negatives.len()
        )));
    }
    for (s, negs) in batch.negatives.iter().enumerate() {
        if negs.is_empty() {
            return Err(Error::contract(format!("sample {s} has no negatives")));
        }
        if negs.contains(&batch.positives[s]) {
            return Err(Error::contract(format!("sample {s} lists its positive as a negative")));
        }
    }
    let cands = distinct(batch.negatives.iter().flatten().copied());
    let c = cands.len();
    let mut mask = vec![false; n * c];
    for (s, negs) in batch.negatives.iter().enumerate() {
        for j in negs {
            mask[s * c + cands.binary_search(j).unwrap()] = true;
        }
    }
    let u = unit_rows(tape, final_, &batch.users)?;
    let p = unit_rows(tape, final_, &offset(&batch.positives, user_count))?;
    let q = unit_rows(tape, final_, &offset(&cands, user_count))?;
    let pos = row_dots(tape, u, p)?;
    let pos = tape.scale(pos, 1.0 / tau)?;
    let neg = cosine_logits(tape, u, q, tau)?;
    let lse = tape.logsumexp_rows(neg, Some(&mask))?;
    let diff = tape.sub(lse, pos)?;
    mean_all(tape, diff)
}

/// Symmetric cross-modal InfoNCE over the distinct batch items.
pub fn modal_infonce(tape: &mut Tape, z_text: Var, z_visual: Var, user_count: usize, items: &[usize], tau: f64) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::contract("cross-modal InfoNCE needs at least one item"));
    }
    let nodes = offset(&distinct(items.iter().copied()), user_count);
    let t = unit_rows(tape, z_text, &nodes)?;
    let v = unit_rows(tape, z_visual, &nodes)?;
    let diag = row_dots(tape, t, v)?;
    let diag = tape.scale(diag, 1.0 / tau)?;
    let mut sides = Vec::with_capacity(2);
    for (a, b) in [(t, v), (v, t)] {
        let logits = cosine_logits(tape, a, b, tau)?;
        let lse = tape.logsumexp_rows(logits, None)?;
        let diff = tape.sub(lse, diag)?;
        sides.push(mean_all(tape, diff)?);
    }
    let both = tape.add(sides[0], sides[1])?;
    tape.scale(both, 0.5)
}

/// `ℒ_rec + λ_m ℒ_m + λ_S ℒ_SCE`.
pub fn total_loss(tape: &mut Tape, rec: Var, modal: Var, sce: Var, w: &LossWeights) -> Result<Var> {
    let m = tape.scale(modal, w.lambda_m)?;
    let s = tape.scale(sce, w.lambda_s)?;
    let acc = tape.add(rec, m)?;
    tape.add(acc, s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub rec: T,
    pub modal: T,
    pub alignment: T,
    pub discrimination: T,
    pub sce: T,
    pub total: T,
}

impl LossParts<Var> {
    pub fn values(&self, tape: &Tape) -> LossParts<f64> {
        let v = |x: Var| tape.value(x).data()[0];
        LossParts {
            rec: v(self.rec),
            modal: v(self.modal),
            alignment: v(self.alignment),
            discrimination: v(self.discrimination),
            sce: v(self.sce),
            total: v(self.total),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub identity: IdentityConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            identity: IdentityConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(Error::config(format!("embedding dimension must be even and positive, got {}", self.dim)));
        }
        self.identity.validate()
    }
}

/// Learnable parameters together with the constant inputs and the frozen
/// normalized graph.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ProjectionParams,
    pub inputs: NodeInputs,
    pub graph: Arc<SparseMatrix>,
}

/// Everything recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub identity: IdentityVars,
    pub propagation: Propagation,
}

/// Final embeddings of users and items.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub user_count: usize,
    pub e0: Tensor,
    pub final_: Tensor,
}

impl Embeddings {
    pub fn user(&self, u: usize) -> &[f64] {
        self.final_.row(u)
    }

    pub fn items(&self) -> Tensor {
        let idx: Vec<usize> = (self.user_count..self.final_.rows()).collect();
        self.final_.select_rows(&idx)
    }

    pub fn users(&self) -> Tensor {
        let idx: Vec<usize> = (0..self.user_count).collect();
        self.final_.select_rows(&idx)
    }
}

impl ModelState {
    pub fn new(config: ModelConfig, params: ProjectionParams, inputs: NodeInputs, graph: Arc<SparseMatrix>) -> Result<Self> {
        config.validate()?;
        let n = inputs.node_count();
        if graph.rows() != n || graph.cols() != n {
            return Err(Error::shape(format!("graph is {}×{} for {n} nodes", graph.rows(), graph.cols())));
        }
        if params.dim() != config.dim || inputs.dim() != config.dim {
            return Err(Error::shape(format!(
                "dimension mismatch: config {}, params {}, positional {}",
                config.dim,
                params.dim(),
                inputs.dim()
            )));
        }
        if params.w_text.cols() != inputs.text.cols() || params.w_visual.cols() != inputs.visual.cols() {
            return Err(Error::shape("projection widths do not match feature widths"));
        }
        Ok(ModelState {
            config,
            params,
            inputs,
            graph,
        })
    }

    pub fn user_count(&self) -> usize {
        self.inputs.user_count
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars) -> Result<Forward> {
        let identity = identity_forward(tape, vars, &self.inputs, &self.config.identity)?;
        let propagation = propagate(tape, &self.graph, identity.e0, self.config.layers)?;
        Ok(Forward { identity, propagation })
    }

    /// Records all loss terms for one batch.
    pub fn losses(&self, tape: &mut Tape, vars: &ParamVars, batch: &RankingBatch, w: &LossWeights) -> Result<LossParts<Var>> {
        let f = self.forward(tape, vars)?;
        self.losses_from(tape, &f, batch, w)
    }

    pub fn losses_from(&self, tape: &mut Tape, f: &Forward, batch: &RankingBatch, w: &LossWeights) -> Result<LossParts<Var>> {
        let nu = self.user_count();
        let pairs = batch.pairs();
        let (e0, final_) = (f.identity.e0, f.propagation.final_);
        let rec = ranking_loss(tape, final_, nu, batch, w.tau)?;
        let modal = modal_infonce(tape, f.identity.z_text, f.identity.z_visual, nu, &batch.positives, w.tau)?;
        let alignment = alignment_loss(tape, e0, f.propagation.first_layer(), nu, &pairs, w.tau_a)?;
        let discrimination = discrimination_loss(tape, e0, f.identity.fused, final_, nu, &pairs, w.tau_d)?;
        let sce = sce_loss(tape, alignment, discrimination)?;
        let total = total_loss(tape, rec, modal, sce, w)?;
        Ok(LossParts {
            rec,
            modal,
            alignment,
            discrimination,
            sce,
            total,
        })
    }

    /// Forward pass without gradient tracking.
    pub fn embeddings(&self) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let vars = ParamVars::register_constant(&mut tape, &self.params);
        let f = self.forward(&mut tape, &vars)?;
        Ok(Embeddings {
            user_count: self.user_count(),
            e0: tape.value(f.identity.e0).clone(),
            final_: tape.value(f.propagation.final_).clone(),
        })
    }
}

#[cfg(test)]
mod tests;
