//! Modality-aware identity construction.
//!
//! Each node's identity is built from projected text/visual features plus a
//! static sinusoidal positional encoding whose entries are scaled by gates
//! computed from the projected features. Users take the mean raw features
//! of their training items. Nodes are ordered users first, then items.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Dataset, FeatureMatrix, Modality};
use crate::error::{Error, Result};
use crate::train::init::{xavier_uniform, zero_bias};

/// Names of the learnable tensors, in storage order.
pub const PARAM_NAMES: [&str; 8] = [
    "w_text", "b_text", "w_visual", "b_visual", "wg_text", "bg_text", "wg_visual", "bg_visual",
];

/// Projection and gate weights. Weights are `d × in_dim` (applied as
/// `x · Wᵀ`), biases are `1 × d` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub w_text: Tensor,
    pub b_text: Tensor,
    pub w_visual: Tensor,
    pub b_visual: Tensor,
    pub wg_text: Tensor,
    pub bg_text: Tensor,
    pub wg_visual: Tensor,
    pub bg_visual: Tensor,
}

impl ProjectionParams {
    /// Xavier-uniform weights and zero biases.
    pub fn init(d: usize, text_dim: usize, visual_dim: usize, seed: u64) -> Self {
        ProjectionParams {
            w_text: xavier_uniform(d, text_dim, seed, "w_text"),
            b_text: zero_bias(d),
            w_visual: xavier_uniform(d, visual_dim, seed, "w_visual"),
            b_visual: zero_bias(d),
            wg_text: xavier_uniform(d, d, seed, "wg_text"),
            bg_text: zero_bias(d),
            wg_visual: xavier_uniform(d, d, seed, "wg_visual"),
            bg_visual: zero_bias(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_text.rows()
    }

    pub fn to_vec(&self) -> Vec<Tensor> {
        vec![
            self.w_text.clone(),
            self.b_text.clone(),
            self.w_visual.clone(),
            self.b_visual.clone(),
            self.wg_text.clone(),
            self.bg_text.clone(),
            self.wg_visual.clone(),
            self.bg_visual.clone(),
        ]
    }

    /// Inverse of [`to_vec`](Self::to_vec), with shape validation.
    pub fn from_vec(mut ts: Vec<Tensor>) -> Result<Self> {
        if ts.len() != PARAM_NAMES.len() {
            return Err(Error::shape(format!("expected {} parameter tensors, got {}", PARAM_NAMES.len(), ts.len())));
        }
        let mut it = ts.drain(..);
        let mut next = || it.next().unwrap();
        let p = ProjectionParams {
            w_text: next(),
            b_text: next(),
            w_visual: next(),
            b_visual: next(),
            wg_text: next(),
            bg_text: next(),
            wg_visual: next(),
            bg_visual: next(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        PARAM_NAMES
            .iter()
            .copied()
            .zip([
                &self.w_text,
                &self.b_text,
                &self.w_visual,
                &self.b_visual,
                &self.wg_text,
                &self.bg_text,
                &self.wg_visual,
                &self.bg_visual,
            ])
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        let ok = self.w_text.is_matrix()
            && self.w_visual.is_matrix()
            && self.w_visual.rows() == d
            && [&self.b_text, &self.b_visual, &self.bg_text, &self.bg_visual]
                .iter()
                .all(|b| b.shape() == [1, d])
            && [&self.wg_text, &self.wg_visual].iter().all(|w| w.shape() == [d, d]);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("inconsistent parameter shapes for d = {d}")))
        }
    }

    /// Copy with every entry rounded through `f32`.
    pub fn rounded_to_f32(&self) -> Self {
        Self::from_vec(self.to_vec().iter().map(Tensor::rounded_to_f32).collect()).expect("shapes unchanged")
    }
}

/// Tape handles for a registered [`ProjectionParams`].
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub w_text: Var,
    pub b_text: Var,
    pub w_visual: Var,
    pub b_visual: Var,
    pub wg_text: Var,
    pub bg_text: Var,
    pub wg_visual: Var,
    pub bg_visual: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, p: &ProjectionParams) -> Self {
        ParamVars {
            w_text: tape.param(p.w_text.clone()),
            b_text: tape.param(p.b_text.clone()),
            w_visual: tape.param(p.w_visual.clone()),
            b_visual: tape.param(p.b_visual.clone()),
            wg_text: tape.param(p.wg_text.clone()),
            bg_text: tape.param(p.bg_text.clone()),
            wg_visual: tape.param(p.wg_visual.clone()),
            bg_visual: tape.param(p.bg_visual.clone()),
        }
    }

    /// Registers the parameters as constants, for gradient-free passes.
    pub fn register_constant(tape: &mut Tape, p: &ProjectionParams) -> Self {
        let v: Vec<Var> = p.to_vec().into_iter().map(|t| tape.constant(t)).collect();
        Self::from_slice(&v)
    }

    /// From handles in [`PARAM_NAMES`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        ParamVars {
            w_text: v[0],
            b_text: v[1],
            w_visual: v[2],
            b_visual: v[3],
            wg_text: v[4],
            bg_text: v[5],
            wg_visual: v[6],
            bg_visual: v[7],
        }
    }

    pub fn to_vec(self) -> Vec<Var> {
        vec![
            self.w_text,
            self.b_text,
            self.w_visual,
            self.b_visual,
            self.wg_text,
            self.bg_text,
            self.wg_visual,
            self.bg_visual,
        ]
    }

    fn projection(&self, m: Modality) -> (Var, Var) {
        match m {
            Modality::Text => (self.w_text, self.b_text),
            Modality::Visual => (self.w_visual, self.b_visual),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityConfig {
    /// Weight of the text gate when fusing gates.
    pub alpha_p: f64,
    /// Weight of the text modality when fusing representations.
    pub alpha_m: f64,
    /// When false, gates are forced to one and the positional encoding is
    /// used unmodified.
    pub modulate: bool,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig {
            alpha_p: 0.5,
            alpha_m: 0.5,
            modulate: true,
        }
    }
}

impl IdentityConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("alpha_p", self.alpha_p)?;
        check_unit("alpha_m", self.alpha_m)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Constant per-node inputs: raw features for all nodes and the static
/// positional encoding.
#[derive(Clone, Debug)]
pub struct NodeInputs {
    pub user_count: usize,
    pub text: Arc<Tensor>,
    pub visual: Arc<Tensor>,
    pub positional: Arc<Tensor>,
    ones: Arc<Tensor>,
}

impl NodeInputs {
    pub fn new(user_count: usize, text: Tensor, visual: Tensor, d: usize) -> Result<Self> {
        if text.rows() != visual.rows() {
            return Err(Error::shape(format!("{} text rows vs {} visual rows", text.rows(), visual.rows())));
        }
        let n = text.rows();
        Ok(NodeInputs {
            user_count,
            positional: Arc::new(positional_encoding(n, d)?),
            ones: Arc::new(Tensor::full(vec![n, 1], 1.0)),
            text: Arc::new(text),
            visual: Arc::new(visual),
        })
    }

    /// Stacks averaged user features above item features for both
    /// modalities.
    pub fn from_dataset(ds: &Dataset, d: usize) -> Result<Self> {
        let f = ds.features()?;
        let stack = |fm: &FeatureMatrix| -> Result<Tensor> {
            let users = build_user_features(ds, fm)?;
            let mut data = users.into_data();
            data.extend_from_slice(fm.values().data());
            Tensor::matrix(ds.node_count(), fm.dim(), data)
        };
        Self::new(ds.user_count(), stack(&f.text)?, stack(&f.visual)?, d)
    }

    pub fn node_count(&self) -> usize {
        self.text.rows()
    }

    pub fn item_count(&self) -> usize {
        self.node_count() - self.user_count
    }

    pub fn dim(&self) -> usize {
        self.positional.cols()
    }

    fn features(&self, m: Modality) -> &Arc<Tensor> {
        match m {
            Modality::Text => &self.text,
            Modality::Visual => &self.visual,
        }
    }
}

/// Mean raw feature row over each user's training items.
pub fn build_user_features(ds: &Dataset, features: &FeatureMatrix) -> Result<Tensor> {
    if features.rows() != ds.item_count() {
        return Err(Error::shape(format!(
            "{} feature rows for {} items",
            features.rows(),
            ds.item_count()
        )));
    }
    let dim = features.dim();
    let mut out = vec![0.0; ds.user_count() * dim];
    for u in 0..ds.user_count() {
        let items = ds.train_items(u);
        if items.is_empty() {
            return Err(Error::contract(format!("user {u} has no training interactions")));
        }
        let row = &mut out[u * dim..(u + 1) * dim];
        for &i in items {
            row.iter_mut().zip(features.row(i)).for_each(|(o, x)| *o += x);
        }
        let inv = items.len() as f64;
        row.iter_mut().for_each(|v| *v /= inv);
    }
    Tensor::matrix(ds.user_count(), dim, out)
}

/// Sinusoidal encoding: `(pos, 2k) = sin(pos / 10000^{2k/d})`,
/// `(pos, 2k+1) = cos(…)`.
pub fn positional_encoding(n: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::config(format!("positional encoding needs an even dimension, got {d}")));
    }
    let mut data = vec![0.0; n * d];
    for (pos, row) in data.chunks_mut(d).enumerate() {
        for k in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            row[2 * k] = angle.sin();
            row[2 * k + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_parts(vec![n, d], data))
}

/// `x · Wᵀ + 1·b`.
fn affine(tape: &mut Tape, x: Var, w: Var, b: Var, ones: Var) -> Result<Var> {
    let xw = tape.matmul(x, w, true)?;
    let bias = tape.matmul(ones, b, false)?;
    tape.add(xw, bias)
}

/// `LN(tanh(x · Wᵀ + b))` for one modality over all nodes.
pub fn project_modality(tape: &mut Tape, x: Var, w: Var, b: Var, ones: Var) -> Result<Var> {
    let h = affine(tape, x, w, b, ones)?;
    let h = tape.tanh(h)?;
    tape.layer_norm(h)
}

/// `γᵐ = σ(zᵐ · W_gᵐᵀ + b_gᵐ)` for both modalities.
pub fn modality_gates(tape: &mut Tape, z_text: Var, z_visual: Var, vars: &ParamVars, ones: Var) -> Result<(Var, Var)> {
    let gt = affine(tape, z_text, vars.wg_text, vars.bg_text, ones)?;
    let gv = affine(tape, z_visual, vars.wg_visual, vars.bg_visual, ones)?;
    Ok((tape.sigmoid(gt)?, tape.sigmoid(gv)?))
}

/// `a·α + b·(1 − α)`, evaluated as `b + α(a − b)` so equal inputs give
/// back exactly `b` for any `α`.
pub fn convex_mix(tape: &mut Tape, a: Var, b: Var, alpha: f64) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let scaled = tape.scale(diff, alpha)?;
    tape.add(b, scaled)
}

/// Fuses the gates with `α_p` and scales the positional encoding:
/// returns `(g, p′ = g ⊙ p)`.
pub fn modulate_pe(tape: &mut Tape, gamma_text: Var, gamma_visual: Var, positional: Var, alpha_p: f64) -> Result<(Var, Var)> {
    check_unit("alpha_p", alpha_p)?;
    let g = convex_mix(tape, gamma_text, gamma_visual, alpha_p)?;
    let p = tape.mul(g, positional)?;
    Ok((g, p))
}

/// `e⁰ = α_m(zᵗ + p′) + (1 − α_m)(zᵛ + p′)`, computed as the fused
/// features plus `p′`.
pub fn build_identity(tape: &mut Tape, z_text: Var, z_visual: Var, pe_mod: Var, alpha_m: f64) -> Result<Var> {
    check_unit("alpha_m", alpha_m)?;
    let fused = convex_mix(tape, z_text, z_visual, alpha_m)?;
    tape.add(fused, pe_mod)
}

/// Handles for every intermediate of one identity forward pass.
#[derive(Clone, Copy, Debug)]
pub struct IdentityVars {
    pub z_text: Var,
    pub z_visual: Var,
    pub gates: Option<(Var, Var)>,
    pub gate: Option<Var>,
    pub positional: Var,
    pub pe_mod: Var,
    /// Fused projected semantics `α_m zᵗ + (1 − α_m) zᵛ` for all nodes.
    pub fused: Var,
    pub e0: Var,
}

/// Runs projection, gating, modulation and identity fusion for all nodes.
pub fn identity_forward(tape: &mut Tape, vars: &ParamVars, inputs: &NodeInputs, cfg: &IdentityConfig) -> Result<IdentityVars> {
    cfg.validate()?;
    let ones = tape.constant_shared(&inputs.ones);
    let project = |tape: &mut Tape, m: Modality| -> Result<Var> {
        let x = tape.constant_shared(inputs.features(m));
        let (w, b) = vars.projection(m);
        project_modality(tape, x, w, b, ones)
    };
    let z_text = project(tape, Modality::Text)?;
    let z_visual = project(tape, Modality::Visual)?;
    let positional = tape.constant_shared(&inputs.positional);
    let (gates, gate, pe_mod) = if cfg.modulate {
        let (gt, gv) = modality_gates(tape, z_text, z_visual, vars, ones)?;
        let (g, p) = modulate_pe(tape, gt, gv, positional, cfg.alpha_p)?;
        (Some((gt, gv)), Some(g), p)
    } else {
        (None, None, positional)
    };
    let fused = convex_mix(tape, z_text, z_visual, cfg.alpha_m)?;
    let e0 = tape.add(fused, pe_mod)?;
    Ok(IdentityVars {
        z_text,
        z_visual,
        gates,
        gate,
        positional,
        pe_mod,
        fused,
        e0,
    })
}

/// Materialized identity tensors for diagnostics.
#[derive(Clone, Debug)]
pub struct IdentityState {
    pub z_text: Tensor,
    pub z_visual: Tensor,
    pub positional: Tensor,
    /// Fused gate `g`; all ones when modulation is off.
    pub gate: Tensor,
    pub pe_mod: Tensor,
    pub fused: Tensor,
    pub e0: Tensor,
    pub alpha_p: f64,
    pub alpha_m: f64,
}

impl IdentityState {
    pub fn compute(params: &ProjectionParams, inputs: &NodeInputs, cfg: &IdentityConfig) -> Result<Self> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let iv = identity_forward(&mut tape, &vars, inputs, cfg)?;
        let get = |v: Var| tape.value(v).clone();
        Ok(IdentityState {
            z_text: get(iv.z_text),
            z_visual: get(iv.z_visual),
            positional: get(iv.positional),
            gate: iv
                .gate
                .map(get)
                .unwrap_or_else(|| Tensor::full(inputs.positional.shape().to_vec(), 1.0)),
            pe_mod: get(iv.pe_mod),
            fused: get(iv.fused),
            e0: get(iv.e0),
            alpha_p: cfg.alpha_p,
            alpha_m: cfg.alpha_m,
        })
    }

    /// Item rows (`user_count..`) of a node-level tensor.
    pub fn item_rows(t: &Tensor, user_count: usize) -> Tensor {
        let idx: Vec<usize> = (user_count..t.rows()).collect();
        t.select_rows(&idx)
    }
}

/// Mean over rows of `cos(e⁰_i, anchor_i)` with a `1e-12` denominator
/// stabilizer.
pub fn semantic_alignment_score(e0_items: &Tensor, anchors: &Tensor) -> Result<f64> {
    if e0_items.shape() != anchors.shape() || !e0_items.is_matrix() {
        return Err(Error::shape(format!(
            "alignment needs equal matrix shapes, got {:?} and {:?}",
            e0_items.shape(),
            anchors.shape()
        )));
    }
    let n = e0_items.rows();
    if n == 0 {
        return Err(Error::EmptyData("no items to score".into()));
    }
    let total: f64 = (0..n).map(|i| cosine(e0_items.row(i), anchors.row(i))).sum();
    Ok(total / n as f64)
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    use crate::autodiff::kernels::{dot, norm};
    dot(a, b) / (norm(a) * norm(b) + 1e-12)
}
