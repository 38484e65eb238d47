//! Resolved run configuration: defaults, then a JSON file, then
//! individual `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SplitRatios;
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_KS, DEFAULT_TAIL_QUANTILE};
use crate::graph::GraphConfig;
use crate::model::{LossWeights, ModelConfig};
use crate::train::{TrainerConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub k_core: usize,
    pub ratios: SplitRatios,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            k_core: 5,
            ratios: SplitRatios::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub tail_quantile: f64,
    /// Upper edges of the sparsity buckets, in training interactions.
    pub sparsity_boundaries: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: DEFAULT_KS.to_vec(),
            tail_quantile: DEFAULT_TAIL_QUANTILE,
            sparsity_boundaries: vec![5, 10, 20],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub loss: LossWeights,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
}

/// Flat names accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "variant", "k_core", "d", "layers", "alpha_p", "alpha_m", "modulate", "k_base", "k_user", "k_cf", "lambda_cf",
    "epsilon", "eta", "block_size", "tau", "tau_a", "tau_d", "lambda_m", "lambda_s", "n_neg", "lr", "beta1", "beta2",
    "eps_adam", "batch_size", "max_epochs", "patience", "eval_every", "early_stop_k", "seed", "ks", "tail_quantile",
    "sparsity_boundaries",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("cannot parse {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Defaults, overlaid by `file` when given, then by `overrides` in
    /// order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_json_file(p)?,
            None => Self::default(),
        };
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.trainer.seed
    }

    /// Sets one tunable by its flat name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "variant" => self.variant = Variant::parse(value.trim())?,
            "k_core" => self.data.k_core = parse(k, value)?,
            "d" | "dim" => self.model.dim = parse(k, value)?,
            "layers" => self.model.layers = parse(k, value)?,
            "alpha_p" => self.model.identity.alpha_p = parse(k, value)?,
            "alpha_m" => self.model.identity.alpha_m = parse(k, value)?,
            "modulate" => self.model.identity.modulate = parse(k, value)?,
            "k_base" | "knn_k" => self.graph.k_base = parse(k, value)?,
            "k_user" => self.graph.k_user = parse(k, value)?,
            "k_cf" | "kcf" => self.graph.k_cf = parse(k, value)?,
            "lambda_cf" => self.graph.lambda_cf = parse(k, value)?,
            "epsilon" => self.graph.epsilon = parse(k, value)?,
            "eta" => self.graph.eta = parse(k, value)?,
            "block_size" => self.graph.block_size = parse(k, value)?,
            "tau" => self.loss.tau = parse(k, value)?,
            "tau_a" => self.loss.tau_a = parse(k, value)?,
            "tau_d" => self.loss.tau_d = parse(k, value)?,
            "lambda_m" => self.loss.lambda_m = parse(k, value)?,
            "lambda_s" => self.loss.lambda_s = parse(k, value)?,
            "n_neg" => self.loss.n_neg = parse(k, value)?,
            "lr" => self.trainer.adam.lr = parse(k, value)?,
            "beta1" => self.trainer.adam.beta1 = parse(k, value)?,
            "beta2" => self.trainer.adam.beta2 = parse(k, value)?,
            "eps_adam" => self.trainer.adam.eps = parse(k, value)?,
            "batch_size" => self.trainer.batch_size = parse(k, value)?,
            "max_epochs" => self.trainer.max_epochs = parse(k, value)?,
            "patience" => self.trainer.patience = parse(k, value)?,
            "eval_every" => self.trainer.eval_every = parse(k, value)?,
            "early_stop_k" => self.trainer.early_stop_k = parse(k, value)?,
            "seed" => self.trainer.seed = parse(k, value)?,
            "ks" => self.eval.ks = parse_list(k, value)?,
            "tail_quantile" => self.eval.tail_quantile = parse(k, value)?,
            "sparsity_boundaries" => self.eval.sparsity_boundaries = parse_list(k, value)?,
            _ => {
                return Err(Error::config(format!("unknown setting {key:?}; known settings: {}", KEYS.join(", "))));
            }
        }
        Ok(())
    }

    /// Checks everything that does not depend on dataset size.
    pub fn validate(&self) -> Result<()> {
        if self.data.k_core == 0 {
            return Err(Error::config("k_core must be at least 1"));
        }
        let r = self.data.ratios;
        if [r.train, r.valid, r.test].iter().any(|v| !(*v >= 0.0)) || ((r.train + r.valid + r.test) - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios must be non-negative and sum to 1, got {r:?}")));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.trainer.validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::config(format!("ks must be positive cutoffs, got {:?}", self.eval.ks)));
        }
        if !(self.eval.tail_quantile > 0.0 && self.eval.tail_quantile < 1.0) {
            return Err(Error::config(format!("tail_quantile must lie in (0, 1), got {}", self.eval.tail_quantile)));
        }
        if self.eval.sparsity_boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sparsity_boundaries must be strictly ascending"));
        }
        if !self.eval.ks.contains(&self.trainer.early_stop_k) {
            log::warn!("early_stop_k {} is not among the reported ks {:?}", self.trainer.early_stop_k, self.eval.ks);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_defaults_then_file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"graph": {"eta": 0.5, "k_cf": 3}, "trainer": {"seed": 9}}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&p), &[("eta".into(), "0.7".into())]).unwrap();
        assert_eq!(cfg.graph.eta, 0.7);
        assert_eq!(cfg.graph.k_cf, 3);
        assert_eq!(cfg.seed(), 9);
        assert_eq!(cfg.graph.k_base, 10);
        assert_eq!(cfg.trainer.batch_size, 2048);
        assert_eq!(cfg.model.dim, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("gamma", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("lr", "fast"), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"grpah": {}}"#).unwrap();
        assert!(matches!(RunConfig::from_json_file(&p), Err(Error::Json { .. })));
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = RunConfig::default();
        for k in KEYS {
            let v = match *k {
                "variant" => "no_sce",
                "modulate" => "false",
                "ks" | "sparsity_boundaries" => "3,7",
                "alpha_p" | "alpha_m" | "tail_quantile" | "beta1" | "beta2" => "0.25",
                _ => "4",
            };
            cfg.set(k, v).unwrap();
        }
        assert_eq!(cfg.variant, Variant::NoSce);
        assert_eq!(cfg.eval.ks, vec![3, 7]);
        cfg.set("knn-k", "6").unwrap();
        assert_eq!(cfg.graph.k_base, 6);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
        let bad = RunConfig {
            eval: EvalConfig {
                tail_quantile: 1.0,
                ..EvalConfig::default()
            },
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
