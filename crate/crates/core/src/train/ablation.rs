use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Modalities, Modality};
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::maic::IdentityConfig;
use crate::model::LossWeights;
use crate::synthetic::random_unit_rows;

/// Seed offset for replacement features, so they differ from other draws
/// made with the run seed.
const NO_MM_STREAM: u64 = 0x6e6f5f6d6d;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    NoMaic,
    NoCna,
    NoSce,
    NoMm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoMaic, Variant::NoCna, Variant::NoSce, Variant::NoMm];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMaic => "no_maic",
            Variant::NoCna => "no_cna",
            Variant::NoSce => "no_sce",
            Variant::NoMm => "no_mm",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation variant {s:?}; expected one of full, no_maic, no_cna, no_sce, no_mm")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Module configs after applying an ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblatedConfigs {
    pub identity: IdentityConfig,
    pub graph: GraphConfig,
    pub weights: LossWeights,
    /// Whether both feature matrices are to be replaced by random rows.
    pub random_features: bool,
}

pub fn ablation_config(variant: Variant, identity: &IdentityConfig, graph: &GraphConfig, weights: &LossWeights) -> AblatedConfigs {
    let mut out = AblatedConfigs {
        identity: *identity,
        graph: graph.clone(),
        weights: weights.clone(),
        random_features: false,
    };
    match variant {
        Variant::Full => {}
        Variant::NoMaic => out.identity.modulate = false,
        Variant::NoCna => out.graph.eta = 0.0,
        Variant::NoSce => out.weights.lambda_s = 0.0,
        Variant::NoMm => out.random_features = true,
    }
    out
}

/// Seeded unit-norm rows with the same shapes as `features`.
pub fn random_features(features: &Modalities, seed: u64) -> Result<Modalities> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NO_MM_STREAM);
    let n = features.text.rows();
    let text = random_unit_rows(n, features.text.dim(), &mut rng);
    let visual = random_unit_rows(n, features.visual.dim(), &mut rng);
    Modalities::new(FeatureMatrix::new(Modality::Text, text)?, FeatureMatrix::new(Modality::Visual, visual)?)
}
