use log::{debug, info};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, RankMetrics, Target};
use crate::maic::{ParamVars, ProjectionParams};
use crate::model::{LossParts, LossWeights, ModelState, RankingBatch};
use crate::train::{Adam, AdamConfig};

/// Seed offset of the sampling stream, separate from initialization.
const SAMPLER_STREAM: u64 = 0x73616d706c6572;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    /// Cutoff of the validation recall used for early stopping.
    pub early_stop_k: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            adam: AdamConfig::default(),
            batch_size: 2048,
            max_epochs: 1000,
            patience: 20,
            eval_every: 1,
            early_stop_k: 20,
            seed: 2024,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.patience == 0 || self.eval_every == 0 || self.early_stop_k == 0 {
            return Err(Error::config(format!(
                "batch_size, patience, eval_every and early_stop_k must be positive, got {}, {}, {}, {}",
                self.batch_size, self.patience, self.eval_every, self.early_stop_k
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    /// Batch-size weighted means over the epoch.
    pub loss: LossParts<f64>,
    pub valid: Option<RankMetrics>,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Parameters at the best validation epoch, rounded to f32.
    pub best_params: ProjectionParams,
    pub best_epoch: Option<usize>,
    pub best_valid: Option<f64>,
    /// Parameters after the last epoch.
    pub final_params: ProjectionParams,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// `n` distinct items outside the sorted `positives`, uniformly without
/// replacement.
pub fn sample_negatives(rng: &mut ChaCha8Rng, item_count: usize, positives: &[usize], n: usize) -> Result<Vec<usize>> {
    let available = item_count - positives.len();
    if available == 0 {
        return Err(Error::contract("user has interacted with every item; no negatives to sample"));
    }
    let picks = index::sample(rng, available, n.min(available));
    Ok(picks
        .into_iter()
        .map(|mut t| {
            // The t-th item (0-based) not in `positives`.
            for &p in positives {
                if p <= t {
                    t += 1;
                } else {
                    break;
                }
            }
            t
        })
        .collect())
}

pub struct Trainer<'a> {
    ds: &'a Dataset,
    model: ModelState,
    config: TrainerConfig,
    weights: LossWeights,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a Dataset, model: ModelState, config: TrainerConfig, weights: LossWeights) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        if model.user_count() != ds.user_count() || model.inputs.item_count() != ds.item_count() {
            return Err(Error::shape("model nodes do not match the dataset"));
        }
        if ds.train_edge_count() == 0 {
            return Err(Error::EmptyData("no training interactions".into()));
        }
        let adam = Adam::new(config.adam, &model.params.to_vec());
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ SAMPLER_STREAM);
        Ok(Trainer {
            ds,
            model,
            config,
            weights,
            adam,
            rng,
        })
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    fn build_batch(&mut self, pairs: &[(usize, usize)]) -> Result<RankingBatch> {
        let mut b = RankingBatch::default();
        for &(u, i) in pairs {
            let negs = sample_negatives(&mut self.rng, self.ds.item_count(), self.ds.train_items(u), self.weights.n_neg)?;
            b.users.push(u);
            b.positives.push(i);
            b.negatives.push(negs);
        }
        b.check_negatives(|u| self.ds.train_items(u))?;
        Ok(b)
    }

    fn step(&mut self, batch: &RankingBatch) -> Result<LossParts<f64>> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &self.model.params);
        let parts = self.model.losses(&mut tape, &vars, batch, &self.weights)?;
        let grads = tape.backward(parts.total)?;
        let mut params = self.model.params.to_vec();
        let g: Vec<Tensor> = vars
            .to_vec()
            .into_iter()
            .zip(&params)
            .map(|(v, p)| grads.get_or_zeros(v, p))
            .collect();
        self.adam.step(&mut params, &g)?;
        self.model.params = ProjectionParams::from_vec(params)?;
        Ok(parts.values(&tape))
    }

    /// Shuffles the training pairs into batches and samples fresh
    /// negatives; the last batch may be partial.
    pub fn plan_epoch(&mut self) -> Result<Vec<RankingBatch>> {
        let mut pairs = self.ds.train_pairs();
        pairs.shuffle(&mut self.rng);
        pairs.chunks(self.config.batch_size).map(|c| self.build_batch(c)).collect()
    }

    /// One pass over every training pair.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<(LossParts<f64>, usize)> {
        let plan = self.plan_epoch()?;
        let mut sum = [0.0; 6];
        let mut batches = 0;
        let mut n = 0.0;
        for (b, batch) in plan.iter().enumerate() {
            let parts = self.step(batch).map_err(|e| match e {
                Error::Numerics(msg) => Error::Numerics(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            let w = batch.len() as f64;
            n += w;
            for (s, v) in sum.iter_mut().zip([parts.rec, parts.modal, parts.alignment, parts.discrimination, parts.sce, parts.total]) {
                *s += w * v;
            }
            batches += 1;
            debug!("epoch {epoch} batch {b}: loss {:.6}", parts.total);
        }
        let [rec, modal, alignment, discrimination, sce, total] = sum.map(|s| s / n);
        Ok((
            LossParts {
                rec,
                modal,
                alignment,
                discrimination,
                sce,
                total,
            },
            batches,
        ))
    }

    /// Validation metrics for the f32-rounded current parameters.
    pub fn validate_snapshot(&self) -> Result<(ProjectionParams, RankMetrics)> {
        let snapshot = self.model.params.rounded_to_f32();
        let mut model = self.model.clone();
        model.params = snapshot.clone();
        let metrics = evaluate(&model.embeddings()?, self.ds, Target::Valid, &[self.config.early_stop_k])?;
        Ok((snapshot, metrics))
    }

    /// The full loop with early stopping; `on_epoch` sees every record as
    /// it is produced.
    pub fn train(mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<RunResult> {
        let cfg = self.config.clone();
        let mut history = Vec::new();
        let mut best: Option<(usize, f64, ProjectionParams)> = None;
        let mut stopped_early = false;
        for epoch in 1..=cfg.max_epochs {
            let (loss, batches) = self.run_epoch(epoch)?;
            let mut valid = None;
            if epoch % cfg.eval_every == 0 {
                let (snapshot, metrics) = self.validate_snapshot()?;
                let r = metrics.recall_at(cfg.early_stop_k).unwrap();
                if best.as_ref().is_none_or(|b| r > b.1) {
                    best = Some((epoch, r, snapshot));
                }
                valid = Some(metrics);
            }
            let record = EpochRecord {
                epoch,
                batches,
                loss,
                valid,
                best_epoch: best.as_ref().map(|b| b.0),
            };
            info!(
                "epoch {epoch}: loss {:.6} (rec {:.6}){}",
                loss.total,
                loss.rec,
                record
                    .valid
                    .as_ref()
                    .map(|v| format!(", valid recall@{} {:.4}", cfg.early_stop_k, v.recall_at(cfg.early_stop_k).unwrap()))
                    .unwrap_or_default()
            );
            on_epoch(&record);
            history.push(record);
            if let Some((be, _, _)) = &best {
                if epoch - be >= cfg.patience * cfg.eval_every {
                    info!("early stop at epoch {epoch}; best epoch {be}");
                    stopped_early = true;
                    break;
                }
            }
        }
        let final_params = self.model.params.clone();
        let (best_epoch, best_valid, best_params) = match best {
            Some((e, r, p)) => (Some(e), Some(r), p),
            None => (None, None, final_params.rounded_to_f32()),
        };
        Ok(RunResult {
            best_params,
            best_epoch,
            best_valid,
            final_params,
            history,
            stopped_early,
        })
    }
}
