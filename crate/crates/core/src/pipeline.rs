//! The command-level workflow: prepare, build-graph, train, eval, diagnose
//! and sweep, each reading and writing artifacts in a directory.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{
    k_core_filter, load_features, load_interactions, read_features, read_index_map, split_dataset, write_features, write_index_map,
    Dataset, FeatureMatrix, Modalities, Modality, Split,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_per_group, graph_bias_stats, write_embeddings, BiasStats, GroupMetrics, RankMetrics, Target};
use crate::graph::build_graph;
use crate::maic::{semantic_alignment_score, IdentityConfig, IdentityState, NodeInputs, ProjectionParams};
use crate::model::{ModelConfig, ModelState};
use crate::sparse::{read_graph, write_graph};
use crate::train::{ablation_config, load_checkpoint, random_features, save_checkpoint, AblatedConfigs, Trainer};

pub const SPLIT_FILE: &str = "interactions.tsv";
pub const USERS_FILE: &str = "users.tsv";
pub const ITEMS_FILE: &str = "items.tsv";
pub const POPULARITY_FILE: &str = "popularity.tsv";
pub const TEXT_FILE: &str = "text.mmf";
pub const VISUAL_FILE: &str = "visual.mmf";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NORMALIZED_FILE: &str = "normalized.mgr";
pub const ADJACENCY_FILE: &str = "adjacency.mgr";
pub const ITEM_BASE_FILE: &str = "item_base.mgr";
pub const ITEM_CF_FILE: &str = "item_cf.mgr";
pub const ITEM_AUG_FILE: &str = "item_aug.mgr";
pub const USER_KNN_FILE: &str = "user_knn.mgr";
pub const BIAS_FILE: &str = "bias.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.mck";
pub const FINAL_CHECKPOINT: &str = "final.mck";
pub const REPORT_FILE: &str = "report.json";

/// How graph semantics are formed; recorded in graph manifests.
pub const GRAPH_SEMANTICS_NOTE: &str =
    "item and user graphs use alpha_m-weighted cosine over l2-normalized raw text and visual features, independent of model parameters";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
    pub created_unix: u64,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            seed: cfg.seed(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            notes: BTreeMap::new(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.display().to_string());
        self
    }

    fn note(mut self, key: &str, value: impl Serialize) -> Self {
        self.notes.insert(key.to_string(), serde_json::to_value(value).expect("serializable note"));
        self
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug)]
pub struct PrepareInputs {
    pub interactions: PathBuf,
    pub text_features: PathBuf,
    pub visual_features: PathBuf,
    /// Optional `original_id<TAB>feature_row` map; otherwise item ids are
    /// parsed as feature rows.
    pub item_rows: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub users: usize,
    pub items: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Feature row of every dense item.
fn feature_rows(item_ids: &[String], map: Option<&Path>, feature_path: &Path) -> Result<Vec<usize>> {
    let lookup: Option<HashMap<String, usize>> = match map {
        Some(p) => Some(read_index_map(p)?.into_iter().enumerate().map(|(row, id)| (id, row)).collect()),
        None => None,
    };
    item_ids
        .iter()
        .map(|id| {
            let row = match &lookup {
                Some(m) => m.get(id).copied(),
                None => id.trim().parse().ok(),
            };
            row.ok_or_else(|| Error::format(feature_path, None, format!("no feature row for item {id:?}")))
        })
        .collect()
}

fn select_features(path: &Path, modality: Modality, rows: &[usize]) -> Result<FeatureMatrix> {
    let fm = read_features(path, modality)?;
    if let Some(&r) = rows.iter().find(|&&r| r >= fm.rows()) {
        return Err(Error::format(path, None, format!("feature row {r} out of range for {} rows", fm.rows())));
    }
    Ok(fm.select_rows(rows))
}

/// Loads, k-core filters and splits interactions, aligns features to the
/// dense item order and writes the dataset directory.
pub fn prepare(inputs: &PrepareInputs, out: &Path, cfg: &RunConfig) -> Result<PrepareSummary> {
    cfg.validate()?;
    let raw = load_interactions(&inputs.interactions)?;
    let table = k_core_filter(&raw, cfg.data.k_core)?;
    info!(
        "{}-core kept {} of {} interactions ({} users, {} items)",
        cfg.data.k_core,
        table.edges().len(),
        raw.edges().len(),
        table.user_count(),
        table.item_count()
    );
    let ds = split_dataset(&table, cfg.data.ratios, cfg.seed())?;
    let rows = feature_rows(table.item_ids(), inputs.item_rows.as_deref(), &inputs.text_features)?;
    let text = select_features(&inputs.text_features, Modality::Text, &rows)?;
    let visual = select_features(&inputs.visual_features, Modality::Visual, &rows)?;

    create_dir(out)?;
    ds.write_split_file(&out.join(SPLIT_FILE))?;
    write_index_map(&out.join(USERS_FILE), table.user_ids())?;
    write_index_map(&out.join(ITEMS_FILE), table.item_ids())?;
    write_features(&out.join(TEXT_FILE), &text)?;
    write_features(&out.join(VISUAL_FILE), &visual)?;
    let pop_path = out.join(POPULARITY_FILE);
    let mut pop = String::new();
    for (i, &n) in ds.item_pop().iter().enumerate() {
        pop.push_str(&format!("{i}\t{n}\t{}\n", (n as f64).ln_1p()));
    }
    fs::write(&pop_path, pop).map_err(|e| Error::io(&pop_path, e))?;

    let count = |s: Split| ds.splits().iter().filter(|&&x| x == s).count();
    let summary = PrepareSummary {
        users: ds.user_count(),
        items: ds.item_count(),
        train: count(Split::Train),
        valid: count(Split::Valid),
        test: count(Split::Test),
    };
    let mut manifest = Manifest::new("prepare", cfg)
        .input("interactions", &inputs.interactions)
        .input("text_features", &inputs.text_features)
        .input("visual_features", &inputs.visual_features)
        .note("summary", &summary);
    if let Some(p) = &inputs.item_rows {
        manifest = manifest.input("item_rows", p);
    }
    manifest.outputs = [SPLIT_FILE, USERS_FILE, ITEMS_FILE, TEXT_FILE, VISUAL_FILE, POPULARITY_FILE]
        .map(String::from)
        .to_vec();
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

/// The prepared dataset with features attached.
pub fn load_prepared(dir: &Path) -> Result<Dataset> {
    let users = read_index_map(&dir.join(USERS_FILE))?;
    let items = read_index_map(&dir.join(ITEMS_FILE))?;
    let n = items.len();
    let ds = Dataset::read_split_file(&dir.join(SPLIT_FILE), users, items)?;
    let text = load_features(&dir.join(TEXT_FILE), Modality::Text, n)?;
    let visual = load_features(&dir.join(VISUAL_FILE), Modality::Visual, n)?;
    ds.with_features(Modalities::new(text, visual)?)
}

/// Dataset and module configs with the configured ablation applied.
fn ablated(ds: Dataset, cfg: &RunConfig) -> Result<(Dataset, AblatedConfigs)> {
    let ab = ablation_config(cfg.variant, &cfg.model.identity, &cfg.graph, &cfg.loss);
    let ds = if ab.random_features {
        let f = random_features(ds.features()?, cfg.seed())?;
        ds.with_features(f)?
    } else {
        ds
    };
    Ok((ds, ab))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphBias {
    pub tail_quantile: f64,
    pub base: BiasStats,
    pub cf: BiasStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub adjacency_nnz: usize,
    pub bias: GraphBias,
}

pub fn build_graph_cmd(data: &Path, out: &Path, cfg: &RunConfig) -> Result<GraphSummary> {
    cfg.validate()?;
    let (ds, ab) = ablated(load_prepared(data)?, cfg)?;
    let g = build_graph(&ds, &ab.graph, ab.identity.alpha_m)?;
    let q = cfg.eval.tail_quantile;
    let bias = GraphBias {
        tail_quantile: q,
        base: graph_bias_stats(&g.item_base, ds.item_pop(), q)?,
        cf: graph_bias_stats(&g.item_cf, ds.item_pop(), q)?,
    };
    create_dir(out)?;
    for (name, m) in [
        (NORMALIZED_FILE, &g.normalized),
        (ADJACENCY_FILE, &g.adjacency),
        (ITEM_BASE_FILE, &g.item_base),
        (ITEM_CF_FILE, &g.item_cf),
        (ITEM_AUG_FILE, &g.item_aug),
        (USER_KNN_FILE, &g.user_knn),
    ] {
        write_graph(&out.join(name), m)?;
    }
    write_json(&out.join(BIAS_FILE), &bias)?;
    let summary = GraphSummary {
        nodes: g.normalized.rows(),
        adjacency_nnz: g.adjacency.nnz(),
        bias,
    };
    let mut manifest = Manifest::new("build-graph", cfg)
        .input("data", data)
        .note("graph_semantics", GRAPH_SEMANTICS_NOTE)
        .note("effective_graph_config", &ab.graph)
        .note("summary", &summary);
    manifest.outputs = [NORMALIZED_FILE, ADJACENCY_FILE, ITEM_BASE_FILE, ITEM_CF_FILE, ITEM_AUG_FILE, USER_KNN_FILE, BIAS_FILE]
        .map(String::from)
        .to_vec();
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    info!("graph: {} nodes, {} adjacency entries", summary.nodes, summary.adjacency_nnz);
    Ok(summary)
}

/// Rejects a graph directory built under a different ablation or seed.
fn check_graph_matches(graph: &Path, cfg: &RunConfig) -> Result<()> {
    let m = read_manifest(graph)?;
    if m.config.variant != cfg.variant {
        return Err(Error::config(format!(
            "graph in {} was built for variant {}, but the run uses {}",
            graph.display(),
            m.config.variant,
            cfg.variant
        )));
    }
    if m.config.graph != cfg.graph || m.config.model.identity.alpha_m != cfg.model.identity.alpha_m {
        log::warn!("graph settings in {} differ from the run configuration; using the stored graph", graph.display());
    }
    Ok(())
}

fn model_for(ds: &Dataset, graph: &Path, cfg: &RunConfig, identity: IdentityConfig, params: Option<ProjectionParams>) -> Result<ModelState> {
    let config = ModelConfig {
        identity,
        ..cfg.model.clone()
    };
    let inputs = NodeInputs::from_dataset(ds, config.dim)?;
    let f = ds.features()?;
    let params = params.unwrap_or_else(|| ProjectionParams::init(config.dim, f.text.dim(), f.visual.dim(), cfg.seed()));
    let normalized = read_graph(&graph.join(NORMALIZED_FILE))?;
    ModelState::new(config, params, inputs, Arc::new(normalized))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_valid_recall: Option<f64>,
    pub stopped_early: bool,
}

pub fn train_cmd(data: &Path, graph: &Path, out: &Path, cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    check_graph_matches(graph, cfg)?;
    let (ds, ab) = ablated(load_prepared(data)?, cfg)?;
    let model = model_for(&ds, graph, cfg, ab.identity, None)?;
    create_dir(out)?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut log_file = BufWriter::new(file);
    let mut write_err = None;
    let trainer = Trainer::new(&ds, model, cfg.trainer.clone(), ab.weights)?;
    let res = trainer.train(|rec| {
        let line = serde_json::to_string(rec).expect("serializable record");
        if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&metrics_path, e));
    }
    save_checkpoint(&out.join(BEST_CHECKPOINT), &res.best_params)?;
    save_checkpoint(&out.join(FINAL_CHECKPOINT), &res.final_params.rounded_to_f32())?;
    let summary = TrainSummary {
        epochs: res.history.len(),
        best_epoch: res.best_epoch,
        best_valid_recall: res.best_valid,
        stopped_early: res.stopped_early,
    };
    let mut manifest = Manifest::new("train", cfg)
        .input("data", data)
        .input("graph", graph)
        .note("summary", &summary)
        .note("loss_weights", &ablation_config(cfg.variant, &cfg.model.identity, &cfg.graph, &cfg.loss).weights);
    if cfg.variant == crate::train::Variant::NoMm {
        manifest = manifest.note("no_mm", "text and visual features replaced by seeded random unit-norm rows");
    }
    manifest.outputs = [METRICS_FILE, BEST_CHECKPOINT, FINAL_CHECKPOINT].map(String::from).to_vec();
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub target: Target,
    pub checkpoint: String,
    pub metrics: RankMetrics,
    pub groups: Vec<GroupMetrics>,
}

pub fn eval_cmd(data: &Path, graph: &Path, checkpoint: &Path, target: Target, cfg: &RunConfig, export: Option<&Path>) -> Result<MetricsReport> {
    cfg.validate()?;
    let (ds, ab) = ablated(load_prepared(data)?, cfg)?;
    let params = load_checkpoint(checkpoint)?;
    let model = model_for(&ds, graph, cfg, ab.identity, Some(params))?;
    let emb = model.embeddings()?;
    if let Some(p) = export {
        write_embeddings(p, &emb)?;
    }
    Ok(MetricsReport {
        target,
        checkpoint: checkpoint.display().to_string(),
        metrics: evaluate(&emb, &ds, target, &cfg.eval.ks)?,
        groups: evaluate_per_group(&emb, &ds, target, &cfg.eval.ks, &cfg.eval.sparsity_boundaries)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Mean item cosine between identity and fused projected semantics,
    /// per identity variant.
    pub semantic_alignment: BTreeMap<String, f64>,
    pub bias: GraphBias,
    pub trained: bool,
}

pub fn diagnose_cmd(data: &Path, graph: &Path, checkpoint: Option<&Path>, cfg: &RunConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let (ds, _) = ablated(load_prepared(data)?, cfg)?;
    let params = checkpoint.map(load_checkpoint).transpose()?;
    let model = model_for(&ds, graph, cfg, cfg.model.identity, params)?;
    let mut semantic_alignment = BTreeMap::new();
    for (name, modulate) in [("static_pe", false), ("maic", true)] {
        let id = IdentityConfig {
            modulate,
            ..cfg.model.identity
        };
        let st = IdentityState::compute(&model.params, &model.inputs, &id)?;
        let nu = ds.user_count();
        let score = semantic_alignment_score(&IdentityState::item_rows(&st.e0, nu), &IdentityState::item_rows(&st.fused, nu))?;
        semantic_alignment.insert(name.to_string(), score);
    }
    let q = cfg.eval.tail_quantile;
    let bias = GraphBias {
        tail_quantile: q,
        base: graph_bias_stats(&read_graph(&graph.join(ITEM_BASE_FILE))?, ds.item_pop(), q)?,
        cf: graph_bias_stats(&read_graph(&graph.join(ITEM_CF_FILE))?, ds.item_pop(), q)?,
    };
    Ok(DiagnosticsReport {
        semantic_alignment,
        bias,
        trained: checkpoint.is_some(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub name: String,
    pub settings: Vec<(String, String)>,
    pub train: TrainSummary,
    pub test: RankMetrics,
}

/// Every combination of the listed values, first key varying slowest.
pub fn grid_cells(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut cells = vec![Vec::new()];
    for (key, values) in grid {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c: Vec<(String, String)> = cell.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells
}

/// Builds the graph, trains and tests every grid cell in its own
/// directory, sequentially.
pub fn sweep_cmd(data: &Path, out: &Path, grid: &[(String, Vec<String>)], cfg: &RunConfig) -> Result<Vec<SweepCell>> {
    if grid.is_empty() || grid.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::config("sweep needs at least one key with at least one value"));
    }
    let cells = grid_cells(grid);
    let mut resolved = Vec::with_capacity(cells.len());
    for settings in &cells {
        let mut c = cfg.clone();
        for (k, v) in settings {
            c.set(k, v)?;
        }
        c.validate()?;
        resolved.push(c);
    }
    create_dir(out)?;
    let mut results = Vec::new();
    for (settings, c) in cells.into_iter().zip(resolved) {
        let name = settings.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("__");
        info!("sweep cell {name}");
        let dir = out.join(&name);
        let (graph_dir, run_dir) = (dir.join("graph"), dir.join("run"));
        build_graph_cmd(data, &graph_dir, &c)?;
        let train = train_cmd(data, &graph_dir, &run_dir, &c)?;
        let report = eval_cmd(data, &graph_dir, &run_dir.join(BEST_CHECKPOINT), Target::Test, &c, None)?;
        write_json(&dir.join(REPORT_FILE), &report)?;
        let cell = SweepCell {
            name,
            settings,
            train,
            test: report.metrics,
        };
        let mut manifest = Manifest::new("sweep-cell", &c).input("data", data).note("cell", &cell);
        manifest.outputs = ["graph", "run", REPORT_FILE].map(String::from).to_vec();
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        results.push(cell);
    }
    write_json(&out.join("sweep.json"), &results)?;
    Ok(results)
}

/// Writes a dataset as raw inputs for [`prepare`]: a headed interaction
/// TSV of original ids and feature files whose rows follow item index.
pub fn write_raw_fixture(ds: &Dataset, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let t = ds.interactions();
    let path = dir.join("interactions.tsv");
    let mut text = String::from("user_id\titem_id\n");
    for &(u, i) in t.edges() {
        text.push_str(&format!("{}\t{}\n", t.user_ids()[u], t.item_ids()[i]));
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let f = ds.features()?;
    write_features(&dir.join(TEXT_FILE), &f.text)?;
    write_features(&dir.join(VISUAL_FILE), &f.visual)
}

impl PrepareInputs {
    /// Inputs laid out by [`write_raw_fixture`].
    pub fn in_dir(dir: &Path) -> Self {
        PrepareInputs {
            interactions: dir.join("interactions.tsv"),
            text_features: dir.join(TEXT_FILE),
            visual_features: dir.join(VISUAL_FILE),
            item_rows: None,
        }
    }
}
