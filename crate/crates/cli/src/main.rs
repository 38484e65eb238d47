use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mail_core::config::RunConfig;
use mail_core::eval::Target;
use mail_core::pipeline::{self, PrepareInputs, BEST_CHECKPOINT, REPORT_FILE};
use mail_core::synthetic::{planted_dataset, zipf_dataset, zipf_items, PlantedConfig};
use mail_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mail", version, about = "ID-free multimodal recommendation: data, graphs, training and evaluation")]
struct Cli {
    /// Log filter, e.g. `info` or `mail_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, split and index raw interactions and features.
    Prepare {
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        visual: PathBuf,
        /// `item_id<TAB>row` map into the feature files.
        #[arg(long)]
        item_rows: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build the augmented item graph and normalized adjacency.
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train with early stopping; writes checkpoints and per-epoch metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Rank all items for every user and report Recall and NDCG.
    Eval {
        /// Run directory from `train`; supplies data, graph, checkpoint and config.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TargetArg::Test)]
        target: TargetArg,
        /// Write identity and final embeddings here.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Semantic alignment of static and modulated identities plus graph bias.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Trained parameters; the seeded initialization otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build, train and test every cell of a grid, one directory each.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `key=v1,v2,...`; repeat for more axes.
        #[arg(long = "grid", value_parser = parse_grid, required = true)]
        grid: Vec<(String, Vec<String>)>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a synthetic raw fixture usable by `prepare`.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Item count for the Zipf fixture.
        #[arg(long, default_value_t = 200)]
        items: usize,
        /// User count for the Zipf fixture.
        #[arg(long, default_value_t = 300)]
        users: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Valid,
    Test,
    Train,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Valid => Target::Valid,
            TargetArg::Test => Target::Test,
            TargetArg::Train => Target::Train,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Planted,
    Zipf,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any setting, e.g. `--set tau=0.1`.
    #[arg(long = "set", value_parser = parse_pair)]
    set: Vec<(String, String)>,
    #[arg(long)]
    seed: Option<u64>,
    /// full, no_maic, no_cna, no_sce or no_mm.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lambda_cf: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    kcf: Option<usize>,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl ConfigArgs {
    /// `--set` pairs followed by the typed flags.
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = self.set.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("variant", self.variant.clone());
        push("lambda_cf", self.lambda_cf.map(|v| v.to_string()));
        push("lambda_s", self.lambda_s.map(|v| v.to_string()));
        push("k_cf", self.kcf.map(|v| v.to_string()));
        push("k_base", self.knn_k.map(|v| v.to_string()));
        push("eta", self.eta.map(|v| v.to_string()));
        push("dim", self.dim.map(|v| v.to_string()));
        push("max_epochs", self.max_epochs.map(|v| v.to_string()));
        out
    }

    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides())
    }

    /// Like [`resolve`](Self::resolve), but starting from `base` when no
    /// config file is given.
    fn resolve_over(&self, base: RunConfig) -> Result<RunConfig> {
        if self.config.is_some() {
            return self.resolve();
        }
        let mut cfg = base;
        for (k, v) in self.overrides() {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_grid(s: &str) -> std::result::Result<(String, Vec<String>), String> {
    let (k, v) = parse_pair(s)?;
    let values: Vec<String> = v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
    if values.is_empty() {
        return Err(format!("no values for {k}"));
    }
    Ok((k, values))
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    if let Some(p) = out {
        pipeline::write_json(p, value)?;
    }
    println!("{}", serde_json::to_string_pretty(value).expect("serializable report"));
    Ok(())
}

fn manifest_input(run: &Path, key: &str) -> Result<PathBuf> {
    let m = pipeline::read_manifest(run)?;
    m.inputs
        .get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("manifest in {} has no {key} input", run.display())))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            interactions,
            text,
            visual,
            item_rows,
            out,
            config,
        } => {
            let inputs = PrepareInputs {
                interactions,
                text_features: text,
                visual_features: visual,
                item_rows,
            };
            let summary = pipeline::prepare(&inputs, &out, &config.resolve()?)?;
            emit(&summary, None)
        }
        Command::BuildGraph { data, out, config } => {
            let summary = pipeline::build_graph_cmd(&data, &out, &config.resolve()?)?;
            emit(&summary, None)
        }
        Command::Train { data, graph, out, config } => {
            let summary = pipeline::train_cmd(&data, &graph, &out, &config.resolve()?)?;
            emit(&summary, None)
        }
        Command::Eval {
            run,
            data,
            graph,
            checkpoint,
            target,
            export,
            out,
            config,
        } => {
            let (data, graph, checkpoint, cfg) = match &run {
                Some(dir) => {
                    let manifest = pipeline::read_manifest(dir)?;
                    (
                        data.map_or_else(|| manifest_input(dir, "data"), Ok)?,
                        graph.map_or_else(|| manifest_input(dir, "graph"), Ok)?,
                        checkpoint.unwrap_or_else(|| dir.join(BEST_CHECKPOINT)),
                        config.resolve_over(manifest.config)?,
                    )
                }
                None => {
                    let missing = |name: &str| Error::Config(format!("eval needs --{name} or --run"));
                    (
                        data.ok_or_else(|| missing("data"))?,
                        graph.ok_or_else(|| missing("graph"))?,
                        checkpoint.ok_or_else(|| missing("checkpoint"))?,
                        config.resolve()?,
                    )
                }
            };
            let out = out.or_else(|| run.as_ref().map(|d| d.join(REPORT_FILE)));
            let report = pipeline::eval_cmd(&data, &graph, &checkpoint, target.into(), &cfg, export.as_deref())?;
            emit(&report, out.as_deref())
        }
        Command::Diagnose {
            data,
            graph,
            checkpoint,
            out,
            config,
        } => {
            let report = pipeline::diagnose_cmd(&data, &graph, checkpoint.as_deref(), &config.resolve()?)?;
            emit(&report, out.as_deref())
        }
        Command::Sweep { data, out, grid, config } => {
            let cells = pipeline::sweep_cmd(&data, &out, &grid, &config.resolve()?)?;
            emit(&cells, None)
        }
        Command::Synth {
            kind,
            out,
            seed,
            items,
            users,
        } => {
            let ds = match kind {
                SynthKind::Planted => planted_dataset(&PlantedConfig::default(), seed)?,
                SynthKind::Zipf => zipf_dataset(users, &zipf_items(items, 1.1, 100.0, 16, seed), seed)?,
            };
            pipeline::write_raw_fixture(&ds, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
