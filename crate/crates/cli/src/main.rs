use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddn::domains::{write_dataset, EmbeddingTable, FEATURE_DIM};
use ddn::dynnet::DynamicNetwork;
use ddn::experiments::{
    domain_stream, eval_mismatch, eval_shuffle, export_domain_factors, export_image_factors, load_model,
    run_experiment, ExperimentConfig, ModelKind, TrainedModel, Workbench, DEFAULT_SHUFFLES,
};
use ddn::inference::{bench_throughput, BenchConfig, BenchMode};
use ddn::{seed, Error, Result};

#[derive(Parser)]
#[command(name = "ddn", version, about = "Train, evaluate and benchmark domain-aware dynamic networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Without it, defaults are used and --seed is required.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_bytes(&fs::read(path).map_err(|e| io_err(path, e))?)?,
            None => {
                let seed = self
                    .seed
                    .ok_or_else(|| Error::InvalidArgument("--seed is required without --config".into()))?;
                ExperimentConfig::new("default", seed, "runs")
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Folded,
    Persample,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and write the train and validation splits.
    GenData(Common),
    /// Train models, write checkpoints and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Model kinds to train; defaults to the config's list.
        #[arg(long, value_parser = parse_kind)]
        model: Vec<ModelKind>,
        /// Experts per dynamic layer.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Validation accuracy of a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Accuracy of a domain-conditioned model under permuted domain embeddings.
    ShuffleEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHUFFLES)]
        shuffles: usize,
    },
    /// Accuracy when validation domains are grouped by other keys.
    MismatchEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated attribute names; defaults to the config's eval keys.
        #[arg(long, value_delimiter = ',')]
        eval_keys: Option<Vec<String>>,
    },
    /// Write controller outputs as CSV.
    ExportFactors {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// One row per validation image instead of one per domain.
        #[arg(long)]
        per_image: bool,
    },
    /// Streaming throughput of folded reuse versus per-frame folding.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Trained dynamic network; a freshly initialised one is used otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::parse(s).map_err(|e| e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("{}: {e}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dynamic_of(model: TrainedModel, what: &str) -> Result<DynamicNetwork> {
    match model {
        TrainedModel::Ddn(m) => Ok(m.0),
        TrainedModel::Sdn(m) if what == "factors" => Ok(m.0),
        other => Err(Error::InvalidArgument(format!(
            "{what} needs a domain-conditioned dynamic network, got {}",
            other.kind().name()
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.load()?;
            let bench = Workbench::prepare(&cfg)?;
            let train = write_dataset(&bench.train, &cfg.output_dir, "train")?;
            let val = write_dataset(&bench.val, &cfg.output_dir, "val")?;
            println!("{}\n{}", train.display(), val.display());
        }
        Command::Train { common, model, k } => {
            let mut cfg = common.load()?;
            if !model.is_empty() {
                cfg.models = model;
            }
            if let Some(k) = k {
                cfg.arch.k = k;
            }
            print_json(&run_experiment(&cfg)?)?;
        }
        Command::Eval { common, checkpoint } => {
            let bench = Workbench::prepare(&common.load()?)?;
            let model = load_model(&checkpoint)?;
            print_json(&bench.evaluate_split(model.predictor(), true)?)?;
        }
        Command::ShuffleEval {
            common,
            checkpoint,
            shuffles,
        } => {
            let bench = Workbench::prepare(&common.load()?)?;
            let net = dynamic_of(load_model(&checkpoint)?, "shuffle-eval")?;
            print_json(&eval_shuffle(&bench, &net, shuffles)?)?;
        }
        Command::MismatchEval {
            common,
            checkpoint,
            eval_keys,
        } => {
            let cfg = common.load()?;
            let keys = eval_keys.unwrap_or_else(|| cfg.eval_keys.clone());
            let bench = Workbench::prepare(&cfg)?;
            let net = dynamic_of(load_model(&checkpoint)?, "mismatch-eval")?;
            print_json(&eval_mismatch(&bench, &net, &keys)?)?;
        }
        Command::ExportFactors {
            common,
            checkpoint,
            csv,
            per_image,
        } => {
            let bench = Workbench::prepare(&common.load()?)?;
            let net = dynamic_of(load_model(&checkpoint)?, "factors")?;
            let file = fs::File::create(&csv).map_err(|e| io_err(&csv, e))?;
            let mut out = BufWriter::new(file);
            if per_image {
                export_image_factors(&mut out, &net, &bench.val, &bench.val_bank)?;
            } else {
                let part = bench.eval_partition(&bench.val, &bench.config.train_keys)?;
                let table = EmbeddingTable::compute(&part, &bench.val_bank)?;
                export_domain_factors(&mut out, &net, &bench.val, &part, &table)?;
            }
            out.flush().map_err(|e| io_err(&csv, e))?;
        }
        Command::Bench {
            common,
            checkpoint,
            mode,
            k,
            frames,
            repeats,
        } => {
            let mut cfg = common.load()?;
            cfg.arch.k = k;
            let net = match checkpoint {
                Some(p) => dynamic_of(load_model(&p)?, "bench")?,
                None => {
                    let mut rng = seed::rng(cfg.init_seed(ModelKind::Ddn));
                    let layers = cfg.arch.layers(cfg.dataset.classes)?;
                    DynamicNetwork::init(ddn::domains::image_shape(), &layers, k, FEATURE_DIM, &mut rng)?
                }
            };
            let bench = Workbench::prepare(&cfg)?;
            let part = bench.eval_partition(&bench.val, &cfg.train_keys)?;
            let stream = domain_stream(&bench.val, &bench.val_bank, &part, &[(0, frames)])?;
            let mode = match mode {
                Mode::Folded => BenchMode::FoldedReuse,
                Mode::Persample => BenchMode::PerSampleFold,
            };
            let bench_cfg = BenchConfig {
                repeats,
                ..BenchConfig::default()
            };
            print_json(&bench_throughput(&net.cast(), &stream.features, &stream.inputs, mode, bench_cfg)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
