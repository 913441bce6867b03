use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rprm::config::{EncoderConfig, RunConfig};
use rprm::corpus::{ingest_jsonl, k_core_filter, time_split, Dataset, SplitDataset};
use rprm::encoder::{hash_encode, load_embeddings, EmbeddingStore};
use rprm::eval::{evaluate, export_phi, paired_ttest, write_phi_csv, Interactions, MetricReport, Target, METRICS};
use rprm::learn::{fit, write_log_line};
use rprm::model::{Model, ReviewInputs};
use rprm::numerics::{read_checkpoint, write_checkpoint};
use rprm::props::{assemble, PropertyMatrix};
use rprm::synth::{generate, write_jsonl, SynthConfig};
use rprm::{Error, Result};

#[derive(Parser)]
#[command(name = "rprm", version, about = "Review-property recommender pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(clap::Args)]
struct Inputs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Property CSV; required by review-based variants.
    #[arg(long)]
    props: Option<PathBuf>,
    /// Embedding file; required by review-based variants.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Valid,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw JSONL dump, apply k-core filtering and write the canonical dataset.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Chronological per-user train/valid/test split.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Compute the six review property scores.
    ScoreProps {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Encode reviews with the built-in hashing encoder.
    EmbedHash {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured dimension.
        #[arg(long)]
        dim: Option<usize>,
        /// Overrides the configured hash seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train a model and write the best-validation checkpoint.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSONL log.
        #[arg(long)]
        log: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Rank items for every user and write a metric report.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        target: TargetArg,
        /// Evaluation threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Paired t-test per metric between two reports.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write learned property-importance distributions as CSV.
    ExportPhi {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic planted-signal corpus.
    #[command(hide = true)]
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn load_dataset_and_split(dataset: &Path, split: &Path) -> Result<(Dataset, SplitDataset)> {
    let ds = Dataset::load_canonical(dataset)?;
    let split = SplitDataset::load(split)?;
    split.check_dataset(&ds)?;
    Ok((ds, split))
}

fn load_review_inputs(inputs: &Inputs, ds: &Dataset) -> Result<(PropertyMatrix, EmbeddingStore)> {
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone().ok_or_else(|| Error::Config(format!("--{what} is required for review-based variants")))
    };
    let props = PropertyMatrix::read_csv(&need(&inputs.props, "props")?)?;
    if props.num_reviews() != ds.reviews.len() {
        return Err(Error::Data("property file row count differs from the dataset".into()));
    }
    let embeds = load_embeddings(&need(&inputs.embeddings, "embeddings")?)?;
    embeds.check_covers(ds)?;
    Ok((props, embeds))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out, config } => {
            let cfg = config.load()?;
            let report = ingest_jsonl(&input, &cfg.data.field_map)?;
            let ds = k_core_filter(&report.reviews, cfg.data.k_core)?;
            ds.write_canonical(&out)?;
            print_json(&json!({
                "parsed": report.reviews.len(),
                "skipped": report.skipped,
                "warnings": report.warnings,
                "stats": ds.stats(),
                "dataset_hash": ds.content_hash(),
            }))
        }
        Command::Split { dataset, out, config } => {
            let cfg = config.load()?;
            let ds = Dataset::load_canonical(&dataset)?;
            let split = time_split(&ds, cfg.data.split)?;
            split.write(&out)?;
            print_json(&json!({"users": split.num_users(), "dataset_hash": split.dataset_hash}))
        }
        Command::ScoreProps { dataset, out, config } => {
            let cfg = config.load()?;
            let ds = Dataset::load_canonical(&dataset)?;
            let props = assemble(&ds, &cfg.props)?;
            props.write_csv(&out)?;
            print_json(&json!({"reviews": props.num_reviews()}))
        }
        Command::EmbedHash { dataset, out, dim, seed, config } => {
            let cfg = config.load()?;
            let (cfg_dim, cfg_seed) = match cfg.encoder {
                EncoderConfig::Hash { dim, seed } => (dim, seed),
                EncoderConfig::File { .. } => (rprm::encoder::DEFAULT_DIM, 0),
            };
            let dim = dim.unwrap_or(cfg_dim);
            if dim == 0 {
                return Err(Error::Config("--dim must be >= 1".into()));
            }
            let ds = Dataset::load_canonical(&dataset)?;
            let store = hash_encode(&ds, dim, seed.unwrap_or(cfg_seed))?;
            store.write(&out)?;
            print_json(&json!({"records": store.len(), "dim": dim}))
        }
        Command::Train { inputs, out, log, seed, config } => {
            let mut cfg = config.load()?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (ds, split) = load_dataset_and_split(&inputs.dataset, &inputs.split)?;
            let interactions = Interactions::new(&ds, &split);
            let loaded = if cfg.model.variant.uses_reviews() {
                Some(load_review_inputs(&inputs, &ds)?)
            } else {
                None
            };
            let review_inputs = match &loaded {
                Some((props, embeds)) => Some(ReviewInputs::from_split(&ds, &split, embeds, props, &cfg.model)?),
                None => None,
            };
            let embed_dim = loaded.as_ref().map_or(0, |(_, e)| e.dim());
            let mut log_file = BufWriter::new(File::create(&log).map_err(|e| Error::io(&log, e))?);
            let outcome = fit(
                &cfg.model,
                embed_dim,
                &interactions,
                review_inputs.as_ref(),
                &cfg.train_config(),
                cfg.seed,
                |entry| write_log_line(&mut log_file, entry),
            )?;
            log_file.flush().map_err(|e| Error::io(&log, e))?;
            let ckpt = outcome.model.to_checkpoint(json!({
                "config": cfg,
                "config_hash": cfg.hash(),
                "dataset_hash": split.dataset_hash,
                "best_epoch": outcome.best_epoch,
                "best_valid_map": outcome.best_valid_map,
            }));
            write_checkpoint(&out, &ckpt)?;
            print_json(&json!({
                "epochs": outcome.log.len(),
                "best_epoch": outcome.best_epoch,
                "best_valid_map": outcome.best_valid_map,
                "config_hash": cfg.hash(),
            }))
        }
        Command::Evaluate { inputs, checkpoint, out, target, workers } => {
            let ckpt = read_checkpoint(&checkpoint)?;
            let (ds, split) = load_dataset_and_split(&inputs.dataset, &inputs.split)?;
            if ckpt.metadata.get("dataset_hash").and_then(|h| h.as_str()) != Some(split.dataset_hash.as_str()) {
                return Err(Error::Data("checkpoint was trained on a different dataset than the split file".into()));
            }
            let model = Model::from_checkpoint(&ckpt)?;
            let loaded = if model.variant().uses_reviews() {
                Some(load_review_inputs(&inputs, &ds)?)
            } else {
                None
            };
            let review_inputs = match &loaded {
                Some((props, embeds)) => Some(ReviewInputs::from_split(&ds, &split, embeds, props, &model.config)?),
                None => None,
            };
            let interactions = Interactions::new(&ds, &split);
            let target = match target {
                TargetArg::Valid => Target::Valid,
                TargetArg::Test => Target::Test,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            let per_user = pool.install(|| -> Result<_> {
                let vectors = model.all_entity_vectors(review_inputs.as_ref())?;
                Ok(evaluate(&vectors, &interactions, target))
            })?;
            let meta = &ckpt.metadata;
            let echo = json!({
                "variant": meta["variant"],
                "config": meta.get("config"),
                "config_hash": meta.get("config_hash"),
                "dataset_hash": split.dataset_hash,
                "checkpoint": checkpoint.display().to_string(),
            });
            let mut report = MetricReport::new(echo, target, per_user);
            report.write(&out)?;
            print_json(&json!({"users": report.users, "means": report.means}))
        }
        Command::Compare { a, b, out } => {
            let ra = MetricReport::load(&a)?;
            let rb = MetricReport::load(&b)?;
            let users_b: std::collections::HashMap<usize, _> = rb.per_user.iter().map(|m| (m.user, *m)).collect();
            let paired: Vec<_> = ra.per_user.iter().filter_map(|m| users_b.get(&m.user).map(|n| (*m, *n))).collect();
            let mut tests = serde_json::Map::new();
            for metric in METRICS {
                let xa: Vec<f64> = paired.iter().map(|(m, _)| m.get(metric).expect("known metric")).collect();
                let xb: Vec<f64> = paired.iter().map(|(_, n)| n.get(metric).expect("known metric")).collect();
                let t = paired_ttest(&xa, &xb)?;
                tests.insert(
                    metric.to_string(),
                    json!({
                        "mean_a": ra.means.get(metric),
                        "mean_b": rb.means.get(metric),
                        "t": if t.t.is_finite() { json!(t.t) } else { json!(t.t.to_string()) },
                        "p": t.p,
                        "df": t.df,
                        "degenerate": t.degenerate,
                    }),
                );
            }
            let result = json!({
                "a": {"path": a.display().to_string(), "config": ra.config},
                "b": {"path": b.display().to_string(), "config": rb.config},
                "paired_users": paired.len(),
                "tests": tests,
            });
            std::fs::write(&out, serde_json::to_string_pretty(&result)?).map_err(|e| Error::io(&out, e))?;
            print_json(&result["tests"])
        }
        Command::ExportPhi { checkpoint, dataset, split, out } => {
            let ckpt = read_checkpoint(&checkpoint)?;
            let model = Model::from_checkpoint(&ckpt)?;
            let (ds, split) = load_dataset_and_split(&dataset, &split)?;
            let rows = export_phi(&model, &Interactions::new(&ds, &split))?;
            write_phi_csv(&out, &rows)?;
            print_json(&json!({"rows": rows.len()}))
        }
        Command::GenToy { out, seed } => {
            let mut cfg = SynthConfig::default();
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let reviews = generate(&cfg)?;
            write_jsonl(&out, &reviews)?;
            print_json(&json!({"reviews": reviews.len()}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error code={}: {msg}", kind.code());
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
