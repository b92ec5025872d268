//! Command-line front end: corpus generation, indexing, retrieval, training,
//! re-ranking and evaluation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use coderank::artifacts::{self, CHECKPOINT_FILE};
use coderank::config::PipelineConfig;
use coderank::corpus::{generate_synthetic_corpus, Corpus, Document, LabelId, SplitName, SyntheticSpec};
use coderank::pipeline::{self, Fingerprints, Indexes, Retriever};
use coderank::{Error, Result};

const CANDIDATES_FILE: &str = "candidates.jsonl";
const TRAIN_LOG_FILE: &str = "train_log.json";
const PREDICTIONS_FILE: &str = "predictions.jsonl";
const REPORT_FILE: &str = "report.json";

#[derive(Parser, Debug)]
#[command(
    name = "coderank",
    version,
    about = "Retrieve-and-re-rank engine for multi-label document coding"
)]
struct Cli {
    #[command(flatten)]
    global: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory (also settable through CODERANK_ARTIFACTS).
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,
    /// Corpus directory holding documents.jsonl, labels.jsonl and splits.json.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Auxiliary-knowledge threshold.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// BM25 score threshold; disables theta calibration.
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    k1: Option<f64>,
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Co-occurrence threshold for label-graph edges.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Contrastive temperature.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus.
    GenSynthetic {
        /// Output directory (defaults to the configured corpus directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        docs: usize,
        #[arg(long, default_value_t = 200)]
        labels: usize,
        /// Generator settings (TOML); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Build the auxiliary, BM25 and label-graph artifacts.
    BuildIndex,
    /// Write per-document candidate sets.
    Retrieve {
        #[arg(long, value_enum, default_value_t = StageArg::Bm25)]
        stage: StageArg,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Restrict to these document ids (repeatable).
        #[arg(long = "id")]
        ids: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train both encoders and write a checkpoint.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank candidates with a checkpoint and write predictions.
    Rerank {
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a split and write the full report.
    Evaluate {
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Precision@K cut-offs (repeatable).
        #[arg(long = "k")]
        ks: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum StageArg {
    Aux,
    Bm25,
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    id: &'a str,
    aux_size: usize,
    aux: &'a BTreeSet<LabelId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bm25_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bm25: Option<&'a BTreeSet<LabelId>>,
    fallback: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut config = match &o.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    config.apply_env();
    if let Some(dir) = &o.artifacts {
        config.paths.artifacts = dir.clone();
    }
    if let Some(dir) = &o.corpus {
        config.paths.corpus = dir.clone();
    }
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(eta) = o.eta {
        config.retrieval.eta = eta;
    }
    if let Some(theta) = o.theta {
        config.retrieval.bm25.theta = theta;
        config.retrieval.calibrate_theta = None;
    }
    if let Some(k1) = o.k1 {
        config.retrieval.bm25.k1 = k1;
    }
    if let Some(b) = o.b {
        config.retrieval.bm25.b = b;
    }
    if let Some(lambda) = o.lambda {
        config.graph.lambda = lambda;
    }
    if let Some(tau) = o.tau {
        config.train.tau = tau;
    }
    config.validate()?;
    Ok(config)
}

/// Loads the stored indexes; BM25 flags given on the command line replace
/// the stored scoring parameters.
fn load_indexes(o: &Overrides, config: &PipelineConfig, corpus: &Corpus) -> Result<(Fingerprints, Indexes)> {
    let fps = Fingerprints::new(corpus, config);
    let mut indexes = pipeline::load_indexes(&config.paths.artifacts, &fps)?;
    let params = &mut indexes.bm25.params;
    if let Some(theta) = o.theta {
        params.theta = theta;
    }
    if let Some(k1) = o.k1 {
        params.k1 = k1;
    }
    if let Some(b) = o.b {
        params.b = b;
    }
    params.validate()?;
    Ok((fps, indexes))
}

fn checkpoint_path(config: &PipelineConfig, given: &Option<PathBuf>) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| config.paths.artifacts.join(CHECKPOINT_FILE))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, &row).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        out.push(b'\n');
    }
    artifacts::write_atomic(path, &out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    out.push(b'\n');
    artifacts::write_atomic(path, &out)
}

fn select_docs<'c>(corpus: &'c Corpus, split: SplitName, ids: &[String]) -> Result<Vec<&'c Document>> {
    if ids.is_empty() {
        return Ok(corpus.split_docs(split));
    }
    ids.iter()
        .map(|id| {
            corpus
                .document(id)
                .ok_or_else(|| Error::MismatchedIds(format!("unknown document id `{id}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let o = &cli.global;
    let config = load_config(o)?;
    match &cli.command {
        Command::GenSynthetic {
            out,
            docs,
            labels,
            spec,
        } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => SyntheticSpec::default(),
            };
            let corpus = generate_synthetic_corpus(config.seed, *docs, *labels, &spec)?;
            let dir = out.clone().unwrap_or_else(|| config.paths.corpus.clone());
            corpus.save(&dir)?;
            println!("wrote {} documents and {} labels to {}", docs, labels, dir.display());
        }
        Command::BuildIndex => {
            let corpus = pipeline::load_corpus(&config)?;
            let indexes = pipeline::build_indexes(&corpus, &config)?;
            let fps = Fingerprints::new(&corpus, &config);
            pipeline::write_indexes(&config.paths.artifacts, &fps, &indexes)?;
            println!(
                "indexed {} labels (theta {}) into {}",
                corpus.labels.len(),
                indexes.bm25.params.theta,
                config.paths.artifacts.display()
            );
        }
        Command::Retrieve { stage, split, ids, out } => {
            let corpus = pipeline::load_corpus(&config)?;
            let (_, indexes) = load_indexes(o, &config, &corpus)?;
            let retriever = Retriever::new(&indexes, &config.retrieval)?;
            let docs = select_docs(&corpus, *split, ids)?;
            let results = retriever.retrieve_all(&docs)?;
            let lines = results.iter().map(|r| {
                let with_bm25 = *stage == StageArg::Bm25;
                CandidateLine {
                    id: &r.id,
                    aux_size: r.aux.len(),
                    aux: &r.aux,
                    bm25_size: with_bm25.then_some(r.bm25.len()),
                    bm25: with_bm25.then_some(&r.bm25),
                    fallback: r.fallback,
                }
            });
            let path = out
                .clone()
                .unwrap_or_else(|| config.paths.artifacts.join(CANDIDATES_FILE));
            write_jsonl(&path, lines)?;
            println!("wrote candidates for {} documents to {}", results.len(), path.display());
        }
        Command::Train { epochs, checkpoint } => {
            let mut config = config.clone();
            if let Some(n) = epochs {
                config.train.epochs = *n;
            }
            let corpus = pipeline::load_corpus(&config)?;
            let (fps, indexes) = load_indexes(o, &config, &corpus)?;
            let model = pipeline::init_model(&corpus, &indexes.graph, &config)?;
            let outcome = pipeline::train_model(model, &corpus, &indexes, &config)?;
            let path = checkpoint_path(&config, checkpoint);
            pipeline::save_model(&path, &fps, &outcome, &config)?;
            let log_path = path.with_file_name(TRAIN_LOG_FILE);
            write_json(&log_path, &outcome.log)?;
            println!(
                "trained {} epochs (best {:?}); checkpoint {}",
                outcome.log.len(),
                outcome.best_epoch,
                path.display()
            );
        }
        Command::Rerank { split, checkpoint, out } => {
            let corpus = pipeline::load_corpus(&config)?;
            let (fps, indexes) = load_indexes(o, &config, &corpus)?;
            let model = pipeline::load_model(&checkpoint_path(&config, checkpoint), &fps, &corpus, &indexes.graph)?;
            let docs = corpus.split_docs(*split);
            let (ranked, pred) = pipeline::rerank(&model, &docs, &indexes, &config)?;
            let path = out
                .clone()
                .unwrap_or_else(|| config.paths.artifacts.join(PREDICTIONS_FILE));
            write_jsonl(&path, pipeline::predictions(&ranked, &pred))?;
            println!("wrote predictions for {} documents to {}", ranked.len(), path.display());
        }
        Command::Evaluate {
            split,
            checkpoint,
            ks,
            out,
        } => {
            let mut config = config.clone();
            if !ks.is_empty() {
                config.eval.ks = ks.clone();
                config.validate()?;
            }
            let corpus = pipeline::load_corpus(&config)?;
            let (fps, indexes) = load_indexes(o, &config, &corpus)?;
            let model = pipeline::load_model(&checkpoint_path(&config, checkpoint), &fps, &corpus, &indexes.graph)?;
            let (report, _) = pipeline::evaluate_split(&model, &corpus, &indexes, &config, *split)?;
            let path = out.clone().unwrap_or_else(|| config.paths.artifacts.join(REPORT_FILE));
            write_json(&path, &report)?;
            let p_at_k: Vec<String> = report.p_at_k.iter().map(|(k, v)| format!("P@{k} {v:.4}")).collect();
            println!(
                "{} documents: micro-F1 {:.4}, macro-F1 {:.4}, {}; report {}",
                report.n_docs,
                report.micro_f1,
                report.macro_f1,
                p_at_k.join(", "),
                path.display()
            );
        }
    }
    Ok(())
}
