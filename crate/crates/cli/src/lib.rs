//! `graphsum` command-line pipeline.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numerical-check failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphsum_core::ablation::ablate_edges;
use graphsum_core::config::{Config, ModelConfig, Overrides};
use graphsum_core::corpus::{filter_corpus, load_jsonl, tokenize, write_jsonl, Report, Vocabulary};
use graphsum_core::inference::{evaluate, generate, render_table, score_pair, summarize, DecodeMode, PairResult};
use graphsum_core::numerics::{Checkpoint, GradCheckOptions};
use graphsum_core::synthetic;
use graphsum_core::training::{gradient_check, train, Outputs};
use graphsum_core::wordgraph::{build_graph, graph_stats, EdgeTypeSet, GraphDump};
use graphsum_core::{CoreError, Gnn, Model, Variant};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

/// Largest relative error `grad-check` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "graphsum", about = "Word-graph-guided summarization of radiology findings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated subset of I,II,III.
    #[arg(long, global = true)]
    pub edge_types: Option<EdgeTypeSet>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub gnn: Option<Gnn>,
    #[arg(long, global = true, value_enum)]
    pub copy: Option<Switch>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the word graph of every report as JSONL.
    BuildGraphs {
        #[arg(long)]
        input: PathBuf,
    },
    /// Print corpus averages for one or more splits.
    Stats {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    Train {
        /// Training corpus (overrides the config's data.train).
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
    },
    /// Decode impressions for a corpus with a trained checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Beam width; greedy when absent.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Score a checkpoint (or a predictions file) against reference impressions.
    Evaluate {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// JSONL of {"id", "hypothesis"} lines.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Train and validate every non-empty edge subset and a no-graph baseline.
    AblateEdges {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
    },
    /// Finite-difference gradient check of the full loss at reduced widths.
    GradCheck {
        /// Annotated reports to differentiate through; a built-in 3-report
        /// fixture when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus (train/valid/test splits).
    Synth {
        #[arg(long, default_value_t = 32)]
        train_count: usize,
        #[arg(long, default_value_t = 16)]
        valid_count: usize,
        #[arg(long, default_value_t = 16)]
        test_count: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(CoreError::Config(_)) => EXIT_USAGE,
            CliError::Core(_) => EXIT_DATA,
            CliError::CheckFailed(_) => EXIT_CHECK,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Parse `argv` (program name first) and run one command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        variant: c.variant,
        gnn: c.gnn,
        copy: c.copy.map(|s| s == Switch::On),
        edge_types: c.edge_types,
        seed: c.seed,
        epochs: c.epochs,
    }
}

fn load_config(c: &Common) -> Result<Config> {
    let ov = overrides(c);
    let mut cfg = match &c.config {
        Some(path) => Config::load(path, &ov)?,
        None => Config::defaults_with(&ov)?,
    };
    if let Some(t) = c.threads {
        cfg.train.threads = t;
        cfg.train.validate()?;
    }
    Ok(cfg)
}

fn load_corpus(path: &Path) -> Result<Vec<Report>> {
    Ok(filter_corpus(load_jsonl(path)?))
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    path.as_ref()
        .ok_or_else(|| CliError::Usage(format!("{what} is required (flag or config file)")))
}

fn out_dir(c: &Common) -> Result<Option<&Path>> {
    match &c.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CoreError::Io {
                path: dir.clone(),
                source: e,
            })?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn write_file(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|source| CliError::Core(CoreError::Io { path, source }))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Core(CoreError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }))
}

fn load_model(checkpoint: &Path, cfg: Option<&ModelConfig>) -> Result<Model> {
    let ck = Checkpoint::load(checkpoint).map_err(|e| match e {
        graphsum_core::numerics::NumericsError::Io(source) => CoreError::Io {
            path: checkpoint.to_path_buf(),
            source,
        },
        other => CoreError::Data(format!("{}: {other}", checkpoint.display())),
    })?;
    Model::from_checkpoint(&ck, cfg).map_err(|e| match e {
        CoreError::Numerics(n) => CliError::Core(CoreError::Data(format!("{}: {n}", checkpoint.display()))),
        other => other.into(),
    })
}

fn decode_mode(beam: Option<usize>) -> DecodeMode {
    match beam {
        Some(w) => DecodeMode::Beam(w),
        None => DecodeMode::Greedy,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub hypothesis: String,
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::BuildGraphs { input } => {
            let cfg = load_config(common)?;
            let reports = load_corpus(input)?;
            let mut text = String::new();
            for r in &reports {
                let dump = GraphDump::new(&r.id, &build_graph(r, cfg.model.edge_types));
                text.push_str(&serde_json::to_string(&dump).expect("graph serializes"));
                text.push('\n');
            }
            match out_dir(common)? {
                Some(dir) => write_file(dir.join("graphs.jsonl"), &text),
                None => emit(out, &text),
            }
        }
        Command::Stats { inputs } => {
            let cfg = load_config(common)?;
            let mut rows = vec![["split", "reports", "AFL", "AFS", "AFE", "AIL", "AIS"].map(String::from)];
            let mut all = Vec::new();
            for path in inputs {
                let s = graph_stats(&load_corpus(path)?, cfg.model.edge_types)?;
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                rows.push([
                    name.clone(),
                    s.reports.to_string(),
                    format!("{:.2}", s.afl),
                    format!("{:.2}", s.afs),
                    format!("{:.2}", s.afe),
                    format!("{:.2}", s.ail),
                    format!("{:.2}", s.ais),
                ]);
                all.push((name, s));
            }
            if let Some(dir) = out_dir(common)? {
                write_file(dir.join("stats.json"), &(serde_json::to_string_pretty(&all).expect("serializes") + "\n"))?;
            }
            emit(out, &render_table(&rows))
        }
        Command::Train { train: t, valid } => {
            let cfg = load_config(common)?;
            let dir = out_dir(common)?.ok_or_else(|| CliError::Usage("train needs --out DIR".into()))?;
            let train_path = t.as_ref().or(cfg.data.train.as_ref());
            let train_set = load_corpus(require(&train_path.cloned(), "training corpus")?)?;
            let valid_set = match valid.as_ref().or(cfg.data.valid.as_ref()) {
                Some(p) => load_corpus(p)?,
                None => Vec::new(),
            };
            let vocab = Vocabulary::build(&train_set, cfg.train.min_count)?;
            let mut model = Model::new(cfg.model.clone(), vocab, cfg.train.seed)?;
            let outputs = Outputs {
                dir: Some(dir.to_path_buf()),
            };
            let outcome = train(&mut model, &train_set, &valid_set, &cfg.train, &outputs, |_, r| {
                let valid = r.valid_rouge1.map(|v| format!(" valid R-1 {:.4}", v)).unwrap_or_default();
                let _ = writeln!(out, "epoch {:>3}  loss {:.4}{valid}", r.epoch, r.train_loss);
                true
            })?;
            if let Some(e) = outcome.best_epoch {
                emit(out, &format!("best epoch {e}; checkpoints in {}\n", dir.display()))?;
            }
            Ok(())
        }
        Command::Generate { checkpoint, input, beam } => {
            let cfg = common.config.as_ref().map(|_| load_config(common)).transpose()?;
            let model = load_model(checkpoint, cfg.as_ref().map(|c| &c.model))?;
            let max_len = cfg.map(|c| c.train.max_decode_len).unwrap_or(50);
            let mut text = String::new();
            for r in load_corpus(input)? {
                let p = model.prepare(&r)?;
                let hyp = generate(&model, &p, max_len, decode_mode(*beam))?;
                let line = Prediction {
                    id: r.id.clone(),
                    hypothesis: hyp.join(" "),
                };
                text.push_str(&serde_json::to_string(&line).expect("serializes"));
                text.push('\n');
            }
            match out_dir(common)? {
                Some(dir) => write_file(dir.join("predictions.jsonl"), &text),
                None => emit(out, &text),
            }
        }
        Command::Evaluate {
            checkpoint,
            predictions,
            input,
            beam,
        } => {
            let references = load_corpus(input)?;
            let (report, pairs) = match (checkpoint, predictions) {
                (Some(ck), _) => {
                    let cfg = common.config.as_ref().map(|_| load_config(common)).transpose()?;
                    let model = load_model(ck, cfg.as_ref().map(|c| &c.model))?;
                    let (max_len, threads) = cfg
                        .map(|c| (c.train.max_decode_len, c.train.threads))
                        .unwrap_or((50, common.threads.unwrap_or(1)));
                    evaluate(&model, &references, max_len, decode_mode(*beam), threads)?
                }
                (None, Some(path)) => {
                    let pairs = score_predictions(path, &references)?;
                    (summarize(&pairs)?, pairs)
                }
                (None, None) => return Err(CliError::Usage("evaluate needs --checkpoint or --predictions".into())),
            };
            if let Some(dir) = out_dir(common)? {
                write_file(dir.join("metrics.json"), &report.to_json())?;
                write_file(dir.join("metrics.txt"), &report.to_table())?;
                write_file(dir.join("buckets.csv"), &report.to_csv())?;
                let lines: String = pairs
                    .iter()
                    .map(|p| serde_json::to_string(p).expect("serializes") + "\n")
                    .collect();
                write_file(dir.join("pairs.jsonl"), &lines)?;
            }
            emit(out, &report.to_table())
        }
        Command::AblateEdges { train: t, valid, seeds } => {
            let cfg = load_config(common)?;
            let train_path = t.as_ref().or(cfg.data.train.as_ref()).cloned();
            let valid_path = valid.as_ref().or(cfg.data.valid.as_ref()).cloned();
            let train_set = load_corpus(require(&train_path, "training corpus")?)?;
            let valid_set = load_corpus(require(&valid_path, "validation corpus")?)?;
            let report = ablate_edges(&cfg.model, &cfg.train, &train_set, &valid_set, seeds, cfg.train.threads)?;
            if let Some(dir) = out_dir(common)? {
                write_file(dir.join("ablation.json"), &report.to_json())?;
                write_file(dir.join("ablation.txt"), &report.to_table())?;
            }
            emit(out, &report.to_table())?;
            let verdict = if report.all_edges_beat_baseline() { "yes" } else { "no" };
            emit(out, &format!("all edges >= no graph (median R-1): {verdict}\n"))
        }
        Command::GradCheck { input } => {
            let cfg = load_config(common)?;
            let reports = match input {
                Some(p) => load_jsonl(p)?,
                None => grad_check_fixture(),
            };
            let vocab = Vocabulary::build(&reports, 1)?;
            let variants = match common.variant {
                Some(v) => vec![v],
                None => vec![Variant::Lstm, Variant::Transformer],
            };
            let mut worst: f64 = 0.0;
            for v in variants {
                let model_cfg = ModelConfig {
                    variant: v,
                    ..cfg.model.clone()
                }
                .shrunk();
                let model = Model::new(model_cfg, vocab.clone(), cfg.train.seed)?;
                let r = gradient_check(
                    &model,
                    &reports,
                    GradCheckOptions {
                        seed: cfg.train.seed,
                        ..GradCheckOptions::default()
                    },
                )?;
                emit(
                    out,
                    &format!(
                        "{v}: max relative error {:.3e} over {} coordinates (worst: {})\n",
                        r.max_rel_error,
                        r.coords_checked,
                        r.worst_param.unwrap_or_default()
                    ),
                )?;
                worst = worst.max(r.max_rel_error);
            }
            if worst <= GRAD_TOLERANCE {
                Ok(())
            } else {
                Err(CliError::CheckFailed(format!(
                    "max relative error {worst:.3e} exceeds {GRAD_TOLERANCE:e}"
                )))
            }
        }
        Command::Synth {
            train_count,
            valid_count,
            test_count,
        } => {
            let dir = out_dir(common)?.ok_or_else(|| CliError::Usage("synth needs --out DIR".into()))?;
            let seed = common.seed.unwrap_or(1);
            // separate streams per split keep the splits disjoint in id
            for (name, n, s) in [
                ("train", *train_count, seed),
                ("valid", *valid_count, seed.wrapping_add(1000)),
                ("test", *test_count, seed.wrapping_add(2000)),
            ] {
                write_jsonl(dir.join(format!("{name}.jsonl")), &synthetic::generate(n, s))?;
            }
            emit(out, &format!("wrote train/valid/test splits to {}\n", dir.display()))
        }
    }
}

/// The worked example plus two synthetic reports.
pub fn grad_check_fixture() -> Vec<Report> {
    let mut reports = vec![synthetic::worked_example()];
    reports.extend(synthetic::generate(2, 17));
    reports
}

fn score_predictions(path: &Path, references: &[Report]) -> Result<Vec<PairResult>> {
    let text = fs::read_to_string(path).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hyps: HashMap<String, Vec<String>> = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: Prediction = serde_json::from_str(line)
            .map_err(|e| CoreError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        hyps.insert(p.id, tokenize(&p.hypothesis));
    }
    references
        .iter()
        .map(|r| {
            let hyp = hyps
                .get(&r.id)
                .ok_or_else(|| CoreError::Data(format!("{}: no prediction for `{}`", path.display(), r.id)))?;
            Ok(score_pair(&r.id, &r.impression, hyp))
        })
        .collect()
}
