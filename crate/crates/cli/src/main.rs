//! `storydesk`: ingest article streams, inspect stories and signals, generate
//! corpora and score clusterings. Machine-readable output goes to stdout as
//! JSON; diagnostics go to stderr.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use storydesk_core::corpus::{self, CorpusSpec, NoisePolicy};
use storydesk_core::embed::{Embedder, HashEmbedder};
use storydesk_core::investigate::SignalKind;
use storydesk_core::pipeline::{self, StoryView};
use storydesk_core::Config;

const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "storydesk", version, about = "Deterministic story tracking over news streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a JSON Lines article file into a state directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        state: PathBuf,
        /// Key-value configuration file. Must match the stored one on resume.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Embedding service URL. Its vectors are recorded in the event log.
        #[cfg(feature = "remote-embedder")]
        #[arg(long)]
        embed_url: Option<String>,
    },
    /// Replay the log from scratch and verify every snapshot digest.
    Replay {
        #[arg(long)]
        state: PathBuf,
    },
    /// Inspect stories.
    Stories {
        #[command(subcommand)]
        command: StoriesCommand,
    },
    /// List investigation signals.
    Signals {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<SignalKind>,
        #[arg(long)]
        story: Option<u64>,
    },
    /// Generate a synthetic corpus and its ground truth.
    GenCorpus {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Write the three-day, seven-source replay corpus.
    Table1 {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Score a predicted labeling against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::All)]
        metric: Metric,
        /// Drop articles whose truth label is NOISE instead of scoring each
        /// as its own class.
        #[arg(long)]
        exclude_noise: bool,
    },
}

#[derive(Subcommand)]
enum StoriesCommand {
    /// Stories by importance, one JSON object per line.
    List {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        top: Option<usize>,
    },
    /// One story with its members.
    Show {
        #[command(flatten)]
        state: StateArg,
        #[arg(long)]
        id: u64,
    },
    /// Cluster label of every ingested article, for `eval --pred`.
    Labels {
        #[command(flatten)]
        state: StateArg,
    },
}

#[derive(Args)]
struct StateArg {
    #[arg(long)]
    state: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ari,
    Bcubed,
    All,
}

fn parse_kind(s: &str) -> Result<SignalKind, String> {
    s.parse()
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    fn fatal(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<pipeline::PipelineError> for Failure {
    fn from(e: pipeline::PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::fatal(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(out: &mut impl Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer(&mut *out, value).map_err(Failure::fatal)?;
    out.write_all(b"\n").map_err(Failure::fatal)
}

#[derive(Serialize)]
struct CorpusReport {
    articles: usize,
    noise: usize,
    out: PathBuf,
    truth: PathBuf,
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bcubed: Option<corpus::BCubed>,
    items: usize,
}

fn write_corpus(c: &corpus::Corpus, out: &Path, truth: &Path) -> Result<CorpusReport, Failure> {
    write(out, &c.articles_jsonl())?;
    write(truth, &c.truth_jsonl())?;
    Ok(CorpusReport {
        articles: c.articles.len(),
        noise: c.truth.values().filter(|l| *l == corpus::NOISE).count(),
        out: out.to_path_buf(),
        truth: truth.to_path_buf(),
    })
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let code = match cli.command {
        Command::Ingest {
            input,
            state,
            config,
            #[cfg(feature = "remote-embedder")]
            embed_url,
        } => {
            let config = match config {
                Some(p) => Some(Config::parse_kv(&read(&p)?).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?),
                None => None,
            };
            // The hash embedder always runs under the state's stored settings.
            let hashed = HashEmbedder::default();
            #[cfg(feature = "remote-embedder")]
            let remote = match embed_url {
                Some(url) => {
                    let dim = match &config {
                        Some(c) => c.embed.dim,
                        None => pipeline::stored_config(&state)?.unwrap_or_default().embed.dim,
                    };
                    Some(storydesk_core::embed::RemoteEmbedder::new(url, dim))
                }
                None => None,
            };
            #[cfg(feature = "remote-embedder")]
            let embedder: &dyn Embedder = match &remote {
                Some(r) => r,
                None => &hashed,
            };
            #[cfg(not(feature = "remote-embedder"))]
            let embedder: &dyn Embedder = &hashed;
            let summary = pipeline::run_stream(&input, &state, config, embedder)?;
            if summary.rejected > 0 {
                eprintln!("storydesk: {} record(s) rejected; see ArticleRejected events", summary.rejected);
            }
            emit(&mut out, &summary)?;
            summary.exit_code() as u8
        }
        Command::Replay { state } => {
            let report = pipeline::verify(&state)?;
            emit(&mut out, &report)?;
            0
        }
        Command::Stories { command } => match command {
            StoriesCommand::List { state, top } => {
                let desk = pipeline::load(&state.state)?;
                let stories = desk.ranked_stories();
                for mut s in stories.into_iter().take(top.unwrap_or(usize::MAX)) {
                    s.members.clear();
                    emit(&mut out, &s)?;
                }
                0
            }
            StoriesCommand::Show { state, id } => {
                let desk = pipeline::load(&state.state)?;
                let story: StoryView = desk.story(id).ok_or_else(|| Failure::input(format!("no story {id}")))?;
                emit(&mut out, &story)?;
                0
            }
            StoriesCommand::Labels { state } => {
                let desk = pipeline::load(&state.state)?;
                out.write_all(corpus::labels_to_jsonl(&desk.labels()).as_bytes())
                    .map_err(Failure::fatal)?;
                0
            }
        },
        Command::Signals { state, kind, story } => {
            let desk = pipeline::load(&state)?;
            for s in desk.signals() {
                if kind.is_some_and(|k| k != s.kind) || story.is_some_and(|id| id != s.story_id) {
                    continue;
                }
                emit(&mut out, &s)?;
            }
            0
        }
        Command::GenCorpus {
            spec,
            seed,
            out: out_path,
            truth,
        } => {
            let text = read(&spec)?;
            let mut spec: CorpusSpec =
                serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", spec.display())))?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let c = corpus::generate_corpus(&spec).map_err(Failure::input)?;
            emit(&mut out, &write_corpus(&c, &out_path, &truth)?)?;
            0
        }
        Command::Table1 { out: out_path, truth } => {
            emit(&mut out, &write_corpus(&corpus::table1_corpus(), &out_path, &truth)?)?;
            0
        }
        Command::Eval {
            pred,
            truth,
            metric,
            exclude_noise,
        } => {
            let pred = corpus::parse_labels(&read(&pred)?).map_err(Failure::input)?;
            let truth = corpus::parse_labels(&read(&truth)?).map_err(Failure::input)?;
            let policy = if exclude_noise {
                NoisePolicy::Exclude
            } else {
                NoisePolicy::Singletons
            };
            let ari = match metric {
                Metric::Ari | Metric::All => Some(corpus::eval_ari(&pred, &truth, policy).map_err(Failure::input)?),
                Metric::Bcubed => None,
            };
            let bcubed = match metric {
                Metric::Bcubed | Metric::All => {
                    Some(corpus::eval_bcubed(&pred, &truth, policy).map_err(Failure::input)?)
                }
                Metric::Ari => None,
            };
            let items = match policy {
                NoisePolicy::Singletons => truth.len(),
                NoisePolicy::Exclude => truth.values().filter(|l| *l != corpus::NOISE).count(),
            };
            emit(&mut out, &EvalReport { ari, bcubed, items })?;
            0
        }
    };
    out.flush().map_err(Failure::fatal)?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("storydesk: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
