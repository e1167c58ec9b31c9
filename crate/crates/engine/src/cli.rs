//! `guardqa` command line. Exit codes: 0 success, 1 domain error, 2 usage.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guardqa_core::corpus::{holdout_split, QARecord};
use serde::Serialize;
use serde_json::json;

use crate::config::ServiceConfig;
use crate::evaluation::{self, EvalError};
use crate::pipeline::{load_sanitizer, AskRequest, Engine, EngineError};
use crate::providers::ProviderSet;
use crate::store::CorpusStore;
use crate::synthetic::{self, SyntheticSpec, DEFAULT_SEED};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "guardqa", version, about = "Guarded question answering over a curated corpus")]
pub struct Cli {
    /// Service config file; `GUARDQA_*` variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Emit exactly one JSON document on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a JSONL corpus into a store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Store directory; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the persisted index for a store.
    Index {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Pick the relevance threshold from a seeded hold-out split.
    Calibrate {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        /// Write the chosen threshold into the --config file.
        #[arg(long)]
        write: bool,
    },
    /// Run an evaluation suite and print its report.
    Eval(EvalArgs),
    /// Run the HTTP service until interrupted.
    Serve,
    /// Answer one question in-process.
    Ask {
        #[arg(long)]
        text: String,
        #[arg(long)]
        lang: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Text,
    Hallucination,
    Retrieval,
    Loo,
    Robustness,
    Scalability,
    Bias,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// JSONL items for the text and hallucination suites.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Corpus store to evaluate; the synthetic corpus when unset.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub corpus_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = guardqa_core::metrics::DEFAULT_POLLS)]
    pub polls: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 5000, 10000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 20)]
    pub checks: usize,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Retrieval(#[from] guardqa_core::retrieval::RetrievalError),
    #[error(transparent)]
    Split(#[from] guardqa_core::corpus::SplitError),
    #[error(transparent)]
    Providers(#[from] crate::providers::ProviderSetupError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Parse `args` and run. Output goes to the given streams.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DOMAIN
        }
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Io(e.to_string()))
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, CliError> {
    Ok(ServiceConfig::load(cli.config.as_deref())?)
}

fn with_store(mut cfg: ServiceConfig, store: &Option<PathBuf>) -> ServiceConfig {
    if let Some(s) = store {
        cfg.store_dir = s.clone();
    }
    cfg
}

fn published(cfg: &ServiceConfig) -> Result<Vec<QARecord>, CliError> {
    let store = CorpusStore::open(&cfg.store_dir, load_sanitizer(cfg)?, cfg.snapshot_every)?;
    Ok(store.published())
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest { input, out: dir } => {
            let cfg = with_store(load_config(cli)?, dir);
            if !input.is_file() {
                return Err(CliError::Io(format!("{}: no such file", input.display())));
            }
            let mut store = CorpusStore::open(&cfg.store_dir, load_sanitizer(&cfg)?, cfg.snapshot_every)?;
            let report = store.ingest_jsonl(input, chrono::Utc::now())?;
            emit(out, &report)
        }
        Command::Index { store } => {
            let cfg = with_store(load_config(cli)?, store);
            let engine = Engine::open(&cfg)?;
            let served = engine.served();
            emit(
                out,
                &json!({
                    "docs": served.index.len(),
                    "groups": served.index.groups().len(),
                    "corpus_version": served.corpus_version,
                    "index_version": served.index.version(),
                    "embedder": served.index.dense().provider_id(),
                }),
            )
        }
        Command::Calibrate {
            store,
            seed,
            fraction,
            write,
        } => {
            if *write && cli.config.is_none() {
                return Err(CliError::Usage("--write needs --config".into()));
            }
            let cfg = with_store(load_config(cli)?, store);
            let records = published(&cfg)?;
            let providers = ProviderSet::from_config(&cfg)?;
            let split = holdout_split(&records, *seed, *fraction)?;
            let (train, holdout) = split_records(&records, &split);
            let index = evaluation::build_index(&train, providers.embedder.as_ref(), cfg.embedding_dimension)?;
            let scorer = guardqa_core::retrieval::JaccardScorer::new(crate::pipeline::index_tokenizer());
            let cal = index.calibrate(&holdout, providers.embedder.as_ref(), &scorer)?;
            if *write {
                if let Some(path) = cli.config.as_deref() {
                    write_tau(path, cal.tau)?;
                }
            }
            emit(out, &cal)
        }
        Command::Eval(args) => eval(cli, args, out),
        Command::Serve => {
            let cfg = load_config(cli)?;
            let engine = Arc::new(Engine::open(&cfg)?);
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Io(e.to_string()))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&cfg.listen)
                    .await
                    .map_err(|e| CliError::Io(format!("{}: {e}", cfg.listen)))?;
                tracing::info!(addr = %cfg.listen, "listening");
                crate::service::serve(engine, listener, crate::service::shutdown_signal())
                    .await
                    .map_err(|e| CliError::Io(e.to_string()))
            })
        }
        Command::Ask { text, lang } => {
            let cfg = load_config(cli)?;
            let engine = Engine::open(&cfg)?;
            let mut req = AskRequest::text(text);
            req.language = lang.clone();
            let env = engine.answer(&req);
            if cli.json {
                emit(out, &env)
            } else {
                writeln!(out, "[{}] {}", env.route_taken.as_str(), env.answer_text).map_err(|e| CliError::Io(e.to_string()))
            }
        }
    }
}

fn split_records(
    records: &[QARecord],
    split: &guardqa_core::corpus::HoldoutSplit,
) -> (Vec<QARecord>, Vec<(String, String)>) {
    let held: std::collections::BTreeSet<&str> = split.held_out.iter().map(String::as_str).collect();
    let train = records.iter().filter(|r| !held.contains(r.id.as_str())).cloned().collect();
    let holdout = records
        .iter()
        .filter(|r| held.contains(r.id.as_str()))
        .map(|r| (r.sanitized_question.clone(), r.group_id.clone()))
        .collect();
    (train, holdout)
}

fn write_tau(path: &Path, tau: f64) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| CliError::Io(format!("{}: not a JSON object", path.display())))?;
    obj.insert(
        "tau".into(),
        if tau.is_finite() { json!(tau) } else { json!("inf") },
    );
    let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn eval_records(cfg: &ServiceConfig, args: &EvalArgs) -> Result<Vec<QARecord>, CliError> {
    match &args.store {
        Some(_) => published(cfg),
        None => Ok(synthetic::generate(&SyntheticSpec {
            seed: args.corpus_seed,
            ..SyntheticSpec::default()
        })),
    }
}

fn read_input(args: &EvalArgs) -> Result<String, CliError> {
    let path = args
        .input
        .as_deref()
        .ok_or_else(|| CliError::Usage("this suite needs --input".into()))?;
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn eval(cli: &Cli, args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = with_store(load_config(cli)?, &args.store);
    let providers = ProviderSet::from_config(&cfg)?;
    let embedder = providers.embedder.as_ref();
    let dim = cfg.embedding_dimension;
    let threads = cfg.limits.eval_parallelism;
    let report: serde_json::Value = match args.suite {
        Suite::Text => {
            let items = evaluation::parse_text_items(&read_input(args)?)?;
            let reports = evaluation::with_pool(threads, || evaluation::text_suite(&items, embedder))??;
            json!({"suite": "text", "reports": reports})
        }
        Suite::Hallucination => {
            let text = read_input(args)?;
            let items: Vec<evaluation::GroundingItem> = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| EvalError::Input {
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_, _>>()?;
            let judge = providers.judge.as_ref();
            let report = evaluation::with_pool(threads, || evaluation::hallucination_suite(&items, judge, args.polls))?;
            json!({"suite": "hallucination", "reports": [report]})
        }
        Suite::Retrieval => {
            let records = eval_records(&cfg, args)?;
            let r = evaluation::with_pool(threads, || {
                evaluation::retrieval_suite(&records, args.seed, args.fraction, embedder, dim, cfg.tau)
            })??;
            json!({"suite": "retrieval", "report": r})
        }
        Suite::Loo => {
            let records = eval_records(&cfg, args)?;
            let r = evaluation::with_pool(threads, || evaluation::leave_one_out(&records, embedder, dim))??;
            json!({"suite": "loo", "report": r})
        }
        Suite::Robustness => {
            let records = eval_records(&cfg, args)?;
            let split = holdout_split(&records, args.seed, args.fraction)?;
            let (train, holdout) = split_records(&records, &split);
            let index = evaluation::build_index(&train, embedder, dim)?;
            let r = evaluation::with_pool(threads, || {
                evaluation::robustness_suite(&holdout, &index, embedder, args.noise, args.seed, cfg.tau)
            })??;
            json!({"suite": "robustness", "report": r})
        }
        Suite::Scalability => {
            let r = evaluation::with_pool(threads, || {
                evaluation::scalability_suite(&args.sizes, args.queries, args.checks, args.seed, embedder, dim)
            })??;
            json!({"suite": "scalability", "report": r})
        }
        Suite::Bias => {
            let records = eval_records(&cfg, args)?;
            let split = holdout_split(&records, args.seed, args.fraction)?;
            let held: std::collections::BTreeSet<&str> = split.held_out.iter().map(String::as_str).collect();
            let engine = Engine::in_memory(&cfg, providers.clone())?;
            engine.write(|store| -> Result<(), CliError> {
                for r in records.iter().filter(|r| !held.contains(r.id.as_str())) {
                    store.append_record(r.clone())?;
                }
                Ok(())
            })??;
            let queries: Vec<(String, String)> = records
                .iter()
                .filter(|r| held.contains(r.id.as_str()))
                .map(|r| (r.theme.clone(), r.sanitized_question.clone()))
                .collect();
            let table = evaluation::with_pool(threads, || evaluation::bias_table(&engine, &queries))?;
            json!({"suite": "bias", "themes": table})
        }
    };
    if let Some(p) = &args.out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(p, text + "\n").map_err(io_err(p))?;
    }
    emit(out, &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("guardqa").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_cli(&["ingest"]).0, EXIT_USAGE);
        assert_eq!(run_cli(&["eval", "--suite", "nope"]).0, EXIT_USAGE);
        let (code, out, err) = run_cli(&["ask", "--text", "x", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(out.is_empty());
        assert!(err.contains("Usage"));
        assert_eq!(run_cli(&["calibrate", "--write"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_cli(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("ingest"));
    }

    #[test]
    fn missing_input_file_is_domain_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("s");
        let (code, _, err) = run_cli(&[
            "ingest",
            "--input",
            dir.path().join("absent.jsonl").to_str().unwrap(),
            "--out",
            store.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_DOMAIN);
        assert!(err.contains("absent.jsonl"));
    }
}
