//! `repomine`: the pipeline as subcommands over one workspace directory.

mod commands;
mod config;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use repomine::featurize::WeightingMode;
use repomine::QueryTier;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "repomine", version, about = "Find, label, classify and study malware source-code repositories")]
struct Cli {
    /// Directory all inputs and artifacts are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,

    /// JSON run configuration; its values replace the defaults and are in
    /// turn replaced by explicit flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    tier: Option<QueryTier>,
    /// Field budget as FIELD=K (title, topics, description, file_names, readme); repeatable.
    #[arg(long = "budget", global = true, value_name = "FIELD=K")]
    budgets: Vec<String>,
    #[arg(long, global = true)]
    weighting: Option<WeightingMode>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Comma-separated source extension whitelist.
    #[arg(long, global = true, value_delimiter = ',')]
    extensions: Option<Vec<String>>,
    #[arg(long, global = true)]
    keywords_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Search the archive with the configured keyword tier and store the results in corpus.jsonl.
    Harvest {
        /// Serve searches from a JSONL file of repositories instead of the network.
        #[arg(long, conflicts_with = "live")]
        mock: Option<PathBuf>,
        /// Query the public archive (needs the `live` build feature).
        #[arg(long)]
        live: bool,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Drop exact duplicates from corpus.jsonl and list near-duplicate pairs.
    Dedup {
        /// Report pairs whose token sets have Jaccard similarity at least this.
        #[arg(long)]
        near: Option<f64>,
    },
    /// Run the judge service; ground truth is exported to labels.jsonl.
    LabelServe {
        #[arg(long, value_delimiter = ',', required = true)]
        judges: Vec<String>,
        #[arg(long, default_value_t = labelsvc::DEFAULT_QUORUM)]
        quorum: usize,
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: SocketAddr,
        /// Built judge UI to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Select the vocabulary and fit the classifier on labels.jsonl.
    Train,
    /// Stratified k-fold cross-validation on labels.jsonl.
    Evaluate,
    /// Apply the trained model to the corpus; writes malware.jsonl.
    Classify,
    /// Keep the classified malware repositories that contain source code; writes source.jsonl.
    DetectSource,
    /// Assign malware types and platforms to malware.jsonl; writes tags.jsonl.
    Tag,
    /// Ecosystem statistics over the malware repositories; writes report.json and figures/.
    Report {
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Write a seeded synthetic labeled corpus (corpus.jsonl, labels.jsonl).
    #[command(hide = true)]
    Synth {
        #[arg(long, default_value_t = repomine::synth::FIXTURE_PER_CLASS)]
        per_class: usize,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::load(&cli.workspace.join(path))?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.tier {
        c.tier = v;
    }
    for spec in &o.budgets {
        let (field, k) = spec
            .split_once('=')
            .ok_or_else(|| CliError::invalid("config", "budget", format!("expected FIELD=K, got `{spec}`")))?;
        let k: usize = k.trim().parse().map_err(|e| CliError::invalid("config", "budget", format!("{spec}: {e}")))?;
        let slot = match field.trim() {
            "title" => &mut c.budgets.title,
            "topics" => &mut c.budgets.topics,
            "description" => &mut c.budgets.description,
            "file_names" => &mut c.budgets.file_names,
            "readme" => &mut c.budgets.readme,
            other => return Err(CliError::invalid("config", "budget", format!("unknown field `{other}`"))),
        };
        *slot = k;
    }
    if let Some(v) = o.weighting {
        c.weighting = v;
    }
    if let Some(v) = o.alpha {
        c.alpha = v;
    }
    if let Some(v) = o.folds {
        c.folds = v;
    }
    if o.seed.is_some() {
        c.seed = o.seed;
    }
    if let Some(v) = o.threshold {
        c.threshold = v;
    }
    if let Some(v) = &o.extensions {
        c.extensions = v.clone();
    }
    if let Some(v) = &o.keywords_dir {
        c.paths.keywords = v.clone();
    }
    if let Some(v) = &o.data_dir {
        c.paths.data = Some(v.clone());
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli)?;
    let ws = commands::Workspace::new(cli.workspace.clone(), config)?;
    match cli.command {
        Command::Harvest { mock, live, workers } => ws.harvest(mock.as_deref(), live, workers),
        Command::Dedup { near } => ws.dedup(near),
        Command::LabelServe { judges, quorum, addr, ui_dir } => ws.label_serve(judges, quorum, addr, ui_dir),
        Command::Train => ws.train(),
        Command::Evaluate => ws.evaluate(),
        Command::Classify => ws.classify(),
        Command::DetectSource => ws.detect_source(),
        Command::Tag => ws.tag(),
        Command::Report { top_k } => ws.report(top_k),
        Command::Synth { per_class } => ws.synth(per_class),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
