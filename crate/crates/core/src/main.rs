use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use markerconf::config::{ConfigError, RunConfig};
use markerconf::metrics::Aggregation;
use markerconf::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "markerconf", version, about = "Measure how reliably epistemic markers express model confidence")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Minimum marker support T.
    #[arg(long, global = true)]
    threshold: Option<usize>,
    /// Comma-separated thresholds; overrides --threshold for mic/metrics.
    #[arg(long, global = true, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long, global = true)]
    exclude_no_hedge: bool,
    #[arg(long, global = true, value_enum)]
    aggregation: Option<AggregationArg>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Corpus file(s); repeatable.
    #[arg(long, global = true)]
    corpus: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Marker,
    Sentence,
    Response,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a primary response and K extra samples per query.
    Generate,
    /// Segment, extract markers and score confidence with the judge.
    Annotate,
    /// Build MIC tables from annotations.
    Mic,
    /// Compute reliability metrics from annotations.
    Metrics,
    /// Write figure data (KDE, strata, MF scatter, heatmap).
    Report,
    /// Run every stage in order.
    All,
}

fn build_config(g: &Global) -> Result<RunConfig, ConfigError> {
    let mut c = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &g.out {
        c.out = out.clone();
    }
    if let Some(seed) = g.seed {
        c.seed = seed;
    }
    if let Some(t) = g.threshold {
        c.threshold = t;
    }
    if let Some(s) = &g.sweep {
        c.sweep = s.clone();
    }
    if g.exclude_no_hedge {
        c.exclude_no_hedge = true;
    }
    if let Some(a) = g.aggregation {
        c.aggregation = match a {
            AggregationArg::Marker => Aggregation::Marker,
            AggregationArg::Sentence => Aggregation::Sentence,
            AggregationArg::Response => Aggregation::Response,
        };
    }
    if let Some(p) = g.parallelism {
        c.parallelism = p;
    }
    if !g.corpus.is_empty() {
        c.corpus = g.corpus.clone();
    }
    c.validate()?;
    Ok(c)
}

fn run(command: &Command, config: &RunConfig) -> Result<(), PipelineError> {
    match command {
        Command::Generate => {
            let m = pipeline::cmd_generate(config)?;
            log::info!("generated {} of {} responses", m.completed, m.total);
        }
        Command::Annotate => {
            let d = pipeline::cmd_annotate(config)?;
            log::info!("annotated {} sentences", d.total_sentences);
        }
        Command::Mic => {
            let t = pipeline::cmd_mic(config)?;
            log::info!("wrote {} MIC tables", t.len());
        }
        Command::Metrics => {
            let r = pipeline::cmd_metrics(config)?;
            log::info!("wrote {} metric reports", r.len());
        }
        Command::Report => {
            let m = pipeline::cmd_report(config)?;
            log::info!("wrote {} report files", m.files.len());
        }
        Command::All => {
            if !config.out.join(pipeline::CORPUS_FILE).exists() && needs_generation(config)? {
                pipeline::cmd_generate(config)?;
            }
            for c in [Command::Annotate, Command::Mic, Command::Metrics, Command::Report] {
                run(&c, config)?;
            }
        }
    }
    Ok(())
}

/// A corpus with queries but no responses has to be generated first.
fn needs_generation(config: &RunConfig) -> Result<bool, PipelineError> {
    let c = pipeline::read_inputs(&config.corpus)?;
    Ok(c.responses.is_empty() && !c.queries.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match build_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
