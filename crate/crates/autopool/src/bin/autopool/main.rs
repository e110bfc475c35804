//! `autopool` CLI: dataset generation, feature learning, pooling-matrix
//! training, invariance scoring, and the downstream classification pipeline.

mod commands;
mod formats;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autopool::error::{Error, Result};

#[derive(Parser)]
#[command(name = "autopool", version, about = "learned soft-clustering pooling")]
struct Cli {
    /// Optional TOML config file; sections named after subcommands provide
    /// defaults, explicit flags override them.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-frame APPD dataset plus ground-truth CSV.
    GenSynth(commands::GenSynthArgs),
    /// Train a sparse autoencoder and write an APSE model.
    TrainSae(commands::TrainSaeArgs),
    /// Extract (and optionally pool) features from pairs or labeled images.
    Extract(commands::ExtractArgs),
    /// Train an auto-pooling matrix on feature pairs, write an APPM model.
    TrainPool(commands::TrainPoolArgs),
    /// Build the fixed spatial-pooling matrix for a convolutional layout.
    Spool(commands::SpoolArgs),
    /// Invariance score of raw (and optionally pooled) feature pairs.
    Score(commands::ScoreArgs),
    /// Sweep lambda, scoring raw vs pooled features per value.
    Sweep(commands::SweepArgs),
    /// Train the one-vs-rest linear classifier on pooled features.
    TrainClf(commands::TrainClfArgs),
    /// Evaluate a classifier on labeled features.
    Eval(commands::EvalArgs),
    /// Render cluster visualizations as PGM images.
    Viz(commands::VizArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    let file_cfg = match load_config(cli.config.as_deref()) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a, &section(&file_cfg, "gen-synth")),
        Command::TrainSae(a) => commands::train_sae(a, &section(&file_cfg, "train-sae")),
        Command::Extract(a) => commands::extract(a, &section(&file_cfg, "extract")),
        Command::TrainPool(a) => commands::train_pool(a, &section(&file_cfg, "train-pool")),
        Command::Spool(a) => commands::spool(a, &section(&file_cfg, "spool")),
        Command::Score(a) => commands::score(a, &section(&file_cfg, "score")),
        Command::Sweep(a) => commands::sweep(a, &section(&file_cfg, "sweep")),
        Command::TrainClf(a) => commands::train_clf(a, &section(&file_cfg, "train-clf")),
        Command::Eval(a) => commands::eval(a, &section(&file_cfg, "eval")),
        Command::Viz(a) => commands::viz(a, &section(&file_cfg, "viz")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("{}: {e}", e.name());
    ExitCode::FAILURE
}

/// `AUTOPOOL_THREADS` caps internal parallelism.
fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("AUTOPOOL_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn load_config(path: Option<&std::path::Path>) -> Result<toml::Table> {
    match path {
        None => Ok(toml::Table::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::ConfigParse(e.to_string()))
        }
    }
}

fn section(cfg: &toml::Table, name: &str) -> toml::Table {
    cfg.get(name)
        .and_then(|v| v.as_table())
        .cloned()
        .unwrap_or_default()
}

/// Flag value if given, else the config-file value, else the default.
pub fn pick<T>(cli: Option<T>, sec: &toml::Table, key: &str, default: T) -> Result<T>
where
    T: serde::de::DeserializeOwned,
{
    if let Some(v) = cli {
        return Ok(v);
    }
    match sec.get(key) {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e| Error::ConfigParse(format!("key {key}: {e}"))),
        None => Ok(default),
    }
}

/// Like `pick` but with no default: the value must come from a flag or the
/// config file.
pub fn pick_required<T>(cli: Option<T>, sec: &toml::Table, key: &str) -> Result<T>
where
    T: serde::de::DeserializeOwned,
{
    if let Some(v) = cli {
        return Ok(v);
    }
    match sec.get(key) {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e| Error::ConfigParse(format!("key {key}: {e}"))),
        None => Err(Error::ConfigParse(format!("missing required option --{key}"))),
    }
}
