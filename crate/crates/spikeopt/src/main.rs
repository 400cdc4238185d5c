//! Command-line driver: `run` launches an experiment from a TOML file or a
//! bundled profile, `report` recomputes the summary and CSV tables from a
//! trial log. Every flag can also come from a `SPIKEOPT_`-prefixed
//! environment variable; explicit flags win.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spikeopt::config::{builtin, ConfigFile, Overrides};
use spikeopt::report::{best_so_far_csv, intervals_csv, read_log, summarize};
use spikeopt::scbo::{ScboState, TrustRegionConfig};
use spikeopt::scheduler::{self, JsonlSink};
use spikeopt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spikeopt",
    about = "Constrained Bayesian search over spiking-network hyperparameters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its log, frozen config, and summary.
    Run(RunArgs),
    /// Recompute the summary and CSV tables from an existing trial log.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (TOML), or the name of a bundled profile such as
    /// `exp1-desk`.
    #[arg(long, env = "SPIKEOPT_CONFIG")]
    config: String,
    /// Master seed override.
    #[arg(long, env = "SPIKEOPT_SEED")]
    seed: Option<u64>,
    /// Worker thread count override.
    #[arg(long, env = "SPIKEOPT_WORKERS")]
    workers: Option<usize>,
    /// Trial budget override.
    #[arg(long, env = "SPIKEOPT_MAX_TRIALS")]
    max_trials: Option<u64>,
    /// Wall-clock budget override, in seconds.
    #[arg(long, env = "SPIKEOPT_MAX_SECONDS")]
    max_seconds: Option<f64>,
    /// Output directory override.
    #[arg(long, env = "SPIKEOPT_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Trial log (JSONL) to analyze.
    #[arg(long, env = "SPIKEOPT_LOG")]
    log: PathBuf,
    /// Where to write the outputs; defaults to the log's directory.
    #[arg(long, env = "SPIKEOPT_OUT")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn run(args: RunArgs) -> Result<()> {
    let mut file = load_config(&args.config)?;
    file.apply(&Overrides {
        seed: args.seed,
        workers: args.workers,
        max_trials: args.max_trials,
        max_seconds: args.max_seconds,
        out: args.out,
    });
    let cfg = file.resolve()?;

    let out_dir = cfg.out_dir.clone().ok_or_else(|| {
        Error::Config("no output directory: set out_dir in the config or pass --out".into())
    })?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    // Freeze the post-override config first so even an aborted run can be
    // reproduced.
    write_file(&out_dir.join("config.toml"), &file.frozen_toml()?)?;

    let evaluator = cfg.evaluator()?;
    let mut state = ScboState::new(
        cfg.space.clone(),
        cfg.scbo.clone(),
        cfg.criteria.len(),
        cfg.seed,
    )?;
    let log_path = out_dir.join("trials.jsonl");
    let mut sink = JsonlSink::create(&log_path)?;

    let records = scheduler::run(&mut state, &evaluator, &cfg.budget, &mut sink)?;

    let summary = summarize(&records, &cfg.scbo.trust_region)?;
    write_file(&out_dir.join("summary.json"), &summary.to_json())?;
    write_file(&out_dir.join("best_so_far.csv"), &best_so_far_csv(&records))?;
    write_file(&out_dir.join("intervals.csv"), &intervals_csv(&records))?;

    eprintln!(
        "{} trials ({} stopped), best objective {}, {} restarts; outputs in {}",
        summary.trials,
        (summary.stopped_fraction * summary.trials as f64).round() as u64,
        summary.best_objective,
        summary.restarts,
        out_dir.display()
    );
    Ok(())
}

/// A config argument is a file path when one exists at that location,
/// otherwise the name of a bundled profile.
fn load_config(arg: &str) -> Result<ConfigFile> {
    let path = Path::new(arg);
    if path.is_file() {
        return ConfigFile::load(path);
    }
    match builtin(arg) {
        Some(text) => ConfigFile::parse(text),
        None => Err(Error::Config(format!(
            "`{arg}` is neither a config file nor a bundled profile"
        ))),
    }
}

fn report(args: ReportArgs) -> Result<()> {
    let (records, corrupt) = read_log(&args.log)?;
    for line in &corrupt {
        eprintln!("warning: {}: skipped corrupt line {line}", args.log.display());
    }

    let tr = trust_region_for(&args.log, &records);
    let summary = summarize(&records, &tr)?;

    let out_dir = match args.out {
        Some(d) => d,
        None => args.log.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write_file(&out_dir.join("summary.json"), &summary.to_json())?;
    write_file(&out_dir.join("best_so_far.csv"), &best_so_far_csv(&records))?;
    write_file(&out_dir.join("intervals.csv"), &intervals_csv(&records))?;

    print!("{}", summary.to_json());
    Ok(())
}

/// Restart counting needs the run's trust-region constants. The frozen
/// config written next to the log carries them; without it, fall back to the
/// dimension-derived defaults (the dimension is the number of searched
/// parameters, visible in any record).
fn trust_region_for(log: &Path, records: &[spikeopt::scbo::TrialRecord]) -> TrustRegionConfig {
    let frozen = log.parent().map(|d| d.join("config.toml"));
    if let Some(path) = frozen {
        if path.is_file() {
            match ConfigFile::load(&path).and_then(|f| f.resolve()) {
                Ok(cfg) => return cfg.scbo.trust_region,
                Err(e) => eprintln!(
                    "warning: {}: unusable frozen config ({e}); using default trust-region constants",
                    path.display()
                ),
            }
        }
    }
    TrustRegionConfig::for_dim(records[0].config.0.len())
}
