use std::path::PathBuf;

use clap::Args;
use feddrift::config::{preset, AlgoName, AlgorithmFile, ConfigFile, PRESETS};
use feddrift::engine::{write_json, write_outputs, Experiment};

use crate::{default_output_dir, read_json, CliError};

#[derive(Args)]
pub struct RunArgs {
    /// JSON experiment config. Fields override the preset, if any.
    config: Option<PathBuf>,
    /// Start from a built-in data setting.
    #[arg(long)]
    preset: Option<String>,
    /// Algorithm name (fedavg, fedprox, scaffold, feddyn, feddc).
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Fraction of clients active per round, in (0, 1].
    #[arg(long)]
    participation: Option<f64>,
    /// Cap on client worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Record per-round wall time (makes outputs differ between reruns).
    #[arg(long)]
    timing: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save a checkpoint here after the run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resume from a checkpoint written by a run with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the built-in presets and exit.
    #[arg(long)]
    list_presets: bool,
    /// Suppress per-round progress lines.
    #[arg(long, short)]
    quiet: bool,
}

pub fn list_presets() {
    for p in PRESETS {
        println!("{:<16} {}", p.name, p.description);
    }
}

/// Preset, then file, then flags.
fn layered_config(args: &RunArgs) -> Result<ConfigFile, CliError> {
    let mut cfg = match &args.preset {
        Some(name) => preset(name)
            .ok_or_else(|| CliError::Config(format!("unknown preset `{name}` (see --list-presets)")))?
            .config(),
        None => ConfigFile::default(),
    };
    if let Some(path) = &args.config {
        cfg = cfg.merge(read_json(path)?);
    } else if args.preset.is_none() {
        return Err(CliError::Config("give a config file or --preset".into()));
    }
    let mut flags = ConfigFile {
        seed: args.seed,
        rounds: args.rounds,
        participation: args.participation,
        threads: args.threads,
        timing: args.timing.then_some(true),
        ..Default::default()
    };
    if let Some(name) = &args.algorithm {
        let name: AlgoName = name.parse().map_err(|e: feddrift::Error| CliError::Config(e.to_string()))?;
        flags.algorithm = Some(AlgorithmFile::named(name));
    }
    Ok(cfg.merge(flags))
}

pub fn run(args: RunArgs) -> Result<(), CliError> {
    if args.list_presets {
        list_presets();
        return Ok(());
    }
    let file = layered_config(&args)?;
    let cfg = file.resolve().map_err(|e| CliError::Config(e.to_string()))?;
    let out = args
        .out
        .clone()
        .or(file.output_dir.clone())
        .unwrap_or_else(|| default_output_dir(&cfg.setting, &cfg.algorithm_label(), cfg.seed));

    let mut exp = match &args.resume {
        Some(path) => {
            let data = std::sync::Arc::new(cfg.dataset.build()?);
            Experiment::resume(cfg, data, path)?
        }
        None => Experiment::new(cfg)?,
    };
    let quiet = args.quiet;
    exp.run_with(|r| {
        if !quiet {
            if let Some(acc) = r.test_accuracy {
                eprintln!("round {:>4}  test acc {:.4}  train loss {:.5}", r.round, acc, r.train_loss.unwrap_or(f64::NAN));
            }
        }
    })?;
    if let Some(path) = &args.checkpoint {
        exp.save_checkpoint(path)?;
    }
    let summary = exp.summary();
    write_outputs(&out, exp.records(), &summary)?;
    write_json(&out.join("config.json"), exp.config())?;
    println!(
        "{} on {} (seed {}): best accuracy {:.4}, final {:.4}; wrote {}",
        summary.algorithm,
        summary.setting,
        summary.seed,
        summary.best_accuracy,
        summary.final_accuracy,
        out.display()
    );
    Ok(())
}
