use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use coopsplit::harness::{emit_plot_data, read_raw, run_preset, ExperimentPreset, THREADS_ENV};
use coopsplit::{Algorithm, SystemConfig};

#[derive(Parser)]
#[command(name = "coopsplit", version, about = "Monte Carlo runs of the multi-block transmit planners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoChoice {
    Genie,
    Eco,
    Edt,
    Crs,
    Decrs,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Run a figure preset and write raw.csv, agg.csv and the series files.
    #[command(after_help = format!("The work-pool size is read from {THREADS_ENV} (default: one thread per core)."))]
    Run {
        #[arg(long, value_enum)]
        preset: PresetName,
        /// TOML scenario; required for `custom`, otherwise replaces the fixed parameters.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Start from the published 16-antenna, 20-block settings instead of desk scale.
        #[arg(long, conflicts_with = "scenario")]
        paper_scale: bool,
        #[arg(long)]
        trials: Option<usize>,
        /// Master seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        algo: AlgoChoice,
    },
    /// Rebuild the series files of a figure from an existing raw.csv.
    Emit {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        figure: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn preset_id(p: PresetName) -> &'static str {
    match p {
        PresetName::Fig3 => "fig3",
        PresetName::Fig4 => "fig4",
        PresetName::Fig5 => "fig5",
        PresetName::Fig6 => "fig6",
        PresetName::Fig7 => "fig7",
        PresetName::Custom => "custom",
    }
}

fn algorithm(choice: AlgoChoice) -> Option<Algorithm> {
    match choice {
        AlgoChoice::Genie => Some(Algorithm::Genie),
        AlgoChoice::Eco => Some(Algorithm::Eco),
        AlgoChoice::Edt => Some(Algorithm::Edt),
        AlgoChoice::Crs => Some(Algorithm::Crs),
        AlgoChoice::Decrs => Some(Algorithm::DecrsGenie),
        AlgoChoice::All => None,
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    preset: PresetName,
    scenario: Option<PathBuf>,
    paper_scale: bool,
    trials: Option<usize>,
    seed: Option<u64>,
    out: PathBuf,
    algo: AlgoChoice,
) -> Result<()> {
    let base = match &scenario {
        Some(path) => SystemConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None if matches!(preset, PresetName::Custom) => bail!("--preset custom needs --scenario"),
        None if paper_scale => SystemConfig::paper_scale(),
        None => SystemConfig::default(),
    };
    let mut preset = match preset {
        PresetName::Custom => ExperimentPreset::custom(base)?,
        p => ExperimentPreset::named(preset_id(p), base)?,
    };
    if let Some(n) = trials {
        preset.trials = n;
    }
    if let Some(s) = seed {
        preset.seed = s;
    }
    if let Some(a) = algorithm(algo) {
        preset.algorithms = vec![a];
    }
    preset.validate()?;
    log::info!(
        "{}: {} grid points × {} variants × {} trials, algorithms {:?}",
        preset.name,
        preset.grid.len(),
        preset.variants.len(),
        preset.trials,
        preset.algorithms.iter().map(|a| a.id()).collect::<Vec<_>>()
    );
    let result = run_preset(&preset)?;
    let files = result.write(&out)?;
    let infeasible = result.records.iter().filter(|r| !r.result.feasible).count();
    println!(
        "{} rows ({} infeasible) written to {} in {} files",
        result.records.len(),
        infeasible,
        out.display(),
        files.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { preset, scenario, paper_scale, trials, seed, out, algo } => {
            run(preset, scenario, paper_scale, trials, seed, out, algo)
        }
        Command::Emit { raw, figure, out } => read_raw(&raw)
            .with_context(|| format!("reading {}", raw.display()))
            .and_then(|rows| Ok(emit_plot_data(&rows, &figure, &out)?))
            .map(|files| println!("{} series files written to {}", files.len(), out.display())),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
