//! Pipeline entry point: delineate-zones, build-tightness, impute,
//! simulate, estimate, report.
//!
//! Logs go to stderr; data only ever goes to files. Every run writes a
//! manifest with content digests next to its primary output.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

// Exit codes: 0 success, 2 usage (clap), then by failure class.
const EXIT_VALIDATION: u8 = 3;
const EXIT_ESTIMATION: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "tightlab", version, about = "Labor-market tightness pipeline")]
struct Cli {
    /// Run configuration file (TOML; sections per stage)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed; overrides the config file value
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = automatic)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// error | warn | info | debug | trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge districts into commuting zones by dominant commuting flows
    DelineateZones {
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        /// Threshold grid, "start:stop:step" or comma list; defaults to the
        /// config [zones].grid
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build market cells with extrapolated vacancies, tightness, and
    /// leave-one-out instruments
    BuildTightness {
        #[arg(long)]
        vacancies: PathBuf,
        #[arg(long)]
        seekers: PathBuf,
        #[arg(long)]
        shares: PathBuf,
        /// Zone partition from delineate-zones; omit to use the config
        /// region scheme directly
        #[arg(long)]
        zones: Option<PathBuf>,
        /// Spell file for transition weights (enables the flow-adjusted
        /// tightness column)
        #[arg(long)]
        spells: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impute right-censored wages with the two-step Tobit
    Impute {
        #[arg(long)]
        spells: PathBuf,
        /// CSV with columns (year, limit) in EUR/day
        #[arg(long)]
        limits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic economy with known ground truth
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit an OLS or 2SLS wage regression described by a spec file
    Estimate {
        /// Pre-merged estimation panel (alternative to --spells/--cells)
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long, requires = "cells")]
        spells: Option<PathBuf>,
        #[arg(long, requires = "spells")]
        cells: Option<PathBuf>,
        /// Zone partition for mapping spell districts to regions
        #[arg(long)]
        zones: Option<PathBuf>,
        /// CPI series for deflating wages before the regression
        #[arg(long)]
        cpi: Option<PathBuf>,
        /// Regression spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        /// Also write the merged panel produced from --spells/--cells
        #[arg(long)]
        emit_panel: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpretation arithmetic and binned-scatter data
    Report {
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        interpret: PathBuf,
        /// Panel for binscatter sections
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .target(env_logger::Target::Stderr)
        .init();

    if cli.threads > 0 {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()
        {
            log::warn!("thread pool: {e}");
        }
    }

    let run = || -> tightlab::Result<()> {
        let file_config = config::FileConfig::load(cli.config.as_deref())?;
        match &cli.command {
            Command::DelineateZones { flows, adjacency, grid, out } => {
                commands::delineate_zones(&cli, &file_config, flows, adjacency, grid.as_deref(), out)
            }
            Command::BuildTightness { vacancies, seekers, shares, zones, spells, out } => {
                commands::build_tightness(
                    &cli,
                    &file_config,
                    vacancies,
                    seekers,
                    shares,
                    zones.as_deref(),
                    spells.as_deref(),
                    out,
                )
            }
            Command::Impute { spells, limits, out } => {
                commands::impute(&cli, &file_config, spells, limits, out)
            }
            Command::Simulate { out_dir } => commands::simulate(&cli, &file_config, out_dir),
            Command::Estimate { panel, spells, cells, zones, cpi, spec, emit_panel, out } => {
                commands::estimate(
                    &cli,
                    &file_config,
                    panel.as_deref(),
                    spells.as_deref(),
                    cells.as_deref(),
                    zones.as_deref(),
                    cpi.as_deref(),
                    spec,
                    emit_panel.as_deref(),
                    out,
                )
            }
            Command::Report { result, interpret, panel, out } => {
                commands::report(&cli, result.as_deref(), interpret, panel.as_deref(), out)
            }
        }
    };

    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                tightlab::Error::Validation(_) => EXIT_VALIDATION,
                tightlab::Error::Estimation(_) | tightlab::Error::NoConvergence { .. } => {
                    EXIT_ESTIMATION
                }
                tightlab::Error::Io(_) | tightlab::Error::Csv(_) | tightlab::Error::Json(_) => {
                    EXIT_IO
                }
            };
            ExitCode::from(code)
        }
    }
}
