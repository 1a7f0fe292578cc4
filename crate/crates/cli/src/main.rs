//! `mobal` command-line harness. Every subcommand writes one CSV file (or
//! standard output) and is deterministic for a fixed seed list.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mobal::experiments::{self, Scenario};
use mobal::netsys::NetSysConfig;
use mobal::{MobalError, Result};

use args::{parse_list, parse_seeds};

#[derive(Parser, Debug)]
#[command(name = "mobal", version, about = "Incident-response planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-component alert distributions.
    ObsDist {
        /// System configuration (JSON); defaults to one component.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Number of representative beliefs per state count and resolution.
    LatticeCount {
        #[arg(long, default_value = "2,4,8", value_parser = parse_list)]
        n: ::std::vec::Vec<usize>,
        #[arg(long, default_value = "0..=8", value_parser = parse_list)]
        r: ::std::vec::Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Particle filter error against the exact filter.
    FilterEval {
        /// State counts (powers of two).
        #[arg(long, default_value = "2,4", value_parser = parse_list)]
        n: ::std::vec::Vec<usize>,
        #[arg(long, default_value = "1..=18", value_parser = parse_list)]
        m: ::std::vec::Vec<usize>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value = "0..100", value_parser = parse_seeds)]
        seeds: ::std::vec::Vec<u64>,
        /// Resolution of the controlling strategy.
        #[arg(long, default_value_t = 5)]
        r: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior and discrepancy trajectories of the online loop.
    PosteriorEval {
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value = "0..20", value_parser = parse_seeds)]
        seeds: ::std::vec::Vec<u64>,
        #[arg(long, default_value_t = 5)]
        r: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error bounds against the measured approximation error.
    BoundEval {
        #[arg(long, default_value = "1,2,5,10,20,50", value_parser = parse_list)]
        r: ::std::vec::Vec<usize>,
        #[arg(long, default_value_t = experiments::REFERENCE_RESOLUTION)]
        r_ref: usize,
        /// Random beliefs per cell for the within-cell spread.
        #[arg(long, default_value_t = mobal::bounds::DEFAULT_SAMPLES_PER_CELL)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost-function sweep over the compromise belief.
    CostfunEval {
        #[arg(long, default_value = "1,5,10", value_parser = parse_list)]
        r: ::std::vec::Vec<usize>,
        #[arg(long, default_value_t = experiments::REFERENCE_RESOLUTION)]
        r_ref: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Online loop episodes from a scenario file.
    RunLoop {
        /// Scenario (JSON); every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "0..100", value_parser = parse_seeds)]
        seeds: ::std::vec::Vec<u64>,
        /// Overrides the scenario horizon.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-episode CSV and JSON logs.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &MobalError) -> u8 {
    match e {
        MobalError::Capacity(_) => 3,
        MobalError::Io(_) => 1,
        _ => 2,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("MOBAL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| MobalError::Argument(format!("MOBAL_THREADS={value} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| MobalError::Argument(e.to_string()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::ObsDist { config, out } => {
            let net = match config {
                Some(path) => NetSysConfig::from_json(&read(&path)?)?,
                None => NetSysConfig::path(1, experiments::TRUE_ATTACK_PROBABILITY),
            };
            emit(out.as_deref(), &experiments::obs_dist_csv(&experiments::obs_dist(&net)?))
        }
        Command::LatticeCount { n, r, out } => {
            emit(out.as_deref(), &experiments::lattice_count_csv(&experiments::lattice_counts(&n, &r)?))
        }
        Command::FilterEval { n, m, episodes, steps, seeds, r, out } => {
            let spec = experiments::FilterEvalSpec {
                ns: n,
                ms: m,
                episodes,
                steps,
                seeds,
                resolution: r,
                ..Default::default()
            };
            emit(out.as_deref(), &experiments::filter_eval_csv(&experiments::filter_eval(&spec)?))
        }
        Command::PosteriorEval { steps, seeds, r, out } => {
            let spec = experiments::PosteriorEvalSpec { steps, seeds, resolution: r, ..Default::default() };
            emit(out.as_deref(), &experiments::posterior_eval_csv(&experiments::posterior_eval(&spec)?))
        }
        Command::BoundEval { r, r_ref, samples, seed, out } => {
            let spec = experiments::BoundEvalSpec {
                rs: r,
                r_ref,
                samples_per_cell: samples,
                seed,
                ..Default::default()
            };
            emit(out.as_deref(), &experiments::bound_eval_csv(&experiments::bound_eval(&spec)?))
        }
        Command::CostfunEval { r, r_ref, out } => {
            let spec = experiments::CostfunEvalSpec { rs: r, r_ref, ..Default::default() };
            emit(out.as_deref(), &experiments::costfun_eval_csv(&experiments::costfun_eval(&spec)?))
        }
        Command::RunLoop { config, seeds, steps, out, logs } => {
            let mut scenario = match config {
                Some(path) => Scenario::from_json(&read(&path)?)?,
                None => Scenario::default(),
            };
            if let Some(steps) = steps {
                scenario.horizon = steps;
            }
            let results = experiments::run_loop(&scenario, &seeds)?;
            if let Some(dir) = logs {
                std::fs::create_dir_all(&dir)?;
                for (summary, log) in &results {
                    std::fs::write(dir.join(format!("episode-{}.csv", summary.seed)), log.to_csv())?;
                    std::fs::write(dir.join(format!("episode-{}.json", summary.seed)), log.to_json()?)?;
                }
            }
            let summaries: Vec<_> = results.into_iter().map(|(s, _)| s).collect();
            emit(out.as_deref(), &experiments::run_loop_csv(&summaries))
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        MobalError::Argument(format!("cannot read {}: {e}", path.display()))
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
