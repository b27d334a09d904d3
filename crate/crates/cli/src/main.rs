use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hikf::config::validate_config;
use hikf::experiment::{bench_filters, bench_fmm, fmm_bench_csv, run_experiment, FmmBenchConfig, RunOptions};
use hikf::kernel::KernelSpec;

#[derive(Parser)]
#[command(name = "hikf", version, about = "Kalman filtering experiments on synthetic crosswell tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the filters of a config file and write metrics, snapshots and a summary.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Check a config file and list every problem with its line.
    Validate { config: PathBuf },
    /// Time and check the fast kernel summation against direct sums.
    BenchFmm {
        /// Point counts.
        #[arg(long, value_delimiter = ',', default_values_t = vec![10_000usize, 20_000, 40_000])]
        sizes: Vec<usize>,
        /// Chebyshev nodes per dimension.
        #[arg(long, value_delimiter = ',', default_values_t = vec![3usize, 4, 5, 6, 7])]
        n_cheb: Vec<usize>,
        #[arg(long, default_value_t = 2.5)]
        length_scale: f64,
        #[arg(long, default_value_t = 64)]
        max_leaf_points: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Time and size the filters of a config file; writes costs.csv.
    BenchFilters {
        config: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Replace the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Allow the dense KF above the state-size limit.
    #[arg(long)]
    override_size_guard: bool,
}

impl Overrides {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            override_size_guard: self.override_size_guard,
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, opts } => {
            let report = run_experiment(&config, &opts.options())?;
            for f in &report.filters {
                let last = f.steps.last();
                let truth = last.map_or(f64::NAN, |s| s.error_vs_truth);
                match last.and_then(|s| s.error_vs_kf) {
                    Some(kf) => println!("{:<10} error_vs_truth {truth:.3e}  error_vs_kf {kf:.3e}  online {:.3}s", f.filter, f.cost.online_seconds),
                    None => println!("{:<10} error_vs_truth {truth:.3e}  online {:.3}s", f.filter, f.cost.online_seconds),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let diags = validate_config(&config)?;
            if diags.is_empty() {
                println!("{}: ok", config.display());
                return Ok(ExitCode::SUCCESS);
            }
            for d in &diags {
                eprintln!("{}: {d}", config.display());
            }
            Ok(ExitCode::FAILURE)
        }
        Command::BenchFmm {
            sizes,
            n_cheb,
            length_scale,
            max_leaf_points,
            repeats,
            seed,
            out_dir,
        } => {
            let cfg = FmmBenchConfig {
                sizes,
                n_cheb,
                kernel: KernelSpec::gaussian(1.0, length_scale),
                max_leaf_points,
                seed,
                repeats,
                ..FmmBenchConfig::default()
            };
            let csv = fmm_bench_csv(&bench_fmm(&cfg)?);
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let path = out_dir.join("fmm_bench.csv");
            fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::BenchFilters { config, opts } => {
            print!("{}", bench_filters(&config, &opts.options())?.to_csv());
            Ok(ExitCode::SUCCESS)
        }
    }
}
