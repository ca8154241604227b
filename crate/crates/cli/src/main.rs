//! `sysid`: command-line front end for system identification under attacks.
//!
//! Every subcommand reads the same configuration document as `experiment`
//! (a JSON object whose `preset` field supplies defaults for all other
//! fields). Exit codes: 0 on success, 2 for configuration, input and I/O
//! errors, 3 for numerical failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sysid_core::estimators::{self, OneStage};
use sysid_core::harness::{self, ExperimentConfig, ExperimentReport, PlotKind, Preset};
use sysid_core::pipeline::{self, Truth};
use sysid_core::simulate::{simulate, TrajectoryRecord};
use sysid_core::sysgen::generate_system;
use sysid_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sysid", version, about = "Robust identification of linear systems under node-wise attacks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset supplying the defaults (overrides the `preset` field of the config file).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed: system seed for gen-system, trajectory seed for simulate, base seed for experiment.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (stdout for single documents when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for experiment sweeps (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a system matrix from the configured spectral targets.
    GenSystem,
    /// Simulate one trajectory of the configured system, noise and attack.
    Simulate {
        /// Trajectory length (defaults to the largest grid point).
        #[arg(long)]
        t: Option<usize>,
        /// Use this system JSON instead of generating one.
        #[arg(long)]
        system: Option<PathBuf>,
    },
    /// Fit a one-stage estimator to a trajectory JSON.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "l1")]
        estimator: EstimatorArg,
    },
    /// Run Stage I and the configured filter on a trajectory JSON.
    Filter {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full two-stage pipeline on a trajectory JSON.
    TwoStage {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run a Monte Carlo sweep and write rows, aggregates and the report.
    Experiment,
    /// Write plot data from a report JSON written by `experiment`.
    PlotData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "error-vs-t")]
        kind: PlotArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Ls,
    L2,
    L1,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotArg {
    ErrorVsT,
    ResidualScatter,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut doc: serde_json::Value = match &common.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => serde_json::json!({}),
    };
    if let Some(p) = &common.preset {
        let preset = Preset::parse(p)?;
        match doc.as_object_mut() {
            Some(obj) => {
                obj.insert("preset".into(), serde_json::Value::String(preset.name().into()));
            }
            None => return Err(Error::InvalidParameter("config must be a JSON object".into())),
        }
    }
    ExperimentConfig::from_json(&doc.to_string())
}

fn read_trajectory(path: &Path) -> Result<TrajectoryRecord> {
    TrajectoryRecord::from_json(&fs::read_to_string(path)?)
}

/// Writes `text` to `<out>/<name>` or prints it.
fn emit(common: &Common, name: &str, text: &str) -> Result<()> {
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let mut cfg = load_config(common)?;
    match cli.command {
        Command::GenSystem => {
            if let Some(seed) = common.seed {
                cfg.system.seed = seed;
            }
            let sys = match cfg.system_matrix {
                Some(m) => m,
                None => generate_system(&cfg.system)?,
            };
            emit(common, "system.json", &serde_json::to_string_pretty(&sys)?)
        }
        Command::Simulate { t, system } => {
            let sys = match (system, cfg.system_matrix.take()) {
                (Some(path), _) => serde_json::from_str(&fs::read_to_string(path)?)?,
                (None, Some(m)) => m,
                (None, None) => generate_system(&cfg.system)?,
            };
            let t_len = t.unwrap_or_else(|| cfg.t_max());
            let rec = simulate(&sys, t_len, &cfg.noise, &cfg.attack, None, common.seed.unwrap_or(cfg.base_seed))?;
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                rec.write_csv(fs::File::create(dir.join("trajectory.csv"))?)?;
            }
            emit(common, "trajectory.json", &rec.to_json()?)
        }
        Command::Estimate { input, estimator } => {
            let rec = read_trajectory(&input)?;
            let which = match estimator {
                EstimatorArg::Ls => OneStage::LeastSquares,
                EstimatorArg::L2 => OneStage::L2,
                EstimatorArg::L1 => OneStage::L1,
            };
            let fit = estimators::estimate(&rec.states, which, &cfg.filter.lad_cfg, Some(&rec.system.a))?;
            emit(common, "estimate.json", &serde_json::to_string_pretty(&fit)?)
        }
        Command::Filter { input } => {
            let rec = read_trajectory(&input)?;
            cfg.filter.validate(rec.n())?;
            let (a_ring, _) = pipeline::stage_one(&rec.states, &cfg.filter.lad_cfg)?;
            let filter = pipeline::apply_filter(&rec.states, &a_ring, &cfg.filter.filter_mode)?;
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                filter.write_bitmap_csv(fs::File::create(dir.join("retained.csv"))?)?;
            }
            emit(common, "filter.json", &serde_json::to_string_pretty(&filter)?)
        }
        Command::TwoStage { input } => {
            let rec = read_trajectory(&input)?;
            let report = pipeline::two_stage(
                &rec.states,
                &cfg.filter,
                Some(Truth {
                    a: &rec.system.a,
                    schedule: Some(&rec.schedule),
                }),
            )?;
            emit(common, "two_stage.json", &serde_json::to_string_pretty(&report)?)
        }
        Command::Experiment => {
            if let Some(seed) = common.seed {
                cfg.base_seed = seed;
            }
            if let Some(dir) = &common.out {
                cfg.output_dir = Some(dir.clone());
            }
            let report = harness::run_experiment(&cfg, common.threads)?;
            print_summary(&report);
            match &cfg.output_dir {
                Some(dir) => {
                    fs::write(dir.join("report.json"), serde_json::to_string(&report)?)?;
                    eprintln!("wrote {}", dir.display());
                    Ok(())
                }
                None => {
                    let mut out = Vec::new();
                    report.write_rows_csv(&mut out)?;
                    print!("{}", String::from_utf8_lossy(&out));
                    Ok(())
                }
            }
        }
        Command::PlotData { input, kind } => {
            let report: ExperimentReport = harness::read_report(&input)?;
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let kind = match kind {
                PlotArg::ErrorVsT => PlotKind::ErrorVsT,
                PlotArg::ResidualScatter => PlotKind::ResidualScatter,
            };
            for path in harness::emit_plot_data(&report, kind, &dir)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn print_summary(report: &ExperimentReport) {
    eprintln!("{:>8} {:<16} {:>9} {:>12}", "T", "estimator", "ok/total", "median_err");
    for a in &report.aggregates {
        let err = a.median_opnorm_err.map_or_else(|| "-".to_string(), |e| format!("{e:.4e}"));
        eprintln!("{:>8} {:<16} {:>4}/{:<4} {:>12}", a.t, a.estimator, a.successes, a.trials, err);
    }
}
