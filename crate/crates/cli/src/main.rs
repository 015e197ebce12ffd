use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fmc_cli::commands;
use fmc_cli::config::{CalibrationPreset, Config};

#[derive(Parser)]
#[command(
    name = "fmc",
    version,
    about = "Follow-me service migration: analysis, policy and simulation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Myopic,
}

#[derive(Subcommand)]
enum Cmd {
    /// Steady-state metrics, migration cost and disruption time per ring count k.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inclusive range `A..B`, or a single value.
        #[arg(long, value_parser = parse_k_range, default_value = "2..7")]
        k: RangeInclusive<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Optimal migration policy grid over forward probabilities p.
    Policy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        thr: Option<u32>,
        #[arg(long)]
        tau: Option<f64>,
        /// Comma-separated forward probabilities; default 0.1,0.2,...,1.0.
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long, value_enum)]
        calibration: Option<Preset>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        q_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Run a scenario file through the discrete-event simulator.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "fmc_out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare analytic and Monte-Carlo occupancy for a hex walk.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.02)]
        max_rel_error: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_k_range(s: &str) -> Result<RangeInclusive<u32>, String> {
    let num = |x: &str| {
        x.trim()
            .parse::<u32>()
            .map_err(|e| format!("bad k {x:?}: {e}"))
    };
    match s.split_once("..") {
        Some((a, b)) => Ok(num(a)?..=num(b.trim_start_matches('='))?),
        None => num(s).map(|k| k..=k),
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn execute(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Analyze {
            config,
            k,
            out,
            format,
        } => {
            let cfg = Config::load(config.as_deref())?;
            let rows = commands::analyze(&cfg, k)?;
            let csv = commands::analyze_csv(&cfg.analysis.fractions, &rows);
            if let Some(dir) = &out {
                write_out(dir, "analyze.csv", &csv)?;
            }
            match format {
                Format::Csv => print!("{csv}"),
                Format::Text => {
                    print!("{}", commands::analyze_text(&cfg.analysis.fractions, &rows))
                }
            }
            Ok(true)
        }
        Cmd::Policy {
            config,
            thr,
            tau,
            p,
            calibration,
            gamma,
            q_max,
            out,
            format,
        } => {
            let mut cfg = Config::load(config.as_deref())?;
            if let Some(preset) = calibration {
                cfg.calibration.preset = match preset {
                    Preset::Default => CalibrationPreset::Default,
                    Preset::Myopic => CalibrationPreset::Myopic,
                };
            }
            cfg.calibration.gamma = gamma.or(cfg.calibration.gamma);
            cfg.calibration.q_max = q_max.or(cfg.calibration.q_max);
            let ps = if p.is_empty() {
                (1..=10).map(|i| i as f64 / 10.0).collect()
            } else {
                p
            };
            let table = commands::policy(
                &cfg.calibration.calibration(),
                thr.unwrap_or(cfg.decision.thr),
                tau.unwrap_or(cfg.decision.tau),
                &ps,
            )?;
            if let Some(dir) = &out {
                write_out(dir, "policy.csv", &table.to_csv())?;
                write_out(dir, "policy.txt", &table.to_text())?;
            }
            match format {
                Format::Csv => print!("{}", table.to_csv()),
                Format::Text => print!("{}", table.to_text()),
            }
            if !table.all_threshold() {
                eprintln!("error: some optimal policies are not threshold-type");
            }
            Ok(table.all_threshold())
        }
        Cmd::Simulate { config, out, seed } => {
            let cfg = Config::load(Some(&config))?;
            let scenario = cfg.scenario(seed)?;
            let res = commands::simulate(&scenario)?;
            let m = &res.output.metrics;
            write_out(&out, "events.log", &res.output.log.to_text())?;
            write_out(&out, "metrics.csv", &m.to_csv())?;
            write_out(&out, "migrations.csv", &m.migrations_csv())?;
            write_out(&out, "rtt_trace.csv", &m.rtt_csv())?;
            print!("{}", res.summary);
            Ok(true)
        }
        Cmd::Validate {
            config,
            k,
            samples,
            seed,
            max_rel_error,
            out,
        } => {
            let cfg = Config::load(config.as_deref())?;
            let report = commands::validate(k, samples, seed, cfg.mobility.mu, max_rel_error)?;
            if let Some(dir) = &out {
                write_out(dir, "validate.csv", &report.csv)?;
            }
            print!("{}", report.csv);
            println!("result: {}", if report.passed { "PASS" } else { "FAIL" });
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
