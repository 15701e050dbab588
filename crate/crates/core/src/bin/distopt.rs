use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use distopt::harness::config::ExperimentConfig;
use distopt::harness::experiment::{self, compare_csv};
use distopt::harness::{exit_code, selftest};
use distopt::{Error, Result};

#[derive(Parser)]
#[command(name = "distopt", version, about = "Optimal-control based distributed optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, meta.json and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-fit the convergence rate of a saved run directory.
    Fit {
        #[arg(long)]
        out: PathBuf,
        /// Optional config; only checked for validity.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several configs on the same seed and tabulate their costs.
    Compare {
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the invariant suite on the bundled instances.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

/// Command outcome: `Ok(true)` when every property check passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = experiment::run_experiment(&cfg)?;
            let dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(outcome.report.name.clone()));
            experiment::write_outputs(&outcome, &cfg, &dir)?;
            let r = &outcome.report;
            println!(
                "{}: {} iterations, final error {:e}, {} messages, class {}",
                r.name,
                r.iterations,
                r.final_error,
                r.total_messages,
                r.rate.as_ref().map_or("n/a", |x| x.classification.name())
            );
            println!("wrote {}", dir.display());
            if cfg.requires_convergence() && !outcome.trace.converged {
                return Err(Error::NonConvergence {
                    what: "experiment",
                    iterations: r.iterations,
                    last_change: r.final_error,
                });
            }
            for f in &r.property_failures {
                eprintln!("property check failed: {f}");
            }
            Ok(r.property_failures.is_empty())
        }
        Command::Fit { out, config, seed: _ } => {
            if let Some(c) = config {
                ExperimentConfig::from_file(&c)?;
            }
            let report = experiment::refit(&out)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            write(&out.join("fit.json"), &text)?;
            println!("classification: {}", report.classification.name());
            Ok(true)
        }
        Command::Compare { config, out, seed } => {
            let cfgs = config.iter().map(ExperimentConfig::from_file).collect::<Result<Vec<_>>>()?;
            let rows = experiment::compare(&cfgs, seed)?;
            let table = compare_csv(&rows);
            print!("{table}");
            if let Some(dir) = out {
                create(&dir)?;
                write(&dir.join("compare.csv"), &table)?;
            }
            Ok(true)
        }
        Command::Selftest { out, seed } => {
            let report = selftest::run(seed)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if let Some(dir) = out {
                create(&dir)?;
                write(&dir.join("selftest.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
            }
            Ok(report.passed())
        }
    }
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        context: format!("creating {}", dir.display()),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
