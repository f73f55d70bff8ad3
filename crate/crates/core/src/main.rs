use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use consensus_lab::harness::{
    analyze_sample, catalog, catalog_entry, catalog_scenario, check_scenario, load_scenario,
    read_ensemble_csv, run_scenario, Overrides, RunOptions, Scenario,
};
use consensus_lab::Error;

/// Simulate consensus dynamics with feedback and verify their limits.
#[derive(Parser)]
#[command(name = "consensus-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or catalog id and write its artifacts.
    Run {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the scenario's condition checks only; exit 1 if any fails.
    Check {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run a catalog case and assert its acceptance predicates.
    Reproduce {
        id: String,
        #[command(flatten)]
        common: Common,
    },
    /// List the built-in catalog.
    List,
    /// Re-analyze a saved ensemble CSV.
    Stats {
        csv: PathBuf,
        /// Centre the sample and divide by sqrt(horizon) first.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; affects speed only.
    #[arg(long)]
    threads: Option<usize>,
    /// Override a tolerance parameter, e.g. `--tol product_tol=1e-8`.
    #[arg(long, value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected KEY=VALUE")?;
    let v: f64 = v.parse().map_err(|e| format!("{v:?}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            horizon: self.horizon,
            ensemble: self.ensemble,
            tol: self.tol.clone(),
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            threads: self.threads,
        }
    }
}

fn resolve(name: &str, common: &Common) -> Result<Scenario, Error> {
    let mut s = if catalog_entry(name).is_ok() {
        catalog_scenario(name)?
    } else if std::path::Path::new(name).exists() {
        load_scenario(name)?
    } else {
        return Err(Error::UnknownCatalogId(name.to_string()));
    };
    s.apply(&common.overrides())?;
    Ok(s)
}

fn print_json(v: &impl serde::Serialize) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run { scenario, common } => {
            let s = resolve(&scenario, &common)?;
            let summary = run_scenario(&s, &common.options())?;
            print_json(&summary)?;
            Ok(true)
        }
        Command::Check { scenario, common } => {
            let s = resolve(&scenario, &common)?;
            let reports = check_scenario(&s)?;
            print_json(&reports)?;
            Ok(reports
                .values()
                .all(|r| r.get("satisfied") == Some(&serde_json::Value::Bool(true))))
        }
        Command::Reproduce { id, common } => {
            catalog_entry(&id)?;
            let s = resolve(&id, &common)?;
            let summary = run_scenario(&s, &common.options())?;
            for r in &summary.acceptance {
                let mark = if r.passed { "PASS" } else { "FAIL" };
                eprintln!("{mark} {} {:?} {}", r.pointer, r.op, r.actual);
            }
            for e in &summary.errors {
                eprintln!("ERROR {e}");
            }
            eprintln!(
                "{} {}",
                if summary.passed { "PASS" } else { "FAIL" },
                summary.scenario
            );
            Ok(summary.passed)
        }
        Command::List => {
            for e in catalog() {
                println!("{}", e.id);
            }
            Ok(true)
        }
        Command::Stats { csv, horizon, alpha } => {
            let sample = read_ensemble_csv(&csv, horizon.unwrap_or(1))?;
            print_json(&analyze_sample(&sample, horizon.is_some(), alpha)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
