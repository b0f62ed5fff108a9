use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dpvs_core::experiment::{compare_runs, easy_scale, oracle_check};
use dpvs_core::{emit_reports, run_experiment, ExperimentConfig, UtilityTable};

const DEFAULT_OUT: &str = "dpvs-out";

#[derive(Parser, Debug)]
#[command(name = "dpvs", version, about = "Shapley contribution experiments with a pruned validation set")]
struct Cli {
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for coalition evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the baseline and pruned pipelines and write reports.
    Run { config: PathBuf },
    /// Compare the pruned contributions of two finished runs.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
    /// Track the easy-sample fraction while training at several separations.
    EasyScale { config: PathBuf },
    /// Check a utility table against the permutation oracle.
    OracleCheck { utilities: PathBuf },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn output_dir(cli_out: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    cli_out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let mut config = load_config(&config, cli.seed)?;
            let out = output_dir(cli.out, &config);
            config.output_dir = Some(out.clone());
            let result = run_experiment(&config).context("experiment failed")?;
            emit_reports(&result, &config, &out)?;
            match &result.report {
                Some(report) => print_json(report)?,
                None => eprintln!("contribution totals are zero; no metric report"),
            }
            eprintln!("reports written to {}", out.display());
        }
        Command::Compare { dir_a, dir_b } => {
            let report = compare_runs(&dir_a, &dir_b)?;
            print_json(&report)?;
        }
        Command::EasyScale { config } => {
            let config = load_config(&config, cli.seed)?;
            let levels = easy_scale(&config)?;
            if let Some(out) = cli.out {
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                let path = out.join("easy_scale.json");
                let text = serde_json::to_string_pretty(&levels)? + "\n";
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&levels)?;
        }
        Command::OracleCheck { utilities } => {
            let table = UtilityTable::load(&utilities)?;
            let check = oracle_check(&table)?;
            print_json(&check)?;
            if !check.passed() {
                bail!(
                    "subset formula disagrees with the permutation oracle (max diff {:e}, efficiency gap {:e})",
                    check.max_abs_difference,
                    check.efficiency_gap
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(0) => Err(anyhow::anyhow!("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")
            .and_then(|pool| pool.install(|| run(cli))),
        None => run(cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
