use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use uda_core::eval::Alternative;
use uda_lab::{report, results, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "uda-lab", version, about = "Run and report unsupervised domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alt {
    Greater,
    Less,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `section.key=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; relative paths go under $UDA_LAB_OUT when set.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Build tables and signed-rank comparisons from results CSVs.
    Report {
        /// A run output directory or a directory of results CSVs.
        #[arg(long = "in")]
        input: PathBuf,
        /// `method_a:method_b`, repeatable.
        #[arg(long)]
        compare: Vec<String>,
        /// Direction of the one-sided test for method_a against method_b.
        #[arg(long, value_enum, default_value_t = Alt::Greater)]
        alt: Alt,
        /// Report directory; defaults to `<in>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the autodiff engine on random small networks.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            overrides,
            out,
            parallel,
        } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let out = run::resolve_out(out.as_deref(), &cfg);
            let summary = run::run_experiment(&cfg, &out, parallel)?;
            for (seed, acc) in &summary.final_accuracies {
                println!("{} {} seed {seed}: {acc:.2}", cfg.method.name(), cfg.task());
            }
            println!("results: {}", summary.results_file.display());
            println!("manifest: {}", summary.manifest_file.display());
        }
        Command::Report {
            input,
            compare,
            alt,
            out,
        } => {
            let rows = results::read_all(&input)?;
            let pairs = compare.iter().map(|c| report::parse_pair(c)).collect::<Result<Vec<_>>>()?;
            let alt = match alt {
                Alt::Greater => Alternative::Greater,
                Alt::Less => Alternative::Less,
            };
            let rep = report::build(&rows, &pairs, alt)?;
            for c in &rep.comparisons {
                if let Some(w) = &c.warning {
                    eprintln!("warning: {} vs {} on {}: {w}", c.method_a, c.method_b, c.task);
                }
            }
            let dir = out.unwrap_or_else(|| input.join("report"));
            report::write(&rep, &dir)?;
            println!("report: {}", dir.display());
        }
        Command::Gradcheck { trials, seed } => {
            let r = uda_core::tensor::gradcheck_suite(trials, seed)?;
            println!(
                "{} trials, {} parameters checked (at most {} per network), max relative error {:.3e} in trial {}",
                r.trials, r.parameters_checked, r.max_parameters_per_trial, r.max_relative_error, r.worst_trial
            );
            if r.max_relative_error >= 1e-4 {
                anyhow::bail!("relative error above 1e-4");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
