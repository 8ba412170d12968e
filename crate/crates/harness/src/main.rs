use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surge_core::{Mode, Scope};
use surge_harness::compare::compare;
use surge_harness::config::Task;
use surge_harness::histogram::gradient_histogram;
use surge_harness::train::{run_dir, run_training, write_run};
use surge_harness::{checkpoint, run_theory, ExperimentConfig, HarnessError, Result};

/// Binarized training with dual-path gradient compensation.
#[derive(Parser)]
#[command(name = "surge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one (method, seed) replica and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the first configured method.
        #[arg(long)]
        method: Option<Mode>,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        scope: Option<Scope>,
        #[arg(long)]
        surge_star: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every configured method and seed and summarize.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of the optimal compensator scale; prints JSON.
    Theory {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        models: usize,
        #[arg(long, default_value_t = surge_core::theory::DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Activation-gradient histogram and CDF of an instrumented run; prints JSON.
    Histogram {
        #[arg(long)]
        run: PathBuf,
        /// 1-based binarizable layer.
        #[arg(long)]
        layer: usize,
        /// Second run directory binned on the same edges.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Copy a checkpoint without its auxiliary branches.
    Strip {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_or_print(out: Option<&Path>, json: String) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, json + "\n").map_err(HarnessError::io(p)),
        None => match writeln!(std::io::stdout().lock(), "{json}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(HarnessError::io("<stdout>")(e)),
            _ => Ok(()),
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            method,
            seed,
            eta,
            scope,
            surge_star,
            steps,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.eta = eta.unwrap_or(cfg.eta);
            cfg.scope = scope.unwrap_or(cfg.scope);
            cfg.surge_star |= surge_star;
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.output_dir = out.unwrap_or(cfg.output_dir);
            let method = method.unwrap_or(cfg.methods[0]);
            let seed = seed.unwrap_or(cfg.seeds[0]);
            cfg.methods = vec![method];
            cfg.seeds = vec![seed];
            cfg.validate()?;
            if cfg.task == Task::Theory {
                return Err(HarnessError::config(
                    "task `theory` has no training loop; use the theory command",
                ));
            }
            let result = run_training(&cfg, method, seed)?;
            let dir = run_dir(&cfg.output_dir, method, seed);
            write_run(&dir, &cfg, &result)?;
            println!(
                "{method} seed {seed}: final loss {} -> {}",
                result.final_loss,
                dir.display()
            );
        }
        Command::Compare { config, workers, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.workers = workers.unwrap_or(cfg.workers);
            cfg.output_dir = out.unwrap_or(cfg.output_dir);
            let result = compare(&cfg)?;
            for m in &result.summary.methods {
                let extra = match (m.median_final_dist, m.mean_test_accuracy) {
                    (Some(d), _) => format!(", median distance {d:.6}"),
                    (_, Some(a)) => format!(", mean test accuracy {a:.4}"),
                    _ => String::new(),
                };
                println!(
                    "{:<14} median final loss {:.6}{extra}",
                    m.method.to_string(),
                    m.median_final_loss
                );
            }
            println!("reports in {}", cfg.output_dir.display());
        }
        Command::Theory {
            d,
            samples,
            seed,
            models,
            resolution,
            out,
        } => {
            let reports = run_theory(d, samples, seed, models, resolution)?;
            let json = if reports.len() == 1 {
                serde_json::to_string_pretty(&reports[0])
            } else {
                serde_json::to_string_pretty(&reports)
            }
            .expect("report serializes");
            write_or_print(out.as_deref(), json)?;
        }
        Command::Histogram {
            run,
            layer,
            baseline,
            bins,
        } => {
            let report = gradient_histogram(&run, baseline.as_deref(), layer, bins)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_or_print(None, json)?;
        }
        Command::Strip { input, out } => {
            let net = checkpoint::strip_file(&input, &out)?;
            println!(
                "stripped {} -> {} ({} parameters)",
                input.display(),
                out.display(),
                net.param_count()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
