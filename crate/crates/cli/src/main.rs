use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use legem_cli::{render_report, report, run, RunConfig};

#[derive(Parser)]
#[command(
    name = "legem",
    about = "Off-beat multi-agent training with levelled graph episodic memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train every seed of one configuration and write CSV metrics.
    Run {
        /// Flat `key = value` config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// stag-hunter, stag-hunter-short, stag-hunter-instant, quarry or afforestation.
        #[arg(long)]
        env: Option<String>,
        /// iql or vdn.
        #[arg(long)]
        learner: Option<String>,
        /// scheme1, scheme2 or off.
        #[arg(long)]
        memory: Option<String>,
        /// legem, 1step, nstep:N or tdlambda:L.
        #[arg(long)]
        target: Option<String>,
        /// Seed count N (seeds 0..N), a range a..b or a comma list.
        #[arg(long)]
        seeds: Option<String>,
        /// Environment steps per seed.
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        beta: Option<String>,
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long = "eps-anneal")]
        eps_anneal: Option<String>,
        /// Write the per-reward pivot search trace of every seed.
        #[arg(long)]
        trace: bool,
        /// Extra `key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Mean ± std of final success over seeds for every run under a directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            env,
            learner,
            memory,
            target,
            seeds,
            steps,
            out,
            beta,
            gamma,
            eps_anneal,
            trace,
            set,
        } => {
            let mut pairs = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("cannot read {}", path.display()))?;
                    RunConfig::parse(&text)?
                }
                None => Vec::new(),
            };
            let flags = [
                ("env", env),
                ("learner", learner),
                ("memory", memory),
                ("target", target),
                ("seeds", seeds),
                ("steps", steps),
                ("out", out),
                ("beta", beta),
                ("gamma", gamma),
                ("eps_anneal", eps_anneal),
                ("trace", trace.then(|| "true".to_string())),
            ];
            for (k, v) in flags {
                if let Some(v) = v {
                    pairs.push((k.to_string(), v));
                }
            }
            for kv in set {
                let (k, v) = kv
                    .split_once('=')
                    .with_context(|| format!("expected KEY=VALUE, got `{kv}`"))?;
                pairs.push((k.trim().to_string(), v.trim().to_string()));
            }
            let cfg = RunConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
            let rows = run(&cfg)?;
            let finals: Vec<_> = cfg
                .seeds
                .iter()
                .filter_map(|s| rows.iter().rfind(|r| r.seed == *s))
                .map(|r| r.success_rate)
                .collect();
            println!(
                "{}: final success {} over {} seeds -> {}",
                cfg.env_name,
                legem_cli::format_pct(&finals),
                finals.len(),
                cfg.out.display()
            );
            Ok(())
        }
        Command::Report { dir } => {
            print!("{}", render_report(&report(&dir)?));
            Ok(())
        }
    }
}
