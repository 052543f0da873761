use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use discover_core::diagnostics::run_diagnostics;
use discover_core::env::EnvName;
use discover_core::harness::{
    self, Ablation, AgentConfig, Algo, Exploration, Manifest, SweepMode, MANIFEST_FILE,
};

#[derive(Parser)]
#[command(
    name = "discover",
    version,
    about = "TD-error directed exploration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration over its seeds.
    Run(RunArgs),
    /// Run a family of settings over the same seeds.
    Sweep(SweepArgs),
    /// Visitation and TD-error diagnostics of a recorded off-policy run.
    Diag(DiagArgs),
}

/// Flags shared by `run` and `sweep`; each one overrides the config file.
#[derive(Args)]
struct ConfigArgs {
    /// Flat JSON config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ddpg, td3 or a2c.
    #[arg(long)]
    algo: Option<Algo>,
    /// pointmass_dense, pointmass_sparse or pendulum.
    #[arg(long)]
    env: Option<EnvName>,
    /// discover, gaussian or greedy.
    #[arg(long)]
    exploration: Option<Exploration>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Single seed; replaces the configured seed list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    warmup: Option<u64>,
    /// no_dpu, no_tn or no_tsr; repeatable.
    #[arg(long)]
    ablation: Vec<Ablation>,
    /// Keep transition logs and final networks for `diag`.
    #[arg(long)]
    record_transitions: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// lambda, ablation or baselines.
    #[arg(long)]
    mode: SweepMode,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DiagArgs {
    /// Directory written by `run --record-transitions`.
    #[arg(long)]
    run: PathBuf,
    /// Seed to analyse; defaults to every seed in the manifest.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid cells per axis.
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    /// Output directory; defaults to `<run>/diag`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<AgentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                AgentConfig::from_json(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => AgentConfig::default(),
        };
        if let Some(a) = self.algo {
            c.algo = a;
        }
        if let Some(e) = self.env {
            c.env = e;
        }
        if let Some(e) = self.exploration {
            c.exploration = e;
        }
        if self.lambda.is_some() {
            c.lambda = self.lambda;
        }
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            c.seeds = s.clone();
        }
        if let Some(s) = self.steps {
            c.total_steps = s;
        }
        if let Some(i) = self.eval_interval {
            c.eval_interval = i;
        }
        if let Some(e) = self.eval_episodes {
            c.eval_episodes = e;
        }
        if let Some(w) = self.warmup {
            c.warmup_steps = w;
        }
        if !self.ablation.is_empty() {
            c.ablation = self.ablation.iter().copied().collect();
        }
        if self.record_transitions {
            c.record_transitions = true;
        }
        c.validate()?;
        Ok(c)
    }
}

fn report(label: &str, runs: &[harness::SeedRun]) {
    for r in runs {
        let status = match &r.divergence {
            Some(d) => format!("  diverged at step {}: {}", d.step, d.message),
            None => String::new(),
        };
        println!(
            "{label}\tseed {}\tlast10_mean {:.4}{status}",
            r.seed,
            r.last10_mean()
        );
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = args.config.resolve()?;
            let runs = harness::run(&config, Some(&args.config.out))?;
            report(&config.setting_label(), &runs);
            println!("wrote {}", args.config.out.display());
        }
        Command::Sweep(args) => {
            let config = args.config.resolve()?;
            let result = harness::sweep(&config, args.mode, Some(&args.config.out))?;
            for (label, runs) in &result.settings {
                report(label, runs);
            }
            println!("wrote {}", args.config.out.display());
        }
        Command::Diag(args) => {
            let seeds = match args.seed {
                Some(s) => vec![s],
                None => {
                    let path = args.run.join(MANIFEST_FILE);
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let manifest: Manifest = serde_json::from_str(&text)?;
                    if !manifest.config.record_transitions {
                        bail!(
                            "{} was not recorded with --record-transitions",
                            args.run.display()
                        );
                    }
                    manifest.seeds.iter().map(|s| s.seed).collect()
                }
            };
            let out = args.out.unwrap_or_else(|| args.run.join("diag"));
            for seed in seeds {
                let dir = out.join(format!("seed{seed}"));
                let summary = run_diagnostics(&args.run, seed, &dir, args.resolution)?;
                println!(
                    "seed {seed}: {} transitions, explained variance {:.4}, mean |TD| by phase {:?}",
                    summary.records, summary.explained_variance_ratio, summary.mean_td_error
                );
                println!("wrote {}", dir.display());
            }
        }
    }
    Ok(())
}
