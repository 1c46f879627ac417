use std::path::PathBuf;
use std::process::ExitCode;

use causal_mdp::estimators::Estimator;
use causal_mdp_harness::config::ExperimentConfig;
use causal_mdp_harness::pipeline::{self, DATASET_FILE, MOMENTS_FILE, POLICY_FILE};
use causal_mdp_harness::sweep;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    version,
    about = "Learn transition moments from confounded driving logs and plan with them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Log a dataset with the configured collection mode.
    Collect(Common),
    /// Build the moment table from a dataset.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; defaults to <out>/dataset.csv.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run policy iteration on a moment table.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Moment table CSV; defaults to <out>/moments.csv.
        #[arg(long)]
        moments: Option<PathBuf>,
    },
    /// Roll out a policy.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Policy CSV; defaults to <out>/policy.csv.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Collect, estimate, plan and roll out.
    Pipeline(Common),
    /// Sweep ice coverage across estimators.
    Sweep(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Regression,
    Ipw,
    Dr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Ice coverage in [0, 1].
    #[arg(long)]
    ice: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    pessimism: Option<Switch>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(m) = self.method {
            cfg.method = match m {
                Method::Regression => Estimator::Regression,
                Method::Ipw => Estimator::Ipw,
                Method::Dr => Estimator::Dr,
            };
        }
        if let Some(r) = self.ice {
            cfg.ice_coverage = r;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(p) = self.pessimism {
            cfg.pessimism = matches!(p, Switch::On);
        }
        Ok(cfg)
    }
}

fn print_metrics(report: &causal_mdp::track::RolloutReport) {
    let m = &report.mean;
    println!(
        "trials {}  reward {:.3}  aggressive {:.4}  speed {:.3}  |omega| {:.3}",
        report.trials.len(),
        m.cumulative_reward,
        m.aggressive_frequency,
        m.mean_speed,
        m.mean_abs_omega
    );
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Collect(c) => {
            let cfg = c.resolve()?;
            let d = pipeline::run_collect(&cfg)?;
            println!("{} samples -> {}", d.len(), cfg.out_dir.join(DATASET_FILE).display());
        }
        Command::Estimate { common, dataset } => {
            let cfg = common.resolve()?;
            let path = dataset.unwrap_or_else(|| cfg.out_dir.join(DATASET_FILE));
            let t = pipeline::run_estimate(&cfg, &path)?;
            println!(
                "{} cells ({} unknown) -> {}",
                t.cells().len(),
                t.unknown_cells(),
                cfg.out_dir.join(MOMENTS_FILE).display()
            );
        }
        Command::Plan { common, moments } => {
            let cfg = common.resolve()?;
            let path = moments.unwrap_or_else(|| cfg.out_dir.join(MOMENTS_FILE));
            let o = pipeline::run_plan(&cfg, &path)?;
            println!(
                "{:?} after {} iterations -> {}",
                o.termination,
                o.iterations.len(),
                cfg.out_dir.join(POLICY_FILE).display()
            );
        }
        Command::Rollout { common, policy } => {
            let cfg = common.resolve()?;
            let path = policy.unwrap_or_else(|| cfg.out_dir.join(POLICY_FILE));
            print_metrics(&pipeline::run_rollout(&cfg, &path)?);
        }
        Command::Pipeline(c) => {
            let cfg = c.resolve()?;
            let out = pipeline::run_pipeline(&cfg, None)?;
            println!(
                "{} samples, {} unknown cells, planner {:?} after {} iterations",
                out.dataset_size,
                out.unknown_cells,
                out.outcome.termination,
                out.outcome.iterations.len()
            );
            print_metrics(&out.report);
        }
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let report = sweep::sweep_ice(&cfg)?;
            for cell in &report.cells {
                match &cell.outcome {
                    Ok(_) => {
                        let r = cell.metric(0);
                        let a = cell.metric(1);
                        println!(
                            "ice {:.2} {:<11} reward {:>10.3}  aggressive {:.4}",
                            cell.coverage,
                            cell.arm.label(),
                            causal_mdp_harness::stats::mean(&r),
                            causal_mdp_harness::stats::mean(&a)
                        );
                    }
                    Err(e) => println!("ice {:.2} {:<11} FAILED: {e}", cell.coverage, cell.arm.label()),
                }
            }
            println!("report -> {}", cfg.out_dir.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
