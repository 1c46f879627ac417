//! Ice-coverage sweep: every (coverage, arm) cell is planned and rolled out
//! independently. Arms are the learned estimators on the biased dataset plus,
//! optionally, regression on a randomized dataset.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use causal_mdp::estimators::Estimator;
use causal_mdp::seed;
use causal_mdp::track::{CollectionMode, RolloutMetrics};
use causal_mdp::Dataset;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::io::write_dataset;
use crate::pipeline::{self, write_metrics, METRICS_FILE, MOMENTS_FILE, POLICY_FILE};
use crate::stats;
use crate::svg::{self, Series};

const DATASET_STREAM: u64 = 0xDA7A;
const CELL_STREAM: u64 = 0xCE11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Biased(Estimator),
    Randomized,
}

impl Arm {
    pub fn label(&self) -> &'static str {
        match self {
            Arm::Biased(m) => m.tag(),
            Arm::Randomized => "randomized",
        }
    }

    fn code(&self) -> u64 {
        match self {
            Arm::Biased(Estimator::Regression) => 1,
            Arm::Biased(Estimator::Ipw) => 2,
            Arm::Biased(Estimator::Dr) => 3,
            Arm::Biased(Estimator::Oracle) => 4,
            Arm::Randomized => 5,
        }
    }

    fn collection(&self) -> CollectionMode {
        match self {
            Arm::Biased(_) => CollectionMode::Biased,
            Arm::Randomized => CollectionMode::Randomized,
        }
    }

    fn method(&self) -> Estimator {
        match self {
            Arm::Biased(m) => *m,
            Arm::Randomized => Estimator::Regression,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Dataset seed of a coverage; shared by every arm with the same collection mode.
pub fn dataset_seed(master: u64, coverage: f64, mode: CollectionMode) -> u64 {
    let mode = match mode {
        CollectionMode::Biased => 0,
        CollectionMode::Randomized => 1,
    };
    seed::derive(master, &[DATASET_STREAM, coverage.to_bits(), mode])
}

/// Rollout seed of a cell.
pub fn cell_seed(master: u64, coverage: f64, arm: Arm) -> u64 {
    seed::derive(master, &[CELL_STREAM, coverage.to_bits(), arm.code()])
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub coverage: f64,
    pub arm: Arm,
    pub outcome: Result<Vec<RolloutMetrics>, String>,
}

impl CellResult {
    pub fn trials(&self) -> &[RolloutMetrics] {
        self.outcome.as_deref().unwrap_or(&[])
    }

    pub fn metric(&self, field: usize) -> Vec<f64> {
        self.trials().iter().map(|m| m.values()[field]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub coverages: Vec<f64>,
    pub arms: Vec<Arm>,
    /// Coverage-major, arms in `arms` order.
    pub cells: Vec<CellResult>,
}

impl SweepReport {
    pub fn cell(&self, coverage: f64, arm: Arm) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.coverage == coverage && c.arm == arm)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }

    /// One row per (coverage, arm, metric): mean, sample sd and trial count.
    pub fn write_csv<W: Write>(&self, writer: W) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["coverage", "method", "metric", "mean", "sd", "trials"])?;
        for c in &self.cells {
            for (k, name) in RolloutMetrics::FIELDS.iter().enumerate() {
                let xs = c.metric(k);
                let (mean, sd) = if xs.is_empty() {
                    ("NaN".to_string(), "NaN".to_string())
                } else {
                    (stats::mean(&xs).to_string(), stats::std_dev(&xs).to_string())
                };
                w.write_record([
                    c.coverage.to_string(),
                    c.arm.label().to_string(),
                    name.to_string(),
                    mean,
                    sd,
                    xs.len().to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn plot(&self, field: usize, y_label: &str) -> String {
        let series = self
            .arms
            .iter()
            .map(|&arm| Series {
                label: arm.label().to_string(),
                points: self
                    .cells
                    .iter()
                    .filter(|c| c.arm == arm && c.outcome.is_ok())
                    .map(|c| {
                        let xs = c.metric(field);
                        (c.coverage, stats::mean(&xs), stats::std_dev(&xs))
                    })
                    .collect(),
            })
            .collect::<Vec<_>>();
        svg::line_chart(&series, "ice coverage", y_label)
    }
}

pub fn arms(cfg: &ExperimentConfig) -> Vec<Arm> {
    let mut arms: Vec<Arm> = cfg.sweep_methods.iter().map(|&m| Arm::Biased(m)).collect();
    if cfg.sweep_randomized_baseline {
        arms.push(Arm::Randomized);
    }
    arms
}

fn cell_config(cfg: &ExperimentConfig, coverage: f64, arm: Arm, dir: &Path) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.ice_coverage = coverage;
    c.method = arm.method();
    c.collection = arm.collection();
    c.out_dir = dir.to_path_buf();
    c
}

fn coverage_dir(root: &Path, coverage: f64) -> std::path::PathBuf {
    root.join(format!("ice_{coverage:.3}"))
}

fn run_cell(cfg: &ExperimentConfig, dataset: &Dataset, coverage: f64, arm: Arm) -> anyhow::Result<Vec<RolloutMetrics>> {
    let dir = coverage_dir(&cfg.out_dir, coverage).join(arm.label());
    let c = cell_config(cfg, coverage, arm, &dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let world = c.world()?;
    let (states, queries) = pipeline::supports(&c, &world).context("estimate")?;
    let table = pipeline::estimate(&c, &queries, dataset).context("estimate")?;
    table.write_csv(std::fs::File::create(dir.join(MOMENTS_FILE))?)?;
    let (set, outcome) = pipeline::plan(&c, &world, &states, &table).context("plan")?;
    causal_mdp::solver::write_policy_csv(
        std::fs::File::create(dir.join(POLICY_FILE))?,
        &states,
        &outcome.policy,
        outcome.field.values.as_slice(),
    )?;
    let report =
        pipeline::evaluate(&c, &world, &set, &outcome.policy, cell_seed(cfg.seed, coverage, arm)).context("rollout")?;
    write_metrics(std::fs::File::create(dir.join(METRICS_FILE))?, &report)?;
    Ok(report.trials)
}

/// Runs the full cross product of `cfg.sweep_coverages` and [`arms`], writing
/// per-cell artifacts under `cfg.out_dir` and the aggregate `sweep.csv`,
/// `reward.svg` and `aggressive.svg`. A failing cell is recorded in the
/// report and does not stop the others.
pub fn sweep_ice(cfg: &ExperimentConfig) -> anyhow::Result<SweepReport> {
    cfg.validate()?;
    pipeline::persist_config(cfg)?;
    let arms = arms(cfg);
    let coverages = cfg.sweep_coverages.clone();

    let modes: Vec<CollectionMode> = [CollectionMode::Biased, CollectionMode::Randomized]
        .into_iter()
        .filter(|&m| arms.iter().any(|a| a.collection() == m))
        .collect();
    let jobs: Vec<(f64, CollectionMode)> = coverages
        .iter()
        .flat_map(|&c| modes.iter().map(move |&m| (c, m)))
        .collect();
    let datasets: BTreeMap<(u64, bool), Result<Dataset, String>> = jobs
        .par_iter()
        .map(|&(coverage, mode)| {
            let key = (coverage.to_bits(), matches!(mode, CollectionMode::Randomized));
            let result = (|| {
                let mut c = cfg.clone();
                c.ice_coverage = coverage;
                c.collection = mode;
                let world = c.world()?;
                let d = pipeline::collect(&c, &world, dataset_seed(cfg.seed, coverage, mode))?;
                let dir = coverage_dir(&cfg.out_dir, coverage);
                std::fs::create_dir_all(&dir)?;
                let name = match mode {
                    CollectionMode::Biased => "dataset_biased.csv",
                    CollectionMode::Randomized => "dataset_randomized.csv",
                };
                write_dataset(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?), &d)?;
                anyhow::Ok(d)
            })()
            .map_err(|e| format!("[collect] {e:#}"));
            (key, result)
        })
        .collect();

    let cells_spec: Vec<(f64, Arm)> = coverages
        .iter()
        .flat_map(|&c| arms.iter().map(move |&a| (c, a)))
        .collect();
    let cells: Vec<CellResult> = cells_spec
        .par_iter()
        .map(|&(coverage, arm)| {
            let key = (coverage.to_bits(), matches!(arm, Arm::Randomized));
            let outcome = match &datasets[&key] {
                Ok(d) => run_cell(cfg, d, coverage, arm).map_err(|e| format!("{e:#}")),
                Err(e) => Err(e.clone()),
            };
            CellResult { coverage, arm, outcome }
        })
        .collect();

    let report = SweepReport { coverages, arms, cells };
    let out = &cfg.out_dir;
    report.write_csv(std::fs::File::create(out.join("sweep.csv"))?)?;
    std::fs::write(out.join("reward.svg"), report.plot(0, "cumulative reward"))?;
    std::fs::write(
        out.join("aggressive.svg"),
        report.plot(1, "aggressive action frequency"),
    )?;
    let mut failures = String::new();
    for c in report.failures() {
        failures.push_str(&format!(
            "{} {}: {}\n",
            c.coverage,
            c.arm,
            c.outcome.as_ref().unwrap_err()
        ));
    }
    std::fs::write(out.join("failures.txt"), failures)?;
    Ok(report)
}
