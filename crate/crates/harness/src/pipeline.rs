//! Collect, estimate, plan, roll out. Each stage reads and writes its own
//! artifact so stages can be rerun in isolation.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use causal_mdp::estimators::{build_moment_table, MomentTable};
use causal_mdp::seed;
use causal_mdp::solver::{
    apply_pessimism, policy_iteration, read_policy_csv, write_policy_csv, PlanOutcome, Policy, SupportingSet,
};
use causal_mdp::track::{
    collect_dataset, expected_reward_table, query_for, rollout, track_supports, RolloutMetrics, RolloutReport,
    TrackWorld,
};
use causal_mdp::{Dataset, QueryPoint, State};

use crate::config::ExperimentConfig;
use crate::io::{read_dataset, write_dataset};

pub const DATASET_FILE: &str = "dataset.csv";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const POLICY_FILE: &str = "policy.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";

const COLLECT_STREAM: u64 = 0xC0;
const ROLLOUT_STREAM: u64 = 0x20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Collect,
    Estimate,
    Plan,
    Rollout,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Collect => "collect",
            Stage::Estimate => "estimate",
            Stage::Plan => "plan",
            Stage::Rollout => "rollout",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {error:#}")]
pub struct StageError {
    pub stage: Stage,
    pub error: anyhow::Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait Tag<T> {
    fn stage(self, stage: Stage) -> StageResult<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> StageResult<T> {
        self.map_err(|e| StageError { stage, error: e.into() })
    }
}

pub fn collection_seed(cfg: &ExperimentConfig) -> u64 {
    seed::derive(cfg.seed, &[COLLECT_STREAM])
}

pub fn rollout_seed(cfg: &ExperimentConfig) -> u64 {
    seed::derive(cfg.seed, &[ROLLOUT_STREAM])
}

pub fn collect(cfg: &ExperimentConfig, world: &TrackWorld, master_seed: u64) -> anyhow::Result<Dataset> {
    Ok(collect_dataset(
        world,
        cfg.collection,
        cfg.episodes,
        cfg.episode_steps,
        &cfg.behavior(),
        master_seed,
    )?)
}

/// Supporting poses and their query points.
pub fn supports(cfg: &ExperimentConfig, world: &TrackWorld) -> anyhow::Result<(Vec<State>, Vec<QueryPoint>)> {
    let states = track_supports(world, cfg.support_layout())?;
    let queries = states.iter().map(|s| query_for(world, s)).collect();
    Ok((states, queries))
}

pub fn estimate(cfg: &ExperimentConfig, queries: &[QueryPoint], dataset: &Dataset) -> anyhow::Result<MomentTable> {
    let mut table = build_moment_table(queries, dataset, cfg.method, &cfg.estimator())?;
    if cfg.pessimism {
        apply_pessimism(&mut table, queries, dataset, &cfg.pessimism_config())?;
    }
    Ok(table)
}

/// Policy iteration on the expected rewards under `table`. With pessimism on,
/// unknown cells are penalized by the configured penalty, or by twice the
/// reward range when none is set.
pub fn plan(
    cfg: &ExperimentConfig,
    world: &TrackWorld,
    states: &[State],
    table: &MomentTable,
) -> anyhow::Result<(SupportingSet, PlanOutcome)> {
    let set = SupportingSet::new(states.to_vec(), &cfg.kernel()?)?;
    let rewards = expected_reward_table(world, states, table)?;
    let penalty = cfg
        .pessimism
        .then(|| cfg.pessimism_penalty.unwrap_or(2.0 * rewards.range()));
    let outcome = policy_iteration(&set, table, &rewards, &cfg.planner(penalty))?;
    Ok((set, outcome))
}

/// Rolls out the policy that plays the action of the nearest support.
pub fn evaluate(
    cfg: &ExperimentConfig,
    world: &TrackWorld,
    set: &SupportingSet,
    policy: &Policy,
    master_seed: u64,
) -> anyhow::Result<RolloutReport> {
    Ok(rollout(
        world,
        |s, _, _| policy.action(set.nearest(s)),
        cfg.trials,
        cfg.steps,
        master_seed,
    )?)
}

pub fn write_metrics<W: Write>(writer: W, report: &RolloutReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["trial"];
    header.extend(RolloutMetrics::FIELDS);
    w.write_record(&header)?;
    let row = |label: String, m: &RolloutMetrics| {
        let mut r = vec![label];
        r.extend(m.values().iter().map(f64::to_string));
        r
    };
    for (k, m) in report.trials.iter().enumerate() {
        w.write_record(row(k.to_string(), m))?;
    }
    w.write_record(row("mean".into(), &report.mean))?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Writes the resolved config into the output directory.
pub fn persist_config(cfg: &ExperimentConfig) -> StageResult<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))
        .stage(Stage::Config)?;
    let text = cfg.to_toml().stage(Stage::Config)?;
    std::fs::write(cfg.out_dir.join(CONFIG_FILE), text).stage(Stage::Config)
}

fn prepare(cfg: &ExperimentConfig) -> StageResult<TrackWorld> {
    cfg.validate().stage(Stage::Config)?;
    persist_config(cfg)?;
    cfg.world().stage(Stage::Config)
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub out_dir: PathBuf,
    pub dataset_size: usize,
    pub unknown_cells: usize,
    pub outcome: PlanOutcome,
    pub report: RolloutReport,
}

/// Runs every stage, writing the five artifacts into `cfg.out_dir`. When
/// `dataset` is given the collection stage is skipped and the dataset is
/// persisted as is. Artifacts of completed stages survive a later failure.
pub fn run_pipeline(cfg: &ExperimentConfig, dataset: Option<Dataset>) -> StageResult<PipelineOutput> {
    let world = prepare(cfg)?;
    let dir = &cfg.out_dir;

    let dataset = match dataset {
        Some(d) => d,
        None => collect(cfg, &world, collection_seed(cfg)).stage(Stage::Collect)?,
    };
    write_dataset(create(&dir.join(DATASET_FILE)).stage(Stage::Collect)?, &dataset).stage(Stage::Collect)?;

    let (states, queries) = supports(cfg, &world).stage(Stage::Estimate)?;
    let table = estimate(cfg, &queries, &dataset).stage(Stage::Estimate)?;
    table
        .write_csv(create(&dir.join(MOMENTS_FILE)).stage(Stage::Estimate)?)
        .stage(Stage::Estimate)?;

    let (set, outcome) = plan(cfg, &world, &states, &table).stage(Stage::Plan)?;
    write_policy_csv(
        create(&dir.join(POLICY_FILE)).stage(Stage::Plan)?,
        &states,
        &outcome.policy,
        outcome.field.values.as_slice(),
    )
    .stage(Stage::Plan)?;

    let report = evaluate(cfg, &world, &set, &outcome.policy, rollout_seed(cfg)).stage(Stage::Rollout)?;
    write_metrics(create(&dir.join(METRICS_FILE)).stage(Stage::Rollout)?, &report).stage(Stage::Rollout)?;

    Ok(PipelineOutput {
        out_dir: dir.clone(),
        dataset_size: dataset.len(),
        unknown_cells: table.unknown_cells(),
        outcome,
        report,
    })
}

pub fn run_collect(cfg: &ExperimentConfig) -> StageResult<Dataset> {
    let world = prepare(cfg)?;
    let d = collect(cfg, &world, collection_seed(cfg)).stage(Stage::Collect)?;
    write_dataset(create(&cfg.out_dir.join(DATASET_FILE)).stage(Stage::Collect)?, &d).stage(Stage::Collect)?;
    Ok(d)
}

pub fn run_estimate(cfg: &ExperimentConfig, dataset_path: &Path) -> StageResult<MomentTable> {
    let world = prepare(cfg)?;
    let dataset =
        read_dataset(open(dataset_path).stage(Stage::Estimate)?, world.actions.len()).stage(Stage::Estimate)?;
    let (_, queries) = supports(cfg, &world).stage(Stage::Estimate)?;
    let table = estimate(cfg, &queries, &dataset).stage(Stage::Estimate)?;
    table
        .write_csv(create(&cfg.out_dir.join(MOMENTS_FILE)).stage(Stage::Estimate)?)
        .stage(Stage::Estimate)?;
    Ok(table)
}

pub fn run_plan(cfg: &ExperimentConfig, moments_path: &Path) -> StageResult<PlanOutcome> {
    let world = prepare(cfg)?;
    let table = MomentTable::read_csv(open(moments_path).stage(Stage::Plan)?).stage(Stage::Plan)?;
    let (states, _) = supports(cfg, &world).stage(Stage::Plan)?;
    let (_, outcome) = plan(cfg, &world, &states, &table).stage(Stage::Plan)?;
    write_policy_csv(
        create(&cfg.out_dir.join(POLICY_FILE)).stage(Stage::Plan)?,
        &states,
        &outcome.policy,
        outcome.field.values.as_slice(),
    )
    .stage(Stage::Plan)?;
    Ok(outcome)
}

pub fn run_rollout(cfg: &ExperimentConfig, policy_path: &Path) -> StageResult<RolloutReport> {
    let world = prepare(cfg)?;
    let (states, policy, _) = read_policy_csv(open(policy_path).stage(Stage::Rollout)?).stage(Stage::Rollout)?;
    if let Some(&bad) = policy.0.iter().find(|&&a| a >= world.actions.len()) {
        return Err(anyhow::anyhow!("policy uses unknown action {bad}")).stage(Stage::Rollout);
    }
    let set = SupportingSet::new(states, &cfg.kernel().stage(Stage::Rollout)?).stage(Stage::Rollout)?;
    let report = evaluate(cfg, &world, &set, &policy, rollout_seed(cfg)).stage(Stage::Rollout)?;
    write_metrics(create(&cfg.out_dir.join(METRICS_FILE)).stage(Stage::Rollout)?, &report).stage(Stage::Rollout)?;
    Ok(report)
}
