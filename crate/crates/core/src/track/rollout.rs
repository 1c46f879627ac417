use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{Estimator, MomentPair, MomentTable};
use crate::seed;
use crate::solver::{pose_grid, GridLayout, RewardTable};
use crate::state::{QueryPoint, State};

use super::behavior::random_start;
use super::geometry::TerrainInfo;
use super::world::TrackWorld;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutMetrics {
    pub cumulative_reward: f64,
    pub aggressive_frequency: f64,
    pub mean_speed: f64,
    pub mean_abs_omega: f64,
    pub steps: f64,
}

impl RolloutMetrics {
    pub const FIELDS: [&'static str; 5] = [
        "cumulative_reward",
        "aggressive_frequency",
        "mean_speed",
        "mean_abs_omega",
        "steps",
    ];

    pub fn values(&self) -> [f64; 5] {
        [
            self.cumulative_reward,
            self.aggressive_frequency,
            self.mean_speed,
            self.mean_abs_omega,
            self.steps,
        ]
    }

    pub fn mean(items: &[RolloutMetrics]) -> RolloutMetrics {
        let n = items.len().max(1) as f64;
        let mut acc = [0.0; 5];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        RolloutMetrics {
            cumulative_reward: acc[0] / n,
            aggressive_frequency: acc[1] / n,
            mean_speed: acc[2] / n,
            mean_abs_omega: acc[3] / n,
            steps: acc[4] / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutReport {
    pub trials: Vec<RolloutMetrics>,
    pub mean: RolloutMetrics,
}

/// Runs `trials` independent episodes of `steps` steps. Trial `k` draws from
/// the stream derived from `(master_seed, k)`, so results do not depend on
/// scheduling.
pub fn rollout<P>(world: &TrackWorld, policy: P, trials: usize, steps: usize, master_seed: u64) -> Result<RolloutReport>
where
    P: Fn(&State, &TerrainInfo, &mut dyn rand::RngCore) -> usize + Sync,
{
    if trials == 0 || steps == 0 {
        return Err(Error::InvalidConfig("trials and steps must be >= 1".into()));
    }
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(master_seed, &[0x110u64, k as u64]);
            let mut s = random_start(world, &mut rng);
            let mut m = RolloutMetrics::default();
            let mut aggressive = 0usize;
            for _ in 0..steps {
                let info = world.terrain_at(&s);
                let id = policy(&s, &info, &mut rng);
                let a = world.actions.get(id)?;
                if a.is_aggressive() {
                    aggressive += 1;
                }
                m.mean_speed += a.v.abs();
                m.mean_abs_omega += a.omega.abs();
                let tr = world.advance(&s, a, &mut rng);
                m.cumulative_reward += tr.reward;
                s = tr.resume;
            }
            let n = steps as f64;
            m.aggressive_frequency = aggressive as f64 / n;
            m.mean_speed /= n;
            m.mean_abs_omega /= n;
            m.steps = n;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutReport {
        mean: RolloutMetrics::mean(&per_trial),
        trials: per_trial,
    })
}

/// Uniformly random actions.
pub fn random_policy(world: &TrackWorld) -> impl Fn(&State, &TerrainInfo, &mut dyn rand::RngCore) -> usize + Sync + '_ {
    move |_, _, rng| rng.random_range(0..world.actions.len())
}

/// Query point of a pose: the pose plus its terrain feature.
pub fn query_for(world: &TrackWorld, s: &State) -> QueryPoint {
    QueryPoint::new(*s, world.terrain_at(s).feature())
}

/// Moment table from the simulator's exact noise law.
pub fn oracle_moment_table(world: &TrackWorld, supports: &[State]) -> Result<MomentTable> {
    let m = world.actions.len();
    let cells = supports
        .iter()
        .flat_map(|s| {
            world.actions.iter().map(move |a| {
                let (mu, sigma) = world.true_moments(s, a);
                MomentPair {
                    mu,
                    sigma,
                    support_count: 0,
                    unknown: false,
                }
            })
        })
        .collect();
    MomentTable::new(supports.len(), m, cells, Estimator::Oracle)
}

/// Expected reward of each (support, action) under the table's moments.
pub fn expected_reward_table(world: &TrackWorld, supports: &[State], table: &MomentTable) -> Result<RewardTable> {
    if table.n_supports() != supports.len() || table.n_actions() != world.actions.len() {
        return Err(Error::DimensionMismatch {
            expected: supports.len() * world.actions.len(),
            found: table.n_supports() * table.n_actions(),
        });
    }
    let m = table.n_actions();
    let values: Vec<f64> = (0..supports.len() * m)
        .into_par_iter()
        .map(|k| {
            let (i, a) = (k / m, k % m);
            let c = table.get(i, a)?;
            Ok(world.expected_reward(&supports[i], &c.mu, &c.sigma))
        })
        .collect::<Result<_>>()?;
    RewardTable::new(supports.len(), m, values)
}

/// Supporting poses for the track.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupportLayout {
    /// Grid at `spacing` over the bounding box, kept only within `margin` of
    /// the track edge.
    Band { spacing: f64, margin: f64, headings: usize },
    /// Unfiltered `n x n` grid over the bounding box.
    PerAxis { n: usize, headings: usize },
}

pub fn track_supports(world: &TrackWorld, layout: SupportLayout) -> Result<Vec<State>> {
    match layout {
        SupportLayout::Band {
            spacing,
            margin,
            headings,
        } => {
            if !(margin.is_finite() && margin >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "support margin must be >= 0, got {margin}"
                )));
            }
            let (xr, yr) = world.track.bounding_box(margin);
            let limit = world.track.half_width() + margin;
            let all = pose_grid(xr, yr, GridLayout::Spacing(spacing), headings)?;
            let kept: Vec<State> = all
                .into_iter()
                .filter(|s| world.terrain_at(s).distance.abs() <= limit)
                .collect();
            if kept.len() < 2 {
                return Err(Error::InvalidConfig("support band holds fewer than 2 poses".into()));
            }
            Ok(kept)
        }
        SupportLayout::PerAxis { n, headings } => {
            let (xr, yr) = world.track.bounding_box(0.0);
            pose_grid(xr, yr, GridLayout::PerAxis(n), headings)
        }
    }
}
