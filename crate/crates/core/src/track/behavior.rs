use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::seed;
use crate::state::{wrap, Action, Dataset, QueryPoint, Sample, State};

use super::geometry::TerrainInfo;
use super::world::TrackWorld;

/// Pure-pursuit centerline follower. For each speed it takes the turn rate
/// closest to the pursuit curvature, then picks the speed whose nominal
/// (full-grip, noise-free) step earns the most reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseController {
    pub lookahead: f64,
}

impl Default for BaseController {
    fn default() -> Self {
        Self { lookahead: 2.0 }
    }
}

impl BaseController {
    pub fn act(&self, world: &TrackWorld, s: &State, info: &TerrainInfo) -> usize {
        let track = &world.track;
        let target_t = track.param_at_arc(track.arc_length(info.param) + self.lookahead);
        let (tx, ty) = track.centerline(target_t);
        let alpha = wrap((ty - s.y).atan2(tx - s.x) - s.theta);
        let mut best: Option<(f64, usize)> = None;
        let mut speeds: Vec<f64> = world.actions.iter().map(|a| a.v).filter(|v| *v > 0.0).collect();
        speeds.sort_by(f64::total_cmp);
        speeds.dedup();
        for v in speeds {
            let desired = 2.0 * v * alpha.sin() / self.lookahead;
            let Some(a) = world
                .actions
                .iter()
                .filter(|a| a.v == v)
                .min_by(|a, b| (a.omega - desired).abs().total_cmp(&(b.omega - desired).abs()))
            else {
                continue;
            };
            let d = world.vehicle.nominal_shift(s, a, 1.0);
            let next = State::new(s.x + d[0], s.y + d[1], s.theta + d[2]);
            let score = world.reward(s, &next);
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, a.id));
            }
        }
        best.map(|(_, id)| id).unwrap_or(world.actions.most_conservative().id)
    }
}

/// Safety override applied on top of the base controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    pub p_override: f64,
    /// Terrain with slip below this counts as ice.
    pub ice_threshold: f64,
    pub base: BaseController,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            p_override: 0.9,
            ice_threshold: 0.3,
            base: BaseController::default(),
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_override) {
            return Err(Error::InvalidConfig(format!(
                "p_override must lie in [0, 1], got {}",
                self.p_override
            )));
        }
        if !(self.base.lookahead.is_finite() && self.base.lookahead > 0.0) {
            return Err(Error::InvalidConfig("lookahead must be > 0".into()));
        }
        Ok(())
    }
}

/// Returns `base_action` unless on ice, where an aggressive action is replaced
/// by the most conservative one with probability `p_override`.
pub fn behavior_policy(
    world: &TrackWorld,
    info: &TerrainInfo,
    base_action: usize,
    cfg: &BehaviorConfig,
    rng: &mut impl Rng,
) -> Result<usize> {
    let a: &Action = world.actions.get(base_action)?;
    if info.slip < cfg.ice_threshold && a.is_aggressive() && rng.random::<f64>() < cfg.p_override {
        return Ok(world.actions.most_conservative().id);
    }
    Ok(base_action)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectionMode {
    Biased,
    Randomized,
}

impl FromStr for CollectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(Self::Biased),
            "randomized" => Ok(Self::Randomized),
            other => Err(Error::InvalidConfig(format!("unknown collection mode '{other}'"))),
        }
    }
}

/// Random start: uniform along the loop, uniform lateral offset within half
/// the half-width, small heading error.
pub fn random_start(world: &TrackWorld, rng: &mut impl Rng) -> State {
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    let hw = 0.5 * world.track.half_width();
    let lateral = rng.random_range(-hw..=hw);
    let heading = Normal::new(0.0, 0.1).expect("valid sd").sample(rng);
    world.track.pose_at(t, lateral, heading)
}

/// Logs `episodes * steps` transitions. Episodes run in parallel, each from
/// its own derived stream, and are concatenated in order.
pub fn collect_dataset(
    world: &TrackWorld,
    mode: CollectionMode,
    episodes: usize,
    steps: usize,
    behavior: &BehaviorConfig,
    master_seed: u64,
) -> Result<Dataset> {
    if episodes == 0 || steps == 0 {
        return Err(Error::InvalidConfig("episodes and steps must be >= 1".into()));
    }
    behavior.validate()?;
    let per_episode: Vec<Vec<Sample>> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = seed::rng(master_seed, &[0xC011, ep as u64]);
            let mut s = random_start(world, &mut rng);
            let mut out = Vec::with_capacity(steps);
            for t in 0..steps {
                let info = world.terrain_at(&s);
                let a = match mode {
                    CollectionMode::Biased => {
                        let base = behavior.base.act(world, &s, &info);
                        behavior_policy(world, &info, base, behavior, &mut rng)?
                    }
                    CollectionMode::Randomized => rng.random_range(0..world.actions.len()),
                };
                let tr = world.advance(&s, world.actions.get(a)?, &mut rng);
                out.push(Sample::new(
                    ep as u32,
                    t as u32,
                    QueryPoint::new(s, info.feature()),
                    a,
                    tr.next,
                ));
                s = tr.resume;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Dataset::new(per_episode.into_iter().flatten().collect(), world.actions.len())
}
