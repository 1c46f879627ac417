//! Cross-terrain elliptical track: geometry and terrain, stochastic unicycle
//! dynamics, progress reward, safety-biased and randomized data collection,
//! and rollout evaluation.

mod behavior;
mod geometry;
mod rollout;
mod world;

pub use behavior::{behavior_policy, collect_dataset, random_start, BaseController, BehaviorConfig, CollectionMode};
pub use geometry::{Segment, TerrainClass, TerrainInfo, TerrainTrack, TrackConfig};
pub use rollout::{
    expected_reward_table, oracle_moment_table, query_for, random_policy, rollout, track_supports, RolloutMetrics,
    RolloutReport, SupportLayout,
};
pub use world::{RewardParams, TrackWorld, Transition, VehicleParams};
