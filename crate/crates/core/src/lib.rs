//! Learning transition moments from confounded driving logs and planning with
//! them.
//!
//! The pipeline is: log transitions ([`track`]), estimate per-action first and
//! second moments of the state shift at a set of supporting states
//! ([`estimators`]), then run policy iteration on the diffusion-approximated
//! Bellman equation with a kernel value representation ([`solver`]).

pub mod error;
pub mod estimators;
pub mod kernel;
pub mod seed;
pub mod solver;
pub mod state;
pub mod synthetic;
pub mod track;

pub use error::{Error, Result};
pub use state::{
    standardized_distance, state_shift, wrap_angle, Action, ActionSet, ContextFeature, Dataset, FeatureScaler,
    QueryPoint, Sample, State, StateShift,
};
