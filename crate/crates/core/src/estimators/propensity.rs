//! Nonparametric propensity scores.
//!
//! Within a neighborhood, `p(a)` is the action frequency and `p(u | a)` a
//! Gaussian KDE over the members that took `a`, normalized by their count, so
//! the Bayes ratio reduces to
//!
//! ```text
//! e_a(u) = sum_{i: a_i = a} k(u - u_i; h) / sum_i k(u - u_i; h)
//! ```
//!
//! in standardized coordinates. Scores are then floored and renormalized.

use crate::error::{Error, Result};
use crate::estimators::Neighborhood;
use crate::state::{Dataset, QueryPoint, POSE_DIM};

/// Which coordinates the KDE looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KdeScope {
    /// Pose and feature, `u = (s, c)`.
    #[default]
    Full,
    /// Context feature `c` only.
    FeatureOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropensityConfig {
    /// KDE bandwidth in standardized units.
    pub bandwidth: f64,
    /// Lower bound on every score after renormalization.
    pub floor: f64,
    pub scope: KdeScope,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.5,
            floor: 0.05,
            scope: KdeScope::Full,
        }
    }
}

impl PropensityConfig {
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "KDE bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "propensity floor must be >= 0, got {}",
                self.floor
            )));
        }
        if self.floor * n_actions as f64 > 1.0 + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "propensity floor {} is infeasible for {} actions (floor * actions > 1)",
                self.floor, n_actions
            )));
        }
        Ok(())
    }
}

/// Per-action probabilities at one query point; sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityVector(Vec<f64>);

impl PropensityVector {
    pub fn get(&self, action: usize) -> f64 {
        self.0[action]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Raises entries below `floor` to `floor` and rescales the rest so the
/// total stays 1, repeating until no rescaled entry falls under the floor.
pub fn clip_and_renormalize(raw: &[f64], floor: f64) -> Vec<f64> {
    let m = raw.len();
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / m as f64; m]
    };
    let mut clipped = vec![false; m];
    loop {
        let n_clipped = clipped.iter().filter(|&&c| c).count();
        let n_free = m - n_clipped;
        let free_mass = 1.0 - n_clipped as f64 * floor;
        let free_sum: f64 = (0..m).filter(|&i| !clipped[i]).map(|i| p[i]).sum();
        let scaled = |i: usize| {
            if free_sum > 0.0 {
                p[i] * free_mass / free_sum
            } else {
                free_mass / n_free as f64
            }
        };
        let mut changed = false;
        for (i, c) in clipped.iter_mut().enumerate() {
            if !*c && scaled(i) < floor {
                *c = true;
                changed = true;
            }
        }
        if !changed || n_free == 0 {
            return (0..m).map(|i| if clipped[i] { floor } else { scaled(i) }).collect();
        }
    }
}

fn kde_scores(u: &[f64], nbhd: &Neighborhood, dataset: &Dataset, cfg: &PropensityConfig) -> Vec<f64> {
    let dims = match cfg.scope {
        KdeScope::Full => 0..dataset.query_dim(),
        KdeScope::FeatureOnly => POSE_DIM..dataset.query_dim(),
    };
    let scaler = dataset.scaler();
    let d2: Vec<f64> = nbhd
        .members
        .iter()
        .map(|&i| scaler.squared_distance_over(u, dataset.point(i), dims.clone()))
        .collect();
    // Shift by the nearest member so distant queries do not underflow to zero mass.
    let d2_min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let h2 = cfg.bandwidth * cfg.bandwidth;
    let mut scores = vec![0.0; dataset.n_actions()];
    for (&i, &d) in nbhd.members.iter().zip(&d2) {
        scores[dataset.sample(i).action] += (-0.5 * (d - d2_min) / h2).exp();
    }
    scores
}

/// Propensity vector at `query`, with the neighborhood as the KDE sample.
pub fn estimate_propensity(
    query: &QueryPoint,
    nbhd: &Neighborhood,
    dataset: &Dataset,
    cfg: &PropensityConfig,
) -> Result<PropensityVector> {
    cfg.validate(dataset.n_actions())?;
    if nbhd.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if query.dim() != dataset.query_dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.query_dim(),
            found: query.dim(),
        });
    }
    let raw = kde_scores(&query.to_vec(), nbhd, dataset, cfg);
    Ok(PropensityVector(clip_and_renormalize(&raw, cfg.floor)))
}

/// Propensity vector at every member `u_i` of the neighborhood, in member order.
pub fn member_propensities(
    nbhd: &Neighborhood,
    dataset: &Dataset,
    cfg: &PropensityConfig,
) -> Result<Vec<PropensityVector>> {
    cfg.validate(dataset.n_actions())?;
    if nbhd.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(nbhd
        .members
        .iter()
        .map(|&i| {
            let raw = kde_scores(dataset.point(i), nbhd, dataset, cfg);
            PropensityVector(clip_and_renormalize(&raw, cfg.floor))
        })
        .collect())
}
