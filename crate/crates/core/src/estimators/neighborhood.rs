use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::state::{Dataset, QueryPoint};

/// The `k_n` samples closest to a query under the standardized distance.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub query: QueryPoint,
    /// Sample indices, nearest first.
    pub members: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Positions (within `members`) of samples that took `action`.
    pub fn positions_with_action<'a>(
        &'a self,
        dataset: &'a Dataset,
        action: usize,
    ) -> impl Iterator<Item = usize> + 'a {
        self.members
            .iter()
            .enumerate()
            .filter(move |(_, &i)| dataset.sample(i).action == action)
            .map(|(pos, _)| pos)
    }

    pub fn action_count(&self, dataset: &Dataset, action: usize) -> usize {
        self.positions_with_action(dataset, action).count()
    }
}

/// Exactly `min(k, n)` nearest samples; ties go to the lower sample index.
pub fn select_neighborhood(query: &QueryPoint, dataset: &Dataset, k: usize) -> Result<Neighborhood> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("neighborhood size must be >= 1".into()));
    }
    if query.dim() != dataset.query_dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.query_dim(),
            found: query.dim(),
        });
    }
    let u = query.to_vec();
    let scaler = dataset.scaler();
    let mut ranked: Vec<(f64, usize)> = (0..dataset.len())
        .map(|i| (scaler.squared_distance(&u, dataset.point(i)), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) };
    let k = k.min(ranked.len());
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_distance);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(by_distance);
    Ok(Neighborhood {
        query: query.clone(),
        members: ranked.iter().map(|&(_, i)| i).collect(),
        distances: ranked.iter().map(|&(d2, _)| d2.sqrt()).collect(),
    })
}
