use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::MomentTable;
use crate::state::{Dataset, QueryPoint};

/// A cell is unknown when fewer than `min_count` samples of the action lie
/// within `radius` (standardized distance) of the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PessimismConfig {
    pub radius: f64,
    pub min_count: usize,
}

impl Default for PessimismConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            min_count: 5,
        }
    }
}

impl PessimismConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pessimism radius must be > 0, got {}",
                self.radius
            )));
        }
        Ok(())
    }
}

fn count_within(query: &[f64], action: usize, dataset: &Dataset, r2: f64) -> usize {
    let scaler = dataset.scaler();
    dataset
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, s)| s.action == action && scaler.squared_distance(query, dataset.point(*i)) <= r2)
        .count()
}

pub fn flag_unknown(query: &QueryPoint, action: usize, dataset: &Dataset, cfg: &PessimismConfig) -> Result<bool> {
    cfg.validate()?;
    if action >= dataset.n_actions() {
        return Err(Error::UnknownAction(action));
    }
    if dataset.is_empty() {
        return Ok(true);
    }
    let u = query.to_vec();
    if u.len() != dataset.query_dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.query_dim(),
            found: u.len(),
        });
    }
    Ok(count_within(&u, action, dataset, cfg.radius * cfg.radius) < cfg.min_count)
}

/// Marks every under-supported cell of `table` unknown. Cells already unknown stay so.
/// Returns the number of newly flagged cells.
pub fn apply_pessimism(
    table: &mut MomentTable,
    queries: &[QueryPoint],
    dataset: &Dataset,
    cfg: &PessimismConfig,
) -> Result<usize> {
    cfg.validate()?;
    if queries.len() != table.n_supports() || table.n_actions() != dataset.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: table.n_supports(),
            found: queries.len(),
        });
    }
    let flags: Vec<Vec<bool>> = queries
        .par_iter()
        .map(|q| {
            (0..dataset.n_actions())
                .map(|a| flag_unknown(q, a, dataset, cfg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut added = 0;
    for (i, row) in flags.iter().enumerate() {
        for (a, &f) in row.iter().enumerate() {
            let cell = table.get_mut(i, a)?;
            if f && !cell.unknown {
                cell.unknown = true;
                added += 1;
            }
        }
    }
    Ok(added)
}
