use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::moments::{
    dr_mu, dr_sigma, ipw_mu, ipw_sigma, knn_mu, psd_project, reg_sigma, LocalConstantFit,
};
use crate::estimators::propensity::{member_propensities, PropensityConfig, PropensityVector};
use crate::estimators::{select_neighborhood, Neighborhood};
use crate::state::{Dataset, QueryPoint, POSE_DIM};

/// Where the moments in a table came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Regression,
    Ipw,
    Dr,
    /// Exact moments supplied by a simulator.
    Oracle,
}

impl Estimator {
    pub const LEARNED: [Estimator; 3] = [Estimator::Regression, Estimator::Ipw, Estimator::Dr];

    pub fn tag(&self) -> &'static str {
        match self {
            Estimator::Regression => "regression",
            Estimator::Ipw => "ipw",
            Estimator::Dr => "dr",
            Estimator::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Estimator::Regression),
            "ipw" => Ok(Estimator::Ipw),
            "dr" => Ok(Estimator::Dr),
            "oracle" => Ok(Estimator::Oracle),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentPair {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Action-matching samples behind the estimate.
    pub support_count: usize,
    /// No data backs this cell, or it failed the pessimism count.
    pub unknown: bool,
}

impl MomentPair {
    pub fn unknown(sigma_floor: f64) -> Self {
        Self {
            mu: DVector::zeros(POSE_DIM),
            sigma: DMatrix::identity(POSE_DIM, POSE_DIM) * sigma_floor,
            support_count: 0,
            unknown: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub neighborhood_size: usize,
    pub propensity: PropensityConfig,
    /// Eigenvalue floor for second moments.
    pub sigma_floor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            neighborhood_size: 50,
            propensity: PropensityConfig::default(),
            sigma_floor: 1e-6,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        if self.neighborhood_size == 0 {
            return Err(Error::InvalidConfig("neighborhood size must be >= 1".into()));
        }
        if !(self.sigma_floor.is_finite() && self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma floor must be > 0".into()));
        }
        self.propensity.validate(n_actions)
    }
}

/// Moments for every (support, action) pair, support-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    n_supports: usize,
    n_actions: usize,
    cells: Vec<MomentPair>,
    method: Estimator,
    /// Cells that needed the widened neighborhood.
    pub widened_cells: usize,
}

impl MomentTable {
    pub fn new(n_supports: usize, n_actions: usize, cells: Vec<MomentPair>, method: Estimator) -> Result<Self> {
        if cells.len() != n_supports * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_supports * n_actions,
                found: cells.len(),
            });
        }
        Ok(Self {
            n_supports,
            n_actions,
            cells,
            method,
            widened_cells: 0,
        })
    }

    pub fn n_supports(&self) -> usize {
        self.n_supports
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn method(&self) -> Estimator {
        self.method
    }

    pub fn get(&self, support: usize, action: usize) -> Result<&MomentPair> {
        if support >= self.n_supports || action >= self.n_actions {
            return Err(Error::MissingCell { support, action });
        }
        Ok(&self.cells[support * self.n_actions + action])
    }

    pub fn get_mut(&mut self, support: usize, action: usize) -> Result<&mut MomentPair> {
        if support >= self.n_supports || action >= self.n_actions {
            return Err(Error::MissingCell { support, action });
        }
        Ok(&mut self.cells[support * self.n_actions + action])
    }

    pub fn cells(&self) -> &[MomentPair] {
        &self.cells
    }

    pub fn unknown_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.unknown).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["support_index".to_string(), "action_id".to_string()];
        header.extend((0..POSE_DIM).map(|d| format!("mu_{d}")));
        header.extend((0..POSE_DIM * POSE_DIM).map(|d| format!("sigma_{d}")));
        header.extend(["support_count", "unknown_flag", "estimator_tag"].map(String::from));
        w.write_record(&header)?;
        for s in 0..self.n_supports {
            for a in 0..self.n_actions {
                let c = &self.cells[s * self.n_actions + a];
                let mut rec = vec![s.to_string(), a.to_string()];
                rec.extend(c.mu.iter().map(|v| v.to_string()));
                for r in 0..POSE_DIM {
                    for col in 0..POSE_DIM {
                        rec.push(c.sigma[(r, col)].to_string());
                    }
                }
                rec.push(c.support_count.to_string());
                rec.push(u8::from(c.unknown).to_string());
                rec.push(self.method.tag().to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut rows: Vec<(usize, usize, MomentPair)> = Vec::new();
        let mut method = None;
        let width = 2 + POSE_DIM + POSE_DIM * POSE_DIM + 3;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = line + 2;
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    reason: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    reason: format!("field {i}: {e}"),
                })
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    reason: format!("field {i}: {e}"),
                })
            };
            let mu = DVector::from_iterator(POSE_DIM, (0..POSE_DIM).map(|d| num(2 + d)).collect::<Result<Vec<_>>>()?);
            let sig: Vec<f64> = (0..POSE_DIM * POSE_DIM)
                .map(|d| num(2 + POSE_DIM + d))
                .collect::<Result<_>>()?;
            let sigma = DMatrix::from_row_slice(POSE_DIM, POSE_DIM, &sig);
            let base = 2 + POSE_DIM + POSE_DIM * POSE_DIM;
            let tag: Estimator = rec[base + 2].parse()?;
            if method.is_some_and(|m| m != tag) {
                return Err(Error::Parse {
                    line,
                    reason: "mixed estimator tags".into(),
                });
            }
            method = Some(tag);
            rows.push((
                int(0)?,
                int(1)?,
                MomentPair {
                    mu,
                    sigma,
                    support_count: int(base)?,
                    unknown: int(base + 1)? != 0,
                },
            ));
        }
        let n_supports = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let n_actions = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != n_supports * n_actions {
            return Err(Error::Parse {
                line: rows.len() + 1,
                reason: "table is not complete over supports x actions".into(),
            });
        }
        rows.sort_by_key(|r| (r.0, r.1));
        let cells = rows.into_iter().map(|r| r.2).collect();
        MomentTable::new(n_supports, n_actions, cells, method.unwrap_or(Estimator::Regression))
    }
}

/// A neighborhood with lazily computed member propensities.
struct Pool {
    nbhd: Neighborhood,
    props: OnceLock<Result<Vec<PropensityVector>>>,
}

impl Pool {
    fn new(nbhd: Neighborhood) -> Self {
        Self {
            nbhd,
            props: OnceLock::new(),
        }
    }

    fn scores(&self, action: usize, dataset: &Dataset, cfg: &PropensityConfig) -> Result<Vec<f64>> {
        match self.props.get_or_init(|| member_propensities(&self.nbhd, dataset, cfg)) {
            Ok(p) => Ok(p.iter().map(|v| v.get(action)).collect()),
            Err(e) => Err(Error::InvalidConfig(e.to_string())),
        }
    }
}

fn estimate_cell(
    action: usize,
    pool: &Pool,
    dataset: &Dataset,
    method: Estimator,
    cfg: &EstimatorConfig,
) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
    let nbhd = &pool.nbhd;
    let out = match method {
        Estimator::Regression => knn_mu(action, nbhd, dataset).zip(reg_sigma(action, nbhd, dataset)),
        Estimator::Ipw => {
            let e = pool.scores(action, dataset, &cfg.propensity)?;
            ipw_mu(action, nbhd, dataset, &e).zip(ipw_sigma(action, nbhd, dataset, &e))
        }
        Estimator::Dr => {
            let e = pool.scores(action, dataset, &cfg.propensity)?;
            LocalConstantFit::from_neighborhood(action, nbhd, dataset)
                .and_then(|fit| dr_mu(action, nbhd, dataset, &e, &fit).zip(dr_sigma(action, nbhd, dataset, &e, &fit)))
        }
        Estimator::Oracle => {
            return Err(Error::InvalidConfig(
                "oracle moments come from a simulator, not a dataset".into(),
            ))
        }
    };
    Ok(out)
}

/// Estimates moments at every query for every action.
///
/// A cell whose neighborhood holds no sample of the action retries once with
/// twice the neighborhood size; if that is still empty the cell gets `mu = 0`,
/// `sigma = floor * I` and is flagged unknown.
pub fn build_moment_table(
    queries: &[QueryPoint],
    dataset: &Dataset,
    method: Estimator,
    cfg: &EstimatorConfig,
) -> Result<MomentTable> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_actions = dataset.n_actions();
    cfg.validate(n_actions)?;

    let rows: Vec<Result<(Vec<MomentPair>, usize)>> = queries
        .par_iter()
        .map(|q| {
            let near = Pool::new(select_neighborhood(q, dataset, cfg.neighborhood_size)?);
            let wide: OnceLock<Result<Pool>> = OnceLock::new();
            let mut widened = 0;
            let mut cells = Vec::with_capacity(n_actions);
            for a in 0..n_actions {
                let pool = if near.nbhd.action_count(dataset, a) > 0 {
                    &near
                } else {
                    let w =
                        wide.get_or_init(|| select_neighborhood(q, dataset, 2 * cfg.neighborhood_size).map(Pool::new));
                    match w {
                        Ok(p) if p.nbhd.action_count(dataset, a) > 0 => {
                            widened += 1;
                            p
                        }
                        Ok(_) => {
                            cells.push(MomentPair::unknown(cfg.sigma_floor));
                            continue;
                        }
                        Err(e) => return Err(Error::InvalidConfig(e.to_string())),
                    }
                };
                let cell = match estimate_cell(a, pool, dataset, method, cfg)? {
                    Some((mu, sigma)) => MomentPair {
                        mu,
                        sigma: psd_project(&sigma, cfg.sigma_floor),
                        support_count: pool.nbhd.action_count(dataset, a),
                        unknown: false,
                    },
                    None => MomentPair::unknown(cfg.sigma_floor),
                };
                cells.push(cell);
            }
            Ok((cells, widened))
        })
        .collect();

    let mut cells = Vec::with_capacity(queries.len() * n_actions);
    let mut widened = 0;
    for row in rows {
        let (c, w) = row?;
        cells.extend(c);
        widened += w;
    }
    let mut table = MomentTable::new(queries.len(), n_actions, cells, method)?;
    table.widened_cells = widened;
    Ok(table)
}
