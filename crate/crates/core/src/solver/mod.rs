//! Policy iteration on the diffusion-approximated Bellman equation.
//!
//! The value function is `v(s) = k(s, S)^T w` with `w = (lambda I + K)^-1 V`.
//! Evaluating a fixed policy solves `(M (lambda I + K)^-1 - (1 - gamma) I) V = R_pi`
//! where `M` stacks the generator rows of each support's chosen action and
//! `R_pi = -R(s, pi(s))`. We solve for `w` directly and recover `V`.

mod pessimism;
mod supports;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::MomentTable;
use crate::kernel::{generator_row, GramSystem};

pub use pessimism::{apply_pessimism, flag_unknown, PessimismConfig};
pub use supports::{pose_grid, read_policy_csv, write_policy_csv, GridLayout, Policy, SupportingSet};

/// Expected one-step reward per (support, action), support-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    n_supports: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(n_supports: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_supports * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_supports * n_actions,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reward"));
        }
        Ok(Self {
            n_supports,
            n_actions,
            values,
        })
    }

    pub fn from_fn(n_supports: usize, n_actions: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..n_supports)
            .flat_map(|i| (0..n_actions).map(move |a| (i, a)))
            .map(|(i, a)| f(i, a))
            .collect();
        Self::new(n_supports, n_actions, values)
    }

    pub fn get(&self, support: usize, action: usize) -> f64 {
        self.values[support * self.n_actions + action]
    }

    pub fn n_supports(&self) -> usize {
        self.n_supports
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Largest minus smallest entry.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }

    /// `R - penalty` on every unknown cell of `table`.
    pub fn penalized(&self, table: &MomentTable, penalty: f64) -> Result<Self> {
        check_shapes(table, self)?;
        let mut out = self.clone();
        for i in 0..self.n_supports {
            for a in 0..self.n_actions {
                if table.get(i, a)?.unknown {
                    out.values[i * self.n_actions + a] -= penalty;
                }
            }
        }
        Ok(out)
    }
}

fn check_shapes(table: &MomentTable, rewards: &RewardTable) -> Result<()> {
    if table.n_supports() != rewards.n_supports || table.n_actions() != rewards.n_actions {
        return Err(Error::DimensionMismatch {
            expected: table.n_supports() * table.n_actions(),
            found: rewards.n_supports * rewards.n_actions,
        });
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "discount must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// Generator matrix `M` for `policy`: row `i` uses the moments of `policy[i]` at support `i`.
pub fn assemble_generator(
    supports: &SupportingSet,
    policy: &Policy,
    table: &MomentTable,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    check_gamma(gamma)?;
    let n = supports.len();
    if policy.len() != n || table.n_supports() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if policy.len() != n {
                policy.len()
            } else {
                table.n_supports()
            },
        });
    }
    let gram = supports.gram();
    let rows: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cell = table.get(i, policy.action(i))?;
            generator_row(
                cell.mu.as_slice(),
                &cell.sigma,
                &gram.supports()[i],
                gram.supports(),
                gram.config(),
                gamma,
            )
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        m.row_mut(i).copy_from(&row.transpose());
    }
    Ok(m)
}

/// Values at the supports and the kernel weights `w = (lambda I + K)^-1 V`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    pub values: DVector<f64>,
    pub weights: DVector<f64>,
}

impl ValueField {
    pub fn mean(&self) -> f64 {
        self.values.mean()
    }
}

/// Evaluates a policy given its generator `m` and rewards `r` (`r_i = R(s_i, pi(s_i))`).
/// Returns the field and the max-norm residual of the original linear system.
pub fn evaluate_policy(
    m: &DMatrix<f64>,
    gram: &GramSystem,
    gamma: f64,
    rewards: &DVector<f64>,
) -> Result<(ValueField, f64)> {
    check_gamma(gamma)?;
    let n = gram.len();
    if m.nrows() != n || m.ncols() != n || rewards.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if rewards.len() != n { rewards.len() } else { m.nrows() },
        });
    }
    if m.iter().chain(rewards.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generator or reward"));
    }
    let reg = gram.regularized();
    let a = m - &reg * (1.0 - gamma);
    let lu = a.clone().lu();
    let diag = lu.u().diagonal().map(f64::abs);
    let (dmin, dmax) = (diag.min(), diag.max());
    let condition = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::Singular {
            context: "policy evaluation",
            condition,
        });
    }
    let rhs = -rewards;
    let mut w = lu.solve(&rhs).ok_or(Error::Singular {
        context: "policy evaluation",
        condition,
    })?;
    let tolerance = 1e-8 * (1.0 + rewards.amax());
    let residual_of = |w: &DVector<f64>| {
        let v = &reg * w;
        (m * w - v * (1.0 - gamma) + rewards).amax()
    };
    let mut residual = residual_of(&w);
    for _ in 0..3 {
        if residual <= tolerance {
            break;
        }
        let r = &rhs - &a * &w;
        if let Some(dw) = lu.solve(&r) {
            w += dw;
        }
        residual = residual_of(&w);
    }
    if !residual.is_finite() || residual > tolerance {
        return Err(Error::IllConditioned {
            residual,
            tolerance,
            condition,
        });
    }
    let values = &reg * &w;
    Ok((ValueField { values, weights: w }, residual))
}

/// `v(s) = k(s, S)^T w`.
pub fn interpolate_value(s: &[f64], field: &ValueField, gram: &GramSystem) -> f64 {
    gram.kernel_vector(s).dot(&field.weights)
}

/// Gradient and Hessian of the interpolated value at `s`.
pub fn value_derivatives(s: &[f64], field: &ValueField, gram: &GramSystem) -> (DVector<f64>, DMatrix<f64>) {
    let cfg = gram.config();
    let d = cfg.dim();
    let mut g = DVector::zeros(d);
    let mut h = DMatrix::zeros(d, d);
    for (sj, &wj) in gram.supports().iter().zip(field.weights.iter()) {
        if wj == 0.0 {
            continue;
        }
        g += cfg.grad(s, sj) * wj;
        h += cfg.hessian(s, sj) * wj;
    }
    (g, h)
}

/// Greedy improvement: `argmax_a R(s, a) + gamma (mu_a . grad v + 1/2 tr(sigma_a hess v))`.
/// Ties go to the lowest action id. With `known_only`, actions flagged unknown are
/// skipped unless every action at that support is unknown.
pub fn improve_policy(
    supports: &SupportingSet,
    field: &ValueField,
    table: &MomentTable,
    rewards: &RewardTable,
    gamma: f64,
    known_only: bool,
) -> Result<Policy> {
    check_gamma(gamma)?;
    check_shapes(table, rewards)?;
    let gram = supports.gram();
    if table.n_supports() != gram.len() || field.weights.len() != gram.len() {
        return Err(Error::DimensionMismatch {
            expected: gram.len(),
            found: table.n_supports(),
        });
    }
    let actions = (0..gram.len())
        .into_par_iter()
        .map(|i| {
            let (g, h) = value_derivatives(&gram.supports()[i], field, gram);
            let candidates = candidate_actions(table, i, known_only)?;
            let mut best: Option<(f64, usize)> = None;
            for a in candidates {
                let cell = table.get(i, a)?;
                let drift = cell.mu.dot(&g);
                let diffusion = 0.5 * cell.sigma.component_mul(&h).sum();
                let score = rewards.get(i, a) + gamma * (drift + diffusion);
                if !score.is_finite() {
                    return Err(Error::NonFinite("improvement score"));
                }
                if best.is_none_or(|(b, _)| score > b) {
                    best = Some((score, a));
                }
            }
            Ok(best.map(|(_, a)| a).unwrap_or(0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Policy(actions))
}

fn candidate_actions(table: &MomentTable, i: usize, known_only: bool) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..table.n_actions()).collect();
    if !known_only {
        return Ok(all);
    }
    let mut known = Vec::new();
    for &a in &all {
        if !table.get(i, a)?.unknown {
            known.push(a);
        }
    }
    Ok(if known.is_empty() { all } else { known })
}

/// Reward-greedy starting policy.
pub fn greedy_reward_policy(table: &MomentTable, rewards: &RewardTable, known_only: bool) -> Result<Policy> {
    check_shapes(table, rewards)?;
    (0..table.n_supports())
        .map(|i| {
            let mut best: Option<(f64, usize)> = None;
            for a in candidate_actions(table, i, known_only)? {
                let r = rewards.get(i, a);
                if best.is_none_or(|(b, _)| r > b) {
                    best = Some((r, a));
                }
            }
            Ok(best.map(|(_, a)| a).unwrap_or(0))
        })
        .collect::<Result<Vec<_>>>()
        .map(Policy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub max_iters: usize,
    /// Penalty subtracted from unknown cells; `None` disables pessimism.
    pub pessimism_penalty: Option<f64>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            max_iters: 50,
            pessimism_penalty: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub policy_changes: usize,
    pub residual: f64,
    pub mean_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    Cycle,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub policy: Policy,
    pub field: ValueField,
    pub termination: Termination,
    pub iterations: Vec<IterationRecord>,
}

/// Policy iteration from the reward-greedy policy. Stops when the policy is
/// unchanged, when a policy repeats, or after `max_iters` evaluations; in the
/// last two cases the evaluated iterate with the highest mean value is returned.
pub fn policy_iteration(
    supports: &SupportingSet,
    table: &MomentTable,
    rewards: &RewardTable,
    cfg: &PlannerConfig,
) -> Result<PlanOutcome> {
    check_gamma(cfg.gamma)?;
    check_shapes(table, rewards)?;
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be positive".into()));
    }
    let known_only = cfg.pessimism_penalty.is_some();
    let effective = match cfg.pessimism_penalty {
        Some(kappa) => {
            if !(kappa.is_finite() && kappa >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "pessimism penalty must be >= 0, got {kappa}"
                )));
            }
            rewards.penalized(table, kappa)?
        }
        None => rewards.clone(),
    };
    let gram = supports.gram();
    let mut policy = greedy_reward_policy(table, &effective, known_only)?;
    let mut visited: HashSet<Policy> = HashSet::new();
    let mut best: Option<(Policy, ValueField)> = None;
    let mut iterations = Vec::new();
    for _ in 0..cfg.max_iters {
        let m = assemble_generator(supports, &policy, table, cfg.gamma)?;
        let r = DVector::from_iterator(
            policy.len(),
            (0..policy.len()).map(|i| effective.get(i, policy.action(i))),
        );
        let (field, residual) = evaluate_policy(&m, gram, cfg.gamma, &r)?;
        let next = improve_policy(supports, &field, table, &effective, cfg.gamma, known_only)?;
        let changes = next.changes_from(&policy);
        iterations.push(IterationRecord {
            policy_changes: changes,
            residual,
            mean_value: field.mean(),
        });
        if changes == 0 {
            return Ok(PlanOutcome {
                policy,
                field,
                termination: Termination::Converged,
                iterations,
            });
        }
        if best.as_ref().is_none_or(|(_, f)| field.mean() > f.mean()) {
            best = Some((policy.clone(), field));
        }
        visited.insert(policy);
        if visited.contains(&next) {
            let (policy, field) = best.expect("at least one iterate evaluated");
            return Ok(PlanOutcome {
                policy,
                field,
                termination: Termination::Cycle,
                iterations,
            });
        }
        policy = next;
    }
    let (policy, field) = best.expect("at least one iterate evaluated");
    Ok(PlanOutcome {
        policy,
        field,
        termination: Termination::MaxIterations,
        iterations,
    })
}

#[cfg(test)]
mod tests;
