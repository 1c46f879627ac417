use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::kernel::{GramSystem, KernelConfig};
use crate::state::State;

/// Poses where the value function is represented, with their Gram system.
#[derive(Clone, Debug)]
pub struct SupportingSet {
    states: Vec<State>,
    gram: GramSystem,
}

impl SupportingSet {
    pub fn new(states: Vec<State>, kernel: &KernelConfig) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 supporting states, got {}",
                states.len()
            )));
        }
        if kernel.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: kernel.dim(),
            });
        }
        let mut sorted: Vec<[u64; 3]> = states.iter().map(|s| s.to_array().map(f64::to_bits)).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("supporting states must be distinct".into()));
        }
        let gram = GramSystem::build(states.iter().map(|s| s.to_array().to_vec()).collect(), kernel)?;
        Ok(Self { states, gram })
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn gram(&self) -> &GramSystem {
        &self.gram
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the support closest in kernel-scaled distance; ties to the lower index.
    pub fn nearest(&self, s: &State) -> usize {
        let cfg = self.gram.config();
        let x = s.to_array();
        let mut best = (f64::INFINITY, 0);
        for (i, sup) in self.gram.supports().iter().enumerate() {
            let d = cfg.scaled_sq_distance(&x, sup);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// Regular pose grid: `x` and `y` from `lo` to `hi` inclusive at `spacing`
/// (or `per_axis` evenly spaced points), headings at `headings` equispaced
/// angles starting from `-pi + pi/headings`... offset so that 0 is included
/// when `headings` is even.
pub fn pose_grid(x_range: (f64, f64), y_range: (f64, f64), layout: GridLayout, headings: usize) -> Result<Vec<State>> {
    if headings == 0 {
        return Err(Error::InvalidConfig("need at least one heading".into()));
    }
    let axis = |(lo, hi): (f64, f64)| -> Result<Vec<f64>> {
        if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(Error::InvalidConfig(format!("bad grid range ({lo}, {hi})")));
        }
        match layout {
            GridLayout::Spacing(h) => {
                if !(h.is_finite() && h > 0.0) {
                    return Err(Error::InvalidConfig(format!("grid spacing must be > 0, got {h}")));
                }
                let n = ((hi - lo) / h + 1e-9).floor() as usize + 1;
                let span = (n - 1) as f64 * h;
                let start = lo + 0.5 * ((hi - lo) - span);
                Ok((0..n).map(|i| start + i as f64 * h).collect())
            }
            GridLayout::PerAxis(n) => match n {
                0 => Err(Error::InvalidConfig("need at least one point per axis".into())),
                1 => Ok(vec![0.5 * (lo + hi)]),
                _ => Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()),
            },
        }
    };
    let xs = axis(x_range)?;
    let ys = axis(y_range)?;
    let step = 2.0 * std::f64::consts::PI / headings as f64;
    let mut out = Vec::with_capacity(xs.len() * ys.len() * headings);
    for &x in &xs {
        for &y in &ys {
            for h in 0..headings {
                out.push(State::new(x, y, h as f64 * step));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridLayout {
    Spacing(f64),
    PerAxis(usize),
}

/// Deterministic policy over a supporting set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn action(&self, support: usize) -> usize {
        self.0[support]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn changes_from(&self, other: &Policy) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// One row per support: `support_index,x,y,theta,action_id,value`.
pub fn write_policy_csv<W: Write>(writer: W, states: &[State], policy: &Policy, values: &[f64]) -> Result<()> {
    if states.len() != policy.len() || values.len() != policy.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            found: policy.len().min(values.len()),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["support_index", "x", "y", "theta", "action_id", "value"])?;
    for (i, s) in states.iter().enumerate() {
        w.write_record([
            i.to_string(),
            s.x.to_string(),
            s.y.to_string(),
            s.theta.to_string(),
            policy.0[i].to_string(),
            values[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_policy_csv<R: Read>(reader: R) -> Result<(Vec<State>, Policy, Vec<f64>)> {
    let mut r = csv::Reader::from_reader(reader);
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let err = |reason: String| Error::Parse { line, reason };
        if rec.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", rec.len())));
        }
        let idx: usize = rec[0].parse().map_err(|e| err(format!("support_index: {e}")))?;
        if idx != states.len() {
            return Err(err(format!("support_index {idx} out of order")));
        }
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| err(format!("field {i}: {e}")));
        states.push(State::new(f(1)?, f(2)?, f(3)?));
        actions.push(rec[4].parse().map_err(|e| err(format!("action_id: {e}")))?);
        values.push(f(5)?);
    }
    Ok((states, Policy(actions), values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_duplicate_sets() {
        let k = KernelConfig::pose_default();
        assert!(SupportingSet::new(vec![State::new(0.0, 0.0, 0.0)], &k).is_err());
        let s = State::new(1.0, 1.0, 0.5);
        assert!(SupportingSet::new(vec![s, s], &k).is_err());
        assert!(SupportingSet::new(vec![s, State::new(0.0, 0.0, 0.0)], &k).is_ok());
    }

    #[test]
    fn grid_shapes() {
        let g = pose_grid((0.0, 2.0), (0.0, 1.0), GridLayout::Spacing(1.0), 8).unwrap();
        assert_eq!(g.len(), 3 * 2 * 8);
        assert!(g.iter().any(|s| s.theta == 0.0));
        let g = pose_grid((-1.0, 1.0), (-1.0, 1.0), GridLayout::PerAxis(2), 4).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g[0].x, -1.0);
        assert!(pose_grid((0.0, 1.0), (0.0, 1.0), GridLayout::Spacing(0.0), 8).is_err());
        assert!(pose_grid((0.0, 1.0), (0.0, 1.0), GridLayout::PerAxis(2), 0).is_err());
    }

    #[test]
    fn nearest_support() {
        let k = KernelConfig::pose_default();
        let set = SupportingSet::new(
            vec![
                State::new(0.0, 0.0, 0.0),
                State::new(2.0, 0.0, 0.0),
                State::new(0.0, 0.0, 3.0),
            ],
            &k,
        )
        .unwrap();
        assert_eq!(set.nearest(&State::new(1.2, 0.0, 0.0)), 1);
        assert_eq!(set.nearest(&State::new(0.0, 0.0, -3.0)), 2);
    }

    #[test]
    fn policy_csv_round_trip() {
        let states = vec![State::new(0.5, -1.0, 0.25), State::new(1e-3, 2.0, -3.0)];
        let policy = Policy(vec![3, 0]);
        let values = vec![1.25, -7.5e-9];
        let mut buf = Vec::new();
        write_policy_csv(&mut buf, &states, &policy, &values).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("support_index,x,y,theta,action_id,value\n"));
        let (s, p, v) = read_policy_csv(buf.as_slice()).unwrap();
        assert_eq!((s, p, v), (states, policy, values));
    }
}
