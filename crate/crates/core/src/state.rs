//! Pose arithmetic, query points, logged transitions and the dataset they live in.
//!
//! A pose is `(x, y, theta)` with `theta` kept in `(-pi, pi]`. Every other module
//! works on the concatenated query vector `u = (x, y, theta, feature...)`, whose
//! per-dimension scale is fixed by the [`FeatureScaler`] of the dataset.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Number of pose coordinates.
pub const POSE_DIM: usize = 3;

/// Index of the heading inside a query vector.
pub const HEADING_INDEX: usize = 2;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(a))
}

pub(crate) fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap(theta),
        }
    }

    pub fn to_array(&self) -> [f64; POSE_DIM] {
        [self.x, self.y, self.theta]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Applies a shift; the inverse of [`state_shift`].
    pub fn advance(&self, shift: &StateShift) -> State {
        State::new(self.x + shift.dx, self.y + shift.dy, self.theta + shift.dtheta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateShift {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl StateShift {
    pub fn to_array(&self) -> [f64; POSE_DIM] {
        [self.dx, self.dy, self.dtheta]
    }
}

/// Shift from `s` to `s_next`, taking the shortest signed angular path.
pub fn state_shift(s: &State, s_next: &State) -> StateShift {
    StateShift {
        dx: s_next.x - s.x,
        dy: s_next.y - s.y,
        dtheta: wrap(s_next.theta - s.theta),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub id: usize,
    pub v: f64,
    pub omega: f64,
}

impl Action {
    /// `v >= 6` and `|omega| >= pi/2`.
    pub fn is_aggressive(&self) -> bool {
        const EPS: f64 = 1e-9;
        self.v >= 6.0 - EPS && self.omega.abs() >= PI / 2.0 - EPS
    }
}

/// Finite action set; ids are the positions in the set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    pub fn new(speeds: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let actions: Vec<Action> = speeds
            .into_iter()
            .enumerate()
            .map(|(id, (v, omega))| Action { id, v, omega })
            .collect();
        if actions.is_empty() {
            return Err(Error::InvalidConfig("action set is empty".into()));
        }
        if actions.iter().any(|a| !a.v.is_finite() || !a.omega.is_finite()) {
            return Err(Error::NonFinite("action set"));
        }
        Ok(Self { actions })
    }

    /// Cartesian product of linear and angular speeds, linear speed major.
    pub fn grid(linear: &[f64], angular: &[f64]) -> Result<Self> {
        Self::new(linear.iter().flat_map(|&v| angular.iter().map(move |&w| (v, w))))
    }

    /// `v in {0, 2, 4, 6, 8}` x `omega in {0, ±pi/4, ±pi/2, ±3pi/4}`.
    pub fn racing_default() -> Self {
        let angular = [
            0.0,
            PI / 4.0,
            -PI / 4.0,
            PI / 2.0,
            -PI / 2.0,
            3.0 * PI / 4.0,
            -3.0 * PI / 4.0,
        ];
        Self::grid(&[0.0, 2.0, 4.0, 6.0, 8.0], &angular).expect("static action grid")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Action> {
        self.actions.get(id).ok_or(Error::UnknownAction(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }

    /// Lowest linear speed, then lowest `|omega|`, then lowest id.
    pub fn most_conservative(&self) -> &Action {
        self.actions
            .iter()
            .min_by(|a, b| {
                a.v.total_cmp(&b.v)
                    .then(a.omega.abs().total_cmp(&b.omega.abs()))
                    .then(a.id.cmp(&b.id))
            })
            .expect("non-empty action set")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextFeature(pub Vec<f64>);

impl ContextFeature {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// The pair `u = (s, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPoint {
    pub state: State,
    pub feature: ContextFeature,
}

impl QueryPoint {
    pub fn new(state: State, feature: ContextFeature) -> Self {
        Self { state, feature }
    }

    pub fn dim(&self) -> usize {
        POSE_DIM + self.feature.dim()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.state.to_array());
        v.extend_from_slice(&self.feature.0);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub episode: u32,
    pub t: u32,
    pub query: QueryPoint,
    pub action: usize,
    pub next_state: State,
    shift: StateShift,
}

impl Sample {
    pub fn new(episode: u32, t: u32, query: QueryPoint, action: usize, next_state: State) -> Self {
        let shift = state_shift(&query.state, &next_state);
        Self {
            episode,
            t,
            query,
            action,
            next_state,
            shift,
        }
    }

    pub fn shift(&self) -> &StateShift {
        &self.shift
    }
}

/// Per-dimension mean and scale of the concatenated query vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    /// Population statistics; zero-variance dimensions get scale 1.
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for p in points {
            n += 1;
            for d in 0..dim {
                let delta = p[d] - mean[d];
                mean[d] += delta / n as f64;
                m2[d] += delta * (p[d] - mean[d]);
            }
        }
        let scale = m2
            .iter()
            .map(|&m| {
                let sd = if n > 0 { (m / n as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Scaled difference `(u1 - u2) / scale`, heading difference wrapped first.
    pub fn scaled_diff(&self, u1: &[f64], u2: &[f64], out: &mut [f64]) {
        for d in 0..self.dim() {
            let mut r = u1[d] - u2[d];
            if d == HEADING_INDEX {
                r = wrap(r);
            }
            out[d] = r / self.scale[d];
        }
    }

    pub fn squared_distance(&self, u1: &[f64], u2: &[f64]) -> f64 {
        self.squared_distance_over(u1, u2, 0..self.dim())
    }

    pub(crate) fn squared_distance_over(&self, u1: &[f64], u2: &[f64], dims: std::ops::Range<usize>) -> f64 {
        dims.map(|d| {
            let mut r = u1[d] - u2[d];
            if d == HEADING_INDEX {
                r = wrap(r);
            }
            let z = r / self.scale[d];
            z * z
        })
        .sum()
    }
}

/// Euclidean distance between z-scored query vectors.
pub fn standardized_distance(u1: &QueryPoint, u2: &QueryPoint, scaler: &FeatureScaler) -> Result<f64> {
    for u in [u1, u2] {
        if u.dim() != scaler.dim() {
            return Err(Error::DimensionMismatch {
                expected: scaler.dim(),
                found: u.dim(),
            });
        }
    }
    Ok(scaler.squared_distance(&u1.to_vec(), &u2.to_vec()).sqrt())
}

/// Logged transitions plus the scaler fitted over all of their query points.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
    points: Vec<Vec<f64>>,
    scaler: FeatureScaler,
    n_actions: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, n_actions: usize) -> Result<Self> {
        let dim = samples.first().map_or(POSE_DIM, |s| s.query.dim());
        for s in &samples {
            if s.query.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.query.dim(),
                });
            }
            if s.action >= n_actions {
                return Err(Error::UnknownAction(s.action));
            }
            if !s.query.state.is_finite()
                || !s.next_state.is_finite()
                || s.query.feature.0.iter().any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite("sample"));
            }
        }
        let points: Vec<Vec<f64>> = samples.iter().map(|s| s.query.to_vec()).collect();
        let scaler = FeatureScaler::fit(points.iter().map(Vec::as_slice), dim);
        Ok(Self {
            samples,
            points,
            scaler,
            n_actions,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Concatenated query vector of sample `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn query_dim(&self) -> usize {
        self.scaler.dim()
    }
}
