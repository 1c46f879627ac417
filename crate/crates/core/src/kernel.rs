//! Squared-exponential kernel over poses, its analytic derivatives, the
//! regularized Gram system, and the drift-diffusion generator applied to kernel
//! columns.
//!
//! With `r = x - y` (heading component wrapped) and `q = r / l^2` componentwise:
//!
//! ```text
//! k(x, y)    = exp(-1/2 sum_d (r_d / l_d)^2)
//! dk/dx      = -q k
//! d2k/dx2    = (q q^T - diag(1 / l^2)) k
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::state::wrap;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig {
    lengthscales: Vec<f64>,
    regularization: f64,
    angular: Vec<bool>,
}

impl KernelConfig {
    pub fn new(lengthscales: Vec<f64>, regularization: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidConfig("kernel needs at least one dimension".into()));
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "lengthscales must be positive and finite, got {lengthscales:?}"
            )));
        }
        if !(regularization.is_finite() && regularization >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "regularization must be >= 0, got {regularization}"
            )));
        }
        let angular = vec![false; lengthscales.len()];
        Ok(Self {
            lengthscales,
            regularization,
            angular,
        })
    }

    /// Pose kernel: 1 m for x and y, 0.8 rad for a wrapped heading, lambda = 1e-3.
    pub fn pose_default() -> Self {
        Self::pose(1.0, 0.8, 1e-3).expect("static kernel config")
    }

    pub fn pose(planar: f64, heading: f64, regularization: f64) -> Result<Self> {
        Ok(Self::new(vec![planar, planar, heading], regularization)?.with_angular_dim(2))
    }

    /// Marks a dimension whose differences are wrapped into `(-pi, pi]`.
    pub fn with_angular_dim(mut self, dim: usize) -> Self {
        self.angular[dim] = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    #[inline]
    fn diff(&self, x: &[f64], y: &[f64], d: usize) -> f64 {
        let r = x[d] - y[d];
        if self.angular[d] {
            wrap(r)
        } else {
            r
        }
    }

    fn check(&self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.dim(), "kernel input dimension");
        assert_eq!(y.len(), self.dim(), "kernel input dimension");
    }

    /// Squared scaled distance `sum_d (r_d / l_d)^2`.
    pub fn scaled_sq_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.check(x, y);
        (0..self.dim())
            .map(|d| {
                let z = self.diff(x, y, d) / self.lengthscales[d];
                z * z
            })
            .sum()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-0.5 * self.scaled_sq_distance(x, y)).exp()
    }

    /// Gradient with respect to `x`.
    pub fn grad(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        let k = self.eval(x, y);
        DVector::from_fn(self.dim(), |d, _| {
            -self.diff(x, y, d) / (self.lengthscales[d] * self.lengthscales[d]) * k
        })
    }

    /// Hessian with respect to `x`.
    pub fn hessian(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let k = self.eval(x, y);
        let q: Vec<f64> = (0..self.dim())
            .map(|d| self.diff(x, y, d) / (self.lengthscales[d] * self.lengthscales[d]))
            .collect();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            let mut h = q[i] * q[j];
            if i == j {
                h -= 1.0 / (self.lengthscales[i] * self.lengthscales[i]);
            }
            h * k
        })
    }

    /// `mu . grad_x k(x, y) + 1/2 tr(sigma * hess_x k(x, y))` in closed form.
    fn generator_entry(&self, mu: &[f64], sigma: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let q = |d: usize| self.diff(x, y, d) / (self.lengthscales[d] * self.lengthscales[d]);
        let k = self.eval(x, y);
        let mut drift = 0.0;
        let mut quad = 0.0;
        let mut curvature = 0.0;
        for i in 0..n {
            let qi = q(i);
            drift += mu[i] * qi;
            curvature += sigma[(i, i)] / (self.lengthscales[i] * self.lengthscales[i]);
            for j in 0..n {
                quad += qi * sigma[(i, j)] * q(j);
            }
        }
        k * (-drift + 0.5 * (quad - curvature))
    }
}

/// Row `i` of the generator matrix:
/// `gamma * (mu . grad + 1/2 tr(sigma * hess)) k(s_i, s_j)` for every support `j`.
pub fn generator_row(
    mu: &[f64],
    sigma: &DMatrix<f64>,
    s_i: &[f64],
    supports: &[Vec<f64>],
    cfg: &KernelConfig,
    gamma: f64,
) -> Result<DVector<f64>> {
    let n = cfg.dim();
    if mu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: mu.len(),
        });
    }
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sigma.nrows(),
        });
    }
    let asym = max_asymmetry(sigma);
    if asym > 1e-8 {
        return Err(Error::Asymmetric(asym));
    }
    Ok(DVector::from_iterator(
        supports.len(),
        supports
            .iter()
            .map(|s_j| gamma * cfg.generator_entry(mu, sigma, s_i, s_j)),
    ))
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Gram matrix over the supporting states and a Cholesky factor of `lambda I + K`.
#[derive(Clone, Debug)]
pub struct GramSystem {
    supports: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    cfg: KernelConfig,
}

impl GramSystem {
    pub fn build(supports: Vec<Vec<f64>>, cfg: &KernelConfig) -> Result<Self> {
        if supports.is_empty() {
            return Err(Error::InvalidConfig("no supporting states".into()));
        }
        for s in &supports {
            if s.len() != cfg.dim() {
                return Err(Error::DimensionMismatch {
                    expected: cfg.dim(),
                    found: s.len(),
                });
            }
        }
        let n = supports.len();
        let rows: Vec<Vec<f64>> = supports
            .par_iter()
            .enumerate()
            .map(|(i, si)| supports[i..].iter().map(|sj| cfg.eval(si, sj)).collect())
            .collect();
        let gram = DMatrix::from_fn(n, n, |i, j| if i <= j { rows[i][j - i] } else { rows[j][i - j] });
        let regularized = &gram + DMatrix::identity(n, n) * cfg.regularization();
        let factor = Cholesky::new(regularized).ok_or(Error::Singular {
            context: "gram factorization",
            condition: f64::INFINITY,
        })?;
        let diag = factor.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let condition = (hi / lo).powi(2);
        if !condition.is_finite() || condition > 1e13 {
            return Err(Error::Singular {
                context: "gram factorization",
                condition,
            });
        }
        Ok(Self {
            supports,
            gram,
            factor,
            cfg: cfg.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn supports(&self) -> &[Vec<f64>] {
        &self.supports
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn config(&self) -> &KernelConfig {
        &self.cfg
    }

    /// `lambda I + K`.
    pub fn regularized(&self) -> DMatrix<f64> {
        &self.gram + DMatrix::identity(self.len(), self.len()) * self.cfg.regularization()
    }

    /// Solves `(lambda I + K) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    /// Column vector `k(s, supports)`.
    pub fn kernel_vector(&self, s: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.supports.iter().map(|sj| self.cfg.eval(s, sj)))
    }
}
