//! Synthetic confounded transitions with analytically known moments.
//!
//! Half of the samples have context `c = 0`, the other half `c = 1`. Action 1
//! is assigned with probability `logistic(slope * c + intercept)`, action 0
//! otherwise. Action 1 shifts `x` by `effect * c + noise`, action 0 by
//! `control_shift + noise`. Pose is fixed at the origin so only `c` separates
//! samples. Because action 1 is more likely where its effect is larger, the
//! plain mean over action-1 samples overstates its population mean.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::state::{ContextFeature, Dataset, QueryPoint, Sample, State};

pub const CONTROL: usize = 0;
pub const TREATED: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfoundedGenerator {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub effect: f64,
    pub control_shift: f64,
    pub noise_sd: f64,
}

impl Default for ConfoundedGenerator {
    /// `e(0) = 0.5`, `e(1) = 0.8`, effect 6, unit noise, 10^4 samples.
    fn default() -> Self {
        Self {
            n: 10_000,
            slope: 4f64.ln(),
            intercept: 0.0,
            effect: 6.0,
            control_shift: 0.0,
            noise_sd: 1.0,
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ConfoundedGenerator {
    /// Same layout with assignment independent of `c`.
    pub fn randomized(self) -> Self {
        Self {
            slope: 0.0,
            intercept: 0.0,
            ..self
        }
    }

    pub fn propensity(&self, c: f64) -> f64 {
        logistic(self.slope * c + self.intercept)
    }

    /// Context of sample `i`.
    pub fn context(&self, i: usize) -> f64 {
        if i < self.n / 2 {
            0.0
        } else {
            1.0
        }
    }

    /// Noise-free shift of `action` at context `c`.
    pub fn true_shift(&self, action: usize, c: f64) -> f64 {
        if action == TREATED {
            self.effect * c
        } else {
            self.control_shift
        }
    }

    fn share_high(&self) -> f64 {
        (self.n - self.n / 2) as f64 / self.n as f64
    }

    /// Population mean shift of `action` over the fixed context design.
    pub fn true_mean(&self, action: usize) -> f64 {
        let p1 = self.share_high();
        (1.0 - p1) * self.true_shift(action, 0.0) + p1 * self.true_shift(action, 1.0)
    }

    /// Expected error of the plain per-action mean.
    pub fn planted_gap(&self, action: usize) -> f64 {
        let p1 = self.share_high();
        let e = |c: f64| {
            let p = self.propensity(c);
            if action == TREATED {
                p
            } else {
                1.0 - p
            }
        };
        let w1 = p1 * e(1.0);
        let w0 = (1.0 - p1) * e(0.0);
        let selected = (w0 * self.true_shift(action, 0.0) + w1 * self.true_shift(action, 1.0)) / (w0 + w1);
        selected - self.true_mean(action)
    }

    pub fn generate(&self, rng: &mut impl Rng) -> Result<Dataset> {
        let noise = Normal::new(0.0, self.noise_sd).expect("noise sd must be finite and >= 0");
        let samples = (0..self.n)
            .map(|i| {
                let c = self.context(i);
                let action = if rng.random::<f64>() < self.propensity(c) {
                    TREATED
                } else {
                    CONTROL
                };
                let dx = self.true_shift(action, c) + noise.sample(rng);
                let origin = State::new(0.0, 0.0, 0.0);
                Sample::new(
                    0,
                    i as u32,
                    QueryPoint::new(origin, ContextFeature(vec![c])),
                    action,
                    State::new(dx, 0.0, 0.0),
                )
            })
            .collect();
        Dataset::new(samples, 2)
    }
}
