use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::psd_project;
use crate::state::{wrap, Action, ActionSet, State, POSE_DIM};

use super::geometry::{TerrainInfo, TerrainTrack};

/// Terrain-dependent unicycle parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub dt: f64,
    pub noise_x: f64,
    pub noise_y: f64,
    pub noise_theta: f64,
    /// Noise multiplier is `1 + noise_gain * (1 - slip) * |v|`.
    pub noise_gain: f64,
    /// Effective speed is `v * (1 - speed_atten * (1 - slip))`.
    pub speed_atten: f64,
    /// Effective turn rate is `omega * (1 - turn_atten * (1 - slip))`.
    pub turn_atten: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            noise_x: 0.02,
            noise_y: 0.02,
            noise_theta: 0.02,
            noise_gain: 1.0,
            speed_atten: 0.3,
            turn_atten: 0.6,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        for (name, v) in [
            ("noise_x", self.noise_x),
            ("noise_y", self.noise_y),
            ("noise_theta", self.noise_theta),
            ("noise_gain", self.noise_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("speed_atten", self.speed_atten), ("turn_atten", self.turn_atten)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn noiseless(self) -> Self {
        Self {
            noise_x: 0.0,
            noise_y: 0.0,
            noise_theta: 0.0,
            ..self
        }
    }

    pub fn effective(&self, action: &Action, slip: f64) -> (f64, f64) {
        (
            action.v * (1.0 - self.speed_atten * (1.0 - slip)),
            action.omega * (1.0 - self.turn_atten * (1.0 - slip)),
        )
    }

    pub fn noise_sd(&self, action: &Action, slip: f64) -> [f64; POSE_DIM] {
        let m = 1.0 + self.noise_gain * (1.0 - slip) * action.v.abs();
        [self.noise_x * m, self.noise_y * m, self.noise_theta * m]
    }

    /// Mean of the state shift (before noise) from `s`.
    pub fn nominal_shift(&self, s: &State, action: &Action, slip: f64) -> [f64; POSE_DIM] {
        let (v, w) = self.effective(action, slip);
        [v * s.theta.cos() * self.dt, v * s.theta.sin() * self.dt, w * self.dt]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Per metre beyond the track half-width.
    pub off_track_penalty: f64,
    /// Beyond this centerline distance the vehicle is reset onto the centerline.
    pub crash_distance: f64,
    pub crash_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            off_track_penalty: 1.0,
            crash_distance: 2.0,
            crash_penalty: 5.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self, half_width: f64) -> Result<()> {
        if !(self.off_track_penalty.is_finite() && self.off_track_penalty >= 0.0) {
            return Err(Error::InvalidConfig("off_track_penalty must be >= 0".into()));
        }
        if !(self.crash_penalty.is_finite() && self.crash_penalty >= 0.0) {
            return Err(Error::InvalidConfig("crash_penalty must be >= 0".into()));
        }
        if !(self.crash_distance.is_finite() && self.crash_distance > half_width) {
            return Err(Error::InvalidConfig(format!(
                "crash_distance must exceed the half-width {half_width}, got {}",
                self.crash_distance
            )));
        }
        Ok(())
    }
}

/// One simulated transition. `next` is the physical successor (what gets
/// logged); `resume` is where the vehicle continues from, which differs only
/// after a crash reset.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next: State,
    pub resume: State,
    pub reward: f64,
    pub crashed: bool,
}

#[derive(Clone, Debug)]
pub struct TrackWorld {
    pub track: TerrainTrack,
    pub vehicle: VehicleParams,
    pub reward: RewardParams,
    pub actions: ActionSet,
}

impl TrackWorld {
    pub fn new(track: TerrainTrack, vehicle: VehicleParams, reward: RewardParams, actions: ActionSet) -> Result<Self> {
        vehicle.validate()?;
        reward.validate(track.half_width())?;
        Ok(Self {
            track,
            vehicle,
            reward,
            actions,
        })
    }

    pub fn terrain_at(&self, s: &State) -> TerrainInfo {
        self.track.terrain_at(s.x, s.y)
    }

    /// Unicycle update with terrain attenuation and additive Gaussian noise.
    pub fn step(&self, s: &State, action: &Action, rng: &mut impl Rng) -> State {
        let slip = self.terrain_at(s).slip;
        let mean = self.vehicle.nominal_shift(s, action, slip);
        let sd = self.vehicle.noise_sd(action, slip);
        let mut d = [0.0; POSE_DIM];
        for k in 0..POSE_DIM {
            let z: f64 = StandardNormal.sample(rng);
            d[k] = mean[k] + sd[k] * z;
        }
        State::new(s.x + d[0], s.y + d[1], wrap(s.theta + d[2]))
    }

    /// Progress along the centerline minus the off-track penalty at `next`.
    pub fn reward(&self, s: &State, next: &State) -> f64 {
        let d = self.terrain_at(next).distance.abs();
        self.track.progress(s, next) - self.reward.off_track_penalty * (d - self.track.half_width()).max(0.0)
    }

    pub fn advance(&self, s: &State, action: &Action, rng: &mut impl Rng) -> Transition {
        let next = self.step(s, action, rng);
        let mut reward = self.reward(s, &next);
        let info = self.terrain_at(&next);
        let crashed = info.distance.abs() > self.reward.crash_distance;
        let resume = if crashed {
            reward -= self.reward.crash_penalty;
            self.track.pose_at(info.param, 0.0, 0.0)
        } else {
            next
        };
        Transition {
            next,
            resume,
            reward,
            crashed,
        }
    }

    /// Exact first and (non-central) second moments of the shift at `s`.
    pub fn true_moments(&self, s: &State, action: &Action) -> (DVector<f64>, DMatrix<f64>) {
        let slip = self.terrain_at(s).slip;
        let mu = DVector::from_row_slice(&self.vehicle.nominal_shift(s, action, slip));
        let sd = self.vehicle.noise_sd(action, slip);
        let sigma = &mu * mu.transpose() + DMatrix::from_diagonal(&DVector::from_iterator(3, sd.iter().map(|v| v * v)));
        (mu, sigma)
    }

    /// Expected one-step reward when the shift has first moment `mu` and
    /// second moment `sigma`, by a symmetric 6-point sigma-point rule on the
    /// implied Gaussian.
    pub fn expected_reward(&self, s: &State, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        let cov = psd_project(&(sigma - mu * mu.transpose()), 0.0);
        let n = POSE_DIM as f64;
        let root = match cov.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                // rank deficient: eigen square root
                let e = cov.symmetric_eigen();
                let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
                e.eigenvectors * DMatrix::from_diagonal(&d)
            }
        };
        let at = |d: &DVector<f64>| {
            let next = State::new(s.x + d[0], s.y + d[1], s.theta + d[2]);
            self.reward(s, &next)
        };
        let scale = n.sqrt();
        let mut total = 0.0;
        for k in 0..POSE_DIM {
            let col = root.column(k) * scale;
            total += at(&(mu + &col)) + at(&(mu - &col));
        }
        total / (2.0 * n)
    }
}
