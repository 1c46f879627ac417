//! Flat experiment configuration. Every key is optional in the file; missing
//! keys take the defaults below, and the resolved config is what gets
//! persisted next to the results.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use causal_mdp::estimators::{Estimator, EstimatorConfig, KdeScope, PropensityConfig};
use causal_mdp::kernel::KernelConfig;
use causal_mdp::solver::{PessimismConfig, PlannerConfig};
use causal_mdp::track::{
    BaseController, BehaviorConfig, CollectionMode, RewardParams, Segment, SupportLayout, TerrainTrack, TrackConfig,
    TrackWorld, VehicleParams,
};
use causal_mdp::ActionSet;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KdeScopeName {
    Full,
    FeatureOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    // track
    pub center_x: f64,
    pub center_y: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub half_width: f64,
    pub ice_coverage: f64,
    pub blocks: usize,
    pub pebbles_fraction: f64,
    pub slip_ice: f64,
    pub slip_concrete: f64,
    pub slip_pebbles: f64,
    pub segments: Vec<Segment>,

    // vehicle
    pub dt: f64,
    pub noise_x: f64,
    pub noise_y: f64,
    pub noise_theta: f64,
    pub noise_gain: f64,
    pub speed_atten: f64,
    pub turn_atten: f64,

    // reward
    pub off_track_penalty: f64,
    pub crash_distance: f64,
    pub crash_penalty: f64,

    // data collection
    pub collection: CollectionMode,
    pub episodes: usize,
    pub episode_steps: usize,
    pub p_override: f64,
    pub ice_threshold: f64,
    pub lookahead: f64,

    // estimation
    pub method: Estimator,
    pub neighborhood_size: usize,
    pub kde_bandwidth: f64,
    pub propensity_floor: f64,
    pub kde_scope: KdeScopeName,
    pub sigma_floor: f64,

    // pessimism
    pub pessimism: bool,
    pub pessimism_radius: f64,
    pub pessimism_min_count: usize,
    /// Penalty on unknown cells; unset means twice the per-step reward range.
    pub pessimism_penalty: Option<f64>,

    // kernel and planner
    pub lengthscale_xy: f64,
    pub lengthscale_theta: f64,
    pub regularization: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub support_spacing: f64,
    pub support_margin: f64,
    pub support_headings: usize,
    /// When set, an unfiltered n x n grid over the track's bounding box.
    pub supports_per_axis: Option<usize>,

    // evaluation
    pub trials: usize,
    pub steps: usize,

    // sweep
    pub sweep_coverages: Vec<f64>,
    pub sweep_methods: Vec<Estimator>,
    pub sweep_randomized_baseline: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let track = TrackConfig::default();
        let vehicle = VehicleParams::default();
        let reward = RewardParams::default();
        let behavior = BehaviorConfig::default();
        let est = EstimatorConfig::default();
        let pess = PessimismConfig::default();
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            center_x: track.center_x,
            center_y: track.center_y,
            semi_major: track.semi_major,
            semi_minor: track.semi_minor,
            half_width: track.half_width,
            ice_coverage: track.ice_coverage,
            blocks: track.blocks,
            pebbles_fraction: track.pebbles_fraction,
            slip_ice: track.slip_ice,
            slip_concrete: track.slip_concrete,
            slip_pebbles: track.slip_pebbles,
            segments: Vec::new(),
            dt: vehicle.dt,
            noise_x: vehicle.noise_x,
            noise_y: vehicle.noise_y,
            noise_theta: vehicle.noise_theta,
            noise_gain: vehicle.noise_gain,
            speed_atten: vehicle.speed_atten,
            turn_atten: vehicle.turn_atten,
            off_track_penalty: reward.off_track_penalty,
            crash_distance: reward.crash_distance,
            crash_penalty: reward.crash_penalty,
            collection: CollectionMode::Biased,
            episodes: 50,
            episode_steps: 1000,
            p_override: behavior.p_override,
            ice_threshold: behavior.ice_threshold,
            lookahead: behavior.base.lookahead,
            method: Estimator::Dr,
            neighborhood_size: est.neighborhood_size,
            kde_bandwidth: est.propensity.bandwidth,
            // 35 actions cannot all sit at 0.05
            propensity_floor: 0.01,
            kde_scope: KdeScopeName::Full,
            sigma_floor: est.sigma_floor,
            pessimism: false,
            pessimism_radius: pess.radius,
            pessimism_min_count: pess.min_count,
            pessimism_penalty: None,
            lengthscale_xy: 1.0,
            lengthscale_theta: 0.8,
            regularization: 1.0,
            gamma: 0.85,
            max_iters: 50,
            support_spacing: 1.0,
            support_margin: 0.5,
            support_headings: 8,
            supports_per_axis: None,
            trials: 20,
            steps: 2000,
            sweep_coverages: vec![0.2, 0.4, 0.6, 0.8],
            sweep_methods: Estimator::LEARNED.to_vec(),
            sweep_randomized_baseline: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn track_config(&self) -> TrackConfig {
        TrackConfig {
            center_x: self.center_x,
            center_y: self.center_y,
            semi_major: self.semi_major,
            semi_minor: self.semi_minor,
            half_width: self.half_width,
            ice_coverage: self.ice_coverage,
            blocks: self.blocks,
            pebbles_fraction: self.pebbles_fraction,
            slip_ice: self.slip_ice,
            slip_concrete: self.slip_concrete,
            slip_pebbles: self.slip_pebbles,
            segments: self.segments.clone(),
        }
    }

    pub fn vehicle(&self) -> VehicleParams {
        VehicleParams {
            dt: self.dt,
            noise_x: self.noise_x,
            noise_y: self.noise_y,
            noise_theta: self.noise_theta,
            noise_gain: self.noise_gain,
            speed_atten: self.speed_atten,
            turn_atten: self.turn_atten,
        }
    }

    pub fn reward(&self) -> RewardParams {
        RewardParams {
            off_track_penalty: self.off_track_penalty,
            crash_distance: self.crash_distance,
            crash_penalty: self.crash_penalty,
        }
    }

    pub fn behavior(&self) -> BehaviorConfig {
        BehaviorConfig {
            p_override: self.p_override,
            ice_threshold: self.ice_threshold,
            base: BaseController {
                lookahead: self.lookahead,
            },
        }
    }

    pub fn world(&self) -> anyhow::Result<TrackWorld> {
        let track = TerrainTrack::new(self.track_config())?;
        Ok(TrackWorld::new(
            track,
            self.vehicle(),
            self.reward(),
            ActionSet::racing_default(),
        )?)
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            neighborhood_size: self.neighborhood_size,
            propensity: PropensityConfig {
                bandwidth: self.kde_bandwidth,
                floor: self.propensity_floor,
                scope: match self.kde_scope {
                    KdeScopeName::Full => KdeScope::Full,
                    KdeScopeName::FeatureOnly => KdeScope::FeatureOnly,
                },
            },
            sigma_floor: self.sigma_floor,
        }
    }

    pub fn pessimism_config(&self) -> PessimismConfig {
        PessimismConfig {
            radius: self.pessimism_radius,
            min_count: self.pessimism_min_count,
        }
    }

    pub fn kernel(&self) -> anyhow::Result<KernelConfig> {
        Ok(KernelConfig::pose(
            self.lengthscale_xy,
            self.lengthscale_theta,
            self.regularization,
        )?)
    }

    pub fn planner(&self, penalty: Option<f64>) -> PlannerConfig {
        PlannerConfig {
            gamma: self.gamma,
            max_iters: self.max_iters,
            pessimism_penalty: penalty,
        }
    }

    pub fn support_layout(&self) -> SupportLayout {
        match self.supports_per_axis {
            Some(n) => SupportLayout::PerAxis {
                n,
                headings: self.support_headings,
            },
            None => SupportLayout::Band {
                spacing: self.support_spacing,
                margin: self.support_margin,
                headings: self.support_headings,
            },
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> anyhow::Result<()> {
        let world = self.world()?;
        self.behavior().validate()?;
        self.estimator().validate(world.actions.len())?;
        self.pessimism_config().validate()?;
        self.kernel()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bail!("gamma must lie in (0, 1), got {}", self.gamma);
        }
        if self.max_iters == 0 {
            bail!("max_iters must be >= 1");
        }
        if let Some(k) = self.pessimism_penalty {
            if !(k.is_finite() && k >= 0.0) {
                bail!("pessimism_penalty must be >= 0, got {k}");
            }
        }
        if self.pessimism_min_count == 0 {
            bail!("pessimism_min_count must be >= 1");
        }
        if self.episodes == 0 || self.episode_steps == 0 {
            bail!("episodes and episode_steps must be >= 1");
        }
        if self.trials == 0 || self.steps == 0 {
            bail!("trials and steps must be >= 1");
        }
        if self.support_headings == 0 {
            bail!("support_headings must be >= 1");
        }
        if matches!(self.supports_per_axis, Some(n) if n < 1) {
            bail!("supports_per_axis must be >= 1");
        }
        if self.method == Estimator::Oracle {
            bail!("method must be one of regression, ipw, dr");
        }
        if self.sweep_methods.contains(&Estimator::Oracle) {
            bail!("sweep_methods must be drawn from regression, ipw, dr");
        }
        for &c in &self.sweep_coverages {
            if !(0.0..=1.0).contains(&c) {
                bail!("sweep coverage {c} outside [0, 1]");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 3\nmethod = \"ipw\"\nice_coverage = 0.8\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.method, Estimator::Ipw);
        assert_eq!(cfg.trials, ExperimentConfig::default().trials);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.gamma = 1.0));
        assert!(bad(|c| c.propensity_floor = 0.05));
        assert!(bad(|c| c.ice_coverage = 1.2));
        assert!(bad(|c| c.trials = 0));
        assert!(bad(|c| c.sweep_coverages = vec![1.5]));
        assert!(bad(|c| c.kde_bandwidth = 0.0));
    }

    #[test]
    fn segments_parse() {
        let text = "[[segments]]\nstart = 0.0\nend = 6.283185307179586\nclass = \"pebbles\"\nslip = 0.5\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let world = cfg.world().unwrap();
        assert_eq!(world.track.segments().len(), 1);
    }
}
