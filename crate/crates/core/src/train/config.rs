use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{ParamGroup, PARAM_GROUPS};
use crate::render::RenderSettings;

/// Per-group Adam step sizes. `position` is multiplied by the scene extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub time_mean: f64,
    pub direction_mean: f64,
    pub chol_offdiag: f64,
    pub chol_logdiag: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub sh_fourier: f64,
    pub nets: f64,
    pub lambda: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            time_mean: 2.5e-2,
            direction_mean: 2.5e-2,
            chol_offdiag: 1e-2,
            chol_logdiag: 5e-2,
            opacity: 0.05,
            sh_dc: 2.5e-3,
            sh_rest: 1.25e-4,
            sh_fourier: 2.5e-3,
            nets: 2e-4,
            lambda: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::TimeMean => self.time_mean,
            ParamGroup::DirectionMean => self.direction_mean,
            ParamGroup::CholOffdiag => self.chol_offdiag,
            ParamGroup::CholLogdiag => self.chol_logdiag,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::ShDc => self.sh_dc,
            ParamGroup::ShRest => self.sh_rest,
            ParamGroup::ShFourier => self.sh_fourier,
        }
    }

    fn validate(&self) -> Result<()> {
        let named = [("nets", self.nets), ("lambda", self.lambda)];
        let groups = PARAM_GROUPS.map(|g| (format!("{g:?}"), self.group(g)));
        for (name, v) in groups.iter().map(|(n, v)| (n.as_str(), *v)).chain(named) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("lr.{name}"), "learning rates must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub interval: u64,
    pub from: u64,
    /// Last densification iteration; `None` means half of the run.
    pub until: Option<u64>,
    /// Mean view-space gradient above which a Gaussian is cloned or split.
    pub grad_threshold: f64,
    /// Conditional spatial scale, as a fraction of the scene extent, that
    /// separates cloning (below) from splitting (above).
    pub percent_dense: f64,
    /// `‖Σ_pt‖∞` threshold as a fraction of the scene extent.
    pub temporal_correlation: f64,
    /// `√Σ_t` threshold in normalized time.
    pub temporal_scale: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            from: 500,
            until: None,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            temporal_correlation: 0.05,
            temporal_scale: 0.25,
            prune_opacity: 0.01,
            max_gaussians: 500_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub count: usize,
    /// `[min, max]` corners for the initial positions. Derived from the
    /// cameras when absent.
    pub bbox: Option<[[f64; 3]; 2]>,
    pub temporal_scale: f64,
    pub directional_scale: f64,
    pub opacity: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { count: 1000, bbox: None, temporal_scale: 0.2, directional_scale: 1.0, opacity: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: LearningRates,
    /// Iteration from which `λ_t`, `λ_d` are optimized. Their initial values
    /// are `render.slice.lambda_t` and `render.slice.lambda_d`.
    pub lambda_trainable_after: u64,
    /// Enables the residual refinement networks.
    pub agr: bool,
    pub nets_trainable_after: u64,
    pub num_frequencies: usize,
    pub densify: DensifyConfig,
    pub init: InitConfig,
    pub render: RenderSettings,
    pub ssim_weight: f64,
    pub seed: u64,
    /// Metrics record every this many iterations (and at the end).
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            batch_size: 1,
            lr: LearningRates::default(),
            lambda_trainable_after: 15_000,
            agr: true,
            nets_trainable_after: 3_000,
            num_frequencies: crate::refine::DEFAULT_FREQUENCIES,
            densify: DensifyConfig::default(),
            init: InitConfig::default(),
            render: RenderSettings::default(),
            ssim_weight: crate::loss::DEFAULT_SSIM_WEIGHT,
            seed: 0,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.render.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::config("ssim_weight", "must lie in [0, 1]"));
        }
        let d = &self.densify;
        if !(d.prune_opacity > 0.0 && d.prune_opacity < 1.0) {
            return Err(Error::config("densify.prune_opacity", "must lie in (0, 1)"));
        }
        if d.interval == 0 {
            return Err(Error::config("densify.interval", "must be positive"));
        }
        for (name, v) in [
            ("densify.grad_threshold", d.grad_threshold),
            ("densify.percent_dense", d.percent_dense),
            ("densify.temporal_correlation", d.temporal_correlation),
            ("densify.temporal_scale", d.temporal_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be positive"));
            }
        }
        let i = &self.init;
        if i.count == 0 {
            return Err(Error::config("init.count", "must be at least 1"));
        }
        if !(i.opacity > 0.0 && i.opacity < 1.0) {
            return Err(Error::config("init.opacity", "must lie in (0, 1)"));
        }
        if !(i.temporal_scale > 0.0) || !(i.directional_scale > 0.0) {
            return Err(Error::config("init.temporal_scale", "initial scales must be positive"));
        }
        if let Some([lo, hi]) = i.bbox {
            if (0..3).any(|k| !(hi[k] >= lo[k])) {
                return Err(Error::config("init.bbox", "max corner must not be below the min corner"));
            }
        }
        if self.log_interval == 0 {
            return Err(Error::config("log_interval", "must be positive"));
        }
        Ok(())
    }

    pub fn densify_until(&self) -> u64 {
        self.densify.until.unwrap_or(self.iterations / 2)
    }
}
