//! Render, loss and training configuration, with JSON (de)serialization and
//! validation. Unknown JSON keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// χ²(3) inverse CDF at 0.99.
pub const DEFAULT_Q: f64 = 11.344866730144373;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Mahalanobis-squared level of the confidence ellipsoid.
    pub q: f64,
    /// Transmittance below which color accumulation stops.
    pub epsilon1: f64,
    /// Second-phase transmittance below which the ray is terminated.
    pub epsilon2: f64,
    /// Capacity of the per-ray index buffer (sentinel included).
    pub max_hits: usize,
    /// Absolute step added to the last hit parameter before the next query.
    pub t_advance_delta: f64,
    pub background_color: Vec3,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_Q,
            epsilon1: 1e-4,
            epsilon2: 1e-4,
            max_hits: 512,
            t_advance_delta: 1e-5,
            background_color: Vec3::ZERO,
        }
    }
}

impl RenderConfig {
    /// Sets `t_advance_delta` to `1e-5` times the scene diagonal.
    pub fn scaled_to_extent(mut self, extent: f64) -> Self {
        self.t_advance_delta = 1e-5 * extent;
        self
    }

    /// Thresholds disabled and an effectively unbounded index buffer.
    pub fn unthresholded() -> Self {
        Self { epsilon1: 0.0, epsilon2: 0.0, max_hits: usize::MAX, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(invalid("q", format!("must be > 0, got {}", self.q)));
        }
        for (field, v) in [("epsilon1", self.epsilon1), ("epsilon2", self.epsilon2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(field, format!("must lie in (0, 1), got {v}")));
            }
        }
        if self.max_hits < 1 {
            return Err(invalid("max_hits", "must be >= 1".into()));
        }
        if !(self.t_advance_delta > 0.0 && self.t_advance_delta.is_finite()) {
            return Err(invalid("t_advance_delta", format!("must be > 0, got {}", self.t_advance_delta)));
        }
        if !self.background_color.is_finite() {
            return Err(invalid("background_color", "must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the D-SSIM term.
    pub lambda: f64,
    pub window_radius: usize,
    pub window_sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.2, window_radius: 5, window_sigma: 1.5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid("lambda", format!("must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.window_sigma > 0.0) {
            return Err(invalid("window_sigma", "must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-parameter-group constant learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub mean: f64,
    pub scale_logits: f64,
    pub rotation: f64,
    pub opacity_logit: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { mean: 1.6e-4, scale_logits: 5e-3, rotation: 1e-3, opacity_logit: 5e-2, color: 2.5e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensifyCriterion {
    /// Norm of the mean of the accumulated mean-gradient vectors.
    VectorMean,
    /// Mean of the per-iteration mean-gradient norms.
    MeanOfNorms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    /// End iteration; `None` means half of the run.
    pub end: Option<usize>,
    /// Multiplied by the scene extent.
    pub grad_threshold: f64,
    /// Fraction of the scene extent separating clone from split.
    pub split_scale_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub split_scale_divisor: f64,
    pub criterion: DensifyCriterion,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 100,
            start: 500,
            end: None,
            grad_threshold: 2e-6,
            split_scale_threshold: 0.01,
            prune_opacity_threshold: 0.005,
            split_scale_divisor: 1.6,
            criterion: DensifyCriterion::VectorMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub adam: AdamConfig,
    pub densify: DensifyConfig,
    pub render: RenderConfig,
    pub loss: LossConfig,
    pub seed: u64,
    /// Number of Gaussians for random initialization.
    pub init_gaussians: usize,
    /// Initial scale as a fraction of the init box diagonal.
    pub init_scale_fraction: f64,
    /// 0 disables checkpoints.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rates: LearningRates::default(),
            adam: AdamConfig::default(),
            densify: DensifyConfig::default(),
            render: RenderConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            init_gaussians: 1000,
            init_scale_fraction: 0.02,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.loss.validate()?;
        let d = &self.densify;
        if d.interval < 1 {
            return Err(invalid("densify.interval", "must be >= 1".into()));
        }
        for (field, v) in [
            ("densify.grad_threshold", d.grad_threshold),
            ("densify.split_scale_threshold", d.split_scale_threshold),
            ("densify.prune_opacity_threshold", d.prune_opacity_threshold),
        ] {
            if !(v > 0.0) {
                return Err(invalid(field, format!("must be > 0, got {v}")));
            }
        }
        if !(d.split_scale_divisor > 1.0) {
            return Err(invalid("densify.split_scale_divisor", "must be > 1".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(invalid("adam", "betas must lie in [0, 1) and epsilon > 0".into()));
        }
        let lr = &self.learning_rates;
        for (field, v) in [
            ("learning_rates.mean", lr.mean),
            ("learning_rates.scale_logits", lr.scale_logits),
            ("learning_rates.rotation", lr.rotation),
            ("learning_rates.opacity_logit", lr.opacity_logit),
            ("learning_rates.color", lr.color),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("must be >= 0, got {v}")));
            }
        }
        if self.init_gaussians == 0 {
            return Err(invalid("init_gaussians", "must be >= 1".into()));
        }
        Ok(())
    }

    pub fn densify_end(&self) -> usize {
        self.densify.end.unwrap_or(self.iterations / 2)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s)
            .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { location, message } => {
                Error::parse(format!("{}: {location}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn invalid(field: &'static str, reason: String) -> Error {
    Error::InvalidConfig { field, reason }
}
