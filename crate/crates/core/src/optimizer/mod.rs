//! Progressive optimization of the updated model.
//!
//! The model is initialized from the fused cloud and trained on the sparse later
//! views at full confidence plus reference views masked by their confidence maps.
//! Maps are refined on a finer grid every few epochs until coverage settles.

mod init;
mod loss;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use init::{init_model_from_cloud, scene_extent};
pub use loss::{loss_init, LossSettings};
pub(crate) use train::adapt;
pub use train::{
    baseline_optimize, finetune_optimize, initial_confidence, progressive_from_confidence, progressive_from_maps,
    progressive_optimize, static_mask, stride_views,
};

use crate::confidence::SsimSettings;
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::splat::{DensifyThresholds, LearningRates, RenderSettings};

/// Learning rates; the position rate is relative to the scene extent and decays
/// exponentially from `position_init` to `position_final` over `max_iterations`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRateConfig {
    pub position_init: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRateConfig {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl LearningRateConfig {
    pub fn at(&self, iteration: usize, max_iterations: usize, extent: f64) -> LearningRates {
        let t = if max_iterations == 0 { 0.0 } else { (iteration as f64 / max_iterations as f64).clamp(0.0, 1.0) };
        let log = self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t;
        LearningRates {
            position: log.exp() * extent,
            rotation: self.rotation,
            scale: self.scale,
            opacity: self.opacity,
            color: self.color,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub adaptation_steps: usize,
    pub refine_interval_epochs: usize,
    pub tau: f64,
    pub tau_iter: f64,
    pub initial_grid: [usize; 2],
    pub fine_grid: [usize; 2],
    pub coverage_convergence: f64,
    pub ssim_weight: f64,
    pub t0_supervision_weight: f64,
    /// Every `t0_view_stride`-th reference view supervises training.
    pub t0_view_stride: usize,
    pub learning_rates: LearningRateConfig,
    pub densify: DensifyThresholds,
    pub seed: u64,
    /// Per-pixel sums in the confidence-weighted loss with unit SSIM weight.
    pub literal_loss: bool,
    /// Use raw patch scores instead of binary confidences.
    pub soft_confidence: bool,
    pub static_freeze: bool,
    pub static_freeze_fraction: f64,
    pub ssim: SsimSettings,
    pub background: [f64; 3],
    pub parallel: bool,
    /// Where to write the model if the loss turns non-finite.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 7000,
            adaptation_steps: 500,
            refine_interval_epochs: 108,
            tau: 0.8,
            tau_iter: 0.92,
            initial_grid: [16, 16],
            fine_grid: [32, 32],
            coverage_convergence: 0.02,
            ssim_weight: 0.2,
            t0_supervision_weight: 1.0,
            t0_view_stride: 4,
            learning_rates: LearningRateConfig::default(),
            densify: DensifyThresholds::default(),
            seed: 0,
            literal_loss: false,
            soft_confidence: false,
            static_freeze: false,
            static_freeze_fraction: 0.8,
            ssim: SsimSettings::default(),
            background: [0.0; 3],
            parallel: true,
            snapshot_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau && self.tau < self.tau_iter && self.tau_iter < 1.0) {
            return Err(Error::InvalidInput(format!(
                "thresholds must satisfy 0 < tau < tau_iter < 1 (got {} and {})",
                self.tau, self.tau_iter
            )));
        }
        if self.refine_interval_epochs == 0 {
            return Err(Error::InvalidInput("refine_interval_epochs must be at least 1".into()));
        }
        if !(self.coverage_convergence > 0.0 && self.coverage_convergence < 1.0) {
            return Err(Error::InvalidInput("coverage_convergence must lie in (0, 1)".into()));
        }
        if self.t0_view_stride == 0 {
            return Err(Error::InvalidInput("t0_view_stride must be at least 1".into()));
        }
        if self.initial_grid.contains(&0) || self.fine_grid.contains(&0) {
            return Err(Error::InvalidInput("patch grids must be at least 1x1".into()));
        }
        if self.fine_grid[0] * self.fine_grid[1] <= self.initial_grid[0] * self.initial_grid[1] {
            return Err(Error::InvalidInput("fine_grid must be strictly finer than initial_grid".into()));
        }
        self.ssim.validate()
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings { ssim_weight: self.ssim_weight, literal: self.literal_loss, ssim: self.ssim }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings { parallel: self.parallel, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    MaxIterations,
    CoverageConverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean confidence coverage: the initial maps, then one entry per refinement.
    pub coverage: Vec<f64>,
    /// Iteration at which each refinement ran.
    pub refinement_iterations: Vec<usize>,
    /// Mean loss over each block of `loss_block` iterations.
    pub loss_curve: Vec<f64>,
    pub loss_block: usize,
    pub iterations: usize,
    pub epochs: usize,
    pub termination: TerminationReason,
    pub wall_clock_seconds: f64,
    pub final_gaussians: usize,
    pub frozen_gaussians: usize,
    pub test_metrics: Option<EvalResult>,
    pub config: TrainConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            TrainConfig { tau: 0.95, ..Default::default() },
            TrainConfig { refine_interval_epochs: 0, ..Default::default() },
            TrainConfig { coverage_convergence: 0.0, ..Default::default() },
            TrainConfig { fine_grid: [8, 8], ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn position_rate_decays_geometrically() {
        let lr = LearningRateConfig::default();
        assert!((lr.at(0, 100, 2.0).position - 3.2e-4).abs() < 1e-15);
        assert!((lr.at(100, 100, 2.0).position - 3.2e-6).abs() < 1e-15);
        let mid = lr.at(50, 100, 1.0).position;
        assert!((mid - (1.6e-4f64 * 1.6e-6).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"max_iterations": 10, "tau": 0.7}"#).unwrap();
        assert_eq!(c.max_iterations, 10);
        assert_eq!(c.tau, 0.7);
        assert_eq!(c.tau_iter, 0.92);
    }
}
