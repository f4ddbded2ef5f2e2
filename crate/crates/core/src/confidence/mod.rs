//! Interference-based confidence: which regions of the reference views still hold.
//!
//! A copy of the reference model is briefly trained on the later views. Regions the
//! later views disagree with get pulled away from the reference images; rendering
//! the perturbed model back into the reference views and scoring patches with the
//! modified SSIM separates stable patches from changed ones.

mod map;
mod ssim;

use std::path::Path;

pub use map::{mean_coverage, ConfidenceMap, ConfidenceRecord, PatchGrid};
pub use ssim::{mssim, ssim, ssim_with_gradient, SsimMap, SsimSettings};

use crate::error::{Error, Result};
use crate::image::{save_gray_png, View};
use crate::optimizer::TrainConfig;
use crate::splat::{render_with, GaussianModel, RenderSettings};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceSettings {
    pub ssim: SsimSettings,
    pub background: [f64; 3],
    pub render: RenderSettings,
    /// Keep raw scores as confidences instead of thresholding.
    pub soft: bool,
}

impl Default for ConfidenceSettings {
    fn default() -> Self {
        Self { ssim: SsimSettings::default(), background: [0.0; 3], render: RenderSettings::default(), soft: false }
    }
}

impl ConfidenceSettings {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            ssim: config.ssim,
            background: config.background,
            render: config.render_settings(),
            soft: config.soft_confidence,
        }
    }
}

/// Trains a copy of `g0` for `steps` iterations on the later views with the plain
/// photometric loss, without densification.
pub fn adaptation_phase(
    g0: &GaussianModel,
    tn_views: &[View],
    steps: usize,
    config: &TrainConfig,
    extent: f64,
) -> Result<GaussianModel> {
    if steps == 0 {
        return Err(Error::Precondition("adaptation needs at least one step".into()));
    }
    if g0.is_empty() {
        return Err(Error::Precondition("adaptation needs a non-empty reference model".into()));
    }
    if tn_views.is_empty() {
        return Err(Error::Precondition("adaptation needs at least one view".into()));
    }
    crate::optimizer::adapt(g0, tn_views, steps, config, extent)
}

/// Patch scores of one view: mean modified-SSIM map per patch.
pub fn patch_scores(
    model: &GaussianModel,
    view: &View,
    grid: PatchGrid,
    settings: &ConfidenceSettings,
) -> Result<Vec<f64>> {
    let rendered = render_with(model, &view.camera, settings.background, &settings.render).image;
    let map = mssim(&rendered, &view.image, &settings.ssim)?;
    Ok(grid.patch_means(&map.map))
}

fn checked_grid(view: &View, grid: (usize, usize)) -> Result<PatchGrid> {
    PatchGrid::new(grid.0, grid.1, view.image.width, view.image.height)
}

fn threshold(scores: &[f64], tau: f64, soft: bool) -> Vec<f64> {
    scores
        .iter()
        .map(|&s| {
            if soft {
                s.clamp(0.0, 1.0)
            } else if s >= tau {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// One map per reference view: patches scoring at least `tau` are confident.
pub fn build_confidence_maps(
    adapted: &GaussianModel,
    t0_views: &[View],
    grid: (usize, usize),
    tau: f64,
    settings: &ConfidenceSettings,
) -> Result<Vec<ConfidenceMap>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {tau}")));
    }
    t0_views
        .iter()
        .map(|view| {
            let g = checked_grid(view, grid)?;
            let scores = patch_scores(adapted, view, g, settings)?;
            let values = threshold(&scores, tau, settings.soft);
            ConfidenceMap::new(view.camera.id, grid.0, grid.1, values, scores)
        })
        .collect()
}

/// Re-scores every view on the finer grid and unions the newly confident patches
/// into the (resampled) current map, so coverage never shrinks.
pub fn refine_confidence_maps(
    current: &[ConfidenceMap],
    gn: &GaussianModel,
    t0_views: &[View],
    grid_fine: (usize, usize),
    tau_iter: f64,
    settings: &ConfidenceSettings,
) -> Result<Vec<ConfidenceMap>> {
    if current.len() != t0_views.len() {
        return Err(Error::LengthMismatch { left: current.len(), right: t0_views.len() });
    }
    if !(tau_iter > 0.0 && tau_iter < 1.0) {
        return Err(Error::InvalidInput(format!("tau_iter must lie in (0, 1), got {tau_iter}")));
    }
    current
        .iter()
        .zip(t0_views)
        .map(|(map, view)| {
            if map.view_id != view.camera.id {
                return Err(Error::InvalidInput(format!(
                    "confidence map for view {} paired with view {}",
                    map.view_id, view.camera.id
                )));
            }
            if grid_fine.0 * grid_fine.1 < map.grid_rows * map.grid_cols {
                return Err(Error::InvalidInput("refinement grid must not be coarser than the current grid".into()));
            }
            let (w, h) = (view.image.width, view.image.height);
            let g = checked_grid(view, grid_fine)?;
            let previous = map.resampled_values(grid_fine.0, grid_fine.1, w, h)?;
            let scores = patch_scores(gn, view, g, settings)?;
            let fresh = threshold(&scores, tau_iter, settings.soft);
            let values = previous.iter().zip(&fresh).map(|(a, b)| a.max(*b)).collect();
            ConfidenceMap::new(map.view_id, grid_fine.0, grid_fine.1, values, scores)
        })
        .collect()
}

/// Writes `{view_id, grid, values, scores}` records for every map.
pub fn write_confidence_maps(path: &Path, maps: &[ConfidenceMap]) -> Result<()> {
    let records: Vec<ConfidenceRecord> = maps.iter().map(ConfidenceMap::to_record).collect();
    crate::io::write_json(path, &records)
}

pub fn read_confidence_maps(path: &Path) -> Result<Vec<ConfidenceMap>> {
    let records: Vec<ConfidenceRecord> = crate::io::read_json(path)?;
    records.iter().map(ConfidenceRecord::to_map).collect()
}

/// Grey-scale heat map of the patch scores, one pixel per image pixel.
pub fn write_heatmap(path: &Path, map: &ConfidenceMap, width: usize, height: usize) -> Result<()> {
    let grid = map.grid(width, height)?;
    let values: Vec<f64> = grid.pixel_patches().into_iter().map(|p| map.scores[p].clamp(0.0, 1.0)).collect();
    save_gray_png(path, width, height, &values)
}
