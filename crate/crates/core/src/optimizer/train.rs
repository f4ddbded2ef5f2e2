use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    init_model_from_cloud, loss_init, scene_extent, LossSettings, TerminationReason, TrainConfig, TrainReport,
};
use crate::confidence::{
    adaptation_phase, build_confidence_maps, mean_coverage, refine_confidence_maps, ConfidenceMap, ConfidenceSettings,
};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::image::View;
use crate::splat::{
    densify_and_prune, render_with_gradient, AdamSettings, DensifyThresholds, GaussianModel, GradientStats,
    RenderSettings,
};

const LOSS_BLOCK: usize = 100;

/// One optimizer run: model, schedule and running bookkeeping.
struct Trainer<'a> {
    config: &'a TrainConfig,
    extent: f64,
    schedule_len: usize,
    densify: Option<DensifyThresholds>,
    loss: LossSettings,
    render: RenderSettings,
    model: GaussianModel,
    stats: GradientStats,
    densify_rng: ChaCha8Rng,
    iteration: usize,
    block_sum: f64,
    block_len: usize,
    loss_curve: Vec<f64>,
    frozen: Option<Vec<bool>>,
}

impl<'a> Trainer<'a> {
    fn new(model: GaussianModel, config: &'a TrainConfig, extent: f64, schedule_len: usize, densify: bool) -> Self {
        let n = model.len();
        Self {
            config,
            extent,
            schedule_len,
            densify: densify.then_some(config.densify),
            loss: config.loss_settings(),
            render: config.render_settings(),
            model,
            stats: GradientStats::new(n),
            densify_rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            iteration: 0,
            block_sum: 0.0,
            block_len: 0,
            loss_curve: Vec::new(),
            frozen: None,
        }
    }

    /// Render, weighted loss, backward, Adam, and density control when due.
    /// Returns whether the Gaussian set changed.
    fn step(&mut self, view: &View, map: &ConfidenceMap, weight: f64) -> Result<bool> {
        let cam = &view.camera;
        let factor = weight / (map.grid_rows * map.grid_cols) as f64;
        let (_, loss, grads) = render_with_gradient(&self.model, cam, self.config.background, &self.render, |img| {
            let (raw, mut grad) = loss_init(img, &view.image, map, &self.loss)?;
            grad.data.iter_mut().for_each(|g| *g *= factor);
            Ok((raw * factor, grad))
        })?;
        if !loss.is_finite() || grads.params.iter().any(|g| !g.is_finite()) {
            return Err(self.non_finite(&format!("{}", cam.id)));
        }
        if self.densify.is_some_and(|d| self.iteration < d.end) {
            self.stats.record(&grads, cam);
        }
        let lrs = self.config.learning_rates.at(self.iteration, self.schedule_len, self.extent);
        self.model.adam_step(&grads.params, &lrs, &AdamSettings::default(), self.frozen.as_deref());
        self.iteration += 1;

        self.block_sum += loss;
        self.block_len += 1;
        if self.block_len == LOSS_BLOCK {
            self.flush_block();
        }

        if let Some(d) = self.densify.filter(|d| d.is_due(self.iteration)) {
            self.model = densify_and_prune(&self.model, &self.stats, &d, self.extent, &mut self.densify_rng);
            self.stats.reset(self.model.len());
            return Ok(true);
        }
        Ok(false)
    }

    fn flush_block(&mut self) {
        if self.block_len > 0 {
            self.loss_curve.push(self.block_sum / self.block_len as f64);
        }
        self.block_sum = 0.0;
        self.block_len = 0;
    }

    fn non_finite(&self, view: &str) -> Error {
        let snapshot = self.config.snapshot_dir.as_ref().and_then(|dir| {
            let path = dir.join(format!("snapshot_{:06}.ply", self.iteration));
            std::fs::create_dir_all(dir).ok()?;
            self.model.save_ply(&path).ok().map(|_| path)
        });
        Error::NonFiniteLoss { iteration: self.iteration, view: view.to_string(), snapshot }
    }
}

/// Short run on the later views at full confidence with a constant schedule and no
/// density control; the reference model is left untouched.
pub(crate) fn adapt(
    g0: &GaussianModel,
    tn_views: &[View],
    steps: usize,
    config: &TrainConfig,
    extent: f64,
) -> Result<GaussianModel> {
    let mut model = g0.clone();
    model.reset_optimizer();
    let mut trainer = Trainer::new(model, config, extent, 0, false);
    let maps: Vec<ConfidenceMap> = tn_views
        .iter()
        .map(|v| ConfidenceMap::uniform(v.camera.id, config.initial_grid[0], config.initial_grid[1], 1.0))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut order: Vec<usize> = Vec::new();
    while trainer.iteration < steps {
        if order.is_empty() {
            order = (0..tn_views.len()).collect();
            order.shuffle(&mut rng);
        }
        let i = order.pop().unwrap();
        trainer.step(&tn_views[i], &maps[i], 1.0)?;
    }
    Ok(trainer.model)
}

/// Every `stride`-th view, starting from the first.
pub fn stride_views(views: &[View], stride: usize) -> Vec<View> {
    views.iter().step_by(stride.max(1)).cloned().collect()
}

/// Marks Gaussians whose projected centre lands in a confident patch in at least
/// `fraction` of the reference views that see it.
pub fn static_mask(
    model: &GaussianModel,
    t0_views: &[View],
    maps: &[ConfidenceMap],
    fraction: f64,
) -> Result<Vec<bool>> {
    if maps.len() != t0_views.len() {
        return Err(Error::LengthMismatch { left: maps.len(), right: t0_views.len() });
    }
    let mut seen = vec![0usize; model.len()];
    let mut confident = vec![0usize; model.len()];
    for (view, map) in t0_views.iter().zip(maps) {
        let cam = &view.camera;
        let grid = map.grid(view.image.width, view.image.height)?;
        for i in 0..model.len() {
            let Some(px) = cam.project(&model.position(i)) else { continue };
            if px.x < 0.0 || px.y < 0.0 || px.x >= cam.width as f64 || px.y >= cam.height as f64 {
                continue;
            }
            seen[i] += 1;
            if map.values[grid.patch_at(px.x as usize, px.y as usize)] > 0.0 {
                confident[i] += 1;
            }
        }
    }
    Ok(seen.iter().zip(&confident).map(|(&s, &c)| s > 0 && c as f64 >= fraction * s as f64).collect())
}

fn validate_views(label: &str, views: &[View]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::Precondition(format!("no {label} views supplied")));
    }
    Ok(())
}

/// Trains `gn` on the later views at full confidence and on `t0_views` weighted by
/// `maps`. With `refine`, maps are re-scored on the fine grid every
/// `refine_interval_epochs` epochs and training stops once coverage settles.
pub fn progressive_from_maps(
    gn: GaussianModel,
    maps: Vec<ConfidenceMap>,
    t0_views: &[View],
    tn_views: &[View],
    config: &TrainConfig,
    refine: bool,
) -> Result<(GaussianModel, TrainReport)> {
    config.validate()?;
    validate_views("training", tn_views)?;
    if maps.len() != t0_views.len() {
        return Err(Error::LengthMismatch { left: maps.len(), right: t0_views.len() });
    }
    if gn.is_empty() {
        return Err(Error::Precondition("cannot optimize an empty model".into()));
    }
    let start = Instant::now();
    let extent = scene_extent(&tn_views.iter().map(|v| v.camera.clone()).collect::<Vec<_>>());
    let confidence_settings = ConfidenceSettings::from_config(config);
    let full: Vec<ConfidenceMap> = tn_views
        .iter()
        .map(|v| ConfidenceMap::uniform(v.camera.id, config.initial_grid[0], config.initial_grid[1], 1.0))
        .collect();

    let mut trainer = Trainer::new(gn, config, extent, config.max_iterations, true);
    let mut maps = maps;
    let mut coverage = vec![if maps.is_empty() { 0.0 } else { mean_coverage(&maps) }];
    let mut refinement_iterations = Vec::new();
    let freeze = |model: &GaussianModel, maps: &[ConfidenceMap]| -> Result<Option<Vec<bool>>> {
        if config.static_freeze && !maps.is_empty() {
            static_mask(model, t0_views, maps, config.static_freeze_fraction).map(Some)
        } else {
            Ok(None)
        }
    };
    trainer.frozen = freeze(&trainer.model, &maps)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epochs = 0;
    let termination = 'train: loop {
        // (is_reference, index)
        let mut order: Vec<(bool, usize)> = (0..tn_views.len()).map(|i| (false, i)).collect();
        order
            .extend(maps.iter().enumerate().filter(|(_, m)| m.values.iter().any(|&c| c > 0.0)).map(|(i, _)| (true, i)));
        order.shuffle(&mut rng);
        for (reference, i) in order {
            if trainer.iteration >= config.max_iterations {
                break 'train TerminationReason::MaxIterations;
            }
            let changed = if reference {
                trainer.step(&t0_views[i], &maps[i], config.t0_supervision_weight)?
            } else {
                trainer.step(&tn_views[i], &full[i], 1.0)?
            };
            if changed && trainer.frozen.is_some() {
                trainer.frozen = freeze(&trainer.model, &maps)?;
            }
        }
        epochs += 1;
        if trainer.iteration >= config.max_iterations {
            break TerminationReason::MaxIterations;
        }
        if refine && !maps.is_empty() && epochs % config.refine_interval_epochs == 0 {
            let fine = (config.fine_grid[0], config.fine_grid[1]);
            maps =
                refine_confidence_maps(&maps, &trainer.model, t0_views, fine, config.tau_iter, &confidence_settings)?;
            let c = mean_coverage(&maps);
            let previous = *coverage.last().unwrap();
            coverage.push(c);
            refinement_iterations.push(trainer.iteration);
            // the first refinement switches to the fine grid; convergence compares refinements
            if refinement_iterations.len() >= 2 && (c - previous).abs() < config.coverage_convergence {
                break TerminationReason::CoverageConverged;
            }
            trainer.frozen = freeze(&trainer.model, &maps)?;
        }
    };
    trainer.flush_block();

    let frozen_gaussians = trainer.frozen.as_ref().map_or(0, |f| f.iter().filter(|&&x| x).count());
    let report = TrainReport {
        coverage,
        refinement_iterations,
        loss_curve: trainer.loss_curve,
        loss_block: LOSS_BLOCK,
        iterations: trainer.iteration,
        epochs,
        termination,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        final_gaussians: trainer.model.len(),
        frozen_gaussians,
        test_metrics: None,
        config: config.clone(),
    };
    Ok((trainer.model, report))
}

/// Full update: adaptation, initial confidence maps, initialization from the fused
/// cloud, then progressive training with refinement. `t0_views` are all reference
/// views; every `t0_view_stride`-th one is used.
pub fn progressive_optimize(
    g0: &GaussianModel,
    fused: &PointCloud,
    t0_views: &[View],
    tn_views: &[View],
    config: &TrainConfig,
) -> Result<(GaussianModel, TrainReport)> {
    let (selected, maps) = initial_confidence(g0, t0_views, tn_views, config)?;
    progressive_from_confidence(fused, maps, &selected, tn_views, config)
}

/// Stride-selected reference views and their initial confidence maps, from a
/// copy of `g0` adapted to the later views.
pub fn initial_confidence(
    g0: &GaussianModel,
    t0_views: &[View],
    tn_views: &[View],
    config: &TrainConfig,
) -> Result<(Vec<View>, Vec<ConfidenceMap>)> {
    config.validate()?;
    validate_views("training", tn_views)?;
    validate_views("reference", t0_views)?;
    let extent = scene_extent(&tn_views.iter().map(|v| v.camera.clone()).collect::<Vec<_>>());
    let selected = stride_views(t0_views, config.t0_view_stride);
    let adapted = adaptation_phase(g0, tn_views, config.adaptation_steps, config, extent)?;
    let grid = (config.initial_grid[0], config.initial_grid[1]);
    let maps = build_confidence_maps(&adapted, &selected, grid, config.tau, &ConfidenceSettings::from_config(config))?;
    Ok((selected, maps))
}

/// Initializes from the fused cloud and trains with progressive confidence expansion.
pub fn progressive_from_confidence(
    fused: &PointCloud,
    maps: Vec<ConfidenceMap>,
    t0_views: &[View],
    tn_views: &[View],
    config: &TrainConfig,
) -> Result<(GaussianModel, TrainReport)> {
    config.validate()?;
    validate_views("training", tn_views)?;
    let extent = scene_extent(&tn_views.iter().map(|v| v.camera.clone()).collect::<Vec<_>>());
    let gn = init_model_from_cloud(fused, extent)?;
    progressive_from_maps(gn, maps, t0_views, tn_views, config, true)
}

/// Trains from the fused cloud on the later views only.
pub fn baseline_optimize(
    fused: &PointCloud,
    tn_views: &[View],
    config: &TrainConfig,
) -> Result<(GaussianModel, TrainReport)> {
    validate_views("training", tn_views)?;
    let extent = scene_extent(&tn_views.iter().map(|v| v.camera.clone()).collect::<Vec<_>>());
    let gn = init_model_from_cloud(fused, extent)?;
    progressive_from_maps(gn, Vec::new(), &[], tn_views, config, false)
}

/// Continues training the reference model on the later views only.
pub fn finetune_optimize(
    g0: &GaussianModel,
    tn_views: &[View],
    config: &TrainConfig,
) -> Result<(GaussianModel, TrainReport)> {
    let mut model = g0.clone();
    model.reset_optimizer();
    progressive_from_maps(model, Vec::new(), &[], tn_views, config, false)
}
