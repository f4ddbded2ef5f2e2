//! Adaptive density control: clone, split and prune.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{GaussianModel, POS, SCALE, STRIDE};
use super::render::Gradients;
use crate::geometry::Camera;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyThresholds {
    /// Mean view-space positional gradient (NDC units) above which a Gaussian is densified.
    pub grad_threshold: f64,
    /// Gaussians larger than this fraction of the scene extent are split, smaller ones cloned.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    /// Gaussians whose largest axis exceeds this fraction of the extent are pruned.
    pub max_scale_fraction: f64,
    pub max_gaussians: usize,
    pub interval: usize,
    pub start: usize,
    pub end: usize,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_scale_fraction: 0.1,
            max_gaussians: 5_000,
            interval: 100,
            start: 500,
            end: 3500,
        }
    }
}

impl DensifyThresholds {
    /// Whether adaptive control runs after optimizer step `step` (1-based).
    pub fn is_due(&self, step: usize) -> bool {
        step >= self.start && step <= self.end && self.interval > 0 && step.is_multiple_of(self.interval)
    }
}

/// Running sum of positional-gradient norms per Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradientStats {
    pub fn new(n: usize) -> Self {
        Self { accum: vec![0.0; n], count: vec![0; n] }
    }

    pub fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }

    /// Accumulates one view's gradients, converting pixel gradients to NDC.
    pub fn record(&mut self, grads: &Gradients, camera: &Camera) {
        let hw = 0.5 * camera.width as f64;
        let hh = 0.5 * camera.height as f64;
        for (i, (s, &vis)) in grads.screen.iter().zip(&grads.visible).enumerate() {
            if vis {
                self.accum[i] += (s[0] * hw).hypot(s[1] * hh);
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

/// Clones small high-gradient Gaussians, splits large ones, then prunes
/// transparent or oversized ones. New Gaussians start with zero moments.
pub fn densify_and_prune(
    model: &GaussianModel,
    stats: &GradientStats,
    thresholds: &DensifyThresholds,
    extent: f64,
    rng: &mut impl Rng,
) -> GaussianModel {
    assert_eq!(stats.accum.len(), model.len());
    let mut candidates: Vec<usize> =
        (0..model.len()).filter(|&i| stats.mean(i) >= thresholds.grad_threshold && stats.count[i] > 0).collect();
    let budget = thresholds.max_gaussians.saturating_sub(model.len());
    if candidates.len() > budget {
        candidates.sort_by(|&a, &b| stats.mean(b).total_cmp(&stats.mean(a)).then(a.cmp(&b)));
        candidates.truncate(budget);
        candidates.sort_unstable();
    }

    let mut out = model.clone();
    let mut keep = vec![true; model.len()];
    for &i in &candidates {
        let scale = model.scale(i);
        let raw: [f64; STRIDE] = model.raw(i).try_into().unwrap();
        if scale.max() <= thresholds.percent_dense * extent {
            out.push_raw(&raw);
        } else {
            let rot = model.rotation(i);
            for _ in 0..2 {
                let n =
                    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                let offset = rot * scale.component_mul(&n);
                let mut child = raw;
                for k in 0..3 {
                    child[POS + k] += offset[k];
                    child[SCALE + k] = (scale[k] / 1.6).ln();
                }
                out.push_raw(&child);
            }
            keep[i] = false;
        }
    }
    keep.resize(out.len(), true);
    for (i, k) in keep.iter_mut().enumerate() {
        if out.opacity(i) < thresholds.prune_opacity || out.scale(i).max() > thresholds.max_scale_fraction * extent {
            *k = false;
        }
    }
    out.retain(&keep);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::model::Gaussian3D;
    use rand::SeedableRng;

    fn model() -> GaussianModel {
        GaussianModel::from_gaussians(&[
            Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 0.0), 0.001, 0.5, Vector3::repeat(0.5)),
            Gaussian3D::isotropic(Vector3::new(1.0, 0.0, 0.0), 0.05, 0.5, Vector3::repeat(0.5)),
            Gaussian3D::isotropic(Vector3::new(2.0, 0.0, 0.0), 0.01, 0.001, Vector3::repeat(0.5)),
        ])
    }

    #[test]
    fn below_threshold_only_prunes() {
        let m = model();
        let stats = GradientStats { accum: vec![1e-5; 3], count: vec![1; 3] };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = densify_and_prune(&m, &stats, &DensifyThresholds::default(), 1.0, &mut rng);
        assert_eq!(out.len(), 2);
        assert!(out.is_consistent());
        assert_eq!(out.raw(0), m.raw(0));
        assert_eq!(out.raw(1), m.raw(1));
    }

    #[test]
    fn clone_and_split() {
        let mut m = model();
        m.moments.first[0] = 3.0;
        let stats = GradientStats { accum: vec![1.0, 1.0, 0.0], count: vec![1, 1, 0] };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = densify_and_prune(&m, &stats, &DensifyThresholds::default(), 1.0, &mut rng);
        // original small + its clone + two split children; the split parent and the faint one go
        assert_eq!(out.len(), 4);
        assert!(out.is_consistent());
        assert_eq!(out.moments.first[0], 3.0);
        assert_eq!(out.raw(0), out.raw(1));
        let child_scale = out.scale(2).x;
        assert!((child_scale - 0.05 / 1.6).abs() < 1e-12);
        assert!(out.moments.first[STRIDE..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn respects_capacity() {
        let m = model();
        let stats = GradientStats { accum: vec![1.0, 2.0, 0.0], count: vec![1, 1, 0] };
        let thresholds = DensifyThresholds { max_gaussians: 4, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = densify_and_prune(&m, &stats, &thresholds, 1.0, &mut rng);
        // only the highest-gradient candidate (index 1, split) fits the budget of one
        assert_eq!(out.len(), 3);
    }
}
