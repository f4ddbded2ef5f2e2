//! Confidence-weighted photometric loss.

use serde::{Deserialize, Serialize};

use crate::confidence::{ssim_with_gradient, ConfidenceMap, SsimSettings};
use crate::error::Result;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    /// Weight λ of the `1 − SSIM` term.
    pub ssim_weight: f64,
    /// Per-pixel L1 summed over the patch and an unweighted SSIM term.
    pub literal: bool,
    pub ssim: SsimSettings,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { ssim_weight: 0.2, literal: false, ssim: SsimSettings::default() }
    }
}

/// `L = Σ_p c_p [ mean_{k∈p} |r_k − t_k| + λ (1 − SSIM_p) ]`, where `SSIM_p` is the
/// windowed SSIM map averaged over patch `p` and the L1 mean runs over pixels and
/// channels. In literal mode the L1 term is `Σ_{k∈p} |r_k − t_k|₁` and λ = 1.
///
/// Returns the loss and `∂L/∂rendered`.
pub fn loss_init(
    rendered: &Image,
    target: &Image,
    confidence: &ConfidenceMap,
    settings: &LossSettings,
) -> Result<(f64, Image)> {
    rendered.same_size(target)?;
    let (w, h) = (rendered.width, rendered.height);
    let grid = confidence.grid(w, h)?;
    let patch_of = grid.pixel_patches();
    let mut grad = Image::zeros(w, h);
    if confidence.values.iter().all(|&c| c == 0.0) {
        return Ok((0.0, grad));
    }
    let npix: Vec<f64> = (0..grid.len()).map(|p| grid.patch_pixels(p) as f64).collect();
    let lambda = if settings.literal { 1.0 } else { settings.ssim_weight };

    let mut l1 = 0.0;
    for (k, &p) in patch_of.iter().enumerate() {
        let c = confidence.values[p];
        if c == 0.0 {
            continue;
        }
        let scale = if settings.literal { c } else { c / (3.0 * npix[p]) };
        for ch in 0..3 {
            let d = rendered.data[3 * k + ch] - target.data[3 * k + ch];
            l1 += scale * d.abs();
            grad.data[3 * k + ch] = scale * sign(d);
        }
    }

    let mut weights = vec![0.0; w * h];
    let mut total_weight = 0.0;
    for (k, &p) in patch_of.iter().enumerate() {
        let c = confidence.values[p];
        weights[k] = lambda * c / npix[p];
        total_weight += weights[k];
    }
    let (map, g_ssim) = ssim_with_gradient(rendered, target, &weights, &settings.ssim)?;
    let weighted: f64 = map.map.iter().zip(&weights).map(|(s, w)| s * w).sum();
    // Σ_p λ c_p (1 − mean_p S) = Σ_k w_k − Σ_k w_k S_k
    let ssim_term = total_weight - weighted;
    for (g, gs) in grad.data.iter_mut().zip(&g_ssim) {
        *g -= gs;
    }
    Ok((l1 + ssim_term, grad))
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h * 3).map(|_| rng.gen_range(0.1..0.9)).collect()).unwrap()
    }

    #[test]
    fn zero_confidence_annihilates() {
        let a = random_image(1, 32, 24);
        let b = random_image(2, 32, 24);
        let c = ConfidenceMap::uniform(0, 4, 4, 0.0);
        let (l, g) = loss_init(&a, &b, &c, &LossSettings::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_images_give_zero() {
        let a = random_image(3, 32, 24);
        let c = ConfidenceMap::uniform(0, 4, 4, 1.0);
        let (l, _) = loss_init(&a, &a, &c, &LossSettings::default()).unwrap();
        assert!(l.abs() < 1e-9);
    }

    #[test]
    fn constant_offset_closed_form() {
        let s = LossSettings::default();
        let t = Image::filled(24, 24, [0.4; 3]);
        let r = Image::filled(24, 24, [0.5; 3]);
        let c = ConfidenceMap::uniform(0, 1, 1, 1.0);
        let (l, _) = loss_init(&r, &t, &c, &s).unwrap();
        // zero variance everywhere: SSIM reduces to the luminance factor
        let c1 = s.ssim.c1;
        let ssim = (2.0 * 0.4 * 0.5 + c1) / (0.4 * 0.4 + 0.5 * 0.5 + c1);
        assert!((l - (0.1 + 0.2 * (1.0 - ssim))).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (w, h) = (16, 12);
        let r = random_image(5, w, h);
        let t = random_image(6, w, h);
        let values: Vec<f64> = (0..16).map(|i| (i % 3) as f64 / 2.0).collect();
        let c = ConfidenceMap::new(0, 4, 4, values, vec![0.0; 16]).unwrap();
        for literal in [false, true] {
            let s = LossSettings { literal, ..Default::default() };
            let (_, g) = loss_init(&r, &t, &c, &s).unwrap();
            let step = 1e-6;
            for k in (0..r.data.len()).step_by(5) {
                let mut p = r.clone();
                p.data[k] += step;
                let mut m = r.clone();
                m.data[k] -= step;
                let num = (loss_init(&p, &t, &c, &s).unwrap().0 - loss_init(&m, &t, &c, &s).unwrap().0) / (2.0 * step);
                assert!(
                    (num - g.data[k]).abs() < 1e-6 * num.abs().max(1.0),
                    "literal={literal} k={k}: {num} vs {}",
                    g.data[k]
                );
            }
        }
    }

    #[test]
    fn loss_is_nonnegative() {
        for seed in 0..5 {
            let r = random_image(10 + seed, 20, 20);
            let t = random_image(20 + seed, 20, 20);
            let c = ConfidenceMap::uniform(0, 2, 2, 1.0);
            assert!(loss_init(&r, &t, &c, &LossSettings::default()).unwrap().0 >= 0.0);
        }
    }
}
