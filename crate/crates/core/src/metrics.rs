//! Image-quality metrics for held-out views.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::confidence::{ssim, SsimSettings};
use crate::error::{Error, Result};
use crate::image::{Image, View};
use crate::splat::{render_with, GaussianModel, RenderSettings};

/// `10·log₁₀(1/MSE)` for images in `[0, 1]`; `None` when the images are identical.
pub fn psnr(a: &Image, b: &Image) -> Result<Option<f64>> {
    let mse = a.mse(b)?;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> Option<f64> {
    (mse > 0.0).then(|| 10.0 * (1.0 / mse).log10())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetric {
    pub view_id: u32,
    pub mse: f64,
    /// Absent when the render matches exactly.
    pub psnr: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub views: Vec<ViewMetric>,
    /// Mean over views with finite PSNR; `None` if every view is exact.
    pub mean_psnr: Option<f64>,
    pub any_infinite: bool,
    pub mean_ssim: f64,
    pub seconds: f64,
}

impl EvalResult {
    pub fn from_views(views: Vec<ViewMetric>, seconds: f64) -> Self {
        let finite: Vec<f64> = views.iter().filter_map(|v| v.psnr).collect();
        let mean_psnr = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        let mean_ssim =
            if views.is_empty() { 0.0 } else { views.iter().map(|v| v.ssim).sum::<f64>() / views.len() as f64 };
        Self { any_infinite: views.iter().any(|v| v.psnr_infinite), views, mean_psnr, mean_ssim, seconds }
    }
}

pub fn compare(view_id: u32, rendered: &Image, target: &Image, settings: &SsimSettings) -> Result<ViewMetric> {
    let mse = rendered.mse(target)?;
    let psnr = psnr_from_mse(mse);
    Ok(ViewMetric { view_id, mse, psnr, psnr_infinite: psnr.is_none(), ssim: ssim(rendered, target, settings)?.mean })
}

/// Renders every view and scores it against its image.
pub fn evaluate(
    model: &GaussianModel,
    views: &[View],
    background: [f64; 3],
    render: &RenderSettings,
    ssim_settings: &SsimSettings,
) -> Result<EvalResult> {
    if views.is_empty() {
        return Err(Error::Precondition("evaluation needs at least one view".into()));
    }
    let start = Instant::now();
    let metrics = views
        .iter()
        .map(|v| {
            let img = render_with(model, &v.camera, background, render).image;
            compare(v.camera.id, &img, &v.image, ssim_settings)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_views(metrics, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        assert!((psnr_from_mse(0.01).unwrap() - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(0.0001).unwrap() - 40.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(0.0), None);
        let a = Image::filled(16, 16, [0.5; 3]);
        let b = Image::filled(16, 16, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap().unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn identical_images_flagged() {
        let a = Image::filled(16, 16, [0.3, 0.2, 0.9]);
        let m = compare(4, &a, &a, &SsimSettings::default()).unwrap();
        assert!(m.psnr_infinite);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        let r = EvalResult::from_views(vec![m], 0.0);
        assert!(r.any_infinite);
        assert_eq!(r.mean_psnr, None);
    }
}
