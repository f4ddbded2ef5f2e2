//! Windowed SSIM and the modified, luminance-free variant.
//!
//! Statistics are taken on luma with a Gaussian window. Near the border the window
//! is truncated to the image and renormalized, so every local statistic is a proper
//! weighted average.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LUMA_WEIGHTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimSettings {
    pub window: usize,
    pub window_sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// Exponent β on the contrast term of the modified index.
    pub contrast_exponent: f64,
    pub dynamic_range: f64,
}

impl Default for SsimSettings {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

impl SsimSettings {
    /// Standard constants `c1 = (0.01 L)²`, `c2 = (0.03 L)²`.
    pub fn for_range(dynamic_range: f64) -> Self {
        Self {
            window: 11,
            window_sigma: 1.5,
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
            contrast_exponent: 0.5,
            dynamic_range,
        }
    }

    pub fn c3(&self) -> f64 {
        self.c2 / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("SSIM window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.window_sigma > 0.0) {
            return Err(Error::InvalidInput("SSIM window sigma must be positive".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidInput("SSIM constants c1, c2 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.contrast_exponent) {
            return Err(Error::InvalidInput(format!(
                "contrast exponent must lie in [0, 1], got {}",
                self.contrast_exponent
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap {
    pub width: usize,
    pub height: usize,
    pub map: Vec<f64>,
    pub mean: f64,
}

/// Separable truncated Gaussian window over a fixed image size.
struct Window {
    kernel: Vec<f64>,
    radius: usize,
    width: usize,
    height: usize,
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

impl Window {
    fn new(settings: &SsimSettings, width: usize, height: usize) -> Self {
        let radius = settings.window / 2;
        let kernel: Vec<f64> = (0..settings.window)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * settings.window_sigma * settings.window_sigma)).exp()
            })
            .collect();
        let norm = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let lo = radius.saturating_sub(i);
                    let hi = (radius + n - i).min(kernel.len());
                    1.0 / kernel[lo..hi].iter().sum::<f64>()
                })
                .collect()
        };
        let norm_x = norm(width);
        let norm_y = norm(height);
        Self { kernel, radius, width, height, norm_x, norm_y }
    }

    fn pass_x(&self, src: &[f64], scale: Option<&[f64]>) -> Vec<f64> {
        let (w, r) = (self.width, self.radius);
        let mut out = vec![0.0; src.len()];
        for y in 0..self.height {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r + 1).min(w);
                let mut acc = 0.0;
                for (k, v) in row[lo..hi].iter().enumerate() {
                    acc += self.kernel[lo + k + r - x] * v;
                }
                out[y * w + x] = match scale {
                    Some(s) => acc * s[x],
                    None => acc,
                };
            }
        }
        out
    }

    fn pass_y(&self, src: &[f64], scale: Option<&[f64]>) -> Vec<f64> {
        let (w, h, r) = (self.width, self.height, self.radius);
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            let s = scale.map_or(1.0, |s| s[y]);
            let dst = &mut out[y * w..(y + 1) * w];
            for yy in lo..hi {
                let k = self.kernel[yy + r - y] * s;
                for (d, v) in dst.iter_mut().zip(&src[yy * w..(yy + 1) * w]) {
                    *d += k * v;
                }
            }
        }
        out
    }

    /// Windowed local mean.
    fn blur(&self, src: &[f64]) -> Vec<f64> {
        self.pass_y(&self.pass_x(src, Some(&self.norm_x)), Some(&self.norm_y))
    }

    /// Adjoint of [`Self::blur`].
    fn blur_transpose(&self, src: &[f64]) -> Vec<f64> {
        let w = self.width;
        let scaled: Vec<f64> = src.iter().enumerate().map(|(i, v)| v * self.norm_y[i / w]).collect();
        let vert = self.pass_y(&scaled, None);
        let scaled: Vec<f64> = vert.iter().enumerate().map(|(i, v)| v * self.norm_x[i % w]).collect();
        self.pass_x(&scaled, None)
    }
}

struct Stats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(window: &Window, x: &[f64], y: &[f64]) -> Stats {
    let mu_x = window.blur(x);
    let mu_y = window.blur(y);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let ex2 = window.blur(&xx);
    let ey2 = window.blur(&yy);
    let exy = window.blur(&xy);
    let var_x = ex2.iter().zip(&mu_x).map(|(e, m)| (e - m * m).max(0.0)).collect();
    let var_y = ey2.iter().zip(&mu_y).map(|(e, m)| (e - m * m).max(0.0)).collect();
    let cov = exy.iter().zip(mu_x.iter().zip(&mu_y)).map(|(e, (a, b))| e - a * b).collect();
    Stats { mu_x, mu_y, var_x, var_y, cov }
}

fn prepare(x: &Image, y: &Image, settings: &SsimSettings) -> Result<(Window, Stats)> {
    x.same_size(y)?;
    settings.validate()?;
    let window = Window::new(settings, x.width, x.height);
    let s = stats(&window, &x.luma(), &y.luma());
    Ok((window, s))
}

fn finish(x: &Image, map: Vec<f64>) -> SsimMap {
    let mean = if map.is_empty() { 1.0 } else { map.iter().sum::<f64>() / map.len() as f64 };
    SsimMap { width: x.width, height: x.height, map, mean }
}

/// Standard SSIM, `l·c·s` with `c3 = c2/2`.
pub fn ssim(x: &Image, y: &Image, settings: &SsimSettings) -> Result<SsimMap> {
    let (_, s) = prepare(x, y, settings)?;
    let (c1, c2) = (settings.c1, settings.c2);
    let map = (0..s.mu_x.len())
        .map(|i| {
            let (mx, my) = (s.mu_x[i], s.mu_y[i]);
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let cs = (2.0 * s.cov[i] + c2) / (s.var_x[i] + s.var_y[i] + c2);
            l * cs
        })
        .collect();
    Ok(finish(x, map))
}

/// Modified SSIM `c^β · clamp(s, 0, 1)`: no luminance term, attenuated contrast.
pub fn mssim(x: &Image, y: &Image, settings: &SsimSettings) -> Result<SsimMap> {
    let (_, s) = prepare(x, y, settings)?;
    let (c2, c3, beta) = (settings.c2, settings.c3(), settings.contrast_exponent);
    let map = (0..s.mu_x.len())
        .map(|i| {
            let (sx, sy) = (s.var_x[i].sqrt(), s.var_y[i].sqrt());
            let c = (2.0 * sx * sy + c2) / (s.var_x[i] + s.var_y[i] + c2);
            let st = ((s.cov[i] + c3) / (sx * sy + c3)).clamp(0.0, 1.0);
            c.powf(beta) * st
        })
        .collect();
    Ok(finish(x, map))
}

/// Standard SSIM map together with `∂(Σ_p weights_p · map_p)/∂x` as an RGB buffer
/// laid out like `x.data`.
pub fn ssim_with_gradient(
    x: &Image,
    y: &Image,
    weights: &[f64],
    settings: &SsimSettings,
) -> Result<(SsimMap, Vec<f64>)> {
    let (window, s) = prepare(x, y, settings)?;
    if weights.len() != s.mu_x.len() {
        return Err(Error::LengthMismatch { left: weights.len(), right: s.mu_x.len() });
    }
    let (c1, c2) = (settings.c1, settings.c2);
    let n = s.mu_x.len();
    let mut map = vec![0.0; n];
    let mut a_mu = vec![0.0; n];
    let mut a_xx = vec![0.0; n];
    let mut a_xy = vec![0.0; n];
    for i in 0..n {
        let (mx, my) = (s.mu_x[i], s.mu_y[i]);
        let (n1, d1) = (2.0 * mx * my + c1, mx * mx + my * my + c1);
        let (n2, d2) = (2.0 * s.cov[i] + c2, s.var_x[i] + s.var_y[i] + c2);
        let (l, cs) = (n1 / d1, n2 / d2);
        map[i] = l * cs;
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let dl_dmx = (2.0 * my - 2.0 * mx * l) / d1;
        let dcs_dvar = -cs / d2;
        let dcs_dcov = 2.0 / d2;
        let d_var = w * l * dcs_dvar;
        let d_cov = w * l * dcs_dcov;
        // var_x = E[x²] − μx², cov = E[xy] − μxμy
        a_mu[i] = w * dl_dmx * cs - 2.0 * mx * d_var - my * d_cov;
        a_xx[i] = d_var;
        a_xy[i] = d_cov;
    }
    let g_mu = window.blur_transpose(&a_mu);
    let g_xx = window.blur_transpose(&a_xx);
    let g_xy = window.blur_transpose(&a_xy);
    let lx = x.luma();
    let ly = y.luma();
    let mut grad = vec![0.0; n * 3];
    for i in 0..n {
        let g = g_mu[i] + 2.0 * lx[i] * g_xx[i] + ly[i] * g_xy[i];
        for (c, wc) in LUMA_WEIGHTS.iter().enumerate() {
            grad[3 * i + c] = g * wc;
        }
    }
    Ok((finish(x, map), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let base = 0.5 + 0.3 * ((x as f64) * 0.4).sin() * ((y as f64) * 0.3).cos();
                let n: f64 = rng.gen_range(-0.15..0.15);
                img.set_pixel(x, y, [base + n, base - 0.5 * n, (base + n * 0.3).clamp(0.0, 1.0)]);
            }
        }
        img
    }

    #[test]
    fn window_weights_sum_to_one() {
        let s = SsimSettings::default();
        let win = Window::new(&s, 20, 13);
        let ones = vec![1.0; 20 * 13];
        for v in win.blur(&ones) {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let s = SsimSettings::default();
        let (w, h) = (17, 23);
        let win = Window::new(&s, w, h);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = win.blur(&a).iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(win.blur_transpose(&b)).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn identity_is_one() {
        let x = textured(2, 40, 30);
        let s = SsimSettings::default();
        assert!((ssim(&x, &x, &s).unwrap().mean - 1.0).abs() < 1e-9);
        assert!((mssim(&x, &x, &s).unwrap().mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_images_closed_form() {
        let s = SsimSettings::default();
        let a = Image::filled(24, 24, [0.2; 3]);
        let b = Image::filled(24, 24, [0.4; 3]);
        // luma of a grey pixel is the grey value up to round-off
        let (la, lb) = (a.luma()[0], b.luma()[0]);
        let expect = (2.0 * la * lb + s.c1) / (la * la + lb * lb + s.c1);
        let expect_literal = (2.0 * 0.2 * 0.4 + s.c1) / (0.2f64.powi(2) + 0.4f64.powi(2) + s.c1);
        let got = ssim(&a, &b, &s).unwrap();
        assert!(got.map.iter().all(|v| (v - expect).abs() < 1e-12));
        assert!((got.mean - expect_literal).abs() < 1e-9);
    }

    #[test]
    fn anti_correlated_is_low() {
        let x = textured(3, 40, 30);
        let y = x.map(|v| 1.0 - v);
        assert!(ssim(&x, &y, &SsimSettings::default()).unwrap().mean < 0.5);
    }

    #[test]
    fn offset_invariance_of_modified_index() {
        let s = SsimSettings::default();
        let x = textured(4, 40, 30);
        let y = x.map(|v| v + 0.1);
        assert!((mssim(&x, &y, &s).unwrap().mean - 1.0).abs() < 1e-9);
        assert!(ssim(&x, &y, &s).unwrap().mean < 1.0 - 1e-6);
    }

    #[test]
    fn contrast_scaling_hurts_standard_more() {
        let s = SsimSettings::default();
        let x = textured(5, 40, 30);
        let y = x.map(|v| 1.5 * v);
        assert!(mssim(&x, &y, &s).unwrap().mean > ssim(&x, &y, &s).unwrap().mean);
    }

    #[test]
    fn modified_map_is_bounded() {
        let s = SsimSettings::default();
        let x = textured(6, 30, 30);
        let y = textured(7, 30, 30).map(|v| 1.0 - v);
        let m = mssim(&x, &y, &s).unwrap();
        assert!(m.map.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn dimension_mismatch() {
        let s = SsimSettings::default();
        assert!(matches!(ssim(&Image::zeros(20, 20), &Image::zeros(21, 20), &s), Err(Error::DimensionMismatch(..))));
    }

    #[test]
    fn invalid_settings_rejected() {
        for bad in [
            SsimSettings { window: 4, ..Default::default() },
            SsimSettings { window: 1, ..Default::default() },
            SsimSettings { c1: 0.0, ..Default::default() },
            SsimSettings { contrast_exponent: 1.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = SsimSettings::default();
        let (w, h) = (14, 12);
        let x = textured(8, w, h);
        let y = textured(9, w, h);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let weights: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let objective =
            |img: &Image| -> f64 { ssim(img, &y, &s).unwrap().map.iter().zip(&weights).map(|(a, b)| a * b).sum() };
        let (_, grad) = ssim_with_gradient(&x, &y, &weights, &s).unwrap();
        let step = 1e-6;
        for k in (0..x.data.len()).step_by(7) {
            let mut p = x.clone();
            p.data[k] += step;
            let mut m = x.clone();
            m.data[k] -= step;
            let numeric = (objective(&p) - objective(&m)) / (2.0 * step);
            assert!((numeric - grad[k]).abs() < 1e-6 * numeric.abs().max(1.0), "{k}: {numeric} vs {}", grad[k]);
        }
    }
}
