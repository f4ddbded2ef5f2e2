//! Tile-binned forward rasterization and its exact analytic backward pass.
//!
//! Per pixel, splats are composited front to back:
//! `C = Σ c_i α_i T_i + T_final · background`, with `T_0 = 1`, `T_{i+1} = T_i (1 − α_i)`
//! and `α_i = min(α_max, o_i · exp(−½ dᵀ Σ₂D⁻¹ d))`. Contributions below `alpha_min`
//! are skipped and a pixel stops once transmittance drops under `transmittance_min`;
//! the backward pass replays exactly the same decisions.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::model::{sigmoid, GaussianModel, COLOR, OPACITY, POS, ROT, SCALE, STRIDE};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub transmittance_min: f64,
    /// Added to the diagonal of every screen-space covariance (px²).
    pub lowpass: f64,
    pub near: f64,
    pub tile_size: usize,
    pub parallel: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            lowpass: 0.3,
            near: 0.01,
            tile_size: 16,
            parallel: true,
        }
    }
}

/// Intermediate quantities of one Gaussian's projection, kept for the backward pass.
#[derive(Clone, Debug)]
struct Projected {
    index: usize,
    depth: f64,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    /// Inclusive-exclusive pixel rectangle `[x0, x1) × [y0, y1)`.
    rect: [usize; 4],
    p_cam: Vector3<f64>,
    jac: Matrix2x3<f64>,
    cov_cam: Matrix3<f64>,
    rot: Matrix3<f64>,
    scale: Vector3<f64>,
    quat: [f64; 4],
    quat_norm: f64,
}

/// Compact per-splat data read in the per-pixel loops.
#[derive(Clone, Copy, Debug)]
struct Hot {
    mean: [f64; 2],
    /// Conic entries `a, b, c` of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    /// Beyond this Mahalanobis distance² the alpha is below `alpha_min`.
    q_cut: f64,
    color: [f64; 3],
    rect: [u32; 4],
}

impl Hot {
    fn of(p: &Projected, settings: &RenderSettings) -> Self {
        Self {
            mean: [p.mean.x, p.mean.y],
            conic: [p.conic[(0, 0)], p.conic[(0, 1)], p.conic[(1, 1)]],
            opacity: p.opacity,
            // small margin so the cut never pre-empts the exact threshold test
            q_cut: 2.0 * (p.opacity / settings.alpha_min).ln() * (1.0 + 1e-9) + 1e-9,
            color: p.color,
            rect: p.rect.map(|v| v as u32),
        }
    }
}

fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// d R / d (w, x, y, z) for a normalized quaternion.
fn quat_matrix_derivatives(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Matrix3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Matrix3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

fn project_gaussian(raw: &[f64], index: usize, camera: &Camera, settings: &RenderSettings) -> Option<Projected> {
    let mu = Vector3::new(raw[POS], raw[POS + 1], raw[POS + 2]);
    let p_cam = camera.rotation * mu + camera.translation;
    if p_cam.z <= settings.near {
        return None;
    }
    let opacity = sigmoid(raw[OPACITY]);
    if opacity <= settings.alpha_min {
        return None;
    }
    let qr = [raw[ROT], raw[ROT + 1], raw[ROT + 2], raw[ROT + 3]];
    let quat_norm = qr.iter().map(|v| v * v).sum::<f64>().sqrt();
    if quat_norm < 1e-12 {
        return None;
    }
    let quat = qr.map(|v| v / quat_norm);
    let rot = quat_to_matrix(quat);
    let scale = Vector3::new(raw[SCALE].exp(), raw[SCALE + 1].exp(), raw[SCALE + 2].exp());
    let m = rot * Matrix3::from_diagonal(&scale);
    let cov_cam = camera.rotation * (m * m.transpose()) * camera.rotation.transpose();

    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let jac =
        Matrix2x3::new(camera.fx / z, 0.0, -camera.fx * x / (z * z), 0.0, camera.fy / z, -camera.fy * y / (z * z));
    let mut cov2d = jac * cov_cam * jac.transpose();
    cov2d[(0, 0)] += settings.lowpass;
    cov2d[(1, 1)] += settings.lowpass;
    let cov2d = (cov2d + cov2d.transpose()) * 0.5;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let mean = Vector2::new(camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy);

    // o·exp(−q/2) ≥ alpha_min only inside the ellipse q ≤ q_max, whose bounding
    // box has half-widths sqrt(q_max·Σxx) and sqrt(q_max·Σyy)
    let q_max = 2.0 * (opacity / settings.alpha_min).ln();
    let rx = (q_max * cov2d[(0, 0)]).sqrt() + 1e-6;
    let ry = (q_max * cov2d[(1, 1)]).sqrt() + 1e-6;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let x0 = (mean.x - rx).ceil().max(0.0);
    let x1 = (mean.x + rx).floor() + 1.0;
    let y0 = (mean.y - ry).ceil().max(0.0);
    let y1 = (mean.y + ry).floor() + 1.0;
    if !(x0 < w && y0 < h && x1 > 0.0 && y1 > 0.0) {
        return None;
    }
    let rect = [x0 as usize, x1.min(w) as usize, y0 as usize, y1.min(h) as usize];
    if rect[0] >= rect[1] || rect[2] >= rect[3] {
        return None;
    }
    Some(Projected {
        index,
        depth: z,
        mean,
        conic,
        opacity,
        color: [raw[COLOR], raw[COLOR + 1], raw[COLOR + 2]],
        rect,
        p_cam,
        jac,
        cov_cam,
        rot,
        scale,
        quat,
        quat_norm,
    })
}

struct Binned {
    splats: Vec<Projected>,
    hot: Vec<Hot>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    tiles_y: usize,
    tile_size: usize,
}

fn preprocess(model: &GaussianModel, camera: &Camera, settings: &RenderSettings) -> Binned {
    let mut splats: Vec<Projected> =
        (0..model.len()).filter_map(|i| project_gaussian(model.raw(i), i, camera, settings)).collect();
    splats.sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let hot: Vec<Hot> = splats.iter().map(|p| Hot::of(p, settings)).collect();
    let ts = settings.tile_size;
    let tiles_x = (camera.width as usize).div_ceil(ts);
    let tiles_y = (camera.height as usize).div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        for ty in s.rect[2] / ts..=(s.rect[3] - 1) / ts {
            for tx in s.rect[0] / ts..=(s.rect[1] - 1) / ts {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Binned { splats, hot, tiles, tiles_x, tiles_y, tile_size: ts }
}

#[inline]
fn splat_alpha(s: &Hot, px: f64, py: f64, settings: &RenderSettings) -> Option<(f64, f64, bool, f64, f64)> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let [a, b, c] = s.conic;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if q > s.q_cut {
        return None;
    }
    let g = (-0.5 * q).exp();
    let raw = s.opacity * g;
    if raw < settings.alpha_min {
        return None;
    }
    let clamped = raw > settings.alpha_max;
    Some((if clamped { settings.alpha_max } else { raw }, g, clamped, dx, dy))
}

/// Forward render plus per-pixel final transmittance.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    pub transmittance: Vec<f64>,
}

impl RenderOutput {
    /// Accumulated opacity `1 − T_final` per pixel.
    pub fn alpha(&self) -> Vec<f64> {
        self.transmittance.iter().map(|t| 1.0 - t).collect()
    }
}

fn tile_pixels(tile: usize, tiles_x: usize, ts: usize, camera: &Camera) -> (usize, usize, usize, usize) {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * ts;
    let y0 = ty * ts;
    (x0, (x0 + ts).min(camera.width as usize), y0, (y0 + ts).min(camera.height as usize))
}

fn map_tiles<T: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

pub fn render(model: &GaussianModel, camera: &Camera, background: [f64; 3]) -> Image {
    render_with(model, camera, background, &RenderSettings::default()).image
}

pub fn render_with(
    model: &GaussianModel,
    camera: &Camera,
    background: [f64; 3],
    settings: &RenderSettings,
) -> RenderOutput {
    let binned = preprocess(model, camera, settings);
    let passes =
        map_tiles(binned.tiles.len(), settings.parallel, |tile| composite_tile(&binned, tile, camera, settings, false));
    assemble(&binned, &passes, camera, background)
}

/// Colour and transmittance of one tile, optionally with every contribution in
/// compositing order.
struct TilePass {
    rgb: Vec<[f64; 3]>,
    trans: Vec<f64>,
    contribs: Vec<Contribution>,
}

fn composite_tile(binned: &Binned, tile: usize, camera: &Camera, settings: &RenderSettings, record: bool) -> TilePass {
    let (x0, x1, y0, y1) = tile_pixels(tile, binned.tiles_x, settings.tile_size, camera);
    let tw = x1 - x0;
    let n = tw * (y1 - y0);
    let mut trans = vec![1.0; n];
    let mut rgb = vec![[0.0; 3]; n];
    let mut contribs = Vec::new();
    let mut live = n;
    // splat-major over the depth-sorted list keeps each pixel's order front to back
    for (local, &k) in binned.tiles[tile].iter().enumerate() {
        let s = &binned.hot[k as usize];
        let (sx0, sx1) = ((s.rect[0] as usize).max(x0), (s.rect[1] as usize).min(x1));
        let (sy0, sy1) = ((s.rect[2] as usize).max(y0), (s.rect[3] as usize).min(y1));
        for y in sy0..sy1 {
            for x in sx0..sx1 {
                let p = (y - y0) * tw + (x - x0);
                let t = trans[p];
                if t < settings.transmittance_min {
                    continue;
                }
                let Some((alpha, g, clamped, dx, dy)) = splat_alpha(s, x as f64, y as f64, settings) else { continue };
                if record {
                    contribs.push(Contribution { local: local as u32, pixel: p as u32, clamped, alpha, g, dx, dy, t });
                }
                let wgt = alpha * t;
                for ch in 0..3 {
                    rgb[p][ch] += wgt * s.color[ch];
                }
                let t = t * (1.0 - alpha);
                trans[p] = t;
                if t < settings.transmittance_min {
                    live -= 1;
                }
            }
        }
        if live == 0 {
            break;
        }
    }
    TilePass { rgb, trans, contribs }
}

fn assemble(binned: &Binned, passes: &[TilePass], camera: &Camera, background: [f64; 3]) -> RenderOutput {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let ts = binned.tile_size;
    let mut image = Image::zeros(w, h);
    let mut transmittance = vec![0.0; w * h];
    for (tile, pass) in passes.iter().enumerate() {
        let (x0, x1, y0, y1) = tile_pixels(tile, binned.tiles_x, ts, camera);
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (y - y0) * tw + (x - x0);
                let (c, t) = (pass.rgb[p], pass.trans[p]);
                image.set_pixel(x, y, std::array::from_fn(|ch| (c[ch] + t * background[ch]).clamp(0.0, 1.0)));
                transmittance[y * w + x] = t;
            }
        }
    }
    debug_assert_eq!(binned.tiles.len(), binned.tiles_x * binned.tiles_y);
    RenderOutput { image, transmittance }
}

/// Gradients of `L = Σ loss_gradient ⊙ rendered` with respect to the raw parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// Same layout as [`GaussianModel::params`].
    pub params: Vec<f64>,
    /// ∂L/∂(u, v) of each projected centre, in pixels.
    pub screen: Vec<[f64; 2]>,
    /// Gaussians that touched at least one pixel.
    pub visible: Vec<bool>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self { params: vec![0.0; n * STRIDE], screen: vec![[0.0; 2]; n], visible: vec![false; n] }
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += factor * b;
        }
        for (a, b) in self.screen.iter_mut().zip(&other.screen) {
            a[0] += factor * b[0];
            a[1] += factor * b[1];
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= *b;
        }
    }
}

/// Screen-space gradient accumulator: u, v, conic a, b, c, opacity, rgb.
type SplatGrad = [f64; 9];

struct Contribution {
    local: u32,
    pixel: u32,
    clamped: bool,
    alpha: f64,
    g: f64,
    dx: f64,
    dy: f64,
    t: f64,
}

pub fn render_backward(
    model: &GaussianModel,
    camera: &Camera,
    background: [f64; 3],
    loss_gradient: &Image,
) -> Result<Gradients> {
    render_backward_with(model, camera, background, loss_gradient, &RenderSettings::default())
}

pub fn render_backward_with(
    model: &GaussianModel,
    camera: &Camera,
    background: [f64; 3],
    loss_gradient: &Image,
    settings: &RenderSettings,
) -> Result<Gradients> {
    check_gradient_size(loss_gradient, camera)?;
    let binned = preprocess(model, camera, settings);
    let passes =
        map_tiles(binned.tiles.len(), settings.parallel, |tile| composite_tile(&binned, tile, camera, settings, true));
    Ok(backward(model, &binned, &passes, camera, background, loss_gradient, settings))
}

/// Renders once, hands the image to `loss` for `(value, ∂L/∂image)`, and returns
/// the image, the loss value and the parameter gradients. Equivalent to
/// [`render_with`] followed by [`render_backward_with`], without repeating the
/// forward pass.
pub fn render_with_gradient<F>(
    model: &GaussianModel,
    camera: &Camera,
    background: [f64; 3],
    settings: &RenderSettings,
    loss: F,
) -> Result<(RenderOutput, f64, Gradients)>
where
    F: FnOnce(&Image) -> Result<(f64, Image)>,
{
    let binned = preprocess(model, camera, settings);
    let passes =
        map_tiles(binned.tiles.len(), settings.parallel, |tile| composite_tile(&binned, tile, camera, settings, true));
    let output = assemble(&binned, &passes, camera, background);
    let (value, loss_gradient) = loss(&output.image)?;
    check_gradient_size(&loss_gradient, camera)?;
    let grads = backward(model, &binned, &passes, camera, background, &loss_gradient, settings);
    Ok((output, value, grads))
}

fn check_gradient_size(loss_gradient: &Image, camera: &Camera) -> Result<()> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    if loss_gradient.width != w || loss_gradient.height != h {
        return Err(Error::DimensionMismatch(loss_gradient.width, loss_gradient.height, w, h));
    }
    Ok(())
}

fn backward(
    model: &GaussianModel,
    binned: &Binned,
    passes: &[TilePass],
    camera: &Camera,
    background: [f64; 3],
    loss_gradient: &Image,
    settings: &RenderSettings,
) -> Gradients {
    let ts = settings.tile_size;
    let tile_grads = map_tiles(binned.tiles.len(), settings.parallel, |tile| {
        let (x0, x1, y0, y1) = tile_pixels(tile, binned.tiles_x, ts, camera);
        let tw = x1 - x0;
        let n = tw * (y1 - y0);
        let list = &binned.tiles[tile];
        let mut acc: Vec<SplatGrad> = vec![[0.0; 9]; list.len()];
        let gpix: Vec<[f64; 3]> =
            (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).map(|(x, y)| loss_gradient.pixel(x, y)).collect();
        if gpix.iter().all(|g| *g == [0.0; 3]) {
            return acc;
        }
        // colour seen behind each splat, normalized by the transmittance just behind it
        let mut behind = vec![background; n];
        for c in passes[tile].contribs.iter().rev() {
            let s = &binned.hot[list[c.local as usize] as usize];
            let gp = gpix[c.pixel as usize];
            let bp = &mut behind[c.pixel as usize];
            let a = &mut acc[c.local as usize];
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                d_alpha += gp[ch] * c.t * (s.color[ch] - bp[ch]);
                a[6 + ch] += gp[ch] * c.alpha * c.t;
                bp[ch] = c.alpha * s.color[ch] + (1.0 - c.alpha) * bp[ch];
            }
            if c.clamped {
                continue;
            }
            a[5] += d_alpha * c.g;
            let d_q = -0.5 * c.alpha * d_alpha;
            let [ca, cb, cc] = s.conic;
            a[0] += d_q * -2.0 * (ca * c.dx + cb * c.dy);
            a[1] += d_q * -2.0 * (cb * c.dx + cc * c.dy);
            a[2] += d_q * c.dx * c.dx;
            a[3] += d_q * 2.0 * c.dx * c.dy;
            a[4] += d_q * c.dy * c.dy;
        }
        acc
    });

    let mut screen_grads: Vec<SplatGrad> = vec![[0.0; 9]; binned.splats.len()];
    let mut touched = vec![false; binned.splats.len()];
    for (tile, acc) in tile_grads.into_iter().enumerate() {
        for (local, g) in acc.into_iter().enumerate() {
            let k = binned.tiles[tile][local] as usize;
            touched[k] = true;
            for (dst, src) in screen_grads[k].iter_mut().zip(g) {
                *dst += src;
            }
        }
    }

    let mut out = Gradients::zeros(model.len());
    for ((s, sg), hit) in binned.splats.iter().zip(&screen_grads).zip(touched) {
        let dst = &mut out.params[s.index * STRIDE..(s.index + 1) * STRIDE];
        backprop_gaussian(s, camera, sg, dst);
        out.screen[s.index] = [sg[0], sg[1]];
        out.visible[s.index] = hit;
    }
    out
}

fn backprop_gaussian(s: &Projected, camera: &Camera, sg: &SplatGrad, dst: &mut [f64]) {
    let (du, dv) = (sg[0], sg[1]);
    let g_conic = Matrix2::new(sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4]);
    let g_cov2d = -(s.conic * g_conic * s.conic);
    let g_cov_cam = s.jac.transpose() * g_cov2d * s.jac;
    let g_jac = 2.0 * g_cov2d * s.jac * s.cov_cam;
    let w = &camera.rotation;
    let g_cov3 = w.transpose() * g_cov_cam * w;
    let m = s.rot * Matrix3::from_diagonal(&s.scale);
    let g_m = 2.0 * g_cov3 * m;

    for k in 0..3 {
        let d_scale: f64 = (0..3).map(|i| s.rot[(i, k)] * g_m[(i, k)]).sum();
        dst[SCALE + k] = d_scale * s.scale[k];
    }
    let g_rot = g_m * Matrix3::from_diagonal(&s.scale);
    let d_r = quat_matrix_derivatives(s.quat);
    let dq_hat: [f64; 4] = std::array::from_fn(|j| g_rot.component_mul(&d_r[j]).sum());
    let dot: f64 = (0..4).map(|j| s.quat[j] * dq_hat[j]).sum();
    for j in 0..4 {
        dst[ROT + j] = (dq_hat[j] - s.quat[j] * dot) / s.quat_norm;
    }

    let (x, y, z) = (s.p_cam.x, s.p_cam.y, s.p_cam.z);
    let (fx, fy) = (camera.fx, camera.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let dp = Vector3::new(
        du * fx / z + g_jac[(0, 2)] * (-fx / z2),
        dv * fy / z + g_jac[(1, 2)] * (-fy / z2),
        du * (-fx * x / z2)
            + dv * (-fy * y / z2)
            + g_jac[(0, 0)] * (-fx / z2)
            + g_jac[(0, 2)] * (2.0 * fx * x / z3)
            + g_jac[(1, 1)] * (-fy / z2)
            + g_jac[(1, 2)] * (2.0 * fy * y / z3),
    );
    let d_mu = w.transpose() * dp;
    dst[POS..POS + 3].copy_from_slice(d_mu.as_slice());
    dst[OPACITY] = sg[5] * s.opacity * (1.0 - s.opacity);
    dst[COLOR..COLOR + 3].copy_from_slice(&sg[6..9]);
}
