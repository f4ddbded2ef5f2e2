//! Floating point RGB images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Camera;

/// Row-major RGB image with `f64` channels.
///
/// Renderer output always lies in `[0, 1]`; other producers (test fixtures,
/// loss-gradient images) may hold arbitrary values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// A posed image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

impl View {
    pub fn new(camera: Camera, image: Image) -> Result<Self> {
        if image.width != camera.width as usize || image.height != camera.height as usize {
            return Err(Error::DimensionMismatch(
                image.width,
                image.height,
                camera.width as usize,
                camera.height as usize,
            ));
        }
        Ok(Self { camera, image })
    }
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch { left: data.len(), right: width * height * 3 });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.same_size(other)?;
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.data.len() as f64)
    }

    /// 8-bit sRGB-agnostic quantization (values are stored as-is, clamped).
    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer sized from image")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Self { width: img.width() as usize, height: img.height() as usize, data }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        encode_png(path, &self.to_rgb8())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Rounds every channel to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> Image {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }
}

/// Grayscale heat map (0 → black, 1 → white) written as PNG.
pub fn save_gray_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let bytes = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::InvalidInput("heat map buffer size mismatch".into()))?;
    encode_png(path, &img)
}

/// PNG-encodes in memory and writes atomically.
fn encode_png<P, C>(path: &Path, img: &image::ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    crate::io::write_atomic(path, &bytes.into_inner())
}

pub fn load_gray_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    let g = img.to_luma8();
    Ok((g.width() as usize, g.height() as usize, g.as_raw().iter().map(|&b| b as f64 / 255.0).collect()))
}
