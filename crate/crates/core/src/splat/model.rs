//! Gaussian parameters, optimizer moments and the model PLY format.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ply::{self, PlyFormat, ScalarType, VertexTable};

/// Scalars per Gaussian in the flat parameter layout.
pub const STRIDE: usize = 14;
pub const POS: usize = 0;
pub const ROT: usize = 3;
pub const SCALE: usize = 7;
pub const OPACITY: usize = 10;
pub const COLOR: usize = 11;

const PLY_NAMES: [&str; STRIDE] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity", "red", "green",
    "blue",
];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One splat in natural units.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn isotropic(position: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self { position, rotation: UnitQuaternion::identity(), scale: Vector3::repeat(scale), opacity, color }
    }

    fn to_raw(&self) -> [f64; STRIDE] {
        let q = self.rotation.quaternion();
        let mut raw = [0.0; STRIDE];
        raw[POS..POS + 3].copy_from_slice(self.position.as_slice());
        raw[ROT..ROT + 4].copy_from_slice(&[q.w, q.i, q.j, q.k]);
        for k in 0..3 {
            raw[SCALE + k] = self.scale[k].ln();
        }
        raw[OPACITY] = logit(self.opacity.clamp(1e-9, 1.0 - 1e-9));
        raw[COLOR..COLOR + 3].copy_from_slice(self.color.as_slice());
        raw
    }
}

/// Adam first/second moments, laid out like the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Flat, optimizer-ready Gaussian model.
///
/// Per Gaussian the layout is `[position(3), quaternion wxyz(4), log-scale(3),
/// opacity logit(1), rgb(3)]`. The quaternion is stored raw and normalized on use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianModel {
    params: Vec<f64>,
    pub moments: Moments,
    pub step: u64,
}

/// Per-parameter-group learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl LearningRates {
    fn for_slot(&self, slot: usize) -> f64 {
        match slot {
            POS..=2 => self.position,
            ROT..=6 => self.rotation,
            SCALE..=9 => self.scale,
            OPACITY => self.opacity,
            _ => self.color,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-15 }
    }
}

impl GaussianModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gaussians: &[Gaussian3D]) -> Self {
        let mut model = Self::new();
        for g in gaussians {
            model.push(g);
        }
        model
    }

    /// Builds a model from a raw parameter vector; moments start at zero.
    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if !params.len().is_multiple_of(STRIDE) {
            return Err(Error::InvalidInput(format!(
                "parameter vector length {} is not a multiple of {STRIDE}",
                params.len()
            )));
        }
        let n = params.len();
        Ok(Self { params, moments: Moments { first: vec![0.0; n], second: vec![0.0; n] }, step: 0 })
    }

    pub fn push(&mut self, g: &Gaussian3D) {
        self.push_raw(&g.to_raw());
    }

    pub fn push_raw(&mut self, raw: &[f64; STRIDE]) {
        self.params.extend_from_slice(raw);
        self.moments.first.extend_from_slice(&[0.0; STRIDE]);
        self.moments.second.extend_from_slice(&[0.0; STRIDE]);
    }

    pub fn len(&self) -> usize {
        self.params.len() / STRIDE
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn raw(&self, i: usize) -> &[f64] {
        &self.params[i * STRIDE..(i + 1) * STRIDE]
    }

    pub fn raw_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.params[i * STRIDE..(i + 1) * STRIDE]
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.raw(i)[POS..POS + 3])
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.raw(i)[SCALE..SCALE + 3]).map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.raw(i)[OPACITY])
    }

    pub fn color(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.raw(i)[COLOR..COLOR + 3])
    }

    pub fn rotation(&self, i: usize) -> UnitQuaternion<f64> {
        let r = &self.raw(i)[ROT..ROT + 4];
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(r[0], r[1], r[2], r[3]))
    }

    pub fn gaussian(&self, i: usize) -> Gaussian3D {
        Gaussian3D {
            position: self.position(i),
            rotation: self.rotation(i),
            scale: self.scale(i),
            opacity: self.opacity(i),
            color: self.color(i),
        }
    }

    pub fn gaussians(&self) -> Vec<Gaussian3D> {
        (0..self.len()).map(|i| self.gaussian(i)).collect()
    }

    /// Keeps the Gaussians whose `keep` flag is set, with their moments.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let filter = |v: &mut Vec<f64>| {
            let mut out = Vec::with_capacity(v.len());
            for (chunk, &k) in v.chunks_exact(STRIDE).zip(keep) {
                if k {
                    out.extend_from_slice(chunk);
                }
            }
            *v = out;
        };
        filter(&mut self.params);
        filter(&mut self.moments.first);
        filter(&mut self.moments.second);
    }

    /// Moments are consistent with parameters.
    pub fn is_consistent(&self) -> bool {
        self.params.len().is_multiple_of(STRIDE)
            && self.moments.first.len() == self.params.len()
            && self.moments.second.len() == self.params.len()
    }

    pub fn param_norm(&self) -> f64 {
        self.params.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// One Adam update. Gaussians flagged in `frozen` are left untouched.
    /// Zeroes the Adam moments and step counter.
    pub fn reset_optimizer(&mut self) {
        let n = self.params.len();
        self.moments = Moments { first: vec![0.0; n], second: vec![0.0; n] };
        self.step = 0;
    }

    pub fn adam_step(&mut self, grads: &[f64], lrs: &LearningRates, adam: &AdamSettings, frozen: Option<&[bool]>) {
        assert_eq!(grads.len(), self.params.len());
        assert_eq!(self.moments.first.len(), self.params.len());
        assert_eq!(self.moments.second.len(), self.params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - adam.beta1.powi(t);
        let bc2 = 1.0 - adam.beta2.powi(t);
        for (i, ((p, g), (m, v))) in self
            .params
            .iter_mut()
            .zip(grads)
            .zip(self.moments.first.iter_mut().zip(self.moments.second.iter_mut()))
            .enumerate()
        {
            if frozen.is_some_and(|f| f[i / STRIDE]) {
                continue;
            }
            *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
            *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
            let slot = i % STRIDE;
            let lr = lrs.for_slot(slot);
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + adam.epsilon);
            if slot >= COLOR {
                *p = p.clamp(0.0, 1.0);
            }
        }
    }

    pub fn to_vertex_table(&self) -> VertexTable {
        VertexTable {
            properties: PLY_NAMES.iter().map(|n| (n.to_string(), ScalarType::F64)).collect(),
            rows: self.params.chunks_exact(STRIDE).map(|c| c.to_vec()).collect(),
        }
    }

    /// Writes the raw parameters (log-scales, opacity logits) as doubles.
    pub fn save_ply(&self, path: &Path) -> Result<()> {
        ply::write_vertices(path, &self.to_vertex_table(), PlyFormat::BinaryLittleEndian)
    }

    pub fn load_ply(path: &Path) -> Result<Self> {
        let table = ply::read_vertices(path)?;
        let cols = PLY_NAMES.iter().map(|n| table.require(n)).collect::<Result<Vec<_>>>()?;
        let mut params = Vec::with_capacity(table.rows.len() * STRIDE);
        for row in &table.rows {
            params.extend(cols.iter().map(|&c| row[c]));
        }
        Self::from_params(params)
    }
}
