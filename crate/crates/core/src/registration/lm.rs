//! Levenberg–Marquardt refinement of a similarity from 2D–3D reprojection residuals.
//!
//! State is a rotation (unit quaternion, renormalized each step), a log-scale and a
//! translation. Steps perturb the rotation on the left, `R ← exp(ω)·R`.

use std::collections::HashMap;

use nalgebra::{Matrix2x3, SMatrix, SVector, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Match2D3D, PointCloud, SimilarityTransform, BEHIND_CAMERA_DEPTH};

type Mat7 = SMatrix<f64, 7, 7>;
type Vec7 = SVector<f64, 7>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmSettings {
    pub initial_lambda: f64,
    pub max_iterations: usize,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Huber threshold in pixels; `None` keeps the plain squared error.
    pub huber_delta: Option<f64>,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            max_iterations: 100,
            relative_cost_tolerance: 1e-10,
            gradient_tolerance: 1e-12,
            huber_delta: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub mean_error_before: f64,
    pub mean_error_after: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

struct Problem<'a> {
    points: Vec<Vector3<f64>>,
    pixels: Vec<Vector2<f64>>,
    cameras: Vec<&'a Camera>,
    huber: Option<f64>,
}

struct State {
    rotation: UnitQuaternion<f64>,
    log_scale: f64,
    translation: Vector3<f64>,
}

impl State {
    fn from_similarity(s: &SimilarityTransform) -> Self {
        Self { rotation: s.quaternion(), log_scale: s.scale.ln(), translation: s.translation }
    }

    fn to_similarity(&self) -> SimilarityTransform {
        SimilarityTransform::from_parts(self.log_scale.exp(), &self.rotation, self.translation)
    }

    fn stepped(&self, delta: &Vec7) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let rotation = UnitQuaternion::from_scaled_axis(omega) * self.rotation;
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            log_scale: self.log_scale + delta[3],
            translation: self.translation + Vector3::new(delta[4], delta[5], delta[6]),
        }
    }
}

impl Problem<'_> {
    fn robust(&self, sq: f64) -> f64 {
        match self.huber {
            Some(d) if sq > d * d => 2.0 * d * sq.sqrt() - d * d,
            _ => sq,
        }
    }

    fn weight(&self, sq: f64) -> f64 {
        match self.huber {
            Some(d) if sq > d * d => d / sq.sqrt(),
            _ => 1.0,
        }
    }

    /// Residual of match `i`, or `None` behind the camera.
    fn residual(&self, state: &State, i: usize) -> Option<(Vector2<f64>, Vector3<f64>, Vector3<f64>)> {
        let rotated = state.log_scale.exp() * (state.rotation * self.points[i]);
        let world = rotated + state.translation;
        let cam = self.cameras[i];
        let pc = cam.rotation * world + cam.translation;
        if pc.z <= BEHIND_CAMERA_DEPTH {
            return None;
        }
        let proj = Vector2::new(cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy);
        Some((proj - self.pixels[i], pc, rotated))
    }

    /// Robust cost over `active` matches; infinite when any of them left the camera's front.
    fn cost(&self, state: &State, active: &[usize]) -> f64 {
        let mut total = 0.0;
        for &i in active {
            match self.residual(state, i) {
                Some((r, ..)) => total += self.robust(r.norm_squared()),
                None => return f64::INFINITY,
            }
        }
        total
    }

    fn mean_error(&self, state: &State, active: &[usize]) -> f64 {
        let sum: f64 = active.iter().filter_map(|&i| self.residual(state, i)).map(|(r, ..)| r.norm()).sum();
        sum / active.len() as f64
    }

    fn normal_equations(&self, state: &State, active: &[usize]) -> (Mat7, Vec7) {
        let mut h = Mat7::zeros();
        let mut g = Vec7::zeros();
        for &i in active {
            let Some((r, pc, rotated)) = self.residual(state, i) else { continue };
            let cam = self.cameras[i];
            let z = pc.z;
            let d_proj =
                Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * pc.x / (z * z), 0.0, cam.fy / z, -cam.fy * pc.y / (z * z))
                    * cam.rotation;
            let mut jac = SMatrix::<f64, 2, 7>::zeros();
            // ∂world/∂ω = −[rotated]×
            let skew = -rotated.cross_matrix();
            jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_proj * skew));
            jac.fixed_view_mut::<2, 1>(0, 3).copy_from(&(d_proj * rotated));
            jac.fixed_view_mut::<2, 3>(0, 4).copy_from(&d_proj);
            let w = self.weight(r.norm_squared());
            h += w * jac.transpose() * jac;
            g += w * jac.transpose() * r;
        }
        (h, g)
    }
}

/// Minimizes `Σ ‖project(cam, s·R·p + t) − pixel‖²` over the similarity.
///
/// Matches that start behind their camera are skipped; a step that pushes any
/// remaining match behind its camera is rejected.
pub fn refine_similarity_lm(
    initial: &SimilarityTransform,
    dense_cloud: &PointCloud,
    matches: &[Match2D3D],
    cameras_t0: &[Camera],
    settings: &LmSettings,
) -> Result<(SimilarityTransform, LmReport)> {
    if matches.is_empty() {
        return Err(Error::NoMatches);
    }
    let by_id: HashMap<u32, &Camera> = cameras_t0.iter().map(|c| (c.id, c)).collect();
    let mut problem =
        Problem { points: Vec::new(), pixels: Vec::new(), cameras: Vec::new(), huber: settings.huber_delta };
    for m in matches {
        let cam = by_id
            .get(&m.view_id)
            .ok_or_else(|| Error::InvalidInput(format!("match references unknown view {}", m.view_id)))?;
        let point = dense_cloud.points.get(m.point_index).ok_or_else(|| {
            Error::InvalidInput(format!("match point index {} out of range ({})", m.point_index, dense_cloud.len()))
        })?;
        problem.points.push(*point);
        problem.pixels.push(Vector2::new(m.pixel[0], m.pixel[1]));
        problem.cameras.push(cam);
    }

    let mut state = State::from_similarity(initial);
    let active: Vec<usize> = (0..matches.len()).filter(|&i| problem.residual(&state, i).is_some()).collect();
    if active.is_empty() {
        return Err(Error::NonFiniteResidual);
    }
    let mut cost = problem.cost(&state, &active);
    if !cost.is_finite() {
        return Err(Error::NonFiniteResidual);
    }
    let mut report = LmReport {
        initial_cost: cost,
        mean_error_before: problem.mean_error(&state, &active),
        cost_history: vec![cost],
        ..Default::default()
    };
    let mut lambda = settings.initial_lambda;
    'outer: for iteration in 0..settings.max_iterations {
        report.iterations = iteration + 1;
        if cost == 0.0 {
            break;
        }
        let (h, g) = problem.normal_equations(&state, &active);
        if g.norm() < settings.gradient_tolerance {
            break;
        }
        let diag_floor = 1e-12 * h.diagonal().max().max(1e-300);
        loop {
            let mut damped = h;
            for k in 0..7 {
                damped[(k, k)] += lambda * h[(k, k)].max(diag_floor);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-g)));
            if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let trial = state.stepped(&step);
                let trial_cost = problem.cost(&trial, &active);
                if trial_cost < cost {
                    let rel = (cost - trial_cost) / cost;
                    state = trial;
                    cost = trial_cost;
                    report.cost_history.push(cost);
                    lambda = (lambda / 10.0).max(1e-15);
                    if rel < settings.relative_cost_tolerance {
                        break 'outer;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break 'outer;
            }
        }
    }
    report.final_cost = cost;
    report.mean_error_after = problem.mean_error(&state, &active);
    Ok((state.to_similarity(), report))
}
