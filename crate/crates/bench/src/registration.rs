//! Seeded alignment problems with a known answer: a reference cloud and cameras, and a
//! later-frame dense cloud related to them by a random similarity.

use std::f64::consts::PI;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempogs_core::geometry::{Camera, Match2D3D, PointCloud, SeedCorrespondence, SimilarityTransform};
use tempogs_core::registration::{align, AlignInputs, AlignSettings};
use tempogs_core::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemSpec {
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    /// Largest translation, as a fraction of the scene extent.
    pub max_translation: f64,
    /// Standard deviation of the pixel noise on 2D matches.
    pub match_noise_px: f64,
    /// Standard deviation of the dense-cloud noise, as a fraction of the scene extent.
    pub cloud_noise: f64,
    pub reference_points: usize,
    /// Fraction of the reference surface also present in the dense cloud.
    pub overlap: f64,
    pub matches: usize,
    pub seeds: usize,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            max_rotation_deg: 20.0,
            scale_range: (0.8, 1.25),
            max_translation: 0.3,
            match_noise_px: 0.0,
            cloud_noise: 0.0,
            reference_points: 3000,
            overlap: 0.6,
            matches: 300,
            seeds: 8,
        }
    }
}

pub struct AlignmentProblem {
    pub reference_cloud: PointCloud,
    pub reference_cameras: Vec<Camera>,
    /// Later-frame cloud; `truth` maps it into the reference frame.
    pub dense_cloud: PointCloud,
    pub matches: Vec<Match2D3D>,
    pub seeds: Vec<SeedCorrespondence>,
    pub truth: SimilarityTransform,
    pub extent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentError {
    pub rotation_deg: f64,
    /// Translation error as a fraction of the scene extent.
    pub translation: f64,
    /// `|ŝ/s − 1|`.
    pub scale: f64,
}

/// Points on the faces of a few boxes standing on a floor plate.
fn surface_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    let boxes = [
        (Vector3::new(0.0, 0.0, -0.05), Vector3::new(1.6, 1.2, 0.05)),
        (Vector3::new(-0.4, -0.2, 0.2), Vector3::new(0.3, 0.25, 0.2)),
        (Vector3::new(0.35, 0.25, 0.3), Vector3::new(0.2, 0.3, 0.3)),
        (Vector3::new(0.5, -0.35, 0.1), Vector3::new(0.15, 0.15, 0.1)),
        (Vector3::new(-0.2, 0.4, 0.15), Vector3::new(0.25, 0.1, 0.15)),
    ];
    (0..n)
        .map(|_| {
            let (center, half) = boxes[rng.gen_range(0..boxes.len())];
            let axis = rng.gen_range(0..3);
            let mut p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            p[axis] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            center + p.component_mul(&half)
        })
        .collect()
}

fn ring_cameras() -> Result<Vec<Camera>> {
    (0..12)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 12.0;
            let eye = Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), if i % 2 == 0 { 1.2 } else { 2.4 });
            Camera::look_at(i, 128, 96, 110.0, eye, Vector3::new(0.0, 0.0, 0.15), Vector3::z())
        })
        .collect()
}

fn random_similarity(rng: &mut ChaCha8Rng, spec: &ProblemSpec, extent: f64) -> SimilarityTransform {
    let axis =
        Unit::new_normalize(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let angle = rng.gen_range(0.0..=spec.max_rotation_deg).to_radians();
    let (lo, hi) = spec.scale_range;
    let scale = (rng.gen_range(lo.ln()..=hi.ln())).exp();
    let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
    let t = dir * rng.gen_range(0.0..=spec.max_translation) * extent;
    SimilarityTransform::from_parts(scale, &UnitQuaternion::from_axis_angle(&axis, angle), t)
}

pub fn alignment_problem(seed: u64, spec: &ProblemSpec) -> Result<AlignmentProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference_cloud = PointCloud::from_points(surface_points(&mut rng, spec.reference_points));
    let extent = reference_cloud.bbox_diagonal();
    let reference_cameras = ring_cameras()?;
    let truth = random_similarity(&mut rng, spec, extent);
    let to_later = truth.inverse();

    let shared: Vec<usize> = (0..reference_cloud.len()).filter(|_| rng.gen_bool(spec.overlap)).collect();
    let noise = Normal::new(0.0, (spec.cloud_noise * extent).max(f64::MIN_POSITIVE)).unwrap();
    let jitter = |rng: &mut ChaCha8Rng| {
        if spec.cloud_noise > 0.0 {
            Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        } else {
            Vector3::zeros()
        }
    };
    let truth_points: Vec<Vector3<f64>> = shared.iter().map(|&i| reference_cloud.points[i]).collect();
    let dense_points = truth_points.iter().map(|p| to_later.apply_point(&(p + jitter(&mut rng)))).collect();
    let dense_cloud = PointCloud::from_points(dense_points);

    let pixel_noise = Normal::new(0.0, spec.match_noise_px.max(f64::MIN_POSITIVE)).unwrap();
    let mut matches = Vec::with_capacity(spec.matches);
    let mut attempts = 0;
    while matches.len() < spec.matches && attempts < 100 * spec.matches {
        attempts += 1;
        let point_index = rng.gen_range(0..truth_points.len());
        let cam = &reference_cameras[rng.gen_range(0..reference_cameras.len())];
        let Some(px) = cam.project(&truth_points[point_index]).filter(|px| cam.in_bounds(px)) else { continue };
        let (dx, dy) = if spec.match_noise_px > 0.0 {
            (pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        matches.push(Match2D3D { view_id: cam.id, pixel: [px.x + dx, px.y + dy], point_index });
    }

    let seeds = (0..spec.seeds)
        .map(|_| {
            let k = rng.gen_range(0..shared.len());
            SeedCorrespondence { source_index: k, target_index: shared[k] }
        })
        .collect();
    Ok(AlignmentProblem { reference_cloud, reference_cameras, dense_cloud, matches, seeds, truth, extent })
}

impl AlignmentProblem {
    pub fn inputs(&self) -> AlignInputs<'_> {
        AlignInputs {
            reference_cloud: &self.reference_cloud,
            reference_cameras: &self.reference_cameras,
            dense_cloud: &self.dense_cloud,
            cameras_tn: &[],
            matches: &self.matches,
            seeds: &self.seeds,
        }
    }

    pub fn error_of(&self, estimate: &SimilarityTransform) -> AlignmentError {
        AlignmentError {
            rotation_deg: estimate.rotation_angle_to(&self.truth).to_degrees(),
            translation: (estimate.translation - self.truth.translation).norm() / self.extent,
            scale: (estimate.scale / self.truth.scale - 1.0).abs(),
        }
    }

    /// Runs closed form → LM → ICP and scores the composite transform.
    pub fn solve(&self, settings: &AlignSettings) -> Result<AlignmentError> {
        let result = align(&self.inputs(), settings)?;
        Ok(self.error_of(&result.transform()))
    }
}
