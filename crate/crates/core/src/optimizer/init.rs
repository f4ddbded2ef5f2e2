use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Camera, PointCloud};
use crate::spatial::NearestIndex;
use crate::splat::{Gaussian3D, GaussianModel};

const INITIAL_OPACITY: f64 = 0.1;

/// 1.1 × the largest distance of a camera centre from the mean centre.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = cameras.iter().map(Camera::center).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if radius > 0.0 {
        1.1 * radius
    } else {
        1.0
    }
}

/// One isotropic Gaussian per point, sized by the mean distance to its three
/// nearest neighbours (clamped to `[1e-4, 0.1]·extent`).
pub fn init_model_from_cloud(cloud: &PointCloud, extent: f64) -> Result<GaussianModel> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (lo, hi) = (1e-4 * extent, 0.1 * extent);
    let index = NearestIndex::new(&cloud.points);
    let gaussians: Vec<Gaussian3D> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let neighbours: Vec<f64> =
                index.nearest_k(p, 4).into_iter().filter(|&(j, _)| j != i).take(3).map(|(_, d2)| d2.sqrt()).collect();
            let scale = if neighbours.is_empty() {
                lo
            } else {
                (neighbours.iter().sum::<f64>() / neighbours.len() as f64).clamp(lo, hi)
            };
            let color = cloud.color(i).unwrap_or(Vector3::repeat(0.5));
            Gaussian3D::isotropic(*p, scale, INITIAL_OPACITY, color)
        })
        .collect();
    Ok(GaussianModel::from_gaussians(&gaussians))
}
