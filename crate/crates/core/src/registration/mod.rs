//! Bringing the later capture into the frame of the reference capture.
//!
//! The chain is: closed-form similarity from seed correspondences, reprojection
//! refinement against reference views, then rigid ICP against the reference cloud.

mod icp;
mod lm;
mod umeyama;

use std::collections::HashSet;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use icp::{icp, IcpReport, IcpSettings};
pub use lm::{refine_similarity_lm, LmReport, LmSettings};
pub use umeyama::{estimate_rigid_closed_form, estimate_similarity_closed_form};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_similarity, apply_similarity_to_camera, Camera, Match2D3D, PointCloud, SeedCorrespondence,
    SimilarityTransform,
};

/// Union of the two clouds. With `dedup_voxel`, points of `p_n_aligned` landing in a
/// voxel that already holds a point of `p_c` are dropped.
pub fn fuse_clouds(p_c: &PointCloud, p_n_aligned: &PointCloud, dedup_voxel: Option<f64>) -> PointCloud {
    let keep: Vec<usize> = match dedup_voxel {
        Some(voxel) if voxel > 0.0 => {
            let key = |p: &Vector3<f64>| {
                ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64)
            };
            let occupied: HashSet<_> = p_c.points.iter().map(key).collect();
            (0..p_n_aligned.len()).filter(|&i| !occupied.contains(&key(&p_n_aligned.points[i]))).collect()
        }
        _ => (0..p_n_aligned.len()).collect(),
    };
    let extra = p_n_aligned.select(&keep);
    let mut points = p_c.points.clone();
    points.extend_from_slice(&extra.points);
    let colors = match (&p_c.colors, &extra.colors) {
        (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
        (None, None) => None,
        // mixed inputs: fill the uncoloured side with grey
        (a, b) => {
            let grey = Vector3::repeat(0.5);
            let side = |c: &Option<Vec<Vector3<f64>>>, n: usize| c.clone().unwrap_or_else(|| vec![grey; n]);
            let mut all = side(a, p_c.len());
            all.extend(side(b, extra.len()));
            Some(all)
        }
    };
    PointCloud { points, colors }
}

/// Seeded uniform subsample of `⌈fraction·N⌉` points, kept in their original order.
pub fn downsample(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    let n = cloud.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    if k == n {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, n, k).into_vec();
    indices.sort_unstable();
    Ok(cloud.select(&indices))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignSettings {
    pub lm: LmSettings,
    pub icp: IcpSettings,
    /// Run the reprojection refinement after the closed-form initializer.
    pub use_lm: bool,
    pub use_icp: bool,
    /// Fraction of the dense cloud used as ICP source.
    pub downsample_fraction: f64,
    pub dedup_voxel: Option<f64>,
    pub seed: u64,
}

impl Default for AlignSettings {
    fn default() -> Self {
        Self {
            lm: LmSettings::default(),
            icp: IcpSettings::default(),
            use_lm: true,
            use_icp: true,
            downsample_fraction: 0.25,
            dedup_voxel: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub reprojection_error_before: f64,
    pub reprojection_error_after: f64,
    pub icp_rms_before: f64,
    pub icp_rms_after: f64,
    pub lm_iterations: usize,
    pub icp_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    /// Coarse similarity (closed form followed by reprojection refinement).
    pub similarity: SimilarityTransform,
    /// Rigid correction found by ICP, applied after `similarity`.
    pub icp_refinement: SimilarityTransform,
    pub aligned_cloud: PointCloud,
    pub aligned_cameras: Vec<Camera>,
    pub fused_cloud: PointCloud,
    pub residual_report: ResidualReport,
}

impl AlignmentResult {
    /// Full map from the later frame to the reference frame.
    pub fn transform(&self) -> SimilarityTransform {
        self.icp_refinement.compose(&self.similarity)
    }

    pub fn summary(&self) -> AlignmentSummary {
        AlignmentSummary {
            similarity: self.similarity.to_array(),
            icp_refinement: self.icp_refinement.to_array(),
            transform: self.transform().to_array(),
            residual_report: self.residual_report.clone(),
        }
    }
}

/// On-disk form of an alignment: transforms as `[scale, R row-major, t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub similarity: [f64; 13],
    pub icp_refinement: [f64; 13],
    pub transform: [f64; 13],
    pub residual_report: ResidualReport,
}

impl AlignmentSummary {
    pub fn transform(&self) -> Result<SimilarityTransform> {
        SimilarityTransform::from_array(&self.transform)
    }
}

/// Inputs of the alignment stage. `dense_cloud` and `cameras_tn` live in the later
/// frame; matches index the dense cloud and refer to reference cameras.
pub struct AlignInputs<'a> {
    pub reference_cloud: &'a PointCloud,
    pub reference_cameras: &'a [Camera],
    pub dense_cloud: &'a PointCloud,
    pub cameras_tn: &'a [Camera],
    pub matches: &'a [Match2D3D],
    pub seeds: &'a [SeedCorrespondence],
}

/// Closed-form seed estimate, which every later stage starts from.
pub fn initial_similarity(inputs: &AlignInputs) -> Result<SimilarityTransform> {
    let mut source = Vec::with_capacity(inputs.seeds.len());
    let mut target = Vec::with_capacity(inputs.seeds.len());
    for s in inputs.seeds {
        let (Some(a), Some(b)) =
            (inputs.dense_cloud.points.get(s.source_index), inputs.reference_cloud.points.get(s.target_index))
        else {
            return Err(Error::InvalidInput(format!(
                "seed correspondence ({}, {}) out of range",
                s.source_index, s.target_index
            )));
        };
        source.push(*a);
        target.push(*b);
    }
    estimate_similarity_closed_form(&source, &target)
}

/// Runs the coarse stage only; returns the similarity and the LM report (if run).
pub fn coarse_alignment(
    inputs: &AlignInputs,
    settings: &AlignSettings,
) -> Result<(SimilarityTransform, Option<LmReport>)> {
    let initial = initial_similarity(inputs)?;
    if !settings.use_lm {
        return Ok((initial, None));
    }
    let (s, report) =
        refine_similarity_lm(&initial, inputs.dense_cloud, inputs.matches, inputs.reference_cameras, &settings.lm)?;
    Ok((s, Some(report)))
}

/// Completes alignment from a given coarse similarity: ICP, transfer of cloud and
/// cameras, and fusion with the reference cloud.
pub fn finish_alignment(
    inputs: &AlignInputs,
    coarse: SimilarityTransform,
    lm_report: Option<LmReport>,
    settings: &AlignSettings,
) -> Result<AlignmentResult> {
    let mut report = ResidualReport::default();
    if let Some(lm) = &lm_report {
        report.reprojection_error_before = lm.mean_error_before;
        report.reprojection_error_after = lm.mean_error_after;
        report.lm_iterations = lm.iterations;
    }
    let coarse_cloud = apply_similarity(&coarse, inputs.dense_cloud);
    let icp_refinement = if settings.use_icp {
        let source = downsample(&coarse_cloud, settings.downsample_fraction, settings.seed)?;
        let (t, icp_report) = icp(&source, inputs.reference_cloud, &SimilarityTransform::identity(), &settings.icp)?;
        report.icp_rms_before = icp_report.rms_before;
        report.icp_rms_after = icp_report.rms_after;
        report.icp_iterations = icp_report.iterations;
        t
    } else {
        SimilarityTransform::identity()
    };
    let transform = icp_refinement.compose(&coarse).renormalized();
    let aligned_cloud = apply_similarity(&transform, inputs.dense_cloud);
    let aligned_cameras = inputs.cameras_tn.iter().map(|c| apply_similarity_to_camera(&transform, c)).collect();
    let fused_cloud = fuse_clouds(inputs.reference_cloud, &aligned_cloud, settings.dedup_voxel);
    Ok(AlignmentResult {
        similarity: coarse,
        icp_refinement,
        aligned_cloud,
        aligned_cameras,
        fused_cloud,
        residual_report: report,
    })
}

/// Closed form → LM → ICP → fusion.
pub fn align(inputs: &AlignInputs, settings: &AlignSettings) -> Result<AlignmentResult> {
    let (coarse, lm_report) = coarse_alignment(inputs, settings)?;
    finish_alignment(inputs, coarse, lm_report, settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, offset: f64) -> PointCloud {
        PointCloud::from_points(
            (0..n).map(|i| Vector3::new(i as f64 * 0.37 + offset, (i % 7) as f64 * 0.51, (i % 3) as f64)).collect(),
        )
    }

    #[test]
    fn fuse_counts() {
        let a = grid(100, 0.0);
        let b = grid(40, 1000.0);
        assert_eq!(fuse_clouds(&a, &b, None).len(), 140);
        assert_eq!(fuse_clouds(&PointCloud::default(), &b, None), b);
        assert_eq!(fuse_clouds(&a, &a, Some(0.1)).len(), 100);
        assert_eq!(fuse_clouds(&a, &b, Some(0.1)).len(), 140);
    }

    #[test]
    fn fuse_dedup_matches_brute_force() {
        let a = grid(60, 0.0);
        let b = grid(60, 0.05);
        let voxel = 0.25;
        let cell = |p: &Vector3<f64>| p.map(|v| (v / voxel).floor());
        let expected = b.points.iter().filter(|q| !a.points.iter().any(|p| cell(p) == cell(q))).count();
        assert_eq!(fuse_clouds(&a, &b, Some(voxel)).len(), 60 + expected);
    }

    #[test]
    fn fuse_mixed_colors() {
        let a = PointCloud::new(vec![Vector3::zeros()], Some(vec![Vector3::new(1.0, 0.0, 0.0)])).unwrap();
        let b = grid(2, 5.0);
        let f = fuse_clouds(&a, &b, None);
        assert_eq!(f.colors.as_ref().unwrap().len(), 3);
        assert_eq!(f.color(2), Some(Vector3::repeat(0.5)));
    }

    #[test]
    fn downsample_behaviour() {
        let c = grid(1000, 0.0);
        assert_eq!(downsample(&c, 1.0, 3).unwrap(), c);
        let d = downsample(&c, 0.25, 3).unwrap();
        assert_eq!(d.len(), 250);
        assert!(d.points.iter().all(|p| c.points.contains(p)));
        assert_eq!(d, downsample(&c, 0.25, 3).unwrap());
        assert_eq!(downsample(&grid(10, 0.0), 0.25, 0).unwrap().len(), 3);
        for bad in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(downsample(&c, bad, 0), Err(Error::InvalidFraction(_))));
        }
    }
}
