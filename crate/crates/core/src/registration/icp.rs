//! Trimmed point-to-point ICP.

use serde::{Deserialize, Serialize};

use super::umeyama::{estimate_rigid_closed_form, estimate_similarity_closed_form};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SimilarityTransform};
use crate::spatial::NearestIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpSettings {
    pub max_iterations: usize,
    pub rms_tolerance: f64,
    /// Fraction of the worst pairs discarded each iteration.
    pub trim_fraction: f64,
    pub estimate_scale: bool,
}

impl Default for IcpSettings {
    fn default() -> Self {
        Self { max_iterations: 50, rms_tolerance: 1e-8, trim_fraction: 0.1, estimate_scale: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IcpReport {
    pub rms_before: f64,
    pub rms_after: f64,
    pub iterations: usize,
    /// Trimmed RMS at the start of every iteration, plus the final value.
    pub rms_history: Vec<f64>,
}

/// Trimmed RMS of `transform(source)` against its nearest neighbours in the target,
/// with the kept (source, target) pairs.
fn trimmed_pairs(
    source: &PointCloud,
    target: &PointCloud,
    index: &NearestIndex,
    transform: &SimilarityTransform,
    keep: usize,
) -> (f64, Vec<(usize, usize)>) {
    let mut pairs: Vec<(f64, usize, usize)> = source
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (j, d2) = index.nearest(&transform.apply_point(p));
            (d2, i, j)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    pairs.truncate(keep);
    let rms = (pairs.iter().map(|p| p.0).sum::<f64>() / keep as f64).sqrt();
    debug_assert!(target.len() == index.len());
    (rms, pairs.into_iter().map(|(_, i, j)| (i, j)).collect())
}

/// Returns the transform mapping `source` onto `target` (starting from `initial`).
pub fn icp(
    source: &PointCloud,
    target: &PointCloud,
    initial: &SimilarityTransform,
    settings: &IcpSettings,
) -> Result<(SimilarityTransform, IcpReport)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = NearestIndex::new(&target.points);
    let keep = ((1.0 - settings.trim_fraction.clamp(0.0, 0.99)) * source.len() as f64).ceil().max(1.0) as usize;
    let keep = keep.min(source.len());

    let mut current = initial.clone();
    let (mut rms, mut pairs) = trimmed_pairs(source, target, &index, &current, keep);
    let mut report = IcpReport { rms_before: rms, rms_history: vec![rms], ..Default::default() };
    for iteration in 0..settings.max_iterations {
        report.iterations = iteration + 1;
        let src: Vec<_> = pairs.iter().map(|&(i, _)| current.apply_point(&source.points[i])).collect();
        let dst: Vec<_> = pairs.iter().map(|&(_, j)| target.points[j]).collect();
        let update = if settings.estimate_scale {
            estimate_similarity_closed_form(&src, &dst)
        } else {
            estimate_rigid_closed_form(&src, &dst)
        };
        let Ok(update) = update else { break };
        let candidate = update.compose(&current).renormalized();
        let (new_rms, new_pairs) = trimmed_pairs(source, target, &index, &candidate, keep);
        if new_rms > rms {
            // can only happen through round-off; keep the better transform
            break;
        }
        let change = rms - new_rms;
        current = candidate;
        rms = new_rms;
        pairs = new_pairs;
        report.rms_history.push(rms);
        if change < settings.rms_tolerance {
            break;
        }
    }
    report.rms_after = rms;
    Ok((current, report))
}
