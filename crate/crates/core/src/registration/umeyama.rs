//! Closed-form least-squares similarity (Umeyama) and its rigid special case.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::SimilarityTransform;

/// Relative singular-value floor below which the cross-covariance counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Least-squares `s, R, t` minimizing `Σ ‖target_i − (s·R·source_i + t)‖²`.
pub fn estimate_similarity_closed_form(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<SimilarityTransform> {
    estimate(source, target, true)
}

/// As [`estimate_similarity_closed_form`] with the scale pinned to 1.
pub fn estimate_rigid_closed_form(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    estimate(source, target, false)
}

fn estimate(source: &[Vector3<f64>], target: &[Vector3<f64>], with_scale: bool) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch { left: source.len(), right: target.len() });
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("need at least 3 correspondences, got {n}")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_t = target.iter().sum::<Vector3<f64>>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        cov += (t - mu_t) * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = svd.singular_values;
    if !(sv[order[0]] > 0.0) || sv[order[1]] <= RANK_TOL * sv[order[0]] {
        return Err(Error::Degenerate("correspondences are collinear or coincident (covariance rank < 2)".into()));
    }
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // flip the axis with the smallest singular value
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| sv[i] * d[(i, i)]).sum();
        trace / var_s
    } else {
        1.0
    };
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform { scale, rotation, translation }.renormalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_about;
    use approx::assert_relative_eq;

    fn cube() -> Vec<Vector3<f64>> {
        let mut v = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    v.push(Vector3::new(x, y, z));
                }
            }
        }
        v
    }

    #[test]
    fn identity_on_equal_sets() {
        let s = estimate_similarity_closed_form(&cube(), &cube()).unwrap();
        assert_relative_eq!(s.scale, 1.0, epsilon = 1e-9);
        assert_relative_eq!(s.rotation, Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(s.translation, Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn recovers_known_similarity() {
        let truth =
            SimilarityTransform::new(2.0, rotation_about(Vector3::z(), 90.0), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let target: Vec<_> = cube().iter().map(|p| truth.apply_point(p)).collect();
        let s = estimate_similarity_closed_form(&cube(), &target).unwrap();
        assert_relative_eq!(s.scale, 2.0, epsilon = 1e-9);
        assert_relative_eq!(s.rotation, truth.rotation, epsilon = 1e-9);
        assert_relative_eq!(s.translation, truth.translation, epsilon = 1e-9);
    }

    #[test]
    fn planar_points_with_reflection_ambiguity() {
        let src: Vec<_> =
            [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [1.5, 1.0]].iter().map(|p| Vector3::new(p[0], p[1], 0.0)).collect();
        let truth = SimilarityTransform::new(
            0.7,
            rotation_about(Vector3::new(1.0, 1.0, 0.3), 130.0),
            Vector3::new(0.0, 1.0, 2.0),
        )
        .unwrap();
        let dst: Vec<_> = src.iter().map(|p| truth.apply_point(p)).collect();
        let s = estimate_similarity_closed_form(&src, &dst).unwrap();
        assert!(s.rotation.determinant() > 0.0);
        assert_relative_eq!(s.rotation, truth.rotation, epsilon = 1e-9);
        assert_relative_eq!(s.scale, 0.7, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let two = vec![Vector3::zeros(), Vector3::x()];
        assert!(matches!(estimate_similarity_closed_form(&two, &two), Err(Error::Degenerate(_))));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(estimate_similarity_closed_form(&line, &line), Err(Error::Degenerate(_))));
        assert!(matches!(estimate_similarity_closed_form(&cube(), &cube()[..4]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn rigid_variant_keeps_unit_scale() {
        let truth =
            SimilarityTransform::new(1.0, rotation_about(Vector3::y(), 25.0), Vector3::new(0.1, -0.2, 0.3)).unwrap();
        let target: Vec<_> = cube().iter().map(|p| truth.apply_point(p)).collect();
        let s = estimate_rigid_closed_form(&cube(), &target).unwrap();
        assert_eq!(s.scale, 1.0);
        assert_relative_eq!(s.rotation, truth.rotation, epsilon = 1e-9);
    }
}
