//! Invariants of geometry, rendering, the structural indices, confidence refinement and the loss.

use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use tempogs_core::confidence::{mssim, refine_confidence_maps, ssim, ConfidenceMap, ConfidenceSettings, SsimSettings};
use tempogs_core::geometry::{apply_similarity, apply_similarity_to_camera, Camera, PointCloud, SimilarityTransform};
use tempogs_core::image::{Image, View};
use tempogs_core::optimizer::{loss_init, LossSettings};
use tempogs_core::splat::{render_with, Gaussian3D, GaussianModel, RenderSettings};

fn vec3(range: std::ops::Range<f64>) -> impl Strategy<Value = Vector3<f64>> {
    (range.clone(), range.clone(), range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    vec3(-3.1..3.1).prop_map(UnitQuaternion::from_scaled_axis)
}

fn similarity() -> impl Strategy<Value = SimilarityTransform> {
    (0.2f64..5.0, rotation(), vec3(-10.0..10.0)).prop_map(|(s, r, t)| SimilarityTransform::from_parts(s, &r, t))
}

fn camera() -> impl Strategy<Value = Camera> {
    (rotation(), vec3(-5.0..5.0), 20.0f64..200.0, 16u32..200, 16u32..200).prop_map(|(r, t, f, w, h)| {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        Camera::new(1, w, h, f, f * 1.1, cx, cy, r.to_rotation_matrix().into_inner(), t).unwrap()
    })
}

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..1.0, w * h * 3).prop_map(move |d| Image::new(w, h, d).unwrap())
}

fn gaussian() -> impl Strategy<Value = Gaussian3D> {
    (vec3(-1.0..1.0), 2.0f64..5.0, rotation(), vec3(0.02..0.5), 0.01f64..0.99, vec3(0.0..1.0)).prop_map(
        |(xy, z, rotation, scale, opacity, color)| Gaussian3D {
            position: Vector3::new(xy.x * z * 0.4, xy.y * z * 0.4, z),
            rotation,
            scale,
            opacity,
            color,
        },
    )
}

fn scene() -> impl Strategy<Value = GaussianModel> {
    prop::collection::vec(gaussian(), 0..12).prop_map(|gs| GaussianModel::from_gaussians(&gs))
}

fn front_camera(size: u32) -> Camera {
    let c = size as f64 / 2.0;
    Camera::new(0, size, size, 30.0, 30.0, c, c, nalgebra::Matrix3::identity(), Vector3::zeros()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_inverse_round_trips(s in similarity(), pts in prop::collection::vec(vec3(-50.0..50.0), 1..40)) {
        let cloud = PointCloud::from_points(pts);
        let back = apply_similarity(&s.inverse(), &apply_similarity(&s, &cloud));
        for (a, b) in cloud.points.iter().zip(&back.points) {
            prop_assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0));
        }
    }

    #[test]
    fn composition_matches_sequential_application(a in similarity(), b in similarity(), p in vec3(-10.0..10.0)) {
        let direct = a.apply_point(&b.apply_point(&p));
        let composed = a.compose(&b).apply_point(&p);
        prop_assert!((direct - composed).norm() <= 1e-9 * direct.norm().max(1.0));
    }

    #[test]
    fn transformed_cameras_see_transformed_points(s in similarity(), cam in camera(), local in vec3(-1.0..1.0), depth in 0.5f64..20.0) {
        // a point in front of the camera, expressed in world coordinates
        let pc = Vector3::new(local.x * depth, local.y * depth, depth);
        let p = cam.rotation.transpose() * (pc - cam.translation);
        let moved = apply_similarity_to_camera(&s, &cam);
        prop_assert!(moved.validate().is_ok());
        let before = cam.project(&p).unwrap();
        let after = moved.project(&s.apply_point(&p)).unwrap();
        prop_assert!((before - after).norm() < 1e-6, "{before} vs {after}");
    }

    #[test]
    fn projection_ignores_depth_scaling(p in vec3(-1.0..1.0), z in 0.5f64..10.0, lambda in 0.01f64..100.0) {
        let cam = front_camera(64);
        let x = Vector3::new(p.x, p.y, z);
        let a = cam.project(&x).unwrap();
        let b = cam.project(&(lambda * x)).unwrap();
        prop_assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn rendered_pixels_stay_in_unit_range(model in scene(), bg in vec3(0.0..1.0)) {
        let settings = RenderSettings { parallel: false, ..Default::default() };
        let out = render_with(&model, &front_camera(32), [bg.x, bg.y, bg.z], &settings);
        prop_assert!(out.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn compositing_weights_sum_to_one(gs in prop::collection::vec(gaussian(), 0..12)) {
        // white splats on black: each channel is Σ αᵢTᵢ, the leftover is T_final
        let white: Vec<Gaussian3D> = gs.into_iter().map(|g| Gaussian3D { color: Vector3::repeat(1.0), ..g }).collect();
        let model = GaussianModel::from_gaussians(&white);
        let out = render_with(&model, &front_camera(32), [0.0; 3], &RenderSettings::default());
        for (k, t) in out.transmittance.iter().enumerate() {
            prop_assert!((out.image.data[3 * k] + t - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn parallel_render_matches_sequential(model in scene()) {
        let cam = front_camera(40);
        let seq = render_with(&model, &cam, [0.2; 3], &RenderSettings { parallel: false, ..Default::default() });
        let par = render_with(&model, &cam, [0.2; 3], &RenderSettings { parallel: true, ..Default::default() });
        for (a, b) in seq.image.data.iter().zip(&par.image.data) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn structural_indices_are_symmetric(x in image(24, 20), y in image(24, 20)) {
        let s = SsimSettings::default();
        for f in [ssim, mssim] {
            let a = f(&x, &y, &s).unwrap();
            let b = f(&y, &x, &s).unwrap();
            for (u, v) in a.map.iter().zip(&b.map) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn modified_index_ignores_offsets(x in image(24, 20), offset in -0.5f64..0.5) {
        let s = SsimSettings::default();
        // values may leave [0, 1]; no clipping is applied
        let shifted = x.map(|v| v + offset);
        let m = mssim(&x, &shifted, &s).unwrap();
        prop_assert!(m.map.iter().all(|v| (v - 1.0).abs() <= 1e-9));
        prop_assert!((ssim(&x, &x, &s).unwrap().mean - 1.0).abs() <= 1e-9);
        if offset.abs() > 1e-3 {
            prop_assert!(ssim(&x, &shifted, &s).unwrap().mean < 1.0);
        }
    }

    #[test]
    fn modified_index_stays_in_unit_range(x in image(20, 20), y in image(20, 20), beta in 0.0f64..1.0) {
        let s = SsimSettings { contrast_exponent: beta, ..Default::default() };
        prop_assert!(mssim(&x, &y, &s).unwrap().map.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn refinement_never_lowers_coverage(
        model in scene(),
        target in image(48, 36),
        values in prop::collection::vec(prop::bool::ANY, 12),
        factor in 1usize..4,
        tau_iter in 0.05f64..0.95,
    ) {
        let cam = front_camera(36);
        let cam = Camera { width: 48, cx: 24.0, ..cam };
        let view = View::new(cam, target).unwrap();
        let values: Vec<f64> = values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let current = vec![ConfidenceMap::new(0, 3, 4, values, vec![0.5; 12]).unwrap()];
        let refined =
            refine_confidence_maps(&current, &model, &[view], (3 * factor, 4 * factor), tau_iter, &ConfidenceSettings::default())
                .unwrap();
        prop_assert!(refined[0].coverage() >= current[0].coverage() - 1e-12);
        prop_assert!(refined[0].values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn loss_is_non_negative_and_vanishes_on_match(
        r in image(32, 24),
        t in image(32, 24),
        conf in prop::collection::vec(0.0f64..1.0, 16),
        literal in prop::bool::ANY,
    ) {
        let map = ConfidenceMap::new(0, 4, 4, conf, vec![0.0; 16]).unwrap();
        let settings = LossSettings { literal, ..Default::default() };
        let (l, _) = loss_init(&r, &t, &map, &settings).unwrap();
        prop_assert!(l >= -1e-12);
        let (same, _) = loss_init(&t, &t, &map, &settings).unwrap();
        prop_assert!(same.abs() <= 1e-9);
    }
}
