//! Paired earlier/later datasets with known ground truth.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scene::{build_scene, GroundTruthScene, Layout, SceneSpec};
use tempogs_core::geometry::{
    apply_similarity_to_camera, Camera, Match2D3D, PointCloud, SeedCorrespondence, SimilarityTransform,
};
use tempogs_core::image::{load_gray_png, save_gray_png, Image, View};
use tempogs_core::io::ply::PlyFormat;
use tempogs_core::io::{
    image_path, read_cameras, read_json, read_matches, read_point_cloud, read_seed_correspondences, write_cameras,
    write_json, write_matches, write_point_cloud, write_seed_correspondences, CameraRecord,
};
use tempogs_core::optimizer::{baseline_optimize, TrainConfig};
use tempogs_core::registration::AlignInputs;
use tempogs_core::splat::{render_with, GaussianModel, RenderSettings};
use tempogs_core::{Error, Result};

/// First id of the later cameras; earlier cameras count up from zero.
pub const TN_ID_OFFSET: u32 = 1000;
const BACKGROUND: [f64; 3] = [0.0; 3];

#[derive(Clone, Debug)]
#[derive(Default)]
pub struct GenerateOptions {
    /// Training run that produces the reference model.
    pub pretrain: TrainConfig,
    /// Where reference models are cached between runs.
    pub cache_dir: Option<PathBuf>,
}


/// Contents of `ground_truth/transform.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Map from the later (estimated) frame to the reference frame, `[scale, R row-major, t]`.
    pub transform: [f64; 13],
    pub changed_objects: Vec<usize>,
    /// Number of changed pixels per later view, keyed like the mask files.
    pub changed_pixels: Vec<(u32, usize)>,
}

impl GroundTruth {
    pub fn similarity(&self) -> Result<SimilarityTransform> {
        SimilarityTransform::from_array(&self.transform)
    }
}

/// A generated dataset loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub spec: SceneSpec,
    pub t0_views: Vec<View>,
    pub t0_cameras: Vec<Camera>,
    pub reference_cloud: PointCloud,
    pub g0: GaussianModel,
    /// Later training views, cameras in the estimated frame.
    pub tn_train: Vec<View>,
    /// Later held-out views, cameras in the estimated frame.
    pub tn_test: Vec<View>,
    pub dense_cloud: PointCloud,
    pub matches: Vec<Match2D3D>,
    pub seeds: Vec<SeedCorrespondence>,
    pub ground_truth: GroundTruth,
}

impl Dataset {
    pub fn tn_train_cameras(&self) -> Vec<Camera> {
        self.tn_train.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn align_inputs<'a>(&'a self, tn_cameras: &'a [Camera]) -> AlignInputs<'a> {
        AlignInputs {
            reference_cloud: &self.reference_cloud,
            reference_cameras: &self.t0_cameras,
            dense_cloud: &self.dense_cloud,
            cameras_tn: tn_cameras,
            matches: &self.matches,
            seeds: &self.seeds,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = DatasetPaths::new(dir);
        let spec: SceneSpec = read_json(&p.spec)?;
        let t0_views = load_views(&p.t0_cameras, None)?;
        let t0_cameras = t0_views.iter().map(|v| v.camera.clone()).collect();
        let tn_train = load_views(&p.tn_cameras, Some("train"))?;
        let tn_test = load_views(&p.tn_cameras, Some("test"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            spec,
            t0_views,
            t0_cameras,
            reference_cloud: read_point_cloud(&p.t0_points)?,
            g0: GaussianModel::load_ply(&p.t0_model)?,
            tn_train,
            tn_test,
            dense_cloud: read_point_cloud(&p.tn_points)?,
            matches: read_matches(&p.matches)?,
            seeds: read_seed_correspondences(&p.seeds)?,
            ground_truth: read_json(&p.transform)?,
        })
    }
}

/// Standard file locations inside a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub root: PathBuf,
    pub spec: PathBuf,
    pub t0_cameras: PathBuf,
    pub t0_points: PathBuf,
    pub t0_model: PathBuf,
    pub tn_cameras: PathBuf,
    pub tn_points: PathBuf,
    pub matches: PathBuf,
    pub seeds: PathBuf,
    pub transform: PathBuf,
    pub masks: PathBuf,
    pub world_cameras: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            spec: root.join("spec.json"),
            t0_cameras: root.join("t0/cameras.json"),
            t0_points: root.join("t0/points.ply"),
            t0_model: root.join("t0/model_t0.ply"),
            tn_cameras: root.join("tn/cameras_est.json"),
            tn_points: root.join("tn/points_dense.ply"),
            matches: root.join("matches.json"),
            seeds: root.join("seed_correspondences.json"),
            transform: root.join("ground_truth/transform.json"),
            masks: root.join("ground_truth/masks"),
            world_cameras: root.join("ground_truth/cameras_world.json"),
        }
    }

    pub fn mask(&self, view_id: u32) -> PathBuf {
        self.masks.join(image_name(view_id))
    }
}

fn image_name(id: u32) -> String {
    format!("view_{id:04}.png")
}

fn load_views(cameras_file: &Path, split: Option<&str>) -> Result<Vec<View>> {
    read_cameras(cameras_file)?
        .iter()
        .filter(|r| split.is_none() || r.split.as_deref() == split)
        .map(|r| {
            let image = Image::load_png(&image_path(cameras_file, r))?;
            View::new(r.to_camera()?, image)
        })
        .collect()
}

fn ring_camera(id: u32, angle: f64, radius: f64, height: f64, spec: &SceneSpec) -> Result<Camera> {
    let v = &spec.views;
    let eye = Vector3::new(radius * angle.cos(), radius * angle.sin(), height);
    Camera::look_at(id, v.width, v.height, v.focal, eye, Vector3::new(0.0, 0.0, 0.1), Vector3::z())
}

/// Earlier cameras alternate between the two ring heights.
pub fn t0_cameras(spec: &SceneSpec) -> Result<Vec<Camera>> {
    let v = &spec.views;
    (0..v.t0_count)
        .map(|i| {
            let angle = 2.0 * PI * i as f64 / v.t0_count as f64;
            ring_camera(i as u32, angle, v.t0_radius, v.t0_heights[i % 2], spec)
        })
        .collect()
}

const TN_PHASE: f64 = 0.3;

/// Later training cameras (first) and held-out cameras, in the reference frame.
/// Held-out cameras do not depend on the training layout.
pub fn tn_cameras(spec: &SceneSpec) -> Result<(Vec<Camera>, Vec<Camera>)> {
    let v = &spec.views;
    let n = v.tn_train;
    let train = (0..n)
        .map(|k| {
            let angle = match v.layout {
                Layout::Uniform => TN_PHASE + 2.0 * PI * k as f64 / n as f64,
                Layout::Concentrated if n > 1 => {
                    TN_PHASE + v.concentrated_span_deg.to_radians() * k as f64 / (n - 1) as f64
                }
                Layout::Concentrated => TN_PHASE,
            };
            ring_camera(TN_ID_OFFSET + k as u32, angle, v.tn_radius, v.tn_height, spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let test = (0..v.tn_test)
        .map(|k| {
            let angle = TN_PHASE + 2.0 * PI * (k as f64 + 0.25) / v.tn_test as f64;
            ring_camera(TN_ID_OFFSET + (n + k) as u32, angle, v.tn_test_radius, v.tn_test_heights[k % 2], spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

fn render_exact(model: &GaussianModel, camera: &Camera) -> Image {
    render_with(model, camera, BACKGROUND, &RenderSettings::default()).image.quantized()
}

/// Pixels whose 8-bit render differs between the two scenes.
pub fn change_mask(before: &GaussianModel, after: &GaussianModel, camera: &Camera) -> Vec<bool> {
    let a = render_exact(before, camera);
    let b = render_exact(after, camera);
    a.data.chunks(3).zip(b.data.chunks(3)).map(|(x, y)| x != y).collect()
}

fn perturb_camera(cam: &Camera, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Camera {
    let noise = &spec.noise;
    if noise.pose_deg == 0.0 && noise.pose_translation == 0.0 {
        return cam.clone();
    }
    let axis: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    let angle = noise.pose_deg.to_radians() * rng.sample::<f64, _>(StandardNormal);
    let delta = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
    let shift: Vector3<f64> = Vector3::from_fn(|_, _| noise.pose_translation * rng.sample::<f64, _>(StandardNormal));
    Camera { rotation: delta * cam.rotation, translation: delta * cam.translation + shift, ..cam.clone() }
}

fn cloud_of(scene: &GroundTruthScene, indices: &[usize], sigma: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    let normal = Normal::new(0.0, sigma.max(0.0)).unwrap();
    let points =
        indices.iter().map(|&i| scene.model.position(i) + Vector3::from_fn(|_, _| normal.sample(rng))).collect();
    let colors = indices.iter().map(|&i| scene.model.color(i)).collect();
    PointCloud { points, colors: Some(colors) }
}

/// Gaussians whose centre is the nearest one in its pixel cell for at least one camera.
fn visible_indices(model: &GaussianModel, cameras: &[Camera], tolerance: f64) -> Vec<usize> {
    const CELL: f64 = 2.0;
    let mut visible = vec![false; model.len()];
    for cam in cameras {
        let cols = (cam.width as f64 / CELL).ceil() as usize;
        let rows = (cam.height as f64 / CELL).ceil() as usize;
        let hits: Vec<Option<(usize, f64)>> = (0..model.len())
            .map(|i| {
                let p = model.position(i);
                let px = cam.project(&p).filter(|px| cam.in_bounds(px))?;
                let cell = (px.y / CELL) as usize * cols + (px.x / CELL) as usize;
                Some((cell, cam.to_camera_frame(&p).z))
            })
            .collect();
        let mut nearest = vec![f64::INFINITY; cols * rows];
        for &(cell, z) in hits.iter().flatten() {
            nearest[cell] = nearest[cell].min(z);
        }
        for (i, hit) in hits.iter().enumerate() {
            if let Some((cell, z)) = hit {
                visible[i] |= *z <= nearest[*cell] + tolerance;
            }
        }
    }
    (0..model.len()).filter(|&i| visible[i]).collect()
}

/// `(label, ordinal within label)` of every Gaussian; unedited objects agree on these.
fn keys(scene: &GroundTruthScene) -> Vec<(usize, usize)> {
    let mut seen: HashMap<usize, usize> = HashMap::new();
    scene
        .labels
        .iter()
        .map(|&l| {
            let k = seen.entry(l).or_insert(0);
            *k += 1;
            (l, *k - 1)
        })
        .collect()
}

/// Hash of everything the reference model depends on.
fn reference_key(spec: &SceneSpec, pretrain: &TrainConfig) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        seed: u64,
        objects: &'a [crate::scene::ObjectSpec],
        t0: (usize, f64, [f64; 2], u32, u32, f64),
        reference_fraction: f64,
        cloud_noise: f64,
        extent: f64,
        pretrain: &'a TrainConfig,
    }
    let v = &spec.views;
    let key = Key {
        seed: spec.seed,
        objects: &spec.objects,
        t0: (v.t0_count, v.t0_radius, v.t0_heights, v.width, v.height, v.focal),
        reference_fraction: spec.reference_fraction,
        cloud_noise: spec.noise.cloud,
        extent: spec.extent,
        pretrain,
    };
    let bytes = serde_json::to_vec(&key).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(12).map(|b| format!("{b:02x}")).collect())
}

fn pretrain_reference(
    spec: &SceneSpec,
    reference_cloud: &PointCloud,
    t0_views: &[View],
    options: &GenerateOptions,
) -> Result<GaussianModel> {
    let cached = match &options.cache_dir {
        Some(dir) => Some(dir.join(format!("model_t0_{}.ply", reference_key(spec, &options.pretrain)?))),
        None => None,
    };
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        return GaussianModel::load_ply(path);
    }
    let (model, _) = baseline_optimize(reference_cloud, t0_views, &options.pretrain)?;
    // reload through the file format so cached and fresh runs agree bit for bit
    if let Some(path) = &cached {
        model.save_ply(path)?;
        return GaussianModel::load_ply(path);
    }
    Ok(model)
}

/// Renders and writes a full dataset to `out_dir`, returning it loaded.
pub fn generate_dataset(spec: &SceneSpec, out_dir: &Path, options: &GenerateOptions) -> Result<Dataset> {
    spec.validate()?;
    let paths = DatasetPaths::new(out_dir);
    let to_perturbed = spec.frame.to_perturbed()?;
    let scene0 = build_scene(spec, false);
    let scene_n = build_scene(spec, true);
    let rng = |stream: u64| ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(7919).wrapping_add(stream));

    // earlier capture
    let cams0 = t0_cameras(spec)?;
    let mut t0_records = Vec::new();
    let mut t0_views = Vec::new();
    for cam in &cams0 {
        let img = render_exact(&scene0.model, cam);
        let name = format!("images/{}", image_name(cam.id));
        img.save_png(&out_dir.join("t0").join(&name))?;
        t0_records.push(CameraRecord { split: Some("train".into()), ..CameraRecord::from_camera(cam, name) });
        t0_views.push(View::new(cam.clone(), img)?);
    }
    write_cameras(&paths.t0_cameras, &t0_records)?;

    let sigma = spec.noise.cloud * spec.extent;
    let n0 = scene0.model.len();
    let keep = ((spec.reference_fraction * n0 as f64).ceil() as usize).clamp(1, n0);
    let mut reference_indices = sample(&mut rng(1), n0, keep).into_vec();
    reference_indices.sort_unstable();
    let reference_cloud = cloud_of(&scene0, &reference_indices, sigma, &mut rng(2));
    write_point_cloud(&paths.t0_points, &reference_cloud, PlyFormat::BinaryLittleEndian)?;

    // later capture, rendered from true poses and stored in the perturbed frame
    let (train_world, test_world) = tn_cameras(spec)?;
    let mut pose_rng = rng(3);
    let mut tn_records = Vec::new();
    let mut world_records = Vec::new();
    let mut changed_pixels = Vec::new();
    for (split, cams) in [("train", &train_world), ("test", &test_world)] {
        for cam in cams {
            let img = render_exact(&scene_n.model, cam);
            let name = format!("images/{}", image_name(cam.id));
            img.save_png(&out_dir.join("tn").join(&name))?;
            let estimated = perturb_camera(&apply_similarity_to_camera(&to_perturbed, cam), spec, &mut pose_rng);
            tn_records.push(CameraRecord {
                split: Some(split.into()),
                ..CameraRecord::from_camera(&estimated, name.clone())
            });
            world_records.push(CameraRecord {
                split: Some(split.into()),
                ..CameraRecord::from_camera(cam, format!("../tn/{name}"))
            });
            let mask = change_mask(&scene0.model, &scene_n.model, cam);
            changed_pixels.push((cam.id, mask.iter().filter(|&&m| m).count()));
            let values: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            save_gray_png(&paths.mask(cam.id), cam.width as usize, cam.height as usize, &values)?;
        }
    }
    write_cameras(&paths.tn_cameras, &tn_records)?;
    write_cameras(&paths.world_cameras, &world_records)?;

    let seen = visible_indices(&scene_n.model, &train_world, 0.05 * spec.extent);
    if seen.is_empty() {
        return Err(Error::InvalidInput("no later Gaussian is visible from the training views".into()));
    }
    let dense_keep = ((spec.dense_fraction * seen.len() as f64).ceil() as usize).clamp(1, seen.len());
    let mut dense_indices: Vec<usize> = sample(&mut rng(7), seen.len(), dense_keep).iter().map(|k| seen[k]).collect();
    dense_indices.sort_unstable();
    let dense_world = cloud_of(&scene_n, &dense_indices, spec.noise.dense_cloud * spec.extent, &mut rng(4));
    let dense_cloud = PointCloud {
        points: dense_world.points.iter().map(|p| to_perturbed.apply_point(p)).collect(),
        colors: dense_world.colors,
    };
    write_point_cloud(&paths.tn_points, &dense_cloud, PlyFormat::BinaryLittleEndian)?;

    // correspondences only on objects that did not change
    let changed = spec.changed_objects();
    let dense_slot: HashMap<usize, usize> = dense_indices.iter().enumerate().map(|(slot, &i)| (i, slot)).collect();
    let stable_n: Vec<usize> =
        dense_indices.iter().copied().filter(|&i| !changed.contains(&scene_n.labels[i])).collect();
    if stable_n.is_empty() {
        return Err(Error::InvalidInput("every object changes; no correspondences possible".into()));
    }
    let keys0 = keys(&scene0);
    let keys_n = keys(&scene_n);
    let reference_slot: HashMap<(usize, usize), usize> =
        reference_indices.iter().enumerate().map(|(slot, &i)| (keys0[i], slot)).collect();
    let mut seed_rng = rng(5);
    let seed_candidates: Vec<SeedCorrespondence> = stable_n
        .iter()
        .filter_map(|&i| {
            reference_slot
                .get(&keys_n[i])
                .map(|&slot| SeedCorrespondence { source_index: dense_slot[&i], target_index: slot })
        })
        .collect();
    if seed_candidates.len() < 3 {
        return Err(Error::InvalidInput("too few shared points for seed correspondences".into()));
    }
    let picks = sample(&mut seed_rng, seed_candidates.len(), spec.seed_count.min(seed_candidates.len())).into_vec();
    let mut seeds: Vec<SeedCorrespondence> = picks.iter().map(|&k| seed_candidates[k]).collect();
    seeds.sort_by_key(|s| s.source_index);
    write_seed_correspondences(&paths.seeds, &seeds)?;

    let mut match_rng = rng(6);
    let pixel_noise = Normal::new(0.0, spec.noise.match_pixels.max(0.0)).unwrap();
    let picks = sample(&mut match_rng, stable_n.len(), spec.match_count.min(stable_n.len())).into_vec();
    let mut matches = Vec::new();
    for k in picks {
        let i = stable_n[k];
        let world = scene_n.model.position(i);
        let visible: Vec<(u32, [f64; 2])> = cams0
            .iter()
            .filter_map(|c| c.project(&world).filter(|px| c.in_bounds(px)).map(|px| (c.id, [px.x, px.y])))
            .collect();
        if visible.is_empty() {
            continue;
        }
        let (view_id, px) = visible[match_rng.gen_range(0..visible.len())];
        let pixel = [px[0] + pixel_noise.sample(&mut match_rng), px[1] + pixel_noise.sample(&mut match_rng)];
        matches.push(Match2D3D { view_id, pixel, point_index: dense_slot[&i] });
    }
    write_matches(&paths.matches, &matches)?;

    let ground_truth =
        GroundTruth { transform: to_perturbed.inverse().to_array(), changed_objects: changed, changed_pixels };
    write_json(&paths.transform, &ground_truth)?;

    let g0 = pretrain_reference(spec, &reference_cloud, &t0_views, options)?;
    g0.save_ply(&paths.t0_model)?;
    write_json(&paths.spec, spec)?;
    Dataset::load(out_dir)
}

/// Loads one ground-truth change mask.
pub fn load_mask(dataset_dir: &Path, view_id: u32) -> Result<Vec<bool>> {
    let (_, _, values) = load_gray_png(&DatasetPaths::new(dataset_dir).mask(view_id))?;
    Ok(values.iter().map(|&v| v > 0.5).collect())
}
