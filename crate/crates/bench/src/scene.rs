//! Procedural scenes: blobs of Gaussians sampled on primitive surfaces, plus the
//! edits that turn the earlier scene into the later one.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use tempogs_core::geometry::{rotation_about, SimilarityTransform};
use tempogs_core::splat::{Gaussian3D, GaussianModel};
use tempogs_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Primitive {
    BoxBlob,
    SphereBlob,
    PlaneBlob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub primitive: Primitive,
    pub center: [f64; 3],
    /// Rotation about the vertical axis, in degrees.
    pub yaw_deg: f64,
    /// Half-extents (box, plane) or radii (sphere).
    pub size: [f64; 3],
    pub color: [f64; 3],
    /// Gaussians per unit of surface area.
    pub gaussian_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Add { object: ObjectSpec },
    Remove { index: usize },
    Recolor { index: usize, color: [f64; 3] },
    Move { index: usize, offset: [f64; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Concentrated,
    Uniform,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Layout::Uniform),
            "concentrated" => Ok(Layout::Concentrated),
            other => Err(Error::InvalidInput(format!("unknown layout {other:?}; expected uniform or concentrated"))),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Uniform => "uniform",
            Layout::Concentrated => "concentrated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSpec {
    /// Earlier views, split over two rings.
    pub t0_count: usize,
    pub t0_radius: f64,
    pub t0_heights: [f64; 2],
    pub tn_train: usize,
    pub tn_test: usize,
    pub tn_radius: f64,
    pub tn_height: f64,
    /// Held-out views sit closer, alternating between two heights off the training ring.
    pub tn_test_radius: f64,
    pub tn_test_heights: [f64; 2],
    pub layout: Layout,
    /// Angular span of a concentrated layout, in degrees.
    pub concentrated_span_deg: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            t0_count: 40,
            t0_radius: 3.0,
            t0_heights: [1.2, 2.2],
            tn_train: 8,
            tn_test: 4,
            tn_radius: 2.8,
            tn_height: 1.7,
            tn_test_radius: 2.5,
            tn_test_heights: [0.9, 2.6],
            layout: Layout::Uniform,
            concentrated_span_deg: 90.0,
            width: 128,
            height: 96,
            focal: 120.0,
        }
    }
}

/// Similarity from the reference frame into the frame the later capture is
/// estimated in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramePerturbation {
    pub axis: [f64; 3],
    pub angle_deg: f64,
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Default for FramePerturbation {
    fn default() -> Self {
        Self { axis: [0.3, -0.5, 0.8], angle_deg: 15.0, scale: 1.15, translation: [0.4, -0.3, 0.2] }
    }
}

impl FramePerturbation {
    /// Map from the reference frame to the perturbed frame.
    pub fn to_perturbed(&self) -> Result<SimilarityTransform> {
        let axis = Vector3::from(self.axis);
        if axis.norm() == 0.0 {
            return Err(Error::InvalidInput("frame perturbation axis must be non-zero".into()));
        }
        SimilarityTransform::new(self.scale, rotation_about(axis, self.angle_deg), Vector3::from(self.translation))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Rotation noise on the estimated later cameras, degrees.
    pub pose_deg: f64,
    /// Position noise on the estimated later cameras, scene units.
    pub pose_translation: f64,
    /// Reference cloud point noise, relative to the scene extent.
    pub cloud: f64,
    /// Dense later cloud point noise, relative to the scene extent.
    pub dense_cloud: f64,
    pub match_pixels: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { pose_deg: 0.0, pose_translation: 0.0, cloud: 0.005, dense_cloud: 0.02, match_pixels: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub name: String,
    pub seed: u64,
    pub extent: f64,
    pub objects: Vec<ObjectSpec>,
    pub edits: Vec<Edit>,
    pub views: ViewSpec,
    pub frame: FramePerturbation,
    pub noise: NoiseSpec,
    /// Fraction of the earlier Gaussians kept as the sparse reference cloud.
    pub reference_fraction: f64,
    /// Fraction of the visible later Gaussians kept in the dense later cloud.
    pub dense_fraction: f64,
    pub match_count: usize,
    pub seed_count: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let obj = |primitive, center: [f64; 3], yaw_deg, size, color, gaussian_density| ObjectSpec {
            primitive,
            center,
            yaw_deg,
            size,
            color,
            gaussian_density,
        };
        Self {
            name: "desk".into(),
            seed: 0,
            extent: 1.2,
            objects: vec![
                obj(Primitive::PlaneBlob, [0.0, 0.0, 0.0], 0.0, [1.2, 1.2, 0.0], [0.55, 0.5, 0.42], 150.0),
                obj(Primitive::BoxBlob, [-0.45, -0.3, 0.25], 20.0, [0.2, 0.2, 0.25], [0.8, 0.25, 0.2], 260.0),
                obj(Primitive::SphereBlob, [0.4, 0.35, 0.25], 0.0, [0.25, 0.25, 0.25], [0.2, 0.45, 0.8], 260.0),
                obj(Primitive::BoxBlob, [0.45, -0.45, 0.15], -30.0, [0.15, 0.15, 0.15], [0.25, 0.7, 0.3], 260.0),
                obj(Primitive::SphereBlob, [-0.45, 0.45, 0.18], 0.0, [0.18, 0.18, 0.18], [0.85, 0.75, 0.2], 260.0),
                obj(Primitive::BoxBlob, [0.0, 0.55, 0.4], 0.0, [0.08, 0.08, 0.4], [0.55, 0.45, 0.65], 260.0),
                obj(Primitive::BoxBlob, [-0.05, -0.7, 0.3], 10.0, [0.25, 0.05, 0.3], [0.2, 0.6, 0.6], 260.0),
                obj(Primitive::SphereBlob, [0.7, 0.0, 0.1], 0.0, [0.1, 0.1, 0.1], [0.95, 0.55, 0.15], 260.0),
                obj(Primitive::BoxBlob, [-0.75, 0.05, 0.12], -15.0, [0.1, 0.18, 0.12], [0.9, 0.5, 0.6], 260.0),
            ],
            edits: vec![
                Edit::Remove { index: 3 },
                Edit::Move { index: 4, offset: [0.25, -0.2, 0.0] },
                Edit::Add {
                    object: obj(
                        Primitive::BoxBlob,
                        [0.05, -0.05, 0.12],
                        45.0,
                        [0.12, 0.12, 0.12],
                        [0.9, 0.9, 0.9],
                        260.0,
                    ),
                },
            ],
            views: ViewSpec::default(),
            frame: FramePerturbation::default(),
            noise: NoiseSpec::default(),
            reference_fraction: 0.5,
            dense_fraction: 0.5,
            match_count: 400,
            seed_count: 40,
        }
    }
}

impl SceneSpec {
    /// Default scene with a different seed and everything else fixed.
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.views;
        if self.objects.is_empty() {
            return Err(Error::InvalidInput("scene needs at least one object".into()));
        }
        if v.t0_count == 0 || v.tn_train == 0 || v.tn_test == 0 {
            return Err(Error::InvalidInput("view counts must be at least 1".into()));
        }
        if v.width < 16 || v.height < 16 || v.focal <= 0.0 {
            return Err(Error::InvalidInput("images must be at least 16x16 with positive focal length".into()));
        }
        if [v.t0_radius, v.tn_radius, v.tn_test_radius].iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidInput("camera radii must be positive".into()));
        }
        if !(self.extent > 0.0) {
            return Err(Error::InvalidInput("extent must be positive".into()));
        }
        for f in [self.reference_fraction, self.dense_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidFraction(f));
            }
        }
        if self.seed_count < 3 || self.match_count == 0 {
            return Err(Error::InvalidInput("need at least 3 seed correspondences and 1 match".into()));
        }
        for o in &self.objects {
            validate_object(o)?;
        }
        let mut alive = vec![true; self.objects.len()];
        for e in &self.edits {
            match e {
                Edit::Add { object } => {
                    validate_object(object)?;
                    alive.push(true);
                }
                Edit::Remove { index } | Edit::Recolor { index, .. } | Edit::Move { index, .. } => {
                    if !alive.get(*index).copied().unwrap_or(false) {
                        return Err(Error::InvalidInput(format!("edit refers to missing object {index}")));
                    }
                    if matches!(e, Edit::Remove { .. }) {
                        alive[*index] = false;
                    }
                }
            }
        }
        self.frame.to_perturbed()?;
        Ok(())
    }

    /// Objects present in the earlier and later scene; `None` marks removed slots.
    pub fn objects_at(&self, later: bool) -> Vec<Option<ObjectSpec>> {
        let mut objects: Vec<Option<ObjectSpec>> = self.objects.iter().cloned().map(Some).collect();
        if !later {
            return objects;
        }
        for e in &self.edits {
            match e {
                Edit::Add { object } => objects.push(Some(object.clone())),
                Edit::Remove { index } => objects[*index] = None,
                Edit::Recolor { index, color } => {
                    if let Some(o) = objects[*index].as_mut() {
                        o.color = *color;
                    }
                }
                Edit::Move { index, offset } => {
                    if let Some(o) = objects[*index].as_mut() {
                        for k in 0..3 {
                            o.center[k] += offset[k];
                        }
                    }
                }
            }
        }
        objects
    }

    /// Objects whose appearance differs between the two times.
    pub fn changed_objects(&self) -> Vec<usize> {
        let before = self.objects_at(false);
        let after = self.objects_at(true);
        (0..after.len()).filter(|&i| before.get(i).cloned().flatten() != after[i]).collect()
    }
}

fn validate_object(o: &ObjectSpec) -> Result<()> {
    let flat = matches!(o.primitive, Primitive::PlaneBlob);
    let dims = if flat { &o.size[..2] } else { &o.size[..] };
    if dims.iter().any(|&s| !(s > 0.0)) || !(o.gaussian_density > 0.0) {
        return Err(Error::InvalidInput("object sizes and densities must be positive".into()));
    }
    if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidInput("object colors must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Ground-truth scene: a model plus the object each Gaussian belongs to.
#[derive(Clone, Debug)]
pub struct GroundTruthScene {
    pub model: GaussianModel,
    pub labels: Vec<usize>,
}

/// Samples every object's surface. Each object draws from its own stream, so an
/// object looks the same at both times unless an edit touches it.
pub fn build_scene(spec: &SceneSpec, later: bool) -> GroundTruthScene {
    let mut model = GaussianModel::new();
    let mut labels = Vec::new();
    for (i, obj) in spec.objects_at(later).iter().enumerate() {
        let Some(obj) = obj else { continue };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1000).wrapping_add(i as u64));
        for g in sample_object(obj, &mut rng) {
            model.push(&g);
            labels.push(i);
        }
    }
    GroundTruthScene { model, labels }
}

fn surface_area(o: &ObjectSpec) -> f64 {
    let [a, b, c] = o.size;
    match o.primitive {
        Primitive::PlaneBlob => 4.0 * a * b,
        Primitive::BoxBlob => 8.0 * (a * b + b * c + a * c),
        // Knud Thomsen's approximation
        Primitive::SphereBlob => {
            let p = 1.6075;
            4.0 * PI * (((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0).powf(1.0 / p)
        }
    }
}

/// Surface point and outward normal in the object's local frame.
fn sample_surface(o: &ObjectSpec, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    let [a, b, c] = o.size;
    match o.primitive {
        Primitive::PlaneBlob => (Vector3::new(rng.gen_range(-a..a), rng.gen_range(-b..b), 0.0), Vector3::z()),
        Primitive::SphereBlob => {
            let n: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
            let u = n.normalize();
            let p = Vector3::new(a * u.x, b * u.y, c * u.z);
            let normal = Vector3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).normalize();
            (p, normal)
        }
        Primitive::BoxBlob => {
            let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
            let total: f64 = faces.iter().sum();
            let mut pick = rng.gen_range(0.0..total);
            let mut face = 0;
            while face < 5 && pick >= faces[face] {
                pick -= faces[face];
                face += 1;
            }
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = Vector3::new(rng.gen_range(-a..a), rng.gen_range(-b..b), rng.gen_range(-c..c));
            p[axis] = sign * o.size[axis];
            let mut normal = Vector3::zeros();
            normal[axis] = sign;
            (p, normal)
        }
    }
}

fn sample_object(o: &ObjectSpec, rng: &mut ChaCha8Rng) -> Vec<Gaussian3D> {
    let area = surface_area(o);
    let count = (area * o.gaussian_density).ceil().max(1.0) as usize;
    let spacing = (area / count as f64).sqrt();
    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), o.yaw_deg.to_radians());
    let center = Vector3::from(o.center);
    let base = Vector3::from(o.color);
    (0..count)
        .map(|_| {
            let (p, n) = sample_surface(o, rng);
            let position = center + yaw * p;
            let normal = yaw * n;
            let rotation = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::x()), PI));
            // checker-like modulation gives every surface some texture
            let k = 9.0;
            let pattern = (k * p.x).sin() * (k * p.y).sin() * (k * p.z + 0.5).cos();
            let jitter: f64 = rng.gen_range(-0.06..0.06);
            let color = (base * (0.8 + 0.2 * pattern.signum()) + Vector3::repeat(jitter)).map(|v| v.clamp(0.0, 1.0));
            Gaussian3D {
                position,
                rotation,
                scale: Vector3::new(0.75 * spacing, 0.75 * spacing, 0.15 * spacing),
                opacity: 0.9,
                color,
            }
        })
        .collect()
}
