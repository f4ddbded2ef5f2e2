//! The experiment matrix: every (scene, variant) cell trains a model on the later
//! views and scores it on the held-out later views.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset, Dataset, DatasetPaths, GenerateOptions};
use crate::scene::{Layout, SceneSpec};
use tempogs_core::geometry::{apply_similarity, apply_similarity_to_camera, rotation_about, SimilarityTransform};
use tempogs_core::image::View;
use tempogs_core::io::{read_json, write_atomic, write_json};
use tempogs_core::metrics::evaluate;
use tempogs_core::optimizer::{
    baseline_optimize, finetune_optimize, init_model_from_cloud, initial_confidence, progressive_from_maps,
    progressive_optimize, scene_extent, TrainConfig, TrainReport,
};
use tempogs_core::registration::{coarse_alignment, finish_alignment, fuse_clouds, AlignSettings};
use tempogs_core::splat::GaussianModel;
use tempogs_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    Baseline,
    NoAlign,
    NoIcp,
    NoConfidenceFinetune,
    FixedConfidence,
    /// Full method on a dataset with a different later-view count and layout.
    Views {
        count: usize,
        layout: Layout,
    },
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = vec![
            Variant::Full,
            Variant::Baseline,
            Variant::NoAlign,
            Variant::NoIcp,
            Variant::NoConfidenceFinetune,
            Variant::FixedConfidence,
        ];
        for count in [4, 6, 8] {
            for layout in [Layout::Concentrated, Layout::Uniform] {
                v.push(Variant::Views { count, layout });
            }
        }
        v
    }

    fn dataset_spec(&self, spec: &SceneSpec) -> SceneSpec {
        let mut s = spec.clone();
        if let Variant::Views { count, layout } = *self {
            s.views.tn_train = count;
            s.views.layout = layout;
        }
        s
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::Baseline => f.write_str("baseline"),
            Variant::NoAlign => f.write_str("no-align"),
            Variant::NoIcp => f.write_str("no-icp"),
            Variant::NoConfidenceFinetune => f.write_str("no-confidence-finetune"),
            Variant::FixedConfidence => f.write_str("fixed-confidence"),
            Variant::Views { count, layout } => write!(f, "views-{count}-{layout}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s {
            "full" => Variant::Full,
            "baseline" => Variant::Baseline,
            "no-align" => Variant::NoAlign,
            "no-icp" => Variant::NoIcp,
            "no-confidence-finetune" => Variant::NoConfidenceFinetune,
            "fixed-confidence" => Variant::FixedConfidence,
            other => {
                let parts: Vec<&str> = other.split('-').collect();
                match parts.as_slice() {
                    ["views", n, layout] => {
                        let count: usize = n
                            .parse()
                            .map_err(|_| Error::InvalidInput(format!("bad view count in variant {other:?}")))?;
                        if ![4, 6, 8].contains(&count) {
                            return Err(Error::InvalidInput(format!("view count must be 4, 6 or 8 in {other:?}")));
                        }
                        Variant::Views { count, layout: layout.parse()? }
                    }
                    _ => return Err(Error::InvalidInput(format!("unknown variant {other:?}"))),
                }
            }
        };
        Ok(v)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug)]
pub struct MatrixOptions {
    pub train: TrainConfig,
    pub align: AlignSettings,
    pub generate: GenerateOptions,
    /// Extra rotation (degrees) applied after the coarse stage, about the
    /// reference cloud's centroid.
    pub inject_rotation_deg: Option<f64>,
    /// Where generated datasets live; existing ones with a matching spec are reused.
    pub dataset_root: PathBuf,
}

impl MatrixOptions {
    pub fn new(dataset_root: impl Into<PathBuf>) -> Self {
        Self {
            train: TrainConfig::default(),
            align: AlignSettings::default(),
            generate: GenerateOptions::default(),
            inject_rotation_deg: None,
            dataset_root: dataset_root.into(),
        }
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scene: String,
    pub seed: u64,
    pub variant: Variant,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub psnr_infinite: bool,
    /// Perceptual metric needing a pretrained network; never computed.
    pub lpips: Option<f64>,
    pub align_seconds: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub iterations: usize,
    pub gaussians: usize,
    pub termination: Option<String>,
    pub final_coverage: Option<f64>,
    pub error: Option<String>,
}

/// Alignment modes of the variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    Full,
    CoarseOnly,
    Identity,
}

/// Later views and fused cloud brought into the reference frame.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub transform: SimilarityTransform,
    pub fused: tempogs_core::geometry::PointCloud,
    pub tn_train: Vec<View>,
    pub tn_test: Vec<View>,
    pub seconds: f64,
}

/// Rotation by `degrees` about a horizontal axis through `center`.
pub fn misalignment(center: &Vector3<f64>, degrees: f64) -> SimilarityTransform {
    let r = rotation_about(Vector3::new(1.0, 1.0, 0.0), degrees);
    SimilarityTransform::rigid(r, center - r * center)
}

fn transfer(views: &[View], s: &SimilarityTransform) -> Vec<View> {
    views.iter().map(|v| View { camera: apply_similarity_to_camera(s, &v.camera), image: v.image.clone() }).collect()
}

/// Brings the later data into the reference frame with a known transform.
pub fn prepare_with_transform(
    dataset: &Dataset,
    transform: &SimilarityTransform,
    dedup_voxel: Option<f64>,
) -> Prepared {
    let aligned = apply_similarity(transform, &dataset.dense_cloud);
    Prepared {
        tn_train: transfer(&dataset.tn_train, transform),
        tn_test: transfer(&dataset.tn_test, transform),
        transform: transform.clone(),
        fused: fuse_clouds(&dataset.reference_cloud, &aligned, dedup_voxel),
        seconds: 0.0,
    }
}

pub fn prepare(dataset: &Dataset, mode: AlignMode, options: &MatrixOptions) -> Result<Prepared> {
    let start = Instant::now();
    let (transform, fused) = match mode {
        AlignMode::Identity => {
            let identity = SimilarityTransform::identity();
            let mut prepared = prepare_with_transform(dataset, &identity, options.align.dedup_voxel);
            prepared.seconds = start.elapsed().as_secs_f64();
            return Ok(prepared);
        }
        AlignMode::Full | AlignMode::CoarseOnly => {
            let settings = AlignSettings { use_icp: mode == AlignMode::Full, ..options.align.clone() };
            let cams = dataset.tn_train_cameras();
            let inputs = dataset.align_inputs(&cams);
            let (mut coarse, lm) = coarse_alignment(&inputs, &settings)?;
            if let Some(deg) = options.inject_rotation_deg {
                coarse = misalignment(&dataset.reference_cloud.centroid(), deg).compose(&coarse);
            }
            let result = finish_alignment(&inputs, coarse, lm, &settings)?;
            (result.transform(), result.fused_cloud)
        }
    };
    Ok(Prepared {
        tn_train: transfer(&dataset.tn_train, &transform),
        tn_test: transfer(&dataset.tn_test, &transform),
        transform,
        fused,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Progressive training with the initial maps kept fixed.
pub fn fixed_confidence_optimize(
    g0: &GaussianModel,
    prepared: &Prepared,
    t0_views: &[View],
    config: &TrainConfig,
) -> Result<(GaussianModel, TrainReport)> {
    let (selected, maps) = initial_confidence(g0, t0_views, &prepared.tn_train, config)?;
    let extent = scene_extent(&prepared.tn_train.iter().map(|v| v.camera.clone()).collect::<Vec<_>>());
    let gn = init_model_from_cloud(&prepared.fused, extent)?;
    progressive_from_maps(gn, maps, &selected, &prepared.tn_train, config, false)
}

/// Trains and evaluates one variant on a loaded dataset.
pub fn run_cell(dataset: &Dataset, variant: Variant, options: &MatrixOptions) -> Result<CellResult> {
    let mode = match variant {
        Variant::NoAlign => AlignMode::Identity,
        Variant::NoIcp => AlignMode::CoarseOnly,
        _ => AlignMode::Full,
    };
    let prepared = prepare(dataset, mode, options)?;
    let config = &options.train;
    let start = Instant::now();
    let (model, report) = match variant {
        Variant::Baseline => baseline_optimize(&prepared.fused, &prepared.tn_train, config)?,
        Variant::NoConfidenceFinetune => finetune_optimize(&dataset.g0, &prepared.tn_train, config)?,
        Variant::FixedConfidence => fixed_confidence_optimize(&dataset.g0, &prepared, &dataset.t0_views, config)?,
        _ => progressive_optimize(&dataset.g0, &prepared.fused, &dataset.t0_views, &prepared.tn_train, config)?,
    };
    let train_seconds = start.elapsed().as_secs_f64();
    let eval = evaluate(&model, &prepared.tn_test, config.background, &config.render_settings(), &config.ssim)?;
    let uses_maps = !matches!(variant, Variant::Baseline | Variant::NoConfidenceFinetune);
    Ok(CellResult {
        scene: dataset.spec.name.clone(),
        seed: dataset.spec.seed,
        variant,
        mean_psnr: eval.mean_psnr,
        mean_ssim: Some(eval.mean_ssim),
        psnr_infinite: eval.any_infinite,
        lpips: None,
        align_seconds: prepared.seconds,
        train_seconds,
        eval_seconds: eval.seconds,
        iterations: report.iterations,
        gaussians: model.len(),
        termination: Some(
            serde_json::to_value(report.termination)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
        ),
        final_coverage: uses_maps.then(|| report.coverage.last().copied()).flatten(),
        error: None,
    })
}

fn failed_cell(spec: &SceneSpec, variant: Variant, err: &Error) -> CellResult {
    CellResult {
        scene: spec.name.clone(),
        seed: spec.seed,
        variant,
        mean_psnr: None,
        mean_ssim: None,
        psnr_infinite: false,
        lpips: None,
        align_seconds: 0.0,
        train_seconds: 0.0,
        eval_seconds: 0.0,
        iterations: 0,
        gaussians: 0,
        termination: None,
        final_coverage: None,
        error: Some(err.to_string()),
    }
}

/// Directory name of a generated dataset.
fn dataset_dir(root: &Path, spec: &SceneSpec) -> PathBuf {
    root.join(format!("{}-seed{}-{}{}", spec.name, spec.seed, spec.views.tn_train, spec.views.layout))
}

/// Loads the dataset for `spec` from `root`, generating it when absent or stale.
pub fn obtain_dataset(spec: &SceneSpec, root: &Path, generate: &GenerateOptions) -> Result<Dataset> {
    let dir = dataset_dir(root, spec);
    let spec_file = DatasetPaths::new(&dir).spec;
    let stored = read_json::<serde_json::Value>(&spec_file).ok();
    if stored.is_some() && stored == serde_json::to_value(spec).ok() {
        if let Ok(d) = Dataset::load(&dir) {
            return Ok(d);
        }
    }
    generate_dataset(spec, &dir, generate)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub cells: Vec<CellResult>,
}

impl MatrixReport {
    pub fn find(&self, seed: u64, variant: Variant) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.seed == seed && c.variant == variant)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scene",
            "seed",
            "variant",
            "psnr",
            "ssim",
            "lpips",
            "psnr_infinite",
            "align_s",
            "train_s",
            "eval_s",
            "iterations",
            "gaussians",
            "termination",
            "coverage",
            "error",
        ])
        .map_err(csv_error)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.scene.clone(),
                c.seed.to_string(),
                c.variant.to_string(),
                opt(c.mean_psnr),
                opt(c.mean_ssim),
                opt(c.lpips),
                c.psnr_infinite.to_string(),
                format!("{:.2}", c.align_seconds),
                format!("{:.2}", c.train_seconds),
                format!("{:.2}", c.eval_seconds),
                c.iterations.to_string(),
                c.gaussians.to_string(),
                c.termination.clone().unwrap_or_default(),
                opt(c.final_coverage),
                c.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Plain-text table with one line per cell.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:<10} {:>4}  {:<24} {:>8} {:>7} {:>6} {:>9}\n",
            "scene", "seed", "variant", "PSNR", "SSIM", "LPIPS", "time(s)"
        );
        for c in &self.cells {
            let psnr = match (c.mean_psnr, c.psnr_infinite) {
                (Some(p), _) => format!("{p:.2}"),
                (None, true) => "inf".into(),
                (None, false) => "-".into(),
            };
            let ssim = c.mean_ssim.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            let time = c.align_seconds + c.train_seconds + c.eval_seconds;
            s.push_str(&format!(
                "{:<10} {:>4}  {:<24} {:>8} {:>7} {:>6} {:>9.1}",
                c.scene,
                c.seed,
                c.variant.to_string(),
                psnr,
                ssim,
                "n/a",
                time
            ));
            if let Some(e) = &c.error {
                s.push_str(&format!("  FAILED: {e}"));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `results.csv`, `results.json` and `summary.txt` into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        write_atomic(&out.join("results.csv"), &self.to_csv()?)?;
        write_json(&out.join("results.json"), self)?;
        write_atomic(&out.join("summary.txt"), self.summary().as_bytes())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("CSV encoding failed: {e}"))
}

/// Runs every (spec, variant) cell; a failing cell is recorded and the matrix
/// continues. Tables are written to `out` after every cell.
pub fn run_experiment_matrix(
    specs: &[SceneSpec],
    variants: &[Variant],
    out: &Path,
    options: &MatrixOptions,
) -> Result<MatrixReport> {
    let mut report = MatrixReport::default();
    for spec in specs {
        spec.validate()?;
    }
    for spec in specs {
        for &variant in variants {
            let ds_spec = variant.dataset_spec(spec);
            let cell = obtain_dataset(&ds_spec, &options.dataset_root, &options.generate)
                .and_then(|d| run_cell(&d, variant, options))
                .unwrap_or_else(|e| failed_cell(spec, variant, &e));
            report.cells.push(cell);
            report.write(out)?;
        }
    }
    report.write(out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::all() {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("views-5-uniform".parse::<Variant>().is_err());
        assert!("everything".parse::<Variant>().is_err());
        let json = serde_json::to_string(&Variant::Views { count: 6, layout: Layout::Concentrated }).unwrap();
        assert_eq!(json, "\"views-6-concentrated\"");
    }

    #[test]
    fn misalignment_fixes_center_and_rotates() {
        let c = Vector3::new(0.3, -0.2, 0.1);
        let m = misalignment(&c, 2.0);
        assert!((m.apply_point(&c) - c).norm() < 1e-12);
        assert!((m.rotation_angle_to(&SimilarityTransform::identity()).to_degrees() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn empty_variant_list_gives_empty_table() {
        let out = tempfile::tempdir().unwrap();
        let report = run_experiment_matrix(
            &[SceneSpec::default()],
            &[],
            out.path(),
            &MatrixOptions::new(out.path().join("data")),
        )
        .unwrap();
        assert!(report.cells.is_empty());
        let csv = std::fs::read_to_string(out.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn failing_cells_are_recorded() {
        let out = tempfile::tempdir().unwrap();
        let mut options = MatrixOptions::new(out.path().join("data"));
        options.train.tau = 0.99; // invalid: tau must stay below tau_iter
        let mut spec = SceneSpec::default();
        spec.views.t0_count = 4;
        spec.views.width = 32;
        spec.views.height = 24;
        spec.views.focal = 30.0;
        for o in &mut spec.objects {
            o.gaussian_density *= 0.1;
        }
        options.generate.pretrain.max_iterations = 5;
        let report = run_experiment_matrix(&[spec], &[Variant::Full, Variant::Baseline], out.path(), &options).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells.iter().all(|c| c.error.is_some()));
        assert!(report.summary().contains("FAILED"));
    }
}
