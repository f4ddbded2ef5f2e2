use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tempogs_bench::experiment::{prepare_with_transform, Prepared};
use tempogs_bench::{generate_dataset, Dataset, GenerateOptions, SceneSpec};
use tempogs_core::confidence::{mean_coverage, write_confidence_maps, write_heatmap, ConfidenceMap};
use tempogs_core::image::View;
use tempogs_core::io::{read_json, write_json};
use tempogs_core::metrics::{evaluate, EvalResult};
use tempogs_core::optimizer::{initial_confidence, progressive_from_confidence, TrainConfig, TrainReport};
use tempogs_core::registration::{align, AlignSettings, AlignmentSummary};
use tempogs_core::splat::GaussianModel;

use crate::args::{AlignArgs, Cli, Command, ConfidenceArgs, EvalArgs, GenArgs, PipelineArgs, Split, UpdateArgs};
use crate::config::{read_train_config, scene_spec, train_config};

/// Contents of `alignment.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFile {
    #[serde(flatten)]
    pub alignment: AlignmentSummary,
    pub settings: AlignSettings,
    pub fused_points: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewCoverage {
    pub view_id: u32,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub config: TrainConfig,
    pub views: Vec<ViewCoverage>,
    pub mean_coverage: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub config: TrainConfig,
    pub dataset: PathBuf,
    pub transform: [f64; 13],
    pub train: TrainReport,
    pub metrics: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: PathBuf,
    pub split: String,
    pub metrics: EvalResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub generate: f64,
    pub align: f64,
    pub confidence: f64,
    pub update: f64,
    pub eval: f64,
}

/// Contents of the pipeline's `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: TrainConfig,
    pub spec: SceneSpec,
    pub alignment: AlignmentFile,
    pub confidence: Vec<ViewCoverage>,
    pub train: TrainReport,
    pub metrics: EvalResult,
    pub stage_seconds: StageSeconds,
}

/// Stage messages on stderr.
pub struct Progress {
    quiet: bool,
}

impl Progress {
    pub fn new(quiet: bool) -> Self {
        Self { quiet }
    }

    fn say(&self, message: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[tempogs] {}", message.as_ref());
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let p = Progress::new(cli.quiet);
    match cli.command {
        Command::Gen(args) => cmd_gen(&args, &p).map(|_| ()),
        Command::Align(args) => cmd_align(&args, &p).map(|_| ()),
        Command::Confidence(args) => cmd_confidence(&args, &p),
        Command::Update(args) => cmd_update(&args, &p).map(|_| ()),
        Command::Eval(args) => cmd_eval(&args, &p).map(|_| ()),
        Command::Pipeline(args) => cmd_pipeline(&args, &p).map(|_| ()),
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        bail!("dataset directory {} does not exist", dir.display());
    }
    Dataset::load(dir).with_context(|| format!("cannot load dataset {}", dir.display()))
}

fn load_model(path: &Path) -> Result<GaussianModel> {
    GaussianModel::load_ply(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn load_alignment(path: &Path) -> Result<AlignmentFile> {
    read_json(path).with_context(|| format!("cannot load alignment {}", path.display()))
}

fn prepared_from(dataset: &Dataset, alignment: &AlignmentFile) -> Result<Prepared> {
    let transform = alignment.alignment.transform()?;
    Ok(prepare_with_transform(dataset, &transform, alignment.settings.dedup_voxel))
}

fn pretrain_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_gen(args: &GenArgs, p: &Progress) -> Result<Dataset> {
    let spec = scene_spec(&args.scene, args.train.seed)?;
    let pretrain = pretrain_config(args.train.config.as_deref(), args.train.seed)?;
    p.say(format!("generating dataset into {}", args.out.display()));
    let options = GenerateOptions { pretrain, cache_dir: args.cache.clone() };
    let dataset = generate_dataset(&spec, &args.out, &options)?;
    p.say(format!(
        "{} reference views, {} + {} later views, {} reference Gaussians",
        dataset.t0_views.len(),
        dataset.tn_train.len(),
        dataset.tn_test.len(),
        dataset.g0.len()
    ));
    Ok(dataset)
}

fn run_alignment(dataset: &Dataset, use_icp: bool, seed: u64) -> Result<AlignmentFile> {
    let start = Instant::now();
    let settings = AlignSettings { use_icp, seed, ..AlignSettings::default() };
    let cameras = dataset.tn_train_cameras();
    let result = align(&dataset.align_inputs(&cameras), &settings)?;
    Ok(AlignmentFile {
        alignment: result.summary(),
        settings,
        fused_points: result.fused_cloud.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn cmd_align(args: &AlignArgs, p: &Progress) -> Result<AlignmentFile> {
    let dataset = load_dataset(&args.dataset)?;
    p.say("aligning later capture to the reference frame");
    let file = run_alignment(&dataset, !args.no_icp, args.seed.unwrap_or(0))?;
    write_json(&args.out, &file)?;
    let r = &file.alignment.residual_report;
    p.say(format!(
        "reprojection error {:.3} -> {:.3} px, ICP rms {:.5} -> {:.5}",
        r.reprojection_error_before, r.reprojection_error_after, r.icp_rms_before, r.icp_rms_after
    ));
    Ok(file)
}

fn coverages(maps: &[ConfidenceMap]) -> Vec<ViewCoverage> {
    maps.iter().map(|m| ViewCoverage { view_id: m.view_id, coverage: m.coverage() }).collect()
}

/// Initial confidence maps, written to `out` with an optional heat map per view.
fn confidence_stage(
    g0: &GaussianModel,
    dataset: &Dataset,
    prepared: &Prepared,
    config: &TrainConfig,
    out: &Path,
    heatmaps: bool,
) -> Result<(Vec<View>, Vec<ConfidenceMap>, ConfidenceReport)> {
    let start = Instant::now();
    let (selected, maps) = initial_confidence(g0, &dataset.t0_views, &prepared.tn_train, config)?;
    write_confidence_maps(&out.join("confidence_maps.json"), &maps)?;
    if heatmaps {
        for (map, view) in maps.iter().zip(&selected) {
            let path = out.join("heatmaps").join(format!("view_{:04}.png", map.view_id));
            write_heatmap(&path, map, view.image.width, view.image.height)?;
        }
    }
    let report = ConfidenceReport {
        config: config.clone(),
        views: coverages(&maps),
        mean_coverage: mean_coverage(&maps),
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("confidence_report.json"), &report)?;
    Ok((selected, maps, report))
}

pub fn cmd_confidence(args: &ConfidenceArgs, p: &Progress) -> Result<()> {
    let config = train_config(&args.train)?;
    let dataset = load_dataset(&args.dataset)?;
    let g0 = match &args.model {
        Some(path) => load_model(path)?,
        None => dataset.g0.clone(),
    };
    let alignment = match &args.alignment {
        Some(path) => load_alignment(path)?,
        None => {
            p.say("no alignment given; aligning first");
            run_alignment(&dataset, true, config.seed)?
        }
    };
    let prepared = prepared_from(&dataset, &alignment)?;
    p.say(format!("adapting the reference model for {} steps", config.adaptation_steps));
    let (_, _, report) = confidence_stage(&g0, &dataset, &prepared, &config, &args.out, args.dump_heatmaps)?;
    p.say(format!("mean coverage {:.3} over {} views", report.mean_coverage, report.views.len()));
    Ok(())
}

fn evaluate_views(model: &GaussianModel, views: &[View], config: &TrainConfig) -> Result<EvalResult> {
    Ok(evaluate(model, views, config.background, &config.render_settings(), &config.ssim)?)
}

pub fn cmd_update(args: &UpdateArgs, p: &Progress) -> Result<UpdateReport> {
    let config = train_config(&args.train)?;
    let dataset = load_dataset(&args.dataset)?;
    let g0 = match &args.model_t0 {
        Some(path) => load_model(path)?,
        None => dataset.g0.clone(),
    };
    let alignment = load_alignment(&args.alignment)?;
    let prepared = prepared_from(&dataset, &alignment)?;
    p.say("building initial confidence");
    let (selected, maps) = initial_confidence(&g0, &dataset.t0_views, &prepared.tn_train, &config)?;
    p.say(format!("training (up to {} iterations)", config.max_iterations));
    let (model, train) = progressive_from_confidence(&prepared.fused, maps, &selected, &prepared.tn_train, &config)?;
    model.save_ply(&args.out)?;
    let metrics = evaluate_views(&model, &prepared.tn_test, &config)?;
    let report = UpdateReport {
        config,
        dataset: args.dataset.clone(),
        transform: alignment.alignment.transform,
        train,
        metrics,
    };
    write_json(&args.report, &report)?;
    p.say(summary_line(&report.train, &report.metrics));
    Ok(report)
}

fn summary_line(train: &TrainReport, metrics: &EvalResult) -> String {
    let psnr = match metrics.mean_psnr {
        Some(v) => format!("{v:.2} dB"),
        None => "infinite".into(),
    };
    format!(
        "{} iterations ({:?}), {} Gaussians, test PSNR {psnr}, SSIM {:.4}",
        train.iterations, train.termination, train.final_gaussians, metrics.mean_ssim
    )
}

pub fn cmd_eval(args: &EvalArgs, p: &Progress) -> Result<EvalReport> {
    let dataset = load_dataset(&args.dataset)?;
    let model = load_model(&args.model)?;
    let config = TrainConfig::default();
    let views = match args.split {
        Split::T0 => dataset.t0_views.clone(),
        Split::Test | Split::Train => {
            let Some(path) = &args.alignment else {
                bail!("evaluating later views needs --alignment");
            };
            let prepared = prepared_from(&dataset, &load_alignment(path)?)?;
            if args.split == Split::Test {
                prepared.tn_test
            } else {
                prepared.tn_train
            }
        }
    };
    let metrics = evaluate_views(&model, &views, &config)?;
    let split = format!("{:?}", args.split).to_lowercase();
    let report = EvalReport { model: args.model.clone(), split, metrics };
    write_json(&args.out, &report)?;
    p.say(format_table(&report.metrics));
    Ok(report)
}

fn format_table(metrics: &EvalResult) -> String {
    let mut out = String::from("view      PSNR     SSIM\n");
    for v in &metrics.views {
        let psnr = v.psnr.map_or_else(|| "inf".to_string(), |x| format!("{x:.2}"));
        out.push_str(&format!("{:<6} {:>7} {:>8.4}\n", v.view_id, psnr, v.ssim));
    }
    let mean = metrics.mean_psnr.map_or_else(|| "inf".to_string(), |x| format!("{x:.2}"));
    out.push_str(&format!("mean   {mean:>7} {:>8.4}", metrics.mean_ssim));
    out
}

pub fn cmd_pipeline(args: &PipelineArgs, p: &Progress) -> Result<PipelineReport> {
    let mut config = train_config(&args.train)?;
    if config.snapshot_dir.is_none() {
        config.snapshot_dir = Some(args.out.join("snapshots"));
    }
    let mut seconds = StageSeconds::default();

    let start = Instant::now();
    let dataset = match &args.dataset {
        Some(dir) => load_dataset(dir)?,
        None => {
            let gen = GenArgs {
                scene: args.scene.clone(),
                train: crate::args::TrainArgs {
                    config: args.pretrain_config.clone(),
                    seed: args.train.seed,
                    literal_loss: false,
                },
                cache: args.cache.clone(),
                out: args.out.join("dataset"),
            };
            cmd_gen(&gen, p)?
        }
    };
    seconds.generate = start.elapsed().as_secs_f64();

    p.say("aligning");
    let alignment = run_alignment(&dataset, true, config.seed)?;
    write_json(&args.out.join("alignment.json"), &alignment)?;
    seconds.align = alignment.seconds;
    let prepared = prepared_from(&dataset, &alignment)?;

    p.say("building initial confidence");
    let (selected, maps, confidence) =
        confidence_stage(&dataset.g0, &dataset, &prepared, &config, &args.out.join("confidence"), args.dump_heatmaps)?;
    seconds.confidence = confidence.seconds;

    p.say(format!("training (up to {} iterations)", config.max_iterations));
    let start = Instant::now();
    let (model, train) = progressive_from_confidence(&prepared.fused, maps, &selected, &prepared.tn_train, &config)?;
    model.save_ply(&args.out.join("model_tn.ply"))?;
    seconds.update = start.elapsed().as_secs_f64();

    let metrics = evaluate_views(&model, &prepared.tn_test, &config)?;
    seconds.eval = metrics.seconds;
    write_json(
        &args.out.join("metrics.json"),
        &EvalReport { model: args.out.join("model_tn.ply"), split: "test".into(), metrics: metrics.clone() },
    )?;
    p.say(summary_line(&train, &metrics));

    let report = PipelineReport {
        config,
        spec: dataset.spec.clone(),
        alignment,
        confidence: confidence.views,
        train,
        metrics,
        stage_seconds: seconds,
    };
    write_json(&args.out.join("report.json"), &report)?;
    Ok(report)
}
