use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use jointreg::batch::run_batch;
use jointreg::incremental::run_windowed;
use jointreg::init::initialize;
use jointreg::io::{
    load_config, parse_point_file, read_points, write_point_file, Config, Metrics, MixtureSummary, Normalization,
    PointFormat, RunRecord, TransformRecord, TruthRecord,
};
use jointreg::scene::{
    blob_surface, classify_components, export_scene_model, mean_composition_angle, one_vs_all_icp, rotation_rmse,
    sequential_icp, synthesize_views,
};
use jointreg::{MixtureModel, PointSet, RigidTransform};

#[derive(Parser, Debug)]
#[command(name = "jointreg", version, about = "Joint rigid registration of multiple point sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register all inputs jointly with batch EM.
    RegisterBatch(RegisterBatch),
    /// Register a long sequence with front-end groups and a back-end window.
    RegisterIncremental(RegisterIncremental),
    /// Generate synthetic views of a model with outliers and noise.
    Synth(Synth),
    /// Compare a run record against ground truth.
    Eval(Eval),
    /// Label mixture components as inliers or outlier clusters.
    Classify(Classify),
    /// Write the inlier means of a mixture as a point file.
    ExportModel(ExportModel),
    /// Pairwise ICP baseline.
    BaselineIcp(BaselineIcp),
}

#[derive(Args, Debug)]
struct Inputs {
    /// Point files (.ply ascii or .xyz).
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// TOML configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where the run record (JSON) goes.
    #[arg(long)]
    out: PathBuf,
    /// Ground truth from `synth`; adds error metrics to the record.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegisterBatch {
    #[command(flatten)]
    io: Inputs,
    /// Also save the full mixture (JSON) for `classify` and `export-model`.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegisterIncremental {
    #[command(flatten)]
    io: Inputs,
    /// Mean sets kept in the back-end window.
    #[arg(long)]
    window: Option<usize>,
    /// Frames per front-end group.
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Synth {
    /// Model point file; a procedural blob is used when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Points of the procedural blob.
    #[arg(long, default_value_t = 6000)]
    blob_points: usize,
    /// View angles in degrees about the y axis.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    angles: Option<Vec<f64>>,
    /// Signal-to-noise ratio in dB; `inf` disables noise.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Outliers per view as a fraction of its inliers.
    #[arg(long)]
    outliers: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving `view_<j>.<ext>` and `truth.json`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Ply)]
    format: Format,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    record: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct Classify {
    /// Mixture saved by `--model-out`.
    #[arg(long)]
    model: PathBuf,
    /// Optional file receiving the inlier means.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportModel {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineIcp {
    #[command(flatten)]
    io: Inputs,
    #[arg(long, value_enum, default_value_t = IcpMode::OneVsAll)]
    mode: IcpMode,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Ply,
    Xyz,
}

impl From<Format> for PointFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Ply => PointFormat::PlyAscii,
            Format::Xyz => PointFormat::Xyz,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum IcpMode {
    OneVsAll,
    Sequential,
}

fn config(path: Option<&Path>) -> anyhow::Result<Config> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => Config::from_toml("")?,
    })
}

fn read_sets(paths: &[PathBuf]) -> anyhow::Result<Vec<PointSet>> {
    paths
        .iter()
        .enumerate()
        .map(|(j, p)| Ok(parse_point_file(p, PointFormat::from_path(p), j)?))
        .collect()
}

fn normalization(cfg: &Config, sets: &[PointSet]) -> Normalization {
    if cfg.normalize {
        Normalization::from_sets(sets)
    } else {
        Normalization::identity()
    }
}

fn metrics(truth: Option<&Path>, transforms: &[RigidTransform], started: Instant) -> anyhow::Result<Metrics> {
    let (rmse, angle) = match truth {
        Some(p) => {
            let truth = TruthRecord::load(p)?.to_ground_truth()?;
            (
                Some(rotation_rmse(transforms, &truth.transforms)?.mean),
                Some(mean_composition_angle(transforms, &truth.transforms)?),
            )
        }
        None => (None, None),
    };
    Ok(Metrics {
        rotation_rmse: rmse,
        mean_composition_angle: angle,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn display_paths(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn save_model(path: Option<&Path>, model: &MixtureModel) -> anyhow::Result<()> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(model)?;
        std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<MixtureModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let model: MixtureModel = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(model)
}

fn register_batch(args: &RegisterBatch) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = config(args.io.config.as_deref())?;
    let sets = read_sets(&args.io.inputs)?;
    let norm = normalization(&cfg, &sets);
    let normalized: Vec<PointSet> = sets.iter().map(|s| norm.normalize_set(s)).collect();

    let (transforms, model) = initialize(&normalized, &cfg.init, cfg.batch.gamma, cfg.volume, cfg.epsilon, None)?;
    let result = run_batch(&normalized, &transforms, &model, &cfg.batch)?;
    log::info!(
        "{} iterations, converged: {}",
        result.trace.len(),
        result.converged
    );

    let transforms: Vec<RigidTransform> = result.transforms.iter().map(|t| norm.denormalize_transform(t)).collect();
    let model = norm.denormalize_model(&result.model);
    save_model(args.model_out.as_deref(), &model)?;
    let record = RunRecord {
        command: "register-batch".into(),
        inputs: display_paths(&args.io.inputs),
        seed: cfg.effective_seed(),
        normalization: norm,
        objective_trace: result.objective_trace(),
        converged: result.converged,
        transforms: transforms.iter().map(TransformRecord::from).collect(),
        mixture: Some(MixtureSummary::from_model(&model)),
        metrics: metrics(args.io.truth.as_deref(), &transforms, started)?,
        config: cfg,
    };
    record.save(&args.io.out)?;
    Ok(())
}

fn register_incremental(args: &RegisterIncremental) -> anyhow::Result<()> {
    let started = Instant::now();
    let mut cfg = config(args.io.config.as_deref())?;
    if let Some(n) = args.window {
        cfg.window.back_size = n;
    }
    if let Some(n) = args.group {
        cfg.window.front_size = n;
    }
    cfg.window.validate()?;
    let sets = read_sets(&args.io.inputs)?;
    let norm = normalization(&cfg, &sets);
    let normalized: Vec<PointSet> = sets.iter().map(|s| norm.normalize_set(s)).collect();

    let result = run_windowed(&normalized, None, &cfg.window)?;
    if !result.flagged_groups.is_empty() {
        log::warn!("front-end groups {:?} failed and kept their initial poses", result.flagged_groups);
    }
    let transforms: Vec<RigidTransform> = result.transforms.iter().map(|t| norm.denormalize_transform(t)).collect();
    let model = norm.denormalize_model(&result.model);
    save_model(args.model_out.as_deref(), &model)?;
    let record = RunRecord {
        command: "register-incremental".into(),
        inputs: display_paths(&args.io.inputs),
        seed: cfg.effective_seed(),
        normalization: norm,
        objective_trace: Vec::new(),
        converged: result.flagged_groups.is_empty(),
        transforms: transforms.iter().map(TransformRecord::from).collect(),
        mixture: Some(MixtureSummary::from_model(&model)),
        metrics: metrics(args.io.truth.as_deref(), &transforms, started)?,
        config: cfg,
    };
    record.save(&args.io.out)?;
    Ok(())
}

fn synth(args: &Synth) -> anyhow::Result<()> {
    let cfg = config(args.config.as_deref())?;
    let mut synth = cfg.synth.clone();
    if let Some(a) = &args.angles {
        synth.angles = a.clone();
    }
    if let Some(s) = args.snr_db {
        synth.snr_db = s.is_finite().then_some(s);
    }
    if let Some(o) = args.outliers {
        synth.outlier_fraction = o;
    }
    synth.validate()?;
    let model = match &args.model {
        Some(p) => {
            let pts = read_points(p, PointFormat::from_path(p))?;
            if pts.is_empty() {
                bail!("{} contains no points", p.display());
            }
            pts
        }
        None => blob_surface(args.blob_points, synth.seed),
    };
    let (views, truth) = synthesize_views(&model, &synth)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let format = PointFormat::from(args.format);
    for (j, v) in views.iter().enumerate() {
        let path = args.out_dir.join(format!("view_{j}.{}", format.extension()));
        write_point_file(v.points(), &path, format)?;
    }
    TruthRecord::from(&truth).save(&args.out_dir.join("truth.json"))?;
    Ok(())
}

fn eval(args: &Eval) -> anyhow::Result<()> {
    let record = RunRecord::load(&args.record)?;
    let truth = TruthRecord::load(&args.truth)?.to_ground_truth()?;
    let est = record.transforms()?;
    let errors = rotation_rmse(&est, &truth.transforms)?;
    println!("rotation_rmse={}", errors.mean);
    println!("mean_composition_angle={}", mean_composition_angle(&est, &truth.transforms)?);
    for (j, e) in errors.per_set.iter().enumerate() {
        println!("rotation_error_{}={e}", j + 1);
    }
    if let (Some(m), Some(s)) = (errors.indirect_mean, errors.indirect_std) {
        println!("indirect_mean={m}");
        println!("indirect_std={s}");
    }
    println!("runtime_ms={}", record.metrics.runtime_ms);
    Ok(())
}

fn classify(args: &Classify) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let labels = classify_components(&model);
    println!("components={}", labels.len());
    println!("rejected={}", labels.rejected());
    println!("threshold={}", labels.threshold);
    if let Some(out) = &args.out {
        let scene = export_scene_model(&model, &labels)?;
        write_point_file(scene.points(), out, PointFormat::from_path(out))?;
    }
    Ok(())
}

fn export_model(args: &ExportModel) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let labels = classify_components(&model);
    let scene = export_scene_model(&model, &labels)?;
    write_point_file(scene.points(), &args.out, PointFormat::from_path(&args.out))?;
    Ok(())
}

fn baseline_icp(args: &BaselineIcp) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = config(args.io.config.as_deref())?;
    let sets = read_sets(&args.io.inputs)?;
    let norm = normalization(&cfg, &sets);
    let normalized: Vec<PointSet> = sets.iter().map(|s| norm.normalize_set(s)).collect();
    let transforms = match args.mode {
        IcpMode::OneVsAll => one_vs_all_icp(&normalized, &cfg.icp)?,
        IcpMode::Sequential => sequential_icp(&normalized, None, &cfg.icp)?,
    };
    let transforms: Vec<RigidTransform> = transforms.iter().map(|t| norm.denormalize_transform(t)).collect();
    let record = RunRecord {
        command: "baseline-icp".into(),
        inputs: display_paths(&args.io.inputs),
        seed: cfg.effective_seed(),
        normalization: norm,
        objective_trace: Vec::new(),
        converged: true,
        transforms: transforms.iter().map(TransformRecord::from).collect(),
        mixture: None,
        metrics: metrics(args.io.truth.as_deref(), &transforms, started)?,
        config: cfg,
    };
    record.save(&args.io.out)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::RegisterBatch(a) => register_batch(a),
        Command::RegisterIncremental(a) => register_incremental(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Classify(a) => classify(a),
        Command::ExportModel(a) => export_model(a),
        Command::BaselineIcp(a) => baseline_icp(a),
    }
}

/// 2 for numerical failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<jointreg::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
