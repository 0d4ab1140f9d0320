//! `handfit` subcommands. Every flag can also be set through the
//! environment variable `HANDFIT_<FLAG>` (upper case, `-` as `_`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use handfit::dataset::{synthesize, NoiseProfile, SampleRecord, SynthOptions};
use handfit::fitter::{fit_batch, FitConfig, Fitter, GradientMode};
use handfit::metrics::{evaluate, EvalSummary};
use handfit::penetration::{posed_for_contact, BroadPhase, PenetrationIndex};
use handfit::pose_prior::{violations, JointLimitTable, Violation};
use handfit::records::{
    read_records, write_records, FailureKind, ReportRecord, DATASET_FORMAT, REPORTS_FORMAT, THETA_FORMAT,
};
use handfit::{load_model, save_model, synth_test_model, HandMesh, HandShapeModel, NUM_POSE_JOINTS};

#[derive(Debug, Parser)]
#[command(name = "handfit", version, about = "Fit a parametric hand to 2D landmarks under hand-knowledge priors")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Hand model file; the built-in synthetic model when absent.
    #[arg(long, global = true, env = "HANDFIT_MODEL")]
    pub model: Option<PathBuf>,
    /// Joint limit table (TOML); the built-in table when absent.
    #[arg(long, global = true, env = "HANDFIT_LIMITS")]
    pub limits: Option<PathBuf>,
    /// Fit configuration (TOML); flags override its values.
    #[arg(long, global = true, env = "HANDFIT_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "HANDFIT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for batch commands.
    #[arg(long, global = true, env = "HANDFIT_JOBS", default_value_t = 1)]
    pub jobs: usize,
    /// Focal length, pixels.
    #[arg(long, global = true, env = "HANDFIT_FOCAL")]
    pub focal: Option<f64>,
    /// Side of the square crop, pixels.
    #[arg(long, global = true, env = "HANDFIT_IMAGE_SIZE")]
    pub image_size: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Fit every sample of a dataset.
    Fit(FitArgs),
    /// Compare reports against dataset ground truth.
    Eval(EvalArgs),
    /// Check poses against the joint limits and for self-penetration.
    ValidatePose(ValidateArgs),
    /// Write the built-in synthetic hand model to a file.
    ExportModel(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "HANDFIT_N", default_value_t = 100)]
    pub n: usize,
    /// clean, gaussian:S, corrupt:K:S or occlude:K, joined by '+'.
    #[arg(long, env = "HANDFIT_NOISE", default_value = "clean")]
    pub noise: NoiseProfile,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitArgs {
    #[arg(long, short)]
    pub dataset: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write each recovered mesh as `<source_id>.ply` here.
    #[arg(long)]
    pub ply_dir: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

/// One flag per `FitConfig` field.
#[derive(Debug, Args, Default)]
pub struct ConfigOverrides {
    #[arg(long, env = "HANDFIT_LAMBDA1")]
    pub lambda1: Option<f64>,
    #[arg(long, env = "HANDFIT_LAMBDA2")]
    pub lambda2: Option<f64>,
    #[arg(long, env = "HANDFIT_LAMBDA3")]
    pub lambda3: Option<f64>,
    /// Penetration tolerance, meters.
    #[arg(long, env = "HANDFIT_D_TOL")]
    pub d_tol: Option<f64>,
    #[arg(long, env = "HANDFIT_STAGE1_ITERS")]
    pub stage1_iters: Option<usize>,
    #[arg(long, env = "HANDFIT_STAGE2_ITERS")]
    pub stage2_iters: Option<usize>,
    #[arg(long, env = "HANDFIT_STEP_SIZE")]
    pub step_size: Option<f64>,
    #[arg(long, env = "HANDFIT_GRADIENT_MODE", value_parser = parse_mode)]
    pub gradient_mode: Option<GradientMode>,
    #[arg(long, env = "HANDFIT_RESTARTS")]
    pub restarts: Option<usize>,
    #[arg(long, env = "HANDFIT_ANATOMY")]
    pub anatomy: Option<bool>,
    #[arg(long, env = "HANDFIT_SYMMETRIC_COUPLING")]
    pub symmetric_coupling: Option<bool>,
    /// Geodesic radius of the penetration neighbour mask, meters.
    #[arg(long, env = "HANDFIT_GEODESIC_RADIUS")]
    pub geodesic_radius: Option<f64>,
    #[arg(long, env = "HANDFIT_WINDING_THRESHOLD")]
    pub winding_threshold: Option<f64>,
    /// Initial landmark sigma, pixels.
    #[arg(long, env = "HANDFIT_SIGMA_INIT")]
    pub sigma_init: Option<f64>,
    /// Store wall time in each report (makes reports non-reproducible).
    #[arg(long, env = "HANDFIT_RECORD_TIME")]
    pub record_time: Option<bool>,
}

fn parse_mode(s: &str) -> Result<GradientMode, String> {
    match s {
        "forward-mode-autodiff" => Ok(GradientMode::ForwardModeAutodiff),
        "central-finite-difference" => Ok(GradientMode::CentralFiniteDifference),
        _ => Err(format!("expected forward-mode-autodiff or central-finite-difference, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub reports: PathBuf,
    #[arg(long, short)]
    pub dataset: PathBuf,
    /// Also write the summary as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// `handfit-theta` file of `{"id", "theta_deg"}` records.
    #[arg(long)]
    pub theta: PathBuf,
    /// Penetration tolerance, meters; defaults to the config value.
    #[arg(long)]
    pub d_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    /// Seed of the generated model.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

/// Model, limits and config after files, environment and flags are merged.
pub struct Resolved {
    pub model: HandShapeModel<f64>,
    pub limits: JointLimitTable,
    pub config: FitConfig,
    pub jobs: usize,
}

fn load_context(g: &Global, overrides: Option<&ConfigOverrides>) -> Result<Resolved, CliError> {
    let model = match &g.model {
        Some(p) => load_model(p).with_context(|| format!("loading model {}", p.display()))?,
        None => synth_test_model(0),
    };
    let limits = match &g.limits {
        Some(p) => JointLimitTable::load(p).with_context(|| format!("loading limits {}", p.display()))?,
        None => JointLimitTable::default(),
    };
    let mut config = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            FitConfig::from_toml_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => FitConfig::default(),
    };
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(f) = g.focal {
        config.focal = f;
    }
    if let Some(s) = g.image_size {
        config.image_size = s;
    }
    if let Some(o) = overrides {
        o.apply(&mut config);
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if g.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(Resolved { model, limits, config, jobs: g.jobs })
}

impl ConfigOverrides {
    fn apply(&self, c: &mut FitConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            lambda1, lambda2, lambda3, d_tol, stage1_iters, stage2_iters, step_size, gradient_mode, restarts, anatomy,
            symmetric_coupling, geodesic_radius, winding_threshold, sigma_init, record_time
        );
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(&load_context(&cli.global, None)?, a),
        Command::Fit(a) => cmd_fit(&load_context(&cli.global, Some(&a.overrides))?, a),
        Command::Eval(a) => cmd_eval(&load_context(&cli.global, None)?, a).map(|_| ()),
        Command::ValidatePose(a) => cmd_validate_pose(&load_context(&cli.global, None)?, a),
        Command::ExportModel(a) => {
            save_model(&synth_test_model(a.model_seed), &a.out).context("writing model")?;
            Ok(())
        }
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read<T: serde::de::DeserializeOwned>(path: &Path, format: &str) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records(BufReader::new(file), format).with_context(|| format!("reading {}", path.display()))
}

fn write<T: Serialize>(path: &Path, format: &str, records: &[T]) -> anyhow::Result<()> {
    write_records(create(path)?, format, records).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_synth(ctx: &Resolved, args: &SynthArgs) -> Result<(), CliError> {
    let index = PenetrationIndex::new(&ctx.model, ctx.config.geodesic_radius, ctx.config.winding_threshold);
    let opts = SynthOptions {
        n: args.n,
        noise: args.noise.clone(),
        seed: ctx.config.seed,
        intrinsics: ctx.config.intrinsics(),
        anatomy: ctx.config.anatomy_options(),
        ..Default::default()
    };
    let records = synthesize(&ctx.model, &ctx.limits, &index, &opts).context("sampling poses")?;
    write(&args.out, DATASET_FORMAT, &records)?;
    log::info!("wrote {} samples to {}", records.len(), args.out.display());
    Ok(())
}

/// Fits every record and writes the reports; failed samples are kept as
/// failure records. Exit status reflects the worst failure.
pub fn cmd_fit(ctx: &Resolved, args: &FitArgs) -> Result<(), CliError> {
    let dataset: Vec<SampleRecord> = read(&args.dataset, DATASET_FORMAT)?;
    let fitter = Fitter::new(&ctx.model, &ctx.limits, ctx.config.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let observations: Vec<_> = dataset.into_iter().map(|r| r.observation).collect();
    let records: Vec<ReportRecord> = fit_batch(&fitter, &observations, ctx.jobs)
        .into_iter()
        .map(|(id, r)| ReportRecord::from_result(id, r))
        .collect();
    write(&args.out, REPORTS_FORMAT, &records)?;
    if let Some(dir) = &args.ply_dir {
        for r in &records {
            if let Some(rep) = &r.report {
                let path = dir.join(format!("{}.ply", r.source_id));
                write_ply(create(&path)?, &rep.mesh, ctx.model.faces()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    let failures: Vec<_> = records.iter().filter_map(|r| r.failure.as_ref()).collect();
    for f in &failures {
        log::warn!("{}", f.message);
    }
    log::info!("fitted {} of {} samples", records.len() - failures.len(), records.len());
    if let Some(f) = failures.iter().find(|f| f.kind == FailureKind::Numerical) {
        return Err(CliError::Numerical(format!("{} sample(s) failed; first: {}", failures.len(), f.message)));
    }
    if let Some(f) = failures.first() {
        return Err(CliError::Data(anyhow::anyhow!("{} sample(s) failed; first: {}", failures.len(), f.message)));
    }
    Ok(())
}

/// Prints the summary as one JSON line followed by an aligned table.
pub fn cmd_eval(ctx: &Resolved, args: &EvalArgs) -> Result<EvalSummary, CliError> {
    let reports: Vec<ReportRecord> = read(&args.reports, REPORTS_FORMAT)?;
    let dataset: Vec<SampleRecord> = read(&args.dataset, DATASET_FORMAT)?;
    let summary = evaluate(&reports, &dataset, &ctx.limits, ctx.config.d_tol).context("evaluating")?;
    let json = serde_json::to_string(&summary).expect("summary serializes");
    println!("{json}");
    print!("{}", summary.table());
    if let Some(p) = &args.json {
        let mut w = create(p)?;
        writeln!(w, "{json}").context("writing summary")?;
    }
    Ok(summary)
}

#[derive(Debug, serde::Deserialize)]
struct ThetaRecord {
    id: String,
    theta_deg: [[f64; 3]; NUM_POSE_JOINTS],
}

#[derive(Debug, Serialize)]
struct PoseAudit {
    id: String,
    valid: bool,
    violations: Vec<Violation>,
    penetration_depth_m: f64,
    penetrating: bool,
}

/// One JSON line per pose: angles outside their refined range and the
/// deepest self-penetration of the rest-shape mesh.
pub fn cmd_validate_pose(ctx: &Resolved, args: &ValidateArgs) -> Result<(), CliError> {
    let poses: Vec<ThetaRecord> = read(&args.theta, THETA_FORMAT)?;
    let d_tol = args.d_tol.unwrap_or(ctx.config.d_tol);
    let index = PenetrationIndex::new(&ctx.model, ctx.config.geodesic_radius, ctx.config.winding_threshold);
    let anatomy = ctx.config.anatomy_options();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for p in poses {
        let theta = p.theta_deg.map(|row| row.map(f64::to_radians));
        let violations = violations(&ctx.limits, &theta, anatomy);
        let (verts, art) = posed_for_contact(&ctx.model, &theta, &[0.0; 10]);
        let depth = index.interior(&verts, &art, BroadPhase::Exhaustive).max_depth();
        let audit = PoseAudit {
            id: p.id,
            valid: violations.is_empty() && depth <= d_tol,
            violations,
            penetration_depth_m: depth,
            penetrating: depth > d_tol,
        };
        writeln!(out, "{}", serde_json::to_string(&audit).expect("audit serializes")).context("writing audit")?;
    }
    Ok(())
}

/// ASCII PLY with vertices and triangles.
pub fn write_ply(mut w: impl Write, mesh: &HandMesh<f64>, faces: &[[u32; 3]]) -> std::io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}\nproperty float x\nproperty float y\nproperty float z", mesh.vertices.len())?;
    writeln!(w, "element face {}\nproperty list uchar int vertex_indices\nend_header", faces.len())?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
    }
    for f in faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    w.flush()
}
