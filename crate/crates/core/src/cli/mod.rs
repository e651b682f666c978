//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::codec::{CodecKind, CodecSpec};
use crate::error::{BackendError, Error};
use crate::geometry::{load_mesh, rasterize, render, sample_views, Intrinsics};
use crate::imageio;
use crate::pipeline::{self, BackendKind, RunConfig};
use crate::schedule::ScheduleKind;

pub mod selftest;

pub const EXIT_OK: u8 = 0;
pub const EXIT_SELFTEST_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_RUN: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "texgen", version, about = "Synthesize a view-consistent UV texture for a mesh")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a texture from a text prompt.
    Generate(GenerateArgs),
    /// Generate with the backend's edge condition enabled.
    Edit(GenerateArgs),
    /// Render an existing texture from the canonical views.
    Inspect(InspectArgs),
    /// Run the built-in invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerateArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of azimuth views around the equator.
    #[arg(long)]
    pub views: Option<usize>,
    /// Skip the extra top view.
    #[arg(long)]
    pub no_top: bool,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub omega1_zero: bool,
    #[arg(long)]
    pub omega2_zero: bool,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long, value_parser = ["gaussian", "toyattn", "remote"])]
    pub backend: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tex_size: Option<usize>,
    #[arg(long)]
    pub img_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every view's decoded observation at every step.
    #[arg(long)]
    pub debug_renders: bool,
    /// Same as the `edit` subcommand.
    #[arg(long)]
    pub edit: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub texture: PathBuf,
    #[arg(long, default_value = "inspect")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub img_size: usize,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long)]
    pub no_top: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelftestArgs {
    /// Deliberately corrupt one suite's inputs (for testing the harness).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub guidance: GuidanceSection,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub denoiser: DenoiserSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub prompt: Option<String>,
    pub mesh: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub debug_renders: Option<bool>,
    pub edit: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub steps: Option<usize>,
    pub train_steps: Option<usize>,
    pub schedule: Option<String>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSection {
    pub omega: Option<f64>,
    pub omega1_zero: Option<bool>,
    pub omega2_zero: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    pub kind: Option<CodecKind>,
    pub factor: Option<usize>,
    pub channels: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub views: Option<usize>,
    pub top: Option<bool>,
    pub radius: Option<f64>,
    pub fov: Option<f64>,
    pub tex_size: Option<usize>,
    pub img_size: Option<usize>,
    pub background: Option<[f64; 3]>,
    pub grazing_min_cos: Option<f64>,
    pub normalize_mesh: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSection {
    pub backend: Option<String>,
    pub endpoint: Option<String>,
    pub retries: Option<u32>,
    pub timeout_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub kv_layers: Option<Vec<usize>>,
    pub no_attention: Option<bool>,
    pub prior_amplitude: Option<f64>,
    pub prior_s: Option<f64>,
    pub prior_tau: Option<f64>,
    pub attn_dim: Option<usize>,
    pub attn_layers: Option<usize>,
    pub attn_gain: Option<f64>,
    pub attn_seed: Option<u64>,
}

/// Problem with the command line or config file, naming the offending flag or key.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{flag}: {message}")]
pub struct UsageError {
    pub flag: String,
    pub message: String,
}

impl UsageError {
    fn new(flag: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            flag: flag.into(),
            message: message.into(),
        }
    }
}

/// Map a configuration field to the flag (or config key) a user would edit.
fn flag_for(field: &str) -> String {
    match field {
        "steps" | "views" | "omega" | "mesh" | "endpoint" | "backend" | "seed" | "omega1_zero" | "omega2_zero"
        | "tex_size" | "img_size" | "prompt" => format!("--{}", field.replace('_', "-")),
        other => other.to_string(),
    }
}

impl From<Error> for UsageError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { field, message } => UsageError::new(flag_for(&field), message),
            other => UsageError::new("config", other.to_string()),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_backend(s: &str, flag: &str) -> Result<BackendKind, UsageError> {
    s.parse().map_err(|e: Error| UsageError::new(flag, e.to_string()))
}

pub fn load_file_config(path: &Path) -> Result<FileConfig, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError::new("--config", format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| UsageError::new("--config", format!("{}: {e}", path.display())))
}

/// Resolve defaults, then the config file, then flags, and validate.
pub fn resolve(args: &GenerateArgs, edit: bool) -> Result<RunConfig, UsageError> {
    let file = match &args.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let endpoint = args.endpoint.clone().or_else(|| file.denoiser.endpoint.clone());
    let backend = match (&args.backend, &file.denoiser.backend) {
        (Some(b), _) => parse_backend(b, "--backend")?,
        (None, Some(b)) => parse_backend(b, "denoiser.backend")?,
        (None, None) if endpoint.is_some() => BackendKind::Remote,
        (None, None) => BackendKind::Toyattn,
    };
    let mut cfg = match (backend, &endpoint) {
        (BackendKind::Remote, Some(ep)) => RunConfig::remote_profile(ep.clone()),
        (BackendKind::Remote, None) => {
            return Err(UsageError::new("--endpoint", "the remote backend needs an endpoint"))
        }
        (kind, _) => RunConfig {
            backend: pipeline::BackendConfig {
                kind,
                endpoint: endpoint.clone(),
                ..Default::default()
            },
            ..RunConfig::default()
        },
    };

    let FileConfig {
        pipeline: p,
        sampler: s,
        guidance: g,
        codec: c,
        geometry: geo,
        denoiser: d,
    } = file;
    set(&mut cfg.prompt, p.prompt);
    cfg.mesh = p.mesh.or(cfg.mesh);
    cfg.out_dir = p.out.or(cfg.out_dir);
    set(&mut cfg.debug_renders, p.debug_renders);
    set(&mut cfg.edit, p.edit);
    set(&mut cfg.sampler.steps, s.steps);
    set(&mut cfg.sampler.train_steps, s.train_steps);
    if let Some(kind) = s.schedule {
        cfg.sampler.kind = kind
            .parse::<ScheduleKind>()
            .map_err(|e| UsageError::new("sampler.schedule", e.to_string()))?;
    }
    set(&mut cfg.sampler.beta_start, s.beta_start);
    set(&mut cfg.sampler.beta_end, s.beta_end);
    set(&mut cfg.sampler.seed, s.seed);
    set(&mut cfg.omega, g.omega);
    set(&mut cfg.ablation.omega1_zero, g.omega1_zero);
    set(&mut cfg.ablation.omega2_zero, g.omega2_zero);
    if c.kind.is_some() || c.factor.is_some() || c.channels.is_some() {
        cfg.codec = CodecSpec {
            kind: c.kind.unwrap_or(cfg.codec.kind),
            factor: c.factor.unwrap_or(cfg.codec.factor),
            channels: c.channels.unwrap_or(cfg.codec.channels),
        };
    }
    set(&mut cfg.rig.n_azimuth, geo.views);
    set(&mut cfg.rig.add_top, geo.top);
    set(&mut cfg.rig.radius, geo.radius);
    set(&mut cfg.rig.fov_y_deg, geo.fov);
    set(&mut cfg.tex_size, geo.tex_size);
    set(&mut cfg.img_size, geo.img_size);
    set(&mut cfg.background, geo.background);
    if geo.grazing_min_cos.is_some() {
        cfg.grazing_min_cos = geo.grazing_min_cos;
    }
    set(&mut cfg.normalize_mesh, geo.normalize_mesh);
    set(&mut cfg.backend.retries, d.retries);
    set(&mut cfg.backend.timeout_ms, d.timeout_ms);
    set(&mut cfg.backend.max_in_flight, d.max_in_flight);
    if d.kv_layers.is_some() {
        cfg.backend.kv_layers = d.kv_layers;
    }
    set(&mut cfg.ablation.no_attention, d.no_attention);
    set(&mut cfg.backend.prior_amplitude, d.prior_amplitude);
    set(&mut cfg.backend.prior_s, d.prior_s);
    set(&mut cfg.backend.prior_tau, d.prior_tau);
    set(&mut cfg.backend.attn_dim, d.attn_dim);
    set(&mut cfg.backend.attn_layers, d.attn_layers);
    set(&mut cfg.backend.attn_gain, d.attn_gain);
    set(&mut cfg.backend.attn_seed, d.attn_seed);

    set(&mut cfg.prompt, args.prompt.clone());
    cfg.mesh = args.mesh.clone().or(cfg.mesh);
    cfg.out_dir = args.out.clone().or(cfg.out_dir);
    set(&mut cfg.sampler.steps, args.steps);
    set(&mut cfg.rig.n_azimuth, args.views);
    set(&mut cfg.omega, args.omega);
    set(&mut cfg.sampler.seed, args.seed);
    set(&mut cfg.tex_size, args.tex_size);
    set(&mut cfg.img_size, args.img_size);
    cfg.rig.add_top &= !args.no_top;
    cfg.ablation.omega1_zero |= args.omega1_zero;
    cfg.ablation.omega2_zero |= args.omega2_zero;
    cfg.ablation.no_attention |= args.no_attention;
    cfg.debug_renders |= args.debug_renders;
    cfg.edit |= args.edit || edit;

    if cfg.mesh.is_none() {
        return Err(UsageError::new("--mesh", "a mesh is required"));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Exit code for a failed run.
pub fn exit_code_for(err: &Error) -> u8 {
    match err.root() {
        Error::Config { .. } => EXIT_USAGE,
        Error::Backend(BackendError::Unavailable(_)) | Error::Backend(BackendError::Timeout(_)) => EXIT_BACKEND,
        _ => EXIT_RUN,
    }
}

fn generate(args: &GenerateArgs, edit: bool) -> u8 {
    let cfg = match resolve(args, edit) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match pipeline::run(&cfg) {
        Ok(result) => {
            let hashes = result.manifest.final_hashes.as_ref();
            println!(
                "texture sha256 {} coverage {:.4}",
                hashes.map_or("-", |h| h.texture_sha256.as_str()),
                hashes.map_or(0.0, |h| h.coverage)
            );
            if let Some(out) = &cfg.out_dir {
                println!("artifacts written to {}", out.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn inspect(args: &InspectArgs) -> Result<(), Error> {
    let mesh = load_mesh(&args.mesh)?.normalized();
    let defaults = RunConfig::default();
    let tex = imageio::load_texture(&args.texture, defaults.background)?;
    let poses = sample_views(
        args.views,
        !args.no_top,
        defaults.rig.radius,
        Intrinsics::square(defaults.rig.fov_y_deg, args.img_size),
    );
    std::fs::create_dir_all(&args.out)?;
    for (i, pose) in poses.iter().enumerate() {
        let raster = rasterize(&mesh, pose, tex.width, tex.height);
        let img = render(&tex, &raster, [1.0; 3]);
        let path = args.out.join(format!("view{i}.png"));
        imageio::save_rgb(&img, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn run_cli<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match &cli.command {
        Command::Generate(args) => generate(args, false),
        Command::Edit(args) => generate(args, true),
        Command::Inspect(args) => match inspect(args) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::Selftest(args) => {
            let report = selftest::run(args.inject_fault.as_deref());
            print!("{}", report.table());
            if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_SELFTEST_FAILED
            }
        }
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run_cli(std::env::args_os()))
}
