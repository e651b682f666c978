//! Interleaved multi-view denoising and texture assembly.
//!
//! Every step `t` runs two phases:
//!
//! 1. **View sweep.** Views are visited in order, starting at the reference
//!    view. Each later view first blends its latent with the encoded render
//!    of the partial texture wherever the texture already has content, then
//!    is denoised attending to the reference view's keys/values. The
//!    denoised observation is decoded and baked into the texture
//!    (first write wins). The texture is rebuilt from scratch each step.
//! 2. **Resampling.** Every view's noise is recomputed so that its denoised
//!    observation matches the completed texture, mixed with text guidance,
//!    and used for the DDIM update to `t - 1`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{build_codec, CodecKind, CodecSpec, LatentCodec};
use crate::denoiser::remote::RemoteConfig;
use crate::denoiser::{
    DenoiseRequest, Denoiser, GaussianBackend, GaussianPrior, KvRef, PromptCondition, RemoteClient,
    RemoteDenoiser, ToyAttentionBackend, ToyAttentionConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{
    alternating_order, downsample_mask, first_obs_mask, inverse_render, load_mesh, rasterize, render,
    sample_views, CameraPose, DepthImage, GrazingFilter, Intrinsics, Mask, Mesh, RasterMap, Rgb, RgbImage,
    TextureMap,
};
use crate::guidance::{
    cfg_combine, disentangle_texture_condition, multi_cond_combine, texture_noise, DenoiseOutput,
    GuidanceWeights, Omega2Mode,
};
use crate::imageio;
use crate::latent::LatentImage;
use crate::schedule::{build_schedule, NoiseSchedule, SamplerConfig, Step};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRig {
    pub n_azimuth: usize,
    pub add_top: bool,
    pub radius: f64,
    pub fov_y_deg: f64,
}

impl Default for ViewRig {
    fn default() -> Self {
        Self {
            n_azimuth: 8,
            add_top: true,
            radius: 2.5,
            fov_y_deg: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub no_attention: bool,
    pub omega1_zero: bool,
    pub omega2_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Gaussian,
    Toyattn,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "toyattn" => Ok(Self::Toyattn),
            "remote" => Ok(Self::Remote),
            other => Err(Error::config(
                "backend",
                format!("unknown backend `{other}` (expected gaussian, toyattn or remote)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub retries: u32,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub kv_layers: Option<Vec<usize>>,
    /// Checkerboard amplitude of the toy prompt-conditioned mean.
    pub prior_amplitude: f64,
    pub prior_s: f64,
    pub prior_tau: f64,
    pub attn_dim: usize,
    pub attn_layers: usize,
    pub attn_gain: f64,
    pub attn_seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let attn = ToyAttentionConfig::default();
        Self {
            kind: BackendKind::Toyattn,
            endpoint: None,
            retries: 2,
            timeout_ms: 60_000,
            max_in_flight: 4,
            kv_layers: None,
            prior_amplitude: 0.3,
            prior_s: 0.1,
            prior_tau: 0.5,
            attn_dim: attn.dim,
            attn_layers: attn.layers,
            attn_gain: attn.gain,
            attn_seed: attn.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub prompt: String,
    pub mesh: Option<PathBuf>,
    pub sampler: SamplerConfig,
    pub omega: f64,
    pub codec: CodecSpec,
    pub rig: ViewRig,
    pub tex_size: usize,
    pub img_size: usize,
    pub backend: BackendConfig,
    pub ablation: Ablation,
    pub edit: bool,
    pub background: Rgb,
    /// Reject bakes from views seeing a texel more obliquely than this cosine,
    /// unless no view sees it better.
    pub grazing_min_cos: Option<f64>,
    /// Rescale the mesh to unit bounding radius around its bounding-box centre.
    pub normalize_mesh: bool,
    pub out_dir: Option<PathBuf>,
    pub debug_renders: bool,
}

impl Default for RunConfig {
    /// The in-process toy profile.
    fn default() -> Self {
        Self {
            prompt: String::new(),
            mesh: None,
            sampler: SamplerConfig::default(),
            omega: 7.5,
            codec: CodecSpec::toy(2, 4),
            rig: ViewRig::default(),
            tex_size: 128,
            img_size: 64,
            backend: BackendConfig::default(),
            ablation: Ablation::default(),
            edit: false,
            background: [0.5; 3],
            grazing_min_cos: Some(0.2),
            normalize_mesh: true,
            out_dir: None,
            debug_renders: false,
        }
    }
}

impl RunConfig {
    /// Defaults for a remote diffusion backend at `endpoint`.
    pub fn remote_profile(endpoint: impl Into<String>) -> Self {
        Self {
            codec: CodecSpec::remote(8, 4),
            tex_size: 1024,
            img_size: 512,
            backend: BackendConfig {
                kind: BackendKind::Remote,
                endpoint: Some(endpoint.into()),
                ..BackendConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.codec.validate()?;
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::config("omega", "must be a positive finite number"));
        }
        if self.ablation.omega1_zero && self.ablation.omega2_zero {
            return Err(Error::config(
                "omega1_zero",
                "cannot be combined with omega2_zero (the weights must sum to omega)",
            ));
        }
        if self.rig.n_azimuth == 0 {
            return Err(Error::config("views", "must be at least 1"));
        }
        if self.rig.n_azimuth + 1 > u16::MAX as usize {
            return Err(Error::config("views", "too many views"));
        }
        if !(self.rig.radius > 0.0) {
            return Err(Error::config("radius", "must be positive"));
        }
        if !(self.rig.fov_y_deg > 0.0 && self.rig.fov_y_deg < 180.0) {
            return Err(Error::config("fov", "must lie in (0, 180) degrees"));
        }
        if self.tex_size == 0 {
            return Err(Error::config("tex_size", "must be positive"));
        }
        if self.img_size == 0 || self.img_size % self.codec.factor != 0 {
            return Err(Error::config(
                "img_size",
                format!("must be a positive multiple of the codec factor {}", self.codec.factor),
            ));
        }
        if let Some(c) = self.grazing_min_cos {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::config("grazing_min_cos", "must lie in [0, 1]"));
            }
        }
        if self.background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("background", "components must lie in [0, 1]"));
        }
        match (self.backend.kind, &self.backend.endpoint) {
            (BackendKind::Remote, None) => Err(Error::config("endpoint", "the remote backend needs an endpoint")),
            (BackendKind::Remote, _) if self.codec.kind != CodecKind::Remote => Err(Error::config(
                "codec",
                "the remote backend is paired with the remote codec",
            )),
            (k, _) if k != BackendKind::Remote && self.codec.kind == CodecKind::Remote => Err(Error::config(
                "codec",
                "the remote codec needs the remote backend",
            )),
            _ => Ok(()),
        }
    }

    pub fn guidance(&self) -> GuidanceWeights {
        let mode = if self.ablation.omega1_zero {
            Omega2Mode::TextureOnly
        } else if self.ablation.omega2_zero {
            Omega2Mode::TextOnly
        } else {
            Omega2Mode::LinearDecay
        };
        GuidanceWeights::new(self.omega, self.sampler.steps).with_mode(mode)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Denoiser and codec described by `cfg`.
pub fn build_backend(cfg: &RunConfig) -> Result<(Arc<dyn Denoiser>, Arc<dyn LatentCodec>)> {
    let b = &cfg.backend;
    match b.kind {
        BackendKind::Remote => {
            let endpoint = b
                .endpoint
                .clone()
                .ok_or_else(|| Error::config("endpoint", "the remote backend needs an endpoint"))?;
            let client = Arc::new(RemoteClient::new(RemoteConfig {
                retries: b.retries,
                timeout_ms: b.timeout_ms,
                max_in_flight: b.max_in_flight,
                kv_layers: b.kv_layers.clone(),
                ..RemoteConfig::new(endpoint)
            }));
            let codec = build_codec(&cfg.codec, Some(client.clone()))?;
            Ok((Arc::new(RemoteDenoiser::new(client)), codec))
        }
        kind => {
            let codec = build_codec(&cfg.codec, None)?;
            let prior = GaussianPrior::patterned(&cfg.codec, b.prior_amplitude, b.prior_s, b.prior_tau)?;
            let denoiser: Arc<dyn Denoiser> = if kind == BackendKind::Gaussian {
                Arc::new(GaussianBackend::new(prior)?)
            } else {
                Arc::new(ToyAttentionBackend::new(
                    prior,
                    ToyAttentionConfig {
                        dim: b.attn_dim,
                        layers: b.attn_layers,
                        gain: b.attn_gain,
                        seed: b.attn_seed,
                    },
                )?)
            };
            Ok((denoiser, codec))
        }
    }
}

/// Keep `x_t` where `mask` is set; elsewhere use `add_noise(g, eps)` at `alpha`.
///
/// `mask` is at latent resolution. Both regions are copied bit for bit.
pub fn blend_latent(
    x_t: &LatentImage,
    encoded_render: &LatentImage,
    eps: &LatentImage,
    mask: &Mask,
    sched: &NoiseSchedule,
    t: Step,
) -> Result<LatentImage> {
    let noised = sched.add_noise(encoded_render, eps, t)?;
    x_t.ensure_same_shape(&noised, "blend_latent")?;
    if mask.width != x_t.width() || mask.height != x_t.height() {
        return Err(Error::contract(format!(
            "mask {}x{} does not match latent {}x{}",
            mask.width,
            mask.height,
            x_t.width(),
            x_t.height()
        )));
    }
    let mut out = noised;
    let c = x_t.channels();
    for (i, &keep) in mask.data.iter().enumerate() {
        if keep {
            out.as_mut_slice()[i * c..(i + 1) * c].copy_from_slice(&x_t.as_slice()[i * c..(i + 1) * c]);
        }
    }
    Ok(out)
}

/// One camera with its precomputed geometry.
#[derive(Debug, Clone)]
pub struct ViewSlot {
    /// Index among [`sample_views`] output; also the texture writer id.
    pub index: usize,
    pub pose: CameraPose,
    pub raster: RasterMap,
    pub depth: DepthImage,
}

/// Mutable sampling state. Per-view vectors follow processing order.
#[derive(Debug, Clone)]
pub struct RunState {
    pub latents: Vec<LatentImage>,
    pub texture: TextureMap,
    /// Step the latents are currently at.
    pub step: Step,
    pub outputs: Vec<Option<DenoiseOutput>>,
    pub rng: ChaCha8Rng,
    pub attention_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: Step,
    pub wall_ms: f64,
    /// Fraction of atlas texels covered after the view sweep.
    pub coverage: f64,
    pub attention: bool,
}

/// Intermediate images of one view sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepImages {
    /// Decoded denoised observation per view (processing order).
    pub decoded: Vec<RgbImage>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub texture: TextureMap,
    pub latents: Vec<LatentImage>,
    pub steps: Vec<StepRecord>,
    pub attention_used: bool,
}

pub struct Engine {
    cfg: RunConfig,
    mesh: Mesh,
    schedule: NoiseSchedule,
    weights: GuidanceWeights,
    denoiser: Arc<dyn Denoiser>,
    codec: Arc<dyn LatentCodec>,
    views: Vec<ViewSlot>,
    occupancy: Vec<bool>,
    filter: Option<GrazingFilter>,
    latent_shape: [usize; 3],
}

fn standard_normal(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> LatentImage {
    LatentImage::from_fn(shape[0], shape[1], shape[2], |_, _, _| StandardNormal.sample(rng))
}

impl Engine {
    pub fn new(cfg: RunConfig, mesh: Mesh, denoiser: Arc<dyn Denoiser>, codec: Arc<dyn LatentCodec>) -> Result<Self> {
        cfg.validate()?;
        if codec.spec() != cfg.codec {
            return Err(Error::config("codec", "codec instance does not match the configured codec"));
        }
        let mesh = if cfg.normalize_mesh { mesh.normalized() } else { mesh };
        let schedule = build_schedule(&cfg.sampler)?;
        let weights = cfg.guidance();
        let intrinsics = Intrinsics::square(cfg.rig.fov_y_deg, cfg.img_size);
        let poses = sample_views(cfg.rig.n_azimuth, cfg.rig.add_top, cfg.rig.radius, intrinsics);
        let order = alternating_order(cfg.rig.n_azimuth, cfg.rig.add_top);
        let views: Vec<ViewSlot> = order
            .par_iter()
            .map(|&index| {
                let raster = rasterize(&mesh, &poses[index], cfg.tex_size, cfg.tex_size);
                let depth = raster.depth_image();
                ViewSlot {
                    index,
                    pose: poses[index],
                    raster,
                    depth,
                }
            })
            .collect();
        let occupancy = mesh.atlas_occupancy(cfg.tex_size, cfg.tex_size);
        let filter = cfg.grazing_min_cos.map(|min_cos| {
            GrazingFilter::from_rasters(min_cos, cfg.tex_size * cfg.tex_size, views.iter().map(|v| &v.raster))
        });
        let latent_shape = cfg.codec.latent_shape(cfg.img_size, cfg.img_size)?;
        Ok(Self {
            cfg,
            mesh,
            schedule,
            weights,
            denoiser,
            codec,
            views,
            occupancy,
            filter,
            latent_shape,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn views(&self) -> &[ViewSlot] {
        &self.views
    }

    pub fn codec(&self) -> &Arc<dyn LatentCodec> {
        &self.codec
    }

    pub fn denoiser(&self) -> &Arc<dyn Denoiser> {
        &self.denoiser
    }

    /// Texels covered by the UV atlas.
    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn empty_texture(&self) -> TextureMap {
        TextureMap::new(self.cfg.tex_size, self.cfg.tex_size, self.cfg.background)
    }

    /// `x_T` for every view, i.i.d. standard normal from the run seed.
    pub fn init_state(&self) -> RunState {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.sampler.seed);
        let latents = self
            .views
            .iter()
            .map(|_| standard_normal(&mut rng, self.latent_shape))
            .collect();
        RunState {
            latents,
            texture: self.empty_texture(),
            step: self.schedule.steps(),
            outputs: vec![None; self.views.len()],
            rng,
            attention_active: false,
        }
    }

    fn request(&self, latent: LatentImage, slot: &ViewSlot, t: Step) -> Result<DenoiseRequest> {
        let prompt = PromptCondition::text(self.cfg.prompt.clone());
        let mut req = DenoiseRequest::new(latent, t, self.schedule.timestep(t)?, self.schedule.alpha(t)?, prompt)
            .with_depth(slot.depth.clone());
        req.edge_condition = self.cfg.edit;
        Ok(req)
    }

    fn decode_observation(&self, x_t: &LatentImage, out: &DenoiseOutput, t: Step) -> Result<(LatentImage, RgbImage)> {
        let eps = cfg_combine(out, self.cfg.omega)?;
        let x0 = self.schedule.predict_x0(x_t, &eps, t)?;
        let img = self.codec.decode(&x0)?.clamped();
        Ok((x0, img))
    }

    /// Encoded render of `texture` from view `slot`.
    pub fn encoded_render(&self, texture: &TextureMap, slot: &ViewSlot) -> Result<LatentImage> {
        self.codec.encode(&render(texture, &slot.raster, self.cfg.background))
    }

    /// View sweep at `state.step`: rebuilds `state.texture`, revises the
    /// blended latents in place and stores every view's noise predictions.
    pub fn agvs_step(&self, state: &mut RunState) -> Result<SweepImages> {
        let t = state.step;
        let factor = self.cfg.img_size / self.latent_shape[1];
        state.texture.clear();
        state.attention_active = false;
        let mut reference_kv: Option<KvRef> = None;
        let mut images = SweepImages::default();
        for (k, slot) in self.views.iter().enumerate() {
            let wrap = |e: Error| e.at(t, slot.index);
            let req = if k == 0 {
                let x = state.latents[k].clone();
                self.request(x, slot, t)
                    .map_err(wrap)?
                    .wanting_kv(!self.cfg.ablation.no_attention)
            } else {
                let g = self.encoded_render(&state.texture, slot).map_err(wrap)?;
                let mask = first_obs_mask(&slot.raster, &state.texture);
                let mask = downsample_mask(&mask, factor).map_err(wrap)?;
                let eps = standard_normal(&mut state.rng, self.latent_shape);
                let blended = blend_latent(&state.latents[k], &g, &eps, &mask, &self.schedule, t).map_err(wrap)?;
                state.latents[k] = blended.clone();
                self.request(blended, slot, t).map_err(wrap)?.with_kv(reference_kv.clone())
            };
            let out = self.denoiser.denoise(&req).map_err(|e| Error::from(e).at(t, slot.index))?;
            if k == 0 && req.want_kv {
                match &out.kv {
                    Some(kv) if kv.is_usable() => {
                        reference_kv = Some(kv.clone());
                        state.attention_active = true;
                    }
                    _ => {
                        if t == self.schedule.steps() {
                            warn!("backend {} exports no attention; continuing without it", self.denoiser.id());
                        }
                    }
                }
            }
            let (_, img) = self.decode_observation(&req.latent, &out, t).map_err(wrap)?;
            inverse_render(&img, &slot.raster, &mut state.texture, slot.index as u16, self.filter.as_ref())
                .map_err(wrap)?;
            if self.cfg.debug_renders {
                images.decoded.push(img);
            }
            state.outputs[k] = Some(out);
        }
        Ok(images)
    }

    /// Resampling at `state.step` under the completed `state.texture`; moves
    /// every latent to `state.step - 1`.
    pub fn t2gr_step(&self, state: &mut RunState) -> Result<()> {
        let t = state.step;
        if t == 0 {
            return Err(Error::contract("sampling already finished"));
        }
        let texture = &state.texture;
        let next: Vec<LatentImage> = self
            .views
            .par_iter()
            .zip(state.latents.par_iter())
            .zip(state.outputs.par_iter())
            .map(|((slot, x_t), out)| {
                let wrap = |e: Error| e.at(t, slot.index);
                let out = out
                    .as_ref()
                    .ok_or_else(|| Error::contract("view sweep has not run for this step"))
                    .map_err(wrap)?;
                let g = self.encoded_render(texture, slot).map_err(wrap)?;
                let eps_hat_tex = texture_noise(x_t, &g, t, &self.schedule).map_err(wrap)?;
                let eps_tex = disentangle_texture_condition(&eps_hat_tex, &out.eps_uncond, self.cfg.omega).map_err(wrap)?;
                let eps_m = multi_cond_combine(out, &eps_tex, &self.weights, t).map_err(wrap)?;
                let x0 = self.schedule.predict_x0(x_t, &eps_m, t).map_err(wrap)?;
                self.schedule.ddim_step(&x0, &eps_m, t, t - 1).map_err(wrap)
            })
            .collect::<Result<_>>()?;
        state.latents = next;
        state.outputs.iter_mut().for_each(|o| *o = None);
        state.step = t - 1;
        Ok(())
    }

    pub fn coverage(&self, texture: &TextureMap) -> f64 {
        texture.coverage_of(&self.occupancy)
    }

    /// Run all remaining steps, calling `on_step` after each one.
    pub fn drive(
        &self,
        state: &mut RunState,
        steps: &mut Vec<StepRecord>,
        mut on_step: impl FnMut(&RunState, &SweepImages) -> Result<()>,
    ) -> Result<()> {
        while state.step > 0 {
            let start = Instant::now();
            let t = state.step;
            let images = self.agvs_step(state)?;
            let coverage = self.coverage(&state.texture);
            on_step(state, &images)?;
            self.t2gr_step(state)?;
            steps.push(StepRecord {
                t,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                coverage,
                attention: state.attention_active,
            });
        }
        Ok(())
    }

    pub fn run(&self) -> Result<RunOutput> {
        let mut state = self.init_state();
        let mut steps = Vec::new();
        self.drive(&mut state, &mut steps, |_, _| Ok(()))?;
        Ok(RunOutput {
            attention_used: steps.iter().any(|s| s.attention),
            texture: state.texture,
            latents: state.latents,
            steps,
        })
    }
}

/// SHA-256 over texel values (f64 LE) followed by coverage writers.
pub fn texture_hash(tex: &TextureMap) -> String {
    let mut h = Sha256::new();
    h.update((tex.width as u64).to_le_bytes());
    h.update((tex.height as u64).to_le_bytes());
    for p in &tex.texels {
        for v in p {
            h.update(v.to_le_bytes());
        }
    }
    for w in &tex.writer {
        h.update(w.map_or(u16::MAX, |w| w).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn latents_hash(latents: &[LatentImage]) -> String {
    let mut h = Sha256::new();
    for l in latents {
        for v in l.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalHashes {
    pub texture_sha256: String,
    pub latents_sha256: String,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub engine: String,
    pub status: String,
    pub error: Option<String>,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub backend: String,
    pub attention: bool,
    pub steps: Vec<StepRecord>,
    pub final_hashes: Option<FinalHashes>,
}

impl Manifest {
    fn new(cfg: &RunConfig, backend: &str) -> Self {
        Self {
            version: MANIFEST_VERSION,
            engine: env!("CARGO_PKG_VERSION").to_string(),
            status: "FAILED".into(),
            error: None,
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seed: cfg.sampler.seed,
            backend: backend.to_string(),
            attention: false,
            steps: Vec::new(),
            final_hashes: None,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub output: RunOutput,
    pub manifest: Manifest,
}

fn write_artifacts(out: &Path, texture: &TextureMap, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(out)?;
    imageio::save_rgb(&texture.as_image(), out.join("texture.png"))?;
    imageio::save_coverage(texture, out.join("coverage.png"))?;
    manifest.write(out.join("manifest.json"))
}

/// Load the mesh, build the backend and run with `cfg`, writing artifacts to
/// `cfg.out_dir` when set. A failed run still writes its partial texture and
/// a manifest marked `FAILED`.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let mesh_path = cfg
        .mesh
        .as_ref()
        .ok_or_else(|| Error::config("mesh", "a mesh path is required"))?;
    let mesh = load_mesh(mesh_path)?;
    let (denoiser, codec) = build_backend(cfg)?;
    denoiser.health()?;
    run_with(cfg, mesh, denoiser, codec)
}

/// [`run`] with an already loaded mesh and backend.
pub fn run_with(
    cfg: &RunConfig,
    mesh: Mesh,
    denoiser: Arc<dyn Denoiser>,
    codec: Arc<dyn LatentCodec>,
) -> Result<RunResult> {
    let mut manifest = Manifest::new(cfg, denoiser.id());
    let engine = Engine::new(cfg.clone(), mesh, denoiser, codec)?;
    let mut state = engine.init_state();
    let mut steps = Vec::new();
    let debug_dir = cfg.out_dir.as_ref().filter(|_| cfg.debug_renders).map(|d| d.join("debug"));
    if let Some(dir) = &debug_dir {
        std::fs::create_dir_all(dir)?;
    }
    let result = engine.drive(&mut state, &mut steps, |state, images| {
        info!("step {} coverage {:.4}", state.step, engine.coverage(&state.texture));
        if let Some(dir) = &debug_dir {
            for (slot, img) in engine.views().iter().zip(&images.decoded) {
                imageio::save_rgb(img, dir.join(format!("step{:03}_view{}.png", state.step, slot.index)))?;
            }
        }
        Ok(())
    });
    manifest.steps = steps.clone();
    manifest.attention = steps.iter().any(|s| s.attention);
    if let Err(e) = result {
        manifest.error = Some(e.to_string());
        if let Some(out) = &cfg.out_dir {
            if let Err(write_err) = write_artifacts(out, &state.texture, &manifest) {
                warn!("could not flush partial artifacts: {write_err}");
            }
        }
        return Err(e);
    }
    manifest.status = "ok".into();
    manifest.final_hashes = Some(FinalHashes {
        texture_sha256: texture_hash(&state.texture),
        latents_sha256: latents_hash(&state.latents),
        coverage: engine.coverage(&state.texture),
    });
    if let Some(out) = &cfg.out_dir {
        write_artifacts(out, &state.texture, &manifest)?;
    }
    Ok(RunResult {
        output: RunOutput {
            attention_used: manifest.attention,
            texture: state.texture,
            latents: state.latents,
            steps,
        },
        manifest,
    })
}
