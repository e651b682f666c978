//! Noise-estimation algebra: classifier-free guidance, texture-conditioned
//! noise recalculation, its disentanglement from the unconditional branch, and
//! the two-condition combination used during resampling.

use serde::{Deserialize, Serialize};

use crate::denoiser::KvRef;
use crate::error::{Error, Result};
use crate::latent::LatentImage;
use crate::schedule::{NoiseSchedule, Step};

/// `texture_noise` refuses steps whose alpha is this close to one.
pub const SINGULARITY_GUARD: f64 = 1e-8;

/// Conditional and unconditional noise predictions for one latent.
#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub eps_cond: LatentImage,
    pub eps_uncond: LatentImage,
    pub kv: Option<KvRef>,
}

impl DenoiseOutput {
    pub fn new(eps_cond: LatentImage, eps_uncond: LatentImage) -> Result<Self> {
        eps_cond.ensure_same_shape(&eps_uncond, "denoise output")?;
        Ok(Self {
            eps_cond,
            eps_uncond,
            kv: None,
        })
    }

    pub fn with_kv(mut self, kv: Option<KvRef>) -> Self {
        self.kv = kv;
        self
    }
}

/// How the texture weight evolves over the sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Omega2Mode {
    /// Linear decay from `omega` at the first step to 0 at the last.
    LinearDecay,
    /// Texture guidance only (`omega1 = 0`).
    TextureOnly,
    /// Text guidance only (`omega2 = 0`).
    TextOnly,
}

/// Split of the total guidance scale between text and texture conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeights {
    pub omega: f64,
    pub total_steps: usize,
    pub mode: Omega2Mode,
}

impl GuidanceWeights {
    pub fn new(omega: f64, total_steps: usize) -> Self {
        Self {
            omega,
            total_steps,
            mode: Omega2Mode::LinearDecay,
        }
    }

    pub fn with_mode(mut self, mode: Omega2Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn omega2(&self, t: Step) -> f64 {
        match self.mode {
            Omega2Mode::LinearDecay => omega2_schedule(t, self.total_steps, self.omega),
            Omega2Mode::TextureOnly => self.omega,
            Omega2Mode::TextOnly => 0.0,
        }
    }

    pub fn omega1(&self, t: Step) -> f64 {
        self.omega - self.omega2(t)
    }
}

/// Texture weight at step `t` of a `total_steps`-step run.
///
/// Linear in the sampling iteration: `omega` at the first step (`t = T`),
/// zero at the last (`t = 1`). A single-step run sits at its last step.
pub fn omega2_schedule(t: Step, total_steps: usize, omega: f64) -> f64 {
    if total_steps <= 1 {
        return 0.0;
    }
    let t = t.clamp(1, total_steps);
    omega * (t - 1) as f64 / (total_steps - 1) as f64
}

/// `eps_uncond + omega * (eps_cond - eps_uncond)`.
pub fn cfg_combine(out: &DenoiseOutput, omega: f64) -> Result<LatentImage> {
    out.eps_uncond
        .zip_map(&out.eps_cond, "cfg_combine", |u, c| u + omega * (c - u))
}

/// Noise map that makes `encoded_render` the denoised observation of `x_t`.
pub fn texture_noise(
    x_t: &LatentImage,
    encoded_render: &LatentImage,
    t: Step,
    sched: &NoiseSchedule,
) -> Result<LatentImage> {
    let alpha = sched.alpha(t)?;
    if alpha >= 1.0 - SINGULARITY_GUARD {
        return Err(Error::Singularity { t, alpha });
    }
    let sa = alpha.sqrt();
    let sb = (1.0 - alpha).sqrt();
    x_t.zip_map(encoded_render, "texture_noise", |x, g| (x - sa * g) / sb)
}

/// Texture-conditioned noise with the guidance extrapolation undone.
pub fn disentangle_texture_condition(
    eps_hat_tex: &LatentImage,
    eps_uncond: &LatentImage,
    omega: f64,
) -> Result<LatentImage> {
    if omega == 0.0 {
        return Err(Error::contract("cannot disentangle texture condition with omega = 0"));
    }
    eps_hat_tex.zip_map(eps_uncond, "disentangle_texture_condition", |e, u| {
        (e - u) / omega + u
    })
}

/// Two-condition guidance: text weight `omega1(t)` and texture weight `omega2(t)`.
pub fn multi_cond_combine(
    out: &DenoiseOutput,
    eps_tex_cond: &LatentImage,
    weights: &GuidanceWeights,
    t: Step,
) -> Result<LatentImage> {
    let w1 = weights.omega1(t);
    let w2 = weights.omega2(t);
    out.eps_uncond.zip3_map(&out.eps_cond, eps_tex_cond, "multi_cond_combine", |u, c, x| {
        u + w1 * (c - u) + w2 * (x - u)
    })
}
