//! Noise-prediction backends.
//!
//! A backend answers one request with both the prompt-conditioned and the
//! null-prompt noise prediction for the same latent. Backends that expose
//! self-attention can also hand back the keys/values of a call so later
//! calls at the same step attend to them instead of their own.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::BackendError;
use crate::geometry::DepthImage;
use crate::guidance::DenoiseOutput;
use crate::latent::LatentImage;
use crate::schedule::Step;

pub mod gaussian;
pub mod remote;
pub mod toyattn;
pub mod wire;

pub use gaussian::{GaussianBackend, GaussianPrior};
pub use remote::{RemoteClient, RemoteDenoiser};
pub use toyattn::{ToyAttentionBackend, ToyAttentionConfig};

/// Text condition; `None` is the null prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptCondition {
    pub text: Option<String>,
}

impl PromptCondition {
    pub fn text(s: impl Into<String>) -> Self {
        Self { text: Some(s.into()) }
    }

    pub fn null() -> Self {
        Self { text: None }
    }

    pub fn is_null(&self) -> bool {
        self.text.is_none()
    }

    /// Stable digest; the null prompt hashes differently from the empty string.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        match &self.text {
            Some(t) => {
                h.update([1u8]);
                h.update(t.as_bytes());
            }
            None => h.update([0u8]),
        }
        h.finalize().into()
    }
}

/// One (K, V) pair, row-major `tokens x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvPair {
    pub tokens: usize,
    pub dim: usize,
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

/// Inline keys/values for every attention layer of one call.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub backend: String,
    pub t: Step,
    pub layers: Vec<KvPair>,
}

/// Attention state exported by a backend for reuse within the same step.
#[derive(Debug, Clone, PartialEq)]
pub enum KvRef {
    Inline(Arc<AttentionBundle>),
    /// Server-side cache entry.
    Handle { id: String, backend: String, t: Step },
    /// The backend has no attention to export.
    Unsupported { backend: String },
}

impl KvRef {
    pub fn is_usable(&self) -> bool {
        !matches!(self, KvRef::Unsupported { .. })
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseRequest {
    pub latent: LatentImage,
    pub t: Step,
    /// Training-schedule timestep for `t`.
    pub timestep: usize,
    pub alpha: f64,
    pub prompt: PromptCondition,
    pub depth: Option<DepthImage>,
    pub kv_inject: Option<KvRef>,
    pub want_kv: bool,
    /// Ask the backend to add its edge condition (texture editing).
    pub edge_condition: bool,
}

impl DenoiseRequest {
    pub fn new(latent: LatentImage, t: Step, timestep: usize, alpha: f64, prompt: PromptCondition) -> Self {
        Self {
            latent,
            t,
            timestep,
            alpha,
            prompt,
            depth: None,
            kv_inject: None,
            want_kv: false,
            edge_condition: false,
        }
    }

    pub fn with_depth(mut self, depth: DepthImage) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn with_kv(mut self, kv: Option<KvRef>) -> Self {
        self.kv_inject = kv;
        self
    }

    pub fn wanting_kv(mut self, want: bool) -> Self {
        self.want_kv = want;
        self
    }
}

pub trait Denoiser: Send + Sync {
    /// Identifier stamped into exported attention state.
    fn id(&self) -> &str;

    fn supports_kv(&self) -> bool;

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseOutput, BackendError>;

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Run `req` with `want_kv` set and return the exported attention state.
pub fn export_kv(backend: &dyn Denoiser, req: &DenoiseRequest) -> Result<KvRef, BackendError> {
    if !backend.supports_kv() {
        return Ok(KvRef::Unsupported {
            backend: backend.id().to_string(),
        });
    }
    let req = req.clone().wanting_kv(true);
    backend
        .denoise(&req)?
        .kv
        .ok_or_else(|| BackendError::Malformed("backend returned no attention state".into()))
}

/// Plain DDIM chain from `x_start` at step `T` down to step 0 using the
/// classifier-free combination with scale `omega` at every step.
pub fn sample_ddim(
    backend: &dyn Denoiser,
    sched: &crate::schedule::NoiseSchedule,
    x_start: LatentImage,
    prompt: &PromptCondition,
    omega: f64,
) -> crate::error::Result<LatentImage> {
    let mut x = x_start;
    for t in sched.sampling_steps() {
        let req = DenoiseRequest::new(x.clone(), t, sched.timestep(t)?, sched.alpha(t)?, prompt.clone());
        let out = backend.denoise(&req)?;
        let eps = crate::guidance::cfg_combine(&out, omega)?;
        let x0 = sched.predict_x0(&x, &eps, t)?;
        x = sched.ddim_step(&x0, &eps, t, t - 1)?;
    }
    Ok(x)
}
