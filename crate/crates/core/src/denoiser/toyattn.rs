//! Untrained single-head self-attention denoiser.
//!
//! The prediction is the analytic Gaussian noise plus a small correction from
//! a stack of residual self-attention layers over latent cells. Weights come
//! from a fixed seed. The prompt only enters at the output head, so keys and
//! values are shared by the conditional and unconditional passes and one
//! exported bundle serves both.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use std::sync::Arc;

use crate::error::{BackendError, Error};
use crate::guidance::DenoiseOutput;
use crate::latent::LatentImage;

use super::gaussian::GaussianPrior;
use super::{AttentionBundle, DenoiseRequest, Denoiser, KvPair, KvRef, PromptCondition};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyAttentionConfig {
    pub dim: usize,
    pub layers: usize,
    /// Scale of the attention correction added to the analytic prediction.
    pub gain: f64,
    pub seed: u64,
}

impl Default for ToyAttentionConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            layers: 1,
            gain: 0.1,
            seed: 0x7e47_a11e,
        }
    }
}

const POS_FEATURES: usize = 4;
const TIME_FEATURES: usize = 2;

struct Layer {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
}

pub struct ToyAttentionBackend {
    prior: GaussianPrior,
    cfg: ToyAttentionConfig,
    w_in: Vec<f64>,
    layers: Vec<Layer>,
    w_out: Vec<f64>,
    id: String,
}

/// Per-layer attention outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<f64>>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let scale = 1.0 / (cols as f64).sqrt();
    (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// `out[r] = sum_k m[r * cols + k] * v[k]`
fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = m[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn project(m: &[f64], rows: &[f64], dim_in: usize, dim_out: usize) -> Vec<f64> {
    let tokens = rows.len() / dim_in;
    let mut out = vec![0.0; tokens * dim_out];
    for t in 0..tokens {
        matvec(m, &rows[t * dim_in..(t + 1) * dim_in], &mut out[t * dim_out..(t + 1) * dim_out]);
    }
    out
}

impl ToyAttentionBackend {
    pub const ID: &'static str = "toyattn";

    pub fn new(prior: GaussianPrior, cfg: ToyAttentionConfig) -> Result<Self, Error> {
        if cfg.dim == 0 || cfg.layers == 0 {
            return Err(Error::config("toyattn", "dim and layers must be positive"));
        }
        let c = prior.channels();
        let d = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w_in = gaussian_matrix(&mut rng, d, c + POS_FEATURES + TIME_FEATURES);
        let layers = (0..cfg.layers)
            .map(|_| Layer {
                wq: gaussian_matrix(&mut rng, d, d),
                wk: gaussian_matrix(&mut rng, d, d),
                wv: gaussian_matrix(&mut rng, d, d),
                wo: gaussian_matrix(&mut rng, d, d),
            })
            .collect();
        let w_out = gaussian_matrix(&mut rng, c, d);
        let id = format!("{}:{:x}:{}x{}", Self::ID, cfg.seed, cfg.layers, cfg.dim);
        Ok(Self {
            prior,
            cfg,
            w_in,
            layers,
            w_out,
            id,
        })
    }

    pub fn config(&self) -> &ToyAttentionConfig {
        &self.cfg
    }

    fn embed(&self, x: &LatentImage, alpha: f64) -> Vec<f64> {
        let [h, w, c] = x.shape();
        let f = c + POS_FEATURES + TIME_FEATURES;
        let d = self.cfg.dim;
        let mut tokens = vec![0.0; h * w * d];
        let mut feat = vec![0.0; f];
        for y in 0..h {
            for xx in 0..w {
                feat[..c].copy_from_slice(x.cell(y, xx));
                let py = std::f64::consts::TAU * y as f64 / h as f64;
                let px = std::f64::consts::TAU * xx as f64 / w as f64;
                feat[c..c + POS_FEATURES].copy_from_slice(&[py.sin(), py.cos(), px.sin(), px.cos()]);
                feat[c + POS_FEATURES] = alpha.sqrt();
                feat[c + POS_FEATURES + 1] = (1.0 - alpha).sqrt();
                let i = y * w + xx;
                matvec(&self.w_in, &feat, &mut tokens[i * d..(i + 1) * d]);
            }
        }
        tokens
    }

    fn prompt_vector(&self, prompt: &PromptCondition) -> Vec<f64> {
        if prompt.is_null() {
            return vec![0.0; self.cfg.dim];
        }
        let digest = prompt.digest();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.cfg.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
            .collect()
    }

    fn check_kv(&self, kv: &KvRef, t: usize) -> Result<Option<Arc<AttentionBundle>>, BackendError> {
        match kv {
            KvRef::Inline(bundle) => {
                if bundle.backend != self.id || bundle.t != t {
                    return Err(BackendError::StaleKv(format!(
                        "bundle from {} at step {} used by {} at step {t}",
                        bundle.backend, bundle.t, self.id
                    )));
                }
                if bundle.layers.len() != self.layers.len()
                    || bundle.layers.iter().any(|l| l.dim != self.cfg.dim)
                {
                    return Err(BackendError::Shape("attention bundle does not match model layout".into()));
                }
                Ok(Some(bundle.clone()))
            }
            KvRef::Handle { id, .. } => Err(BackendError::StaleKv(format!(
                "server handle {id} cannot be used by the in-process backend"
            ))),
            KvRef::Unsupported { .. } => Ok(None),
        }
    }

    /// Residual stream after every layer plus exported K/V and per-layer attention outputs.
    fn forward(
        &self,
        x: &LatentImage,
        alpha: f64,
        inject: Option<&AttentionBundle>,
    ) -> (Vec<f64>, Vec<KvPair>, Vec<Vec<f64>>) {
        let d = self.cfg.dim;
        let mut hidden = self.embed(x, alpha);
        let tokens = hidden.len() / d;
        let scale = 1.0 / (d as f64).sqrt();
        let mut exported = Vec::with_capacity(self.layers.len());
        let mut trace = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let q = project(&layer.wq, &hidden, d, d);
            let own = KvPair {
                tokens,
                dim: d,
                keys: project(&layer.wk, &hidden, d, d),
                values: project(&layer.wv, &hidden, d, d),
            };
            let kv = inject.map_or(&own, |b| &b.layers[li]);
            let mut attn = vec![0.0; tokens * d];
            let mut logits = vec![0.0; kv.tokens];
            for i in 0..tokens {
                let qi = &q[i * d..(i + 1) * d];
                let mut max = f64::NEG_INFINITY;
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = scale * qi.iter().zip(&kv.keys[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum::<f64>();
                    max = max.max(*l);
                }
                let mut z = 0.0;
                for l in logits.iter_mut() {
                    *l = (*l - max).exp();
                    z += *l;
                }
                let out = &mut attn[i * d..(i + 1) * d];
                for (j, l) in logits.iter().enumerate() {
                    let wgt = l / z;
                    for (o, v) in out.iter_mut().zip(&kv.values[j * d..(j + 1) * d]) {
                        *o += wgt * v;
                    }
                }
            }
            let mixed = project(&layer.wo, &attn, d, d);
            for (h, m) in hidden.iter_mut().zip(&mixed) {
                *h += m;
            }
            trace.push(attn);
            exported.push(own);
        }
        (hidden, exported, trace)
    }

    fn head(&self, hidden: &[f64], prompt: &[f64], prior_eps: &LatentImage) -> LatentImage {
        let d = self.cfg.dim;
        let c = prior_eps.channels();
        let mut out = prior_eps.clone();
        let mut buf = vec![0.0; d];
        let mut eps = vec![0.0; c];
        for (i, cell) in out.as_mut_slice().chunks_exact_mut(c).enumerate() {
            for k in 0..d {
                buf[k] = (hidden[i * d + k] + prompt[k]).tanh();
            }
            matvec(&self.w_out, &buf, &mut eps);
            for (o, e) in cell.iter_mut().zip(&eps) {
                *o += self.cfg.gain * e;
            }
        }
        out
    }

    /// Per-layer attention outputs for `x`, optionally attending to `kv`.
    pub fn attention_trace(
        &self,
        x: &LatentImage,
        t: usize,
        alpha: f64,
        kv: Option<&KvRef>,
    ) -> Result<AttentionTrace, BackendError> {
        let bundle = match kv {
            Some(kv) => self.check_kv(kv, t)?,
            None => None,
        };
        let (_, _, trace) = self.forward(x, alpha, bundle.as_deref());
        Ok(AttentionTrace { layers: trace })
    }
}

impl Denoiser for ToyAttentionBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_kv(&self) -> bool {
        true
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseOutput, BackendError> {
        let shape_err = |e: Error| BackendError::Shape(e.to_string());
        if req.latent.channels() != self.prior.channels() {
            return Err(BackendError::Shape(format!(
                "latent has {} channels, backend expects {}",
                req.latent.channels(),
                self.prior.channels()
            )));
        }
        let bundle = match &req.kv_inject {
            Some(kv) => self.check_kv(kv, req.t)?,
            None => None,
        };
        if let Some(b) = &bundle {
            if b.layers.iter().any(|l| l.tokens == 0) {
                return Err(BackendError::Shape("empty attention bundle".into()));
            }
        }
        let (hidden, exported, _) = self.forward(&req.latent, req.alpha, bundle.as_deref());
        let conditional = !req.prompt.is_null();
        let prior_c = self.prior.eps(&req.latent, req.alpha, conditional).map_err(shape_err)?;
        let prior_u = self.prior.eps(&req.latent, req.alpha, false).map_err(shape_err)?;
        let eps_c = self.head(&hidden, &self.prompt_vector(&req.prompt), &prior_c);
        let eps_u = self.head(&hidden, &self.prompt_vector(&PromptCondition::null()), &prior_u);
        let kv = req.want_kv.then(|| {
            KvRef::Inline(Arc::new(AttentionBundle {
                backend: self.id.clone(),
                t: req.t,
                layers: exported,
            }))
        });
        Ok(DenoiseOutput::new(eps_c, eps_u).map_err(shape_err)?.with_kv(kv))
    }
}
