//! Closed-form noise prediction for Gaussian data.
//!
//! Every latent cell is an independent `c`-vector drawn from
//! `N(m(y, x), s^2 I + tau^2 q q^T)` with `q` a unit vector. At signal level
//! `alpha` the noisy latent is `N(sqrt(alpha) m, C)` with
//! `C = alpha (s^2 I + tau^2 q q^T) + (1 - alpha) I`, and the ideal noise
//! prediction is `sqrt(1 - alpha) C^{-1} (x - sqrt(alpha) m)`.
//!
//! The prompt-conditioned mean adds a latent-cell checkerboard along `q`; the
//! null-prompt mean is flat. With `tau > 0` the pattern is correlated with
//! every component of `q`, including ones the codec cannot represent.

use crate::codec::{CodecKind, CodecSpec, ToyCodec};
use crate::error::{BackendError, Error, Result};
use crate::guidance::DenoiseOutput;
use crate::latent::LatentImage;

use super::{DenoiseRequest, Denoiser, KvRef};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    /// Per-cell mean of the unconditional distribution.
    pub base: Vec<f64>,
    /// Unit coupling/pattern direction.
    pub direction: Vec<f64>,
    /// Checkerboard amplitude of the conditional mean along `direction`.
    pub amplitude: f64,
    pub s: f64,
    pub tau: f64,
}

impl GaussianPrior {
    /// Isotropic `N(mu, s^2 I)` regardless of prompt.
    pub fn isotropic(mu: Vec<f64>, s: f64) -> Self {
        let mut direction = vec![0.0; mu.len()];
        direction[0] = 1.0;
        Self {
            base: mu,
            direction,
            amplitude: 0.0,
            s,
            tau: 0.0,
        }
    }

    /// Patterned prior in the latent space of `codec`: mid-grey mean, with the
    /// prompt adding a checkerboard along a direction that is half luminance
    /// and half codec null space.
    pub fn patterned(codec: &CodecSpec, amplitude: f64, s: f64, tau: f64) -> Result<Self> {
        let (lift, null): (Vec<[f64; 3]>, Option<Vec<f64>>) = match codec.kind {
            CodecKind::ToyLossy | CodecKind::Remote => {
                let toy = ToyCodec::new(codec.factor, codec.channels.max(3))?;
                (toy.lift().to_vec(), toy.null_directions().into_iter().next())
            }
            CodecKind::Identity => (vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], None),
        };
        let g = 1.0 / 3f64.sqrt();
        let base: Vec<f64> = lift.iter().map(|r| 0.5 * (r[0] + r[1] + r[2])).collect();
        let mut direction: Vec<f64> = lift.iter().map(|r| g * (r[0] + r[1] + r[2])).collect();
        if let Some(n) = null {
            for (d, n) in direction.iter_mut().zip(n) {
                *d += n;
            }
        }
        let len = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|v| *v /= len);
        Ok(Self {
            base,
            direction,
            amplitude,
            s,
            tau,
        })
    }

    pub fn channels(&self) -> usize {
        self.base.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.base.len();
        if c == 0 || self.direction.len() != c {
            return Err(Error::contract("prior mean and direction must share a nonzero length"));
        }
        let n: f64 = self.direction.iter().map(|v| v * v).sum();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::contract("prior direction must be unit length"));
        }
        if !(self.s > 0.0) || self.tau < 0.0 {
            return Err(Error::contract("prior needs s > 0 and tau >= 0"));
        }
        Ok(())
    }

    /// Mean of one cell; `conditional` selects the prompt-conditioned mean.
    pub fn mean(&self, y: usize, x: usize, conditional: bool) -> Vec<f64> {
        let sign = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
        let a = if conditional { self.amplitude * sign } else { 0.0 };
        self.base
            .iter()
            .zip(&self.direction)
            .map(|(m, q)| m + a * q)
            .collect()
    }

    /// Ideal noise prediction for the whole latent.
    pub fn eps(&self, x: &LatentImage, alpha: f64, conditional: bool) -> Result<LatentImage> {
        let [h, w, c] = x.shape();
        if c != self.channels() {
            return Err(Error::contract(format!(
                "latent has {c} channels, prior expects {}",
                self.channels()
            )));
        }
        let a = alpha * self.s * self.s + 1.0 - alpha;
        let b = alpha * self.tau * self.tau;
        let sa = alpha.sqrt();
        let sb = (1.0 - alpha).sqrt();
        let mut out = LatentImage::zeros(h, w, c);
        for y in 0..h {
            for xx in 0..w {
                let m = self.mean(y, xx, conditional);
                let r: Vec<f64> = x.cell(y, xx).iter().zip(&m).map(|(v, m)| v - sa * m).collect();
                let proj: f64 = r.iter().zip(&self.direction).map(|(r, q)| r * q).sum();
                let k = b / (a + b);
                let cell = out.cell_mut(y, xx);
                for i in 0..c {
                    cell[i] = sb * (r[i] - k * proj * self.direction[i]) / a;
                }
            }
        }
        Ok(out)
    }

    /// Log-density of the noisy marginal for a single cell.
    pub fn log_density(&self, cell: &[f64], y: usize, x: usize, alpha: f64, conditional: bool) -> f64 {
        let c = cell.len() as f64;
        let a = alpha * self.s * self.s + 1.0 - alpha;
        let b = alpha * self.tau * self.tau;
        let m = self.mean(y, x, conditional);
        let r: Vec<f64> = cell.iter().zip(&m).map(|(v, m)| v - alpha.sqrt() * m).collect();
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let proj: f64 = r.iter().zip(&self.direction).map(|(r, q)| r * q).sum();
        let quad = (rr - b / (a + b) * proj * proj) / a;
        let logdet = (c - 1.0) * a.ln() + (a + b).ln();
        -0.5 * (quad + logdet + c * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Analytic backend over a [`GaussianPrior`]. Exports no attention state.
pub struct GaussianBackend {
    prior: GaussianPrior,
}

impl GaussianBackend {
    pub const ID: &'static str = "gaussian";

    pub fn new(prior: GaussianPrior) -> Result<Self> {
        prior.validate()?;
        Ok(Self { prior })
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }
}

impl Denoiser for GaussianBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn supports_kv(&self) -> bool {
        false
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseOutput, BackendError> {
        let shape_err = |e: Error| BackendError::Shape(e.to_string());
        let cond = self
            .prior
            .eps(&req.latent, req.alpha, !req.prompt.is_null())
            .map_err(shape_err)?;
        let uncond = self.prior.eps(&req.latent, req.alpha, false).map_err(shape_err)?;
        let kv = req.want_kv.then(|| KvRef::Unsupported {
            backend: Self::ID.to_string(),
        });
        Ok(DenoiseOutput::new(cond, uncond).map_err(shape_err)?.with_kv(kv))
    }
}
