//! View-consistent UV texture synthesis.
//!
//! Each diffusion step sweeps the camera views in order, denoising every view
//! with the reference view's attention keys/values, decoding the denoised
//! observation and baking it into a shared UV texture. The completed texture
//! then steers every view's noise estimate before the DDIM update, blending
//! text guidance with texture guidance whose weight decays over the run.

pub mod cli;
pub mod codec;
pub mod denoiser;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod imageio;
pub mod latent;
pub mod pipeline;
pub mod schedule;
pub mod spectrum;

pub use error::{BackendError, Error, Result};
pub use latent::LatentImage;
