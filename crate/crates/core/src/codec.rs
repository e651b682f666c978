//! Latent encode/decode boundary.
//!
//! The toy codec box-filters RGB down by `factor` and lifts the three colour
//! channels into `channels` latent channels through a matrix with orthonormal
//! columns; decoding projects back and upsamples by pixel replication. The
//! round trip `decode(encode(·))` is therefore a linear, idempotent projection
//! that discards detail finer than one latent cell.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::denoiser::remote::RemoteClient;
use crate::error::{Error, Result};
use crate::geometry::RgbImage;
use crate::latent::LatentImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    ToyLossy,
    Identity,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub kind: CodecKind,
    pub factor: usize,
    pub channels: usize,
}

impl CodecSpec {
    pub fn toy(factor: usize, channels: usize) -> Self {
        Self {
            kind: CodecKind::ToyLossy,
            factor,
            channels,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: CodecKind::Identity,
            factor: 1,
            channels: 3,
        }
    }

    pub fn remote(factor: usize, channels: usize) -> Self {
        Self {
            kind: CodecKind::Remote,
            factor,
            channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::config("codec.factor", "must be at least 1"));
        }
        match self.kind {
            CodecKind::Identity if self.factor != 1 || self.channels != 3 => Err(Error::config(
                "codec",
                "identity codec has factor 1 and 3 channels",
            )),
            CodecKind::ToyLossy if !(3..=16).contains(&self.channels) => Err(Error::config(
                "codec.channels",
                "toy codec needs between 3 and 16 latent channels",
            )),
            _ => Ok(()),
        }
    }

    /// Latent shape for an RGB image of the given size.
    pub fn latent_shape(&self, width: usize, height: usize) -> Result<[usize; 3]> {
        if width % self.factor != 0 || height % self.factor != 0 {
            return Err(Error::contract(format!(
                "image {width}x{height} is not divisible by codec factor {}",
                self.factor
            )));
        }
        Ok([height / self.factor, width / self.factor, self.channels])
    }
}

pub trait LatentCodec: Send + Sync {
    fn spec(&self) -> CodecSpec;
    fn encode(&self, img: &RgbImage) -> Result<LatentImage>;
    fn decode(&self, lat: &LatentImage) -> Result<RgbImage>;
}

pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn spec(&self) -> CodecSpec {
        CodecSpec::identity()
    }

    fn encode(&self, img: &RgbImage) -> Result<LatentImage> {
        LatentImage::from_vec(
            img.height,
            img.width,
            3,
            img.data.iter().flatten().copied().collect(),
        )
    }

    fn decode(&self, lat: &LatentImage) -> Result<RgbImage> {
        if lat.channels() != 3 {
            return Err(Error::contract("identity codec expects 3 latent channels"));
        }
        Ok(RgbImage {
            width: lat.width(),
            height: lat.height(),
            data: lat
                .as_slice()
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
        })
    }
}

pub struct ToyCodec {
    factor: usize,
    /// `channels x 3`, orthonormal columns.
    lift: Vec<[f64; 3]>,
}

impl ToyCodec {
    pub fn new(factor: usize, channels: usize) -> Result<Self> {
        CodecSpec::toy(factor, channels).validate()?;
        Ok(Self {
            factor,
            lift: lift_matrix(channels),
        })
    }

    pub fn lift(&self) -> &[[f64; 3]] {
        &self.lift
    }

    /// Unit latent directions that decode to black (orthogonal to the lift).
    pub fn null_directions(&self) -> Vec<Vec<f64>> {
        let c = self.lift.len();
        (3..c).map(|k| (0..c).map(|n| dct_entry(c, k, n)).collect()).collect()
    }
}

/// Entry `(row n, column k)` of the orthonormal DCT-II basis; column k is the
/// k-th cosine basis vector.
fn dct_entry(c: usize, k: usize, n: usize) -> f64 {
    let scale = if k == 0 { (1.0 / c as f64).sqrt() } else { (2.0 / c as f64).sqrt() };
    scale * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * c) as f64).cos()
}

fn lift_matrix(channels: usize) -> Vec<[f64; 3]> {
    (0..channels)
        .map(|n| [dct_entry(channels, 0, n), dct_entry(channels, 1, n), dct_entry(channels, 2, n)])
        .collect()
}

impl LatentCodec for ToyCodec {
    fn spec(&self) -> CodecSpec {
        CodecSpec::toy(self.factor, self.lift.len())
    }

    fn encode(&self, img: &RgbImage) -> Result<LatentImage> {
        let [h, w, c] = self.spec().latent_shape(img.width, img.height)?;
        let f = self.factor;
        let inv = 1.0 / (f * f) as f64;
        let mut out = LatentImage::zeros(h, w, c);
        for ly in 0..h {
            for lx in 0..w {
                let mut mean = [0.0; 3];
                for dy in 0..f {
                    for dx in 0..f {
                        let p = img.get(lx * f + dx, ly * f + dy);
                        for k in 0..3 {
                            mean[k] += p[k];
                        }
                    }
                }
                let cell = out.cell_mut(ly, lx);
                for (n, row) in self.lift.iter().enumerate() {
                    cell[n] = (row[0] * mean[0] + row[1] * mean[1] + row[2] * mean[2]) * inv;
                }
            }
        }
        Ok(out)
    }

    fn decode(&self, lat: &LatentImage) -> Result<RgbImage> {
        if lat.channels() != self.lift.len() {
            return Err(Error::contract(format!(
                "latent has {} channels, codec expects {}",
                lat.channels(),
                self.lift.len()
            )));
        }
        let f = self.factor;
        let (w, h) = (lat.width() * f, lat.height() * f);
        Ok(RgbImage::from_fn(w, h, |x, y| {
            let cell = lat.cell(y / f, x / f);
            let mut rgb = [0.0; 3];
            for (n, row) in self.lift.iter().enumerate() {
                for k in 0..3 {
                    rgb[k] += row[k] * cell[n];
                }
            }
            rgb
        }))
    }
}

/// Codec served by the remote backend.
pub struct RemoteCodec {
    spec: CodecSpec,
    client: Arc<RemoteClient>,
}

impl RemoteCodec {
    pub fn new(spec: CodecSpec, client: Arc<RemoteClient>) -> Self {
        Self { spec, client }
    }
}

impl LatentCodec for RemoteCodec {
    fn spec(&self) -> CodecSpec {
        self.spec
    }

    fn encode(&self, img: &RgbImage) -> Result<LatentImage> {
        self.spec.latent_shape(img.width, img.height)?;
        Ok(self.client.encode(img)?)
    }

    fn decode(&self, lat: &LatentImage) -> Result<RgbImage> {
        if lat.channels() != self.spec.channels {
            return Err(Error::contract("latent channel count does not match remote codec"));
        }
        Ok(self.client.decode(lat)?)
    }
}

/// Instantiate an in-process codec. Remote codecs need a client; see [`build_codec`].
pub fn local_codec(spec: &CodecSpec) -> Result<Arc<dyn LatentCodec>> {
    spec.validate()?;
    match spec.kind {
        CodecKind::Identity => Ok(Arc::new(IdentityCodec)),
        CodecKind::ToyLossy => Ok(Arc::new(ToyCodec::new(spec.factor, spec.channels)?)),
        CodecKind::Remote => Err(Error::config("codec", "remote codec needs a backend endpoint")),
    }
}

pub fn build_codec(spec: &CodecSpec, client: Option<Arc<RemoteClient>>) -> Result<Arc<dyn LatentCodec>> {
    match (spec.kind, client) {
        (CodecKind::Remote, Some(client)) => {
            spec.validate()?;
            Ok(Arc::new(RemoteCodec::new(*spec, client)))
        }
        _ => local_codec(spec),
    }
}

pub fn encode(img: &RgbImage, spec: &CodecSpec) -> Result<LatentImage> {
    local_codec(spec)?.encode(img)
}

pub fn decode(lat: &LatentImage, spec: &CodecSpec) -> Result<RgbImage> {
    local_codec(spec)?.decode(lat)
}
