//! HTTP client for a `texgen/1` inference service.

use std::io::Read;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;

use crate::error::BackendError;
use crate::geometry::RgbImage;
use crate::guidance::DenoiseOutput;
use crate::latent::LatentImage;

use super::wire::{
    self, DenoiseHeader, DenoiseResponseHeader, HealthBody, TensorHeader, PROTOCOL_VERSION,
};
use super::{DenoiseRequest, Denoiser, KvRef};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Extra attempts after a transport failure or 5xx response.
    pub retries: u32,
    pub timeout_ms: u64,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub kv_layers: Option<Vec<usize>>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            retries: 2,
            timeout_ms: 60_000,
            backoff_ms: 100,
            max_in_flight: 4,
            kv_layers: None,
        }
    }
}

struct Gate {
    busy: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.cap {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

enum Attempt {
    Done(Vec<u8>),
    Retry(BackendError),
    Fail(BackendError),
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            return matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock);
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        let gate = Gate {
            busy: Mutex::new(0),
            freed: Condvar::new(),
            cap: cfg.max_in_flight.max(1),
        };
        Self { cfg, agent, gate }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.endpoint, path)
    }

    fn classify(&self, result: Result<ureq::Response, ureq::Error>) -> Attempt {
        match result {
            Ok(resp) => {
                let mut body = Vec::new();
                match resp.into_reader().read_to_end(&mut body) {
                    Ok(_) => Attempt::Done(body),
                    Err(e) => Attempt::Retry(BackendError::Unavailable(format!("reading response: {e}"))),
                }
            }
            Err(ureq::Error::Status(status, resp)) => {
                let mut body = Vec::new();
                let _ = resp.into_reader().read_to_end(&mut body);
                let err = wire::error_from_response(status, &body);
                if status >= 500 && matches!(err, BackendError::Server { .. }) {
                    Attempt::Retry(err)
                } else {
                    Attempt::Fail(err)
                }
            }
            Err(ureq::Error::Transport(t)) => {
                if is_timeout(&t) {
                    Attempt::Retry(BackendError::Timeout(self.cfg.timeout_ms))
                } else {
                    Attempt::Retry(BackendError::Unavailable(t.to_string()))
                }
            }
        }
    }

    fn with_retries(&self, what: &str, call: impl Fn() -> Result<ureq::Response, ureq::Error>) -> Result<Vec<u8>, BackendError> {
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.classify(call()) {
                Attempt::Done(body) => return Ok(body),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(err) if attempt >= self.cfg.retries => return Err(err),
                Attempt::Retry(err) => {
                    attempt += 1;
                    warn!("{what}: {err}; retry {attempt}/{}", self.cfg.retries);
                    thread::sleep(Duration::from_millis(self.cfg.backoff_ms * attempt as u64));
                }
            }
        }
    }

    fn post<H: DeserializeOwned>(&self, path: &str, body: &[u8]) -> Result<(H, Vec<f32>), BackendError> {
        let url = self.url(path);
        debug!("POST {url} ({} bytes)", body.len());
        let bytes = self.with_retries(path, || {
            self.agent
                .post(&url)
                .set("Content-Type", "application/octet-stream")
                .send_bytes(body)
        })?;
        wire::decode_envelope(&bytes)
    }

    pub fn health(&self) -> Result<String, BackendError> {
        let url = self.url("/health");
        let bytes = self.with_retries("/health", || self.agent.get(&url).call())?;
        let body: HealthBody = serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::Malformed(format!("health body: {e}")))?;
        wire::check_version(Some(&body.version))?;
        Ok(body.version)
    }

    pub fn denoise_header(&self, req: &DenoiseRequest, kv_handle: Option<String>) -> DenoiseHeader {
        DenoiseHeader {
            version: PROTOCOL_VERSION.into(),
            step_t: req.timestep,
            alpha_t: req.alpha,
            prompt: req.prompt.text.clone(),
            null_prompt: [req.prompt.is_null(), true],
            want_kv: req.want_kv,
            kv_handle,
            latent_shape: req.latent.shape(),
            depth_shape: req.depth.as_ref().map_or([0, 0], |d| [d.height, d.width]),
            kv_layers: self.cfg.kv_layers.clone(),
            edge_condition: req.edge_condition,
        }
    }

    /// Serialized request body for `/denoise`.
    pub fn denoise_body(&self, req: &DenoiseRequest, kv_handle: Option<String>) -> Vec<u8> {
        let header = self.denoise_header(req, kv_handle);
        let depth: &[f64] = req.depth.as_ref().map_or(&[], |d| &d.data);
        wire::encode_envelope(&header, &[req.latent.as_slice(), depth])
    }

    /// Raw `/denoise` call; returns both predictions and the server's KV handle.
    pub fn denoise_raw(
        &self,
        req: &DenoiseRequest,
        kv_handle: Option<String>,
    ) -> Result<(LatentImage, LatentImage, Option<String>), BackendError> {
        let body = self.denoise_body(req, kv_handle);
        let (header, payload): (DenoiseResponseHeader, _) = self.post("/denoise", &body)?;
        let shape = req.latent.shape();
        if header.eps_shape != shape {
            return Err(BackendError::Shape(format!(
                "response shape {:?} does not match latent {:?}",
                header.eps_shape, shape
            )));
        }
        let n = req.latent.len();
        if payload.len() != 2 * n {
            return Err(BackendError::Malformed(format!(
                "expected {} floats, got {}",
                2 * n,
                payload.len()
            )));
        }
        let to_latent = |s: &[f32]| {
            LatentImage::from_vec(shape[0], shape[1], shape[2], s.iter().map(|&v| v as f64).collect())
                .map_err(|e| BackendError::Malformed(e.to_string()))
        };
        Ok((to_latent(&payload[..n])?, to_latent(&payload[n..])?, header.kv_handle))
    }

    fn tensor_call(&self, path: &str, shape: [usize; 3], data: &[f64]) -> Result<([usize; 3], Vec<f64>), BackendError> {
        let header = TensorHeader {
            version: PROTOCOL_VERSION.into(),
            shape,
        };
        let body = wire::encode_envelope(&header, &[data]);
        let (resp, payload): (TensorHeader, _) = self.post(path, &body)?;
        let [h, w, c] = resp.shape;
        if payload.len() != h * w * c {
            return Err(BackendError::Malformed(format!(
                "{path}: header shape {:?} but {} floats",
                resp.shape,
                payload.len()
            )));
        }
        Ok((resp.shape, payload.into_iter().map(|v| v as f64).collect()))
    }

    pub fn encode(&self, img: &RgbImage) -> Result<LatentImage, BackendError> {
        let flat: Vec<f64> = img.data.iter().flatten().copied().collect();
        let ([h, w, c], data) = self.tensor_call("/encode", [img.height, img.width, 3], &flat)?;
        LatentImage::from_vec(h, w, c, data).map_err(|e| BackendError::Malformed(e.to_string()))
    }

    pub fn decode(&self, lat: &LatentImage) -> Result<RgbImage, BackendError> {
        let ([h, w, c], data) = self.tensor_call("/decode", lat.shape(), lat.as_slice())?;
        if c != 3 {
            return Err(BackendError::Shape(format!("decoder returned {c} channels")));
        }
        Ok(RgbImage {
            width: w,
            height: h,
            data: data.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        })
    }
}

/// [`Denoiser`] backed by a [`RemoteClient`].
pub struct RemoteDenoiser {
    client: Arc<RemoteClient>,
    id: String,
}

impl RemoteDenoiser {
    pub fn new(client: Arc<RemoteClient>) -> Self {
        let id = format!("remote:{}", client.cfg.endpoint);
        Self { client, id }
    }

    pub fn client(&self) -> &Arc<RemoteClient> {
        &self.client
    }
}

impl Denoiser for RemoteDenoiser {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_kv(&self) -> bool {
        true
    }

    fn health(&self) -> Result<(), BackendError> {
        self.client.health().map(|_| ())
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseOutput, BackendError> {
        let handle = match &req.kv_inject {
            None | Some(KvRef::Unsupported { .. }) => None,
            Some(KvRef::Handle { id, backend, t }) => {
                if backend != &self.id || *t != req.t {
                    return Err(BackendError::StaleKv(format!(
                        "handle {id} was issued by {backend} at step {t}"
                    )));
                }
                Some(id.clone())
            }
            Some(KvRef::Inline(_)) => {
                return Err(BackendError::StaleKv("inline attention bundles cannot be sent to a remote backend".into()))
            }
        };
        let (cond, uncond, kv_handle) = self.client.denoise_raw(req, handle)?;
        if req.want_kv && kv_handle.is_none() {
            return Err(BackendError::Malformed("server returned no kv_handle".into()));
        }
        let kv = kv_handle.map(|id| KvRef::Handle {
            id,
            backend: self.id.clone(),
            t: req.t,
        });
        Ok(DenoiseOutput::new(cond, uncond)
            .map_err(|e| BackendError::Shape(e.to_string()))?
            .with_kv(kv))
    }
}
