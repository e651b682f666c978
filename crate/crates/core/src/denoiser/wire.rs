//! `texgen/1` binary envelopes.
//!
//! ```text
//! [u32 LE header length][compact JSON header][f32 LE payload]
//! ```
//!
//! Denoise requests carry the latent followed by the depth image; responses
//! carry the conditional prediction followed by the unconditional one. Codec
//! requests carry a single tensor each way. Errors are plain JSON bodies of
//! the form `{"version": .., "error": {"kind": .., "message": ..}}`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::BackendError;

pub const PROTOCOL_VERSION: &str = "texgen/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseHeader {
    pub version: String,
    /// Training-schedule timestep.
    pub step_t: usize,
    pub alpha_t: f64,
    pub prompt: Option<String>,
    /// Whether the (conditional, unconditional) passes use the null prompt.
    pub null_prompt: [bool; 2],
    pub want_kv: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_handle: Option<String>,
    pub latent_shape: [usize; 3],
    /// `[0, 0]` when no depth condition is sent.
    pub depth_shape: [usize; 2],
    /// Self-attention layers that receive injected K/V; absent means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_layers: Option<Vec<usize>>,
    pub edge_condition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponseHeader {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_handle: Option<String>,
    pub eps_shape: [usize; 3],
}

/// Header for `/encode` and `/decode`, both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub version: String,
    /// `[height, width, channels]` of the payload.
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    #[serde(default)]
    pub version: Option<String>,
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthBody {
    pub version: String,
}

pub fn encode_envelope<H: Serialize>(header: &H, payload: &[&[f64]]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("headers serialize");
    let floats: usize = payload.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(4 + json.len() + 4 * floats);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for part in payload {
        for v in part.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Split an envelope, checking the protocol version before the header schema.
pub fn decode_envelope<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f32>), BackendError> {
    if bytes.len() < 4 {
        return Err(BackendError::Malformed("envelope shorter than its length prefix".into()));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() < len {
        return Err(BackendError::Malformed(format!(
            "header length {len} exceeds envelope size {}",
            body.len()
        )));
    }
    let (json, payload) = body.split_at(len);
    let value: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| BackendError::Malformed(format!("header: {e}")))?;
    check_version(value.get("version").and_then(|v| v.as_str()))?;
    let header = serde_json::from_value(value).map_err(|e| BackendError::Malformed(format!("header: {e}")))?;
    if payload.len() % 4 != 0 {
        return Err(BackendError::Malformed("payload is not a whole number of f32 values".into()));
    }
    let floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, floats))
}

pub fn check_version(got: Option<&str>) -> Result<(), BackendError> {
    match got {
        Some(PROTOCOL_VERSION) => Ok(()),
        other => Err(BackendError::ProtocolVersion {
            expected: PROTOCOL_VERSION.into(),
            got: other.unwrap_or("<missing>").into(),
        }),
    }
}

/// Map an error response to a typed backend error.
pub fn error_from_response(status: u16, body: &[u8]) -> BackendError {
    let parsed: Option<ErrorBody> = serde_json::from_slice(body).ok();
    let (kind, message) = match parsed {
        Some(b) => (b.error.kind, b.error.message),
        None => (String::new(), String::from_utf8_lossy(body).into_owned()),
    };
    match (status, kind.as_str()) {
        (_, "version") => BackendError::ProtocolVersion {
            expected: PROTOCOL_VERSION.into(),
            got: message,
        },
        (410, _) | (_, "stale_kv") => BackendError::StaleKv(message),
        (_, "shape") => BackendError::Shape(message),
        _ => BackendError::Server { status, message },
    }
}
