//! JSON scoring protocol shared by the probe client and the mock server.
//!
//! ```text
//! POST /v1/score
//! {"prompt": "...", "positions": 8, "logit_bias": {"17": 30.0}, "echo_policy": true}
//!
//! 200 {"vocab_size": 4096,
//!      "positions": [{"logits": [...]} | {"probs": [...]} | {"top": [{"id": 3, "p": 0.4}, ...]}],
//!      "policy": {"kind": "top-k", "k": 5, "supports_bias": true}}      // only with echo_policy
//! 4xx {"error": "...", "code": "bias_unsupported" | "unknown_token" | "bad_request"}
//! ```
//!
//! Floats are written in their shortest round-trip form and parsed back bit-exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::DisclosurePolicy;

pub type TokenId = u32;

/// Additive per-token logit offsets. Serialized with token ids as JSON object keys.
pub type BiasMap = BTreeMap<TokenId, f64>;

pub const SCORE_PATH: &str = "/v1/score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub positions: u32,
    #[serde(default)]
    pub logit_bias: BiasMap,
    #[serde(default)]
    pub echo_policy: bool,
}

impl ScoreRequest {
    pub fn new(prompt: impl Into<String>, positions: u32) -> Self {
        Self {
            prompt: prompt.into(),
            positions,
            logit_bias: BiasMap::new(),
            echo_policy: false,
        }
    }

    pub fn with_bias(mut self, bias: BiasMap) -> Self {
        self.logit_bias = bias;
        self
    }

    pub fn echo(mut self) -> Self {
        self.echo_policy = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub id: TokenId,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PositionOutput {
    Logits { logits: Vec<f64> },
    Probs { probs: Vec<f64> },
    Top { top: Vec<TopEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub vocab_size: u32,
    pub positions: Vec<PositionOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<DisclosurePolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BiasUnsupported,
    UnknownToken,
    BadRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: ErrorCode,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EndpointError {
    #[error("endpoint rejected request ({code:?}): {message}")]
    Rejected { code: ErrorCode, message: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Anything that answers scoring requests: the in-process mock or a remote HTTP server.
pub trait Endpoint: Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, EndpointError>;
}

impl<E: Endpoint + ?Sized> Endpoint for &E {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, EndpointError> {
        (**self).score(request)
    }
}
