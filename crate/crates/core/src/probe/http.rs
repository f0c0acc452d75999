use std::thread;
use std::time::Duration;

use crate::defaults;
use crate::wire::{
    Endpoint, EndpointError, ErrorBody, ErrorCode, ScoreRequest, ScoreResponse, SCORE_PATH,
};

/// Blocking HTTP client for the scoring protocol.
///
/// Connection failures and 5xx responses are retried with exponential backoff;
/// 4xx responses are returned immediately as [`EndpointError::Rejected`].
pub struct HttpEndpoint {
    agent: ureq::Agent,
    url: String,
    retries: u32,
    backoff: Duration,
}

enum Attempt {
    Retry(String),
    Fatal(EndpointError),
}

impl HttpEndpoint {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            agent,
            url: format!("{}{}", base.trim_end_matches('/'), SCORE_PATH),
            retries: defaults::RETRIES,
            backoff: Duration::from_millis(100),
        }
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, request: &ScoreRequest) -> Result<ScoreResponse, Attempt> {
        let body = serde_json::to_string(request)
            .map_err(|e| Attempt::Fatal(EndpointError::Malformed(e.to_string())))?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fatal(EndpointError::Malformed(e.to_string()))),
            400..=499 => {
                let err = serde_json::from_str::<ErrorBody>(&text).unwrap_or(ErrorBody {
                    error: text,
                    code: ErrorCode::BadRequest,
                });
                Err(Attempt::Fatal(EndpointError::Rejected {
                    code: err.code,
                    message: err.error,
                }))
            }
            _ => Err(Attempt::Retry(format!("HTTP {status}: {text}"))),
        }
    }
}

impl Endpoint for HttpEndpoint {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, EndpointError> {
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) if attempts > self.retries => {
                    return Err(EndpointError::Transport { attempts, message })
                }
                Err(Attempt::Retry(_)) => {
                    thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}
