//! Relationship decoders: nearest neighbour over a predicate table, or an
//! external HTTP service.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

use super::table::EmbeddingTable;

pub const PROMPT_TEMPLATE: &str = "Describe the relationship between [object1] and [object2]?";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("decoder timed out after {0:?}")]
    Timeout(Duration),
    #[error("decoder returned HTTP status {0}")]
    Status(u16),
    #[error("malformed decoder response: {0}")]
    Malformed(String),
    #[error("decoder transport failure: {0}")]
    Transport(String),
    #[error("edge feature cannot be decoded: {0}")]
    Feature(String),
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeRequest<'a> {
    pub edge_feature: &'a [f32],
    pub subject: &'a str,
    pub object: &'a str,
}

pub fn render_prompt(template: &str, subject: &str, object: &str) -> String {
    template.replace("[object1]", subject).replace("[object2]", object)
}

pub trait RelationshipDecoder: Send + Sync {
    fn decode(&self, req: &DecodeRequest<'_>) -> Result<String, DecoderError>;

    /// Decodes every request; result `k` belongs to request `k`.
    fn decode_all(&self, reqs: &[DecodeRequest<'_>]) -> Vec<Result<String, DecoderError>> {
        reqs.iter().map(|r| self.decode(r)).collect()
    }
}

/// Returns the predicate-table label closest to the edge feature.
#[derive(Debug, Clone)]
pub struct NearestNeighborDecoder {
    table: EmbeddingTable,
}

impl NearestNeighborDecoder {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }
}

impl RelationshipDecoder for NearestNeighborDecoder {
    fn decode(&self, req: &DecodeRequest<'_>) -> Result<String, DecoderError> {
        let ranked = self
            .table
            .rank(req.edge_feature, 1)
            .map_err(|e| DecoderError::Feature(e.to_string()))?;
        Ok(ranked.into_iter().next().expect("tables are non-empty").0)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    edge_feature: &'a [f32],
    subject: &'a str,
    object: &'a str,
    prompt: String,
}

/// Client for `POST {base}/decode` with a bounded number of requests in flight.
#[derive(Debug, Clone)]
pub struct ExternalDecoder {
    endpoint: String,
    timeout: Duration,
    max_in_flight: usize,
    template: String,
    agent: ureq::Agent,
}

impl ExternalDecoder {
    pub fn new(base_url: &str, timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            endpoint: format!("{}/decode", base_url.trim_end_matches('/')),
            timeout,
            max_in_flight: max_in_flight.max(1),
            template: PROMPT_TEMPLATE.to_string(),
            agent,
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn classify(&self, e: ureq::Error) -> DecoderError {
        match e {
            ureq::Error::Timeout(_) => DecoderError::Timeout(self.timeout),
            ureq::Error::Io(io)
                if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) =>
            {
                DecoderError::Timeout(self.timeout)
            }
            ureq::Error::StatusCode(code) => DecoderError::Status(code),
            other => DecoderError::Transport(other.to_string()),
        }
    }
}

/// Extracts the non-empty `phrase` string from a response body.
pub fn parse_phrase(body: &str) -> Result<String, DecoderError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| DecoderError::Malformed(format!("invalid JSON: {e}")))?;
    match v.get("phrase") {
        Some(serde_json::Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(serde_json::Value::String(_)) => Err(DecoderError::Malformed("empty `phrase`".into())),
        Some(_) => Err(DecoderError::Malformed("`phrase` is not a string".into())),
        None => Err(DecoderError::Malformed("missing `phrase`".into())),
    }
}

impl RelationshipDecoder for ExternalDecoder {
    fn decode(&self, req: &DecodeRequest<'_>) -> Result<String, DecoderError> {
        let wire = WireRequest {
            edge_feature: req.edge_feature,
            subject: req.subject,
            object: req.object,
            prompt: render_prompt(&self.template, req.subject, req.object),
        };
        let mut resp = self.agent.post(&self.endpoint).send_json(&wire).map_err(|e| self.classify(e))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(DecoderError::Status(status));
        }
        let body = resp.body_mut().read_to_string().map_err(|e| self.classify(e))?;
        parse_phrase(&body)
    }

    fn decode_all(&self, reqs: &[DecodeRequest<'_>]) -> Vec<Result<String, DecoderError>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<String, DecoderError>>>> = Mutex::new(vec![None; reqs.len()]);
        let workers = self.max_in_flight.min(reqs.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= reqs.len() {
                        break;
                    }
                    let r = self.decode(&reqs[k]);
                    results.lock().expect("result lock")[k] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .expect("result lock")
            .into_iter()
            .map(|r| r.expect("every request decoded"))
            .collect()
    }
}

/// Tries `primary`, falling back to `fallback` on any failure.
pub struct FallbackDecoder<P, F> {
    pub primary: P,
    pub fallback: F,
}

impl<P: RelationshipDecoder, F: RelationshipDecoder> RelationshipDecoder for FallbackDecoder<P, F> {
    fn decode(&self, req: &DecodeRequest<'_>) -> Result<String, DecoderError> {
        self.primary.decode(req).or_else(|e| {
            log::warn!("decoder failed ({e}), using fallback");
            self.fallback.decode(req)
        })
    }

    fn decode_all(&self, reqs: &[DecodeRequest<'_>]) -> Vec<Result<String, DecoderError>> {
        self.primary
            .decode_all(reqs)
            .into_iter()
            .zip(reqs)
            .map(|(r, req)| r.or_else(|_| self.fallback.decode(req)))
            .collect()
    }
}
