//! HTTP client for a model server exposing MLM conditionals.
//!
//! Endpoints (JSON over HTTP/1.1):
//!
//! * `GET  /v1/meta` -> `{vocab_size, mask_token_id, special_token_ids, model_name}`
//! * `POST /v1/tokenize {text}` -> `{token_ids}`
//! * `POST /v1/conditionals {queries: [{token_ids, position}]}` -> `{results: [{logp}]}`

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{check_query, ConditionalBackend, Query};
use crate::dist::CondDistribution;
use crate::error::{Error, Result};
use crate::seq::{TokenId, Vocab};

/// Largest `|logsumexp(logp)|` a server response may show before it is
/// rejected; anything within it is renormalized.
pub const NORMALIZATION_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteMeta {
    pub vocab_size: usize,
    pub mask_token_id: TokenId,
    pub special_token_ids: Vec<TokenId>,
    pub model_name: String,
}

#[derive(Serialize)]
struct WireQuery<'a> {
    token_ids: &'a [TokenId],
    position: usize,
}

#[derive(Serialize)]
struct ConditionalsRequest<'a> {
    queries: Vec<WireQuery<'a>>,
}

#[derive(Deserialize)]
struct WireResult {
    logp: Vec<f64>,
}

#[derive(Deserialize)]
struct ConditionalsResponse {
    results: Vec<WireResult>,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    token_ids: Vec<TokenId>,
}

/// Conditionals served over HTTP by a pretrained masked language model.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: String,
    batch_size: usize,
    timeout: Duration,
    agent: ureq::Agent,
    vocab: Vocab,
    name: String,
}

impl RemoteBackend {
    /// Connects to `endpoint` and reads vocabulary metadata from `/v1/meta`.
    pub fn connect(endpoint: &str, timeout: Duration, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let meta: RemoteMeta = agent
            .get(format!("{endpoint}/v1/meta"))
            .call()
            .map_err(transport_error)?
            .body_mut()
            .read_json()
            .map_err(transport_error)?;
        if (meta.mask_token_id as usize) >= meta.vocab_size {
            return Err(Error::Protocol(format!(
                "mask id {} outside vocabulary of size {}",
                meta.mask_token_id, meta.vocab_size
            )));
        }
        let vocab = Vocab::opaque(
            meta.vocab_size,
            meta.mask_token_id,
            meta.special_token_ids.iter().copied(),
        )
        .map_err(|e| Error::Protocol(format!("bad metadata: {e}")))?;
        Ok(Self {
            name: format!("remote({})", meta.model_name),
            endpoint,
            batch_size,
            timeout,
            agent,
            vocab,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let resp: TokenizeResponse = self
            .agent
            .post(format!("{}/v1/tokenize", self.endpoint))
            .send_json(TokenizeRequest { text })
            .map_err(transport_error)?
            .body_mut()
            .read_json()
            .map_err(transport_error)?;
        resp.token_ids.iter().try_for_each(|&t| self.vocab.check(t))?;
        Ok(resp.token_ids)
    }

    /// Sends one batch of at most `batch_size` queries. Results come back in
    /// request order.
    pub fn remote_conditionals(&self, queries: &[Query]) -> Result<Vec<CondDistribution>> {
        if queries.is_empty() {
            return Err(Error::InvalidQuery("empty batch".into()));
        }
        if queries.len() > self.batch_size {
            return Err(Error::InvalidQuery(format!(
                "batch of {} exceeds limit {}",
                queries.len(),
                self.batch_size
            )));
        }
        for q in queries {
            check_query(&self.vocab, None, &q.context, q.position)?;
        }
        let body = ConditionalsRequest {
            queries: queries
                .iter()
                .map(|q| WireQuery {
                    token_ids: &q.context,
                    position: q.position,
                })
                .collect(),
        };
        let resp: ConditionalsResponse = self
            .agent
            .post(format!("{}/v1/conditionals", self.endpoint))
            .send_json(&body)
            .map_err(transport_error)?
            .body_mut()
            .read_json()
            .map_err(transport_error)?;
        if resp.results.len() != queries.len() {
            return Err(Error::Protocol(format!(
                "sent {} queries, received {} results",
                queries.len(),
                resp.results.len()
            )));
        }
        resp.results
            .into_iter()
            .map(|r| {
                if r.logp.len() != self.vocab.len() {
                    return Err(Error::Protocol(format!(
                        "logp has {} entries, vocabulary has {}",
                        r.logp.len(),
                        self.vocab.len()
                    )));
                }
                CondDistribution::renormalize_within(r.logp, NORMALIZATION_SLACK)
            })
            .collect()
    }
}

impl ConditionalBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn conditionals(&self, context: &[TokenId], position: usize) -> Result<CondDistribution> {
        let mut out = self.remote_conditionals(&[Query::new(context.to_vec(), position)])?;
        Ok(out.remove(0))
    }

    fn conditionals_batch(&self, queries: &[Query]) -> Result<Vec<CondDistribution>> {
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(self.batch_size) {
            out.extend(self.remote_conditionals(chunk)?);
        }
        Ok(out)
    }
}

fn transport_error(e: ureq::Error) -> Error {
    use ureq::Error as E;
    match e {
        E::StatusCode(503) => Error::BackendUnavailable("server not ready (503)".into()),
        E::StatusCode(code @ (400 | 413 | 422)) => Error::InvalidQuery(format!("server rejected request ({code})")),
        E::StatusCode(code) => Error::Protocol(format!("unexpected status {code}")),
        E::Timeout(t) => Error::BackendUnavailable(format!("timeout: {t}")),
        E::Io(io) => Error::BackendUnavailable(format!("io: {io}")),
        E::HostNotFound | E::ConnectionFailed => Error::BackendUnavailable(e.to_string()),
        other => Error::Protocol(other.to_string()),
    }
}
