//! JSON-over-HTTP client for an external generation and scoring service.

use std::collections::BTreeMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::predictor::MetricSchema;
use crate::prompts::PromptRecord;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Serialize)]
struct GenerateRequest<'a> {
    request_id: String,
    prompt: &'a str,
    scale: f64,
    seed: u64,
    n: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    request_id: String,
    artifact: &'a str,
    prompt: &'a str,
    metrics: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Scores of one sample plus the artifact they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub artifact: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    agent: ureq::Agent,
    timeout: Duration,
}

impl HttpProvider {
    /// `endpoint` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            timeout,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn authority(&self) -> Result<String, SweepError> {
        let rest = self
            .endpoint
            .strip_prefix("http://")
            .or_else(|| self.endpoint.strip_prefix("https://"))
            .ok_or_else(|| SweepError::ProviderUnreachable(format!("{}: not an http(s) URL", self.endpoint)))?;
        let host = rest.split('/').next().unwrap_or_default();
        if host.contains(':') {
            Ok(host.to_string())
        } else if self.endpoint.starts_with("https://") {
            Ok(format!("{host}:443"))
        } else {
            Ok(format!("{host}:80"))
        }
    }

    /// Opens and closes a TCP connection to the service.
    pub fn probe(&self) -> Result<(), SweepError> {
        let authority = self.authority()?;
        let unreachable = |e: std::io::Error| SweepError::ProviderUnreachable(format!("{authority}: {e}"));
        let addrs = authority.to_socket_addrs().map_err(unreachable)?;
        let mut last = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.timeout.min(Duration::from_secs(10))) {
                Ok(_) => return Ok(()),
                Err(e) => last = Some(e),
            }
        }
        Err(unreachable(last.unwrap_or_else(|| std::io::Error::other("no address resolved"))))
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, SweepError> {
        let url = format!("{}{}", self.endpoint, path);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| transport(&url, e))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| transport(&url, e))?;
        if status >= 400 {
            let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
            return Err(SweepError::HttpStatus { status, body: message });
        }
        serde_json::from_str(&text).map_err(|e| SweepError::MalformedResponse(format!("{url}: {e}")))
    }

    /// Generates and scores one sample. Request ids derive from the sample
    /// seed, so a replay after a failure is idempotent.
    pub fn sample(&self, prompt: &PromptRecord, scale: f64, seed: u64, schema: &MetricSchema) -> Result<ScoredSample, SweepError> {
        let generated: GenerateResponse = self.post(
            "/generate",
            &GenerateRequest {
                request_id: format!("{seed:016x}-g"),
                prompt: &prompt.text,
                scale,
                seed,
                n: 1,
            },
        )?;
        let artifact = generated
            .artifacts
            .into_iter()
            .next()
            .ok_or_else(|| SweepError::MalformedResponse("generate returned no artifacts".into()))?;
        let scored: ScoreResponse = self.post(
            "/score",
            &ScoreRequest {
                request_id: format!("{seed:016x}-s"),
                artifact: &artifact,
                prompt: &prompt.text,
                metrics: &schema.names,
            },
        )?;
        let scores = scores_in_schema_order(scored.scores, schema)?;
        Ok(ScoredSample { artifact, scores })
    }
}

fn transport(url: &str, e: ureq::Error) -> SweepError {
    match e {
        ureq::Error::Timeout(t) => SweepError::Timeout(format!("{url}: {t}")),
        other => SweepError::Transport(format!("{url}: {other}")),
    }
}

fn scores_in_schema_order(scores: BTreeMap<String, f64>, schema: &MetricSchema) -> Result<Vec<f64>, SweepError> {
    let names_match = scores.len() == schema.len() && schema.names.iter().all(|n| scores.contains_key(n));
    if !names_match {
        return Err(SweepError::ScoreSchemaMismatch {
            expected: schema.names.clone(),
            found: scores.into_keys().collect(),
        });
    }
    let values: Vec<f64> = schema.names.iter().map(|n| scores[n]).collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(SweepError::MalformedResponse("non-finite score".into()));
    }
    Ok(values)
}
