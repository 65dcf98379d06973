//! Inference providers supply low-confidence suggestions where rule-based
//! extraction comes up empty.
//!
//! The wire contract is one JSON exchange: a request
//! `{"task", "input", "schema"}` and a response `{"values", "confidence"}`.
//! Responses are validated against the schema named in the request; anything
//! nonconforming is rejected and treated as "no suggestion".

use std::io::Read;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::rules::{compile, RuleError};

/// Whether a capability or tag came from deterministic rules or from an
/// inference provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Deterministic,
    Inferred,
}

pub const CAPABILITY_SCHEMA: &str = "capabilities.v1";
pub const RISK_TAG_SCHEMA: &str = "risk_tags.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderTask {
    Capabilities,
    RiskTags,
}

impl ProviderTask {
    pub fn schema(self) -> &'static str {
        match self {
            ProviderTask::Capabilities => CAPABILITY_SCHEMA,
            ProviderTask::RiskTags => RISK_TAG_SCHEMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub task: ProviderTask,
    pub input: String,
    pub schema: String,
}

impl ProviderRequest {
    pub fn new(task: ProviderTask, input: impl Into<String>) -> ProviderRequest {
        ProviderRequest {
            task,
            input: input.into(),
            schema: task.schema().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub values: Value,
    pub confidence: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider response violates schema: {0}")]
    SchemaViolation(String),
    #[error("provider transport error: {0}")]
    Transport(String),
}

pub trait InferenceProvider: Send + Sync {
    fn kind(&self) -> &'static str;
    fn infer(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

/// A capability suggested by a provider. `snippet` must occur verbatim in
/// the input or the suggestion is discarded by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilitySuggestion {
    pub resource: String,
    pub access: String,
    pub snippet: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagSuggestion {
    pub side: String,
    pub tag: String,
    pub snippet: String,
    pub confidence: f64,
}

fn check_confidence(value: f64, what: &str) -> Result<f64, ProviderError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ProviderError::SchemaViolation(format!(
            "{what} confidence {value} outside [0, 1]"
        )))
    }
}

fn items<'a>(response: &'a ProviderResponse, field: &str) -> Result<&'a Vec<Value>, ProviderError> {
    check_confidence(response.confidence, "response")?;
    response
        .values
        .get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::SchemaViolation(format!("`values.{field}` must be an array")))
}

fn string_field(item: &Value, field: &str) -> Result<String, ProviderError> {
    item.get(field)
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ProviderError::SchemaViolation(format!("missing string field `{field}`")))
}

fn item_confidence(item: &Value, default: f64) -> Result<f64, ProviderError> {
    match item.get("confidence") {
        None => Ok(default),
        Some(v) => {
            let c = v.as_f64().ok_or_else(|| {
                ProviderError::SchemaViolation("`confidence` must be a number".into())
            })?;
            check_confidence(c, "item")
        }
    }
}

pub fn parse_capability_suggestions(
    response: &ProviderResponse,
) -> Result<Vec<CapabilitySuggestion>, ProviderError> {
    items(response, "capabilities")?
        .iter()
        .map(|item| {
            Ok(CapabilitySuggestion {
                resource: string_field(item, "resource")?,
                access: string_field(item, "access")?,
                snippet: string_field(item, "snippet")?,
                confidence: item_confidence(item, response.confidence)?,
            })
        })
        .collect()
}

pub fn parse_tag_suggestions(
    response: &ProviderResponse,
) -> Result<Vec<TagSuggestion>, ProviderError> {
    items(response, "tags")?
        .iter()
        .map(|item| {
            Ok(TagSuggestion {
                side: string_field(item, "side")?,
                tag: string_field(item, "tag")?,
                snippet: string_field(item, "snippet")?,
                confidence: item_confidence(item, response.confidence)?,
            })
        })
        .collect()
}

// --- deterministic provider ---------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default)]
    capability: Vec<RawCapabilityHint>,
    #[serde(default)]
    tag: Vec<RawTagHint>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCapabilityHint {
    pattern: String,
    resource: String,
    access: String,
    confidence: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTagHint {
    pattern: String,
    side: String,
    tag: String,
    confidence: f64,
}

#[derive(Debug, Clone)]
struct CapabilityHint {
    regex: Regex,
    resource: String,
    access: String,
    confidence: f64,
}

#[derive(Debug, Clone)]
struct TagHint {
    regex: Regex,
    side: String,
    tag: String,
    confidence: f64,
}

/// Rule tables evaluated by [`DeterministicProvider`].
#[derive(Debug, Clone, Default)]
pub struct ProviderTables {
    capabilities: Vec<CapabilityHint>,
    tags: Vec<TagHint>,
}

impl ProviderTables {
    pub fn parse(text: &str, file: &str) -> Result<ProviderTables, RuleError> {
        let raw: ProviderFile = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
        let mut tables = ProviderTables::default();
        for (i, hint) in raw.capability.into_iter().enumerate() {
            let id = format!("capability[{i}]");
            check_confidence(hint.confidence, &id).map_err(|e| RuleError::invalid(file, e))?;
            tables.capabilities.push(CapabilityHint {
                regex: compile(file, &id, &hint.pattern)?,
                resource: hint.resource,
                access: hint.access,
                confidence: hint.confidence,
            });
        }
        for (i, hint) in raw.tag.into_iter().enumerate() {
            let id = format!("tag[{i}]");
            check_confidence(hint.confidence, &id).map_err(|e| RuleError::invalid(file, e))?;
            if hint.side != "output" && hint.side != "input" {
                return Err(RuleError::invalid(file, format!("{id}: side must be output or input")));
            }
            tables.tags.push(TagHint {
                regex: compile(file, &id, &hint.pattern)?,
                side: hint.side,
                tag: hint.tag,
                confidence: hint.confidence,
            });
        }
        Ok(tables)
    }

    pub fn tag_hints(&self) -> impl Iterator<Item = (&str, &str)> {
        self.tags.iter().map(|t| (t.side.as_str(), t.tag.as_str()))
    }
}

/// Pure rule-table provider; needs no network.
#[derive(Debug, Clone)]
pub struct DeterministicProvider {
    tables: ProviderTables,
}

impl DeterministicProvider {
    pub fn new(tables: ProviderTables) -> DeterministicProvider {
        DeterministicProvider { tables }
    }
}

impl InferenceProvider for DeterministicProvider {
    fn kind(&self) -> &'static str {
        "deterministic"
    }

    fn infer(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        if request.schema != request.task.schema() {
            return Err(ProviderError::SchemaViolation(format!(
                "schema `{}` does not fit task {:?}",
                request.schema, request.task
            )));
        }
        let mut best: f64 = 0.0;
        let values = match request.task {
            ProviderTask::Capabilities => {
                let list: Vec<Value> = self
                    .tables
                    .capabilities
                    .iter()
                    .filter_map(|h| {
                        let m = h.regex.find(&request.input)?;
                        best = best.max(h.confidence);
                        Some(json!({
                            "resource": h.resource,
                            "access": h.access,
                            "snippet": m.as_str(),
                            "confidence": h.confidence,
                        }))
                    })
                    .collect();
                json!({ "capabilities": list })
            }
            ProviderTask::RiskTags => {
                let list: Vec<Value> = self
                    .tables
                    .tags
                    .iter()
                    .filter_map(|h| {
                        let m = h.regex.find(&request.input)?;
                        best = best.max(h.confidence);
                        Some(json!({
                            "side": h.side,
                            "tag": h.tag,
                            "snippet": m.as_str(),
                            "confidence": h.confidence,
                        }))
                    })
                    .collect();
                json!({ "tags": list })
            }
        };
        Ok(ProviderResponse {
            values,
            confidence: best,
        })
    }
}

// --- remote provider ------------------------------------------------------------

/// HTTP provider: POSTs the request as JSON with an optional bearer token.
pub struct RemoteProvider {
    endpoint: String,
    token: Option<String>,
    max_retries: u32,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(
        endpoint: impl Into<String>,
        timeout: Duration,
        max_retries: u32,
        token: Option<String>,
    ) -> RemoteProvider {
        RemoteProvider {
            endpoint: endpoint.into(),
            token,
            max_retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn exchange(&self, request: &ProviderRequest) -> Result<ProviderResponse, Attempt> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        let response = call.send_json(request).map_err(|e| match e {
            ureq::Error::Status(code, _) if code >= 500 => {
                Attempt::Retry(ProviderError::Transport(format!("HTTP {code}")))
            }
            ureq::Error::Status(code, _) => {
                Attempt::Fail(ProviderError::Transport(format!("HTTP {code}")))
            }
            ureq::Error::Transport(t) => Attempt::Retry(classify_transport(&t)),
        })?;
        let mut body = String::new();
        response
            .into_reader()
            .take(8 * 1024 * 1024)
            .read_to_string(&mut body)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock {
                    Attempt::Retry(ProviderError::Timeout)
                } else {
                    Attempt::Retry(ProviderError::Transport(e.to_string()))
                }
            })?;
        let parsed: ProviderResponse = serde_json::from_str(&body)
            .map_err(|e| Attempt::Fail(ProviderError::SchemaViolation(e.to_string())))?;
        check_confidence(parsed.confidence, "response").map_err(Attempt::Fail)?;
        Ok(parsed)
    }
}

enum Attempt {
    Retry(ProviderError),
    Fail(ProviderError),
}

fn classify_transport(t: &ureq::Transport) -> ProviderError {
    let text = t.to_string();
    let lower = text.to_ascii_lowercase();
    if lower.contains("timed out") || lower.contains("timeout") {
        ProviderError::Timeout
    } else {
        ProviderError::Transport(text)
    }
}

impl InferenceProvider for RemoteProvider {
    fn kind(&self) -> &'static str {
        "remote"
    }

    fn infer(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut last = ProviderError::Transport("no attempt made".into());
        for attempt in 0..=self.max_retries {
            match self.exchange(request) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::debug!("provider attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provider() -> DeterministicProvider {
        DeterministicProvider::new(
            ProviderTables::parse(include_str!("../rules/provider.toml"), "provider.toml").unwrap(),
        )
    }

    #[test]
    fn deterministic_is_pure() {
        let p = provider();
        let req = ProviderRequest::new(ProviderTask::Capabilities, "conn = socket(host)\n");
        let a = p.infer(&req).unwrap();
        let b = p.infer(&req).unwrap();
        assert_eq!(a, b);
        let caps = parse_capability_suggestions(&a).unwrap();
        assert_eq!(caps.len(), 1);
        assert_eq!((caps[0].resource.as_str(), caps[0].access.as_str()), ("network", "egress"));
        assert_eq!(caps[0].snippet, "socket");
    }

    #[test]
    fn schema_violations_detected() {
        let missing = ProviderResponse {
            values: json!({ "capabilities": [{ "resource": "network" }] }),
            confidence: 0.5,
        };
        assert!(matches!(
            parse_capability_suggestions(&missing),
            Err(ProviderError::SchemaViolation(_))
        ));
        let not_array = ProviderResponse {
            values: json!({ "tags": "x" }),
            confidence: 0.5,
        };
        assert!(parse_tag_suggestions(&not_array).is_err());
        let bad_conf = ProviderResponse {
            values: json!({ "tags": [] }),
            confidence: 1.5,
        };
        assert!(parse_tag_suggestions(&bad_conf).is_err());
    }

    #[test]
    fn mismatched_schema_rejected() {
        let mut req = ProviderRequest::new(ProviderTask::RiskTags, "x");
        req.schema = CAPABILITY_SCHEMA.into();
        assert!(matches!(provider().infer(&req), Err(ProviderError::SchemaViolation(_))));
    }
}
