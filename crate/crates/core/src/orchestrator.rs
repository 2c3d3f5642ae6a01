//! Natural-language intents to validated plans, keyword lists and analysis
//! specs through a pluggable chat-completion provider.
//!
//! Nothing a provider returns is executed. Completions are parsed as data
//! and validated; failures are fed back for a bounded number of rounds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::analysis::{self, AnalysisSpec};
use crate::archive::sha256_hex;
use crate::catalog::MetricCatalog;
use crate::dataset::DatasetSchema;
use crate::http::{HttpClient, TransportError};
use crate::plan::{
    self, issue, CollectionPlan, EntityKind, FilterSet, MetricSelection, Provenance, Severity, ValidationReport,
};
use crate::platform_access::{CapabilityManifest, PlatformKind, SecretString};
use crate::time::Timestamp;

pub const ENV_LLM_ENDPOINT: &str = "REVMINE_LLM_ENDPOINT";
pub const ENV_LLM_KEY: &str = "REVMINE_LLM_KEY";
pub const ENV_LLM_MODEL: &str = "REVMINE_LLM_MODEL";

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
pub const DEFAULT_MAX_REFINEMENTS: u32 = 2;

/// `[llm]` section of the config file; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialProviderConfig {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_refinements: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub api_key: SecretString,
    pub model_name: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_refinements: u32,
}

mod secs {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }
}

impl ProviderConfig {
    /// File settings overlaid by `REVMINE_LLM_*` variables.
    pub fn resolve(file: &PartialProviderConfig, env: &BTreeMap<String, String>) -> Result<ProviderConfig, OrchestratorError> {
        let get = |k: &str| env.get(k).filter(|v| !v.is_empty()).cloned();
        let endpoint = get(ENV_LLM_ENDPOINT)
            .or_else(|| file.endpoint.clone())
            .ok_or_else(|| OrchestratorError::InvalidConfig("no LLM endpoint configured".into()))?;
        let model = get(ENV_LLM_MODEL)
            .or_else(|| file.model.clone())
            .ok_or_else(|| OrchestratorError::InvalidConfig("no LLM model configured".into()))?;
        let key = get(ENV_LLM_KEY).or_else(|| file.api_key.clone()).unwrap_or_default();
        let url = reqwest::Url::parse(&endpoint)
            .map_err(|_| OrchestratorError::InvalidConfig(format!("invalid LLM endpoint `{endpoint}`")))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(OrchestratorError::InvalidConfig(format!("LLM endpoint must be http(s): `{endpoint}`")));
        }
        Ok(ProviderConfig {
            endpoint_url: endpoint,
            api_key: SecretString::new(key),
            model_name: model,
            timeout: Duration::from_secs(file.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS)),
            max_refinements: file.max_refinements.unwrap_or(DEFAULT_MAX_REFINEMENTS),
        })
    }
}

/// One prompt. `key` and `round` identify the request to a mock provider
/// and are not sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEnvelope {
    pub system_text: String,
    pub user_text: String,
    pub key: String,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider timed out: {0}")]
    Timeout(String),
    #[error("provider returned HTTP {status}: {excerpt}")]
    Http { status: u16, excerpt: String },
    #[error("provider unreachable: {0}")]
    Transport(String),
    #[error("provider response has no completion text: {0}")]
    Malformed(String),
    #[error("mock provider has no completion for `{0}`")]
    MockMiss(String),
}

pub trait Provider: Send + Sync {
    /// Recorded in plan provenance.
    fn label(&self) -> String;
    fn complete(&self, envelope: &PromptEnvelope) -> Result<String, ProviderError>;
}

/// Chat-completions client.
pub struct HttpProvider {
    config: ProviderConfig,
    client: HttpClient,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let client = HttpClient::new(config.timeout);
        Self { config, client }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }
}

fn excerpt(body: &[u8]) -> String {
    String::from_utf8_lossy(body).chars().take(200).collect()
}

impl Provider for HttpProvider {
    fn label(&self) -> String {
        format!("http:{}", self.config.model_name)
    }

    fn complete(&self, envelope: &PromptEnvelope) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": envelope.system_text},
                {"role": "user", "content": envelope.user_text},
            ],
            "temperature": 0,
        });
        let mut headers = Vec::new();
        if !self.config.api_key.is_empty() {
            headers.push(("authorization", format!("Bearer {}", self.config.api_key.expose())));
        }
        let resp = self
            .client
            .post_json(&self.config.endpoint_url, &headers, &body)
            .map_err(|e| match e {
                TransportError::Timeout(m) => ProviderError::Timeout(m),
                TransportError::Connect(m) | TransportError::Other(m) => ProviderError::Transport(m),
            })?;
        if !resp.is_success() {
            return Err(ProviderError::Http {
                status: resp.status,
                excerpt: excerpt(&resp.body),
            });
        }
        let doc: Json = serde_json::from_slice(&resp.body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        doc.pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Malformed(excerpt(&resp.body)))
    }
}

#[derive(Debug, Clone, Deserialize)]
struct MockTable {
    entries: Vec<MockEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct MockEntry {
    query: String,
    completions: Vec<Json>,
}

/// Canned completions keyed by the hash of the original query. Round `i`
/// gets completion `i`; the last one repeats.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    table: HashMap<String, Vec<String>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, query: &str, completions: &[&str]) -> Self {
        self.insert(query, completions.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn insert(&mut self, query: &str, completions: Vec<String>) {
        self.table.insert(sha256_hex(query.as_bytes()), completions);
    }

    /// Loads a table file: `{"entries": [{"query": …, "completions": [...]}]}`.
    /// Completions may be strings (sent verbatim) or documents (serialized).
    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        let table: MockTable =
            serde_json::from_str(text).map_err(|e| OrchestratorError::InvalidConfig(format!("mock table: {e}")))?;
        let mut out = Self::new();
        for e in table.entries {
            let completions = e
                .completions
                .into_iter()
                .map(|c| match c {
                    Json::String(s) => s,
                    other => other.to_string(),
                })
                .collect();
            out.insert(&e.query, completions);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::InvalidConfig(format!("mock table {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl Provider for MockProvider {
    fn label(&self) -> String {
        "mock".into()
    }

    fn complete(&self, envelope: &PromptEnvelope) -> Result<String, ProviderError> {
        let list = self
            .table
            .get(&sha256_hex(envelope.key.as_bytes()))
            .filter(|l| !l.is_empty())
            .ok_or_else(|| ProviderError::MockMiss(envelope.key.clone()))?;
        Ok(list[(envelope.round as usize).min(list.len() - 1)].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionOutcome {
    Parsed,
    ExtractionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRound {
    pub prompt: PromptEnvelope,
    pub raw_completion: String,
    pub extraction_outcome: ExtractionOutcome,
    pub validation: Option<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TranscriptFinal<T> {
    Accepted(T),
    Exhausted(Option<ValidationReport>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementTranscript<T> {
    pub rounds: Vec<TranscriptRound>,
    #[serde(rename = "final")]
    pub outcome: TranscriptFinal<T>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("prompt would contain a secret value")]
    SecretLeak,
    #[error("platform access is not verified (token invalid)")]
    AccessNotVerified,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("could not extract a document from the completion: {0}")]
    ExtractionFailed(String),
    #[error("no valid result after {} rounds", .rounds.len())]
    RefinementExhausted {
        rounds: Vec<TranscriptRound>,
        last_report: Option<ValidationReport>,
    },
    #[error("{0}")]
    InvalidConfig(String),
}

/// Rejects text containing any non-trivial secret.
fn guard(texts: &[&str], secrets: &[&str]) -> Result<(), OrchestratorError> {
    let leaked = secrets
        .iter()
        .filter(|s| s.len() >= 4)
        .any(|s| texts.iter().any(|t| t.contains(*s)));
    if leaked {
        Err(OrchestratorError::SecretLeak)
    } else {
        Ok(())
    }
}

const PLAN_SCHEMA: &str = r#"{
  "entities": ["reviews" | "commits" | "comments" | "files", ...],   // must include "reviews"
  "filters": {                                                       // every field optional
    "time_window": {"start": "<RFC 3339 UTC>", "end": "<RFC 3339 UTC>"},   // inclusive, on review creation
    "states": ["open" | "merged" | "closed", ...],
    "min_comments": <integer >= 0>,
    "authors": ["<login>", ...],
    "file_extensions": [".<ext>", ...],
    "keywords": ["<literal>", ...]
  },
  "metrics": [{"category": "<category>"} | {"metric_id": "<metric_id>"}, ...],
  "schema_version": 1
}"#;

fn render_catalog(catalog: &MetricCatalog) -> String {
    let mut out = String::new();
    for m in catalog.descriptors() {
        let _ = writeln!(
            out,
            "- {} [category {}, {} table]: {}",
            m.metric_id,
            m.category.as_str(),
            m.granularity.table_name(),
            m.description
        );
    }
    out
}

fn render_endpoints(manifest: &CapabilityManifest) -> String {
    let mut out = String::new();
    for e in &manifest.endpoints {
        let _ = writeln!(
            out,
            "- {}: {}",
            e.endpoint_id.as_str(),
            if e.available { "available" } else { "unavailable" }
        );
    }
    out
}

/// Deterministic prompt for plan synthesis.
pub fn build_prompt(
    query: &str,
    manifest: &CapabilityManifest,
    catalog: &MetricCatalog,
    secrets: &[&str],
) -> Result<PromptEnvelope, OrchestratorError> {
    if !manifest.token_valid {
        return Err(OrchestratorError::AccessNotVerified);
    }
    let system_text = format!(
        "You plan data collection for code review mining on {platform}.\n\
         Translate the researcher's request into one collection plan document.\n\n\
         Plan document schema:\n{PLAN_SCHEMA}\n\n\
         Metric categories: review_meta, commits, comments, files, derived.\n\
         Metric catalog:\n{catalog}\n\
         Platform endpoints:\n{endpoints}\n\
         Answer with exactly one JSON object following the schema and nothing else.",
        platform = manifest.platform,
        catalog = render_catalog(catalog),
        endpoints = render_endpoints(manifest),
    );
    let envelope = PromptEnvelope {
        system_text,
        user_text: query.to_owned(),
        key: query.to_owned(),
        round: 0,
    };
    guard(&[&envelope.system_text, &envelope.user_text], secrets)?;
    Ok(envelope)
}

/// Next round's envelope: the query, the rejected draft and its issues.
pub fn refine_prompt(
    base: &PromptEnvelope,
    round: u32,
    raw: &str,
    report: Option<&ValidationReport>,
    extraction_error: Option<&str>,
    notes: Option<&str>,
) -> PromptEnvelope {
    let mut user = format!("{}\n\nYour previous answer was rejected.\nPrevious answer:\n{raw}\n\nProblems:\n", base.key);
    if let Some(e) = extraction_error {
        let _ = writeln!(user, "- EXTRACTION_FAILED: {e}");
    }
    for i in report.map(|r| r.issues.as_slice()).unwrap_or_default() {
        if i.severity == Severity::Error {
            let _ = writeln!(user, "- {} at {}: {}", i.code, i.path, i.message);
        }
    }
    if let Some(n) = notes.filter(|n| !n.trim().is_empty()) {
        let _ = write!(user, "\nResearcher notes:\n{n}\n");
    }
    user.push_str("\nAnswer again with one corrected JSON document and nothing else.");
    PromptEnvelope {
        system_text: base.system_text.clone(),
        user_text: user,
        key: base.key.clone(),
        round,
    }
}

fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Byte range of the first balanced `open … close` group, string-aware.
fn first_balanced(text: &str, open: u8, close: u8) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(start) = bytes[from..].iter().position(|b| *b == open).map(|i| from + i) {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b if b == open => depth += 1,
                b if b == close => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=i]);
                    }
                }
                _ => {}
            }
        }
        from = start + 1;
    }
    None
}

/// First balanced JSON object in a chatty completion.
pub fn extract_object(raw: &str) -> Result<serde_json::Map<String, Json>, OrchestratorError> {
    let text = strip_fences(raw);
    let candidate =
        first_balanced(text, b'{', b'}').ok_or_else(|| OrchestratorError::ExtractionFailed("no JSON object found".into()))?;
    match serde_json::from_str(candidate) {
        Ok(Json::Object(map)) => Ok(map),
        Ok(_) => Err(OrchestratorError::ExtractionFailed("not an object".into())),
        Err(e) => Err(OrchestratorError::ExtractionFailed(e.to_string())),
    }
}

/// The provider-controlled part of a plan. Identity, platform, provenance
/// and timestamps are assigned locally and ignored if echoed back.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDraft {
    pub entities: BTreeSet<EntityKind>,
    #[serde(default)]
    pub filters: FilterSet,
    #[serde(default)]
    pub metrics: Vec<MetricSelection>,
    #[serde(default = "current_schema")]
    pub schema_version: u32,
    #[serde(default, rename = "plan_id")]
    _plan_id: Option<Json>,
    #[serde(default, rename = "platform")]
    _platform: Option<Json>,
    #[serde(default, rename = "provenance")]
    _provenance: Option<Json>,
    #[serde(default, rename = "created_at")]
    _created_at: Option<Json>,
}

fn current_schema() -> u32 {
    plan::SCHEMA_VERSION
}

impl PlanDraft {
    pub fn into_plan(self, plan_id: String, platform: PlatformKind, provenance: Provenance, created_at: Timestamp) -> CollectionPlan {
        CollectionPlan {
            plan_id,
            platform,
            entities: self.entities,
            filters: self.filters,
            metrics: self.metrics,
            provenance,
            created_at,
            schema_version: self.schema_version,
        }
    }
}

pub fn extract_plan(raw: &str) -> Result<PlanDraft, OrchestratorError> {
    let map = extract_object(raw)?;
    serde_json::from_value(Json::Object(map)).map_err(|e| OrchestratorError::ExtractionFailed(e.to_string()))
}

/// Knobs for the refine loop.
#[derive(Debug, Clone)]
pub struct LoopOptions<'a> {
    pub max_refinements: u32,
    pub now: Timestamp,
    pub secrets: Vec<&'a str>,
    pub notes: Option<String>,
}

impl Default for LoopOptions<'_> {
    fn default() -> Self {
        Self {
            max_refinements: DEFAULT_MAX_REFINEMENTS,
            now: chrono::Utc::now(),
            secrets: Vec::new(),
            notes: None,
        }
    }
}

/// One attempt's verdict inside the loop.
enum Verdict<T> {
    Accept(T, ValidationReport),
    Reject(ValidationReport),
    Unparsed(String),
}

fn refine_loop<T: Clone>(
    first: PromptEnvelope,
    provider: &dyn Provider,
    opts: &LoopOptions,
    mut judge: impl FnMut(&str) -> Verdict<T>,
) -> Result<(T, RefinementTranscript<T>), OrchestratorError> {
    let mut rounds = Vec::new();
    let mut prompt = first.clone();
    let mut last_report = None;
    for round in 0..=opts.max_refinements {
        guard(&[&prompt.user_text], &opts.secrets)?;
        let raw = provider.complete(&prompt)?;
        let (outcome, report, extraction_error) = match judge(&raw) {
            Verdict::Accept(value, report) => {
                rounds.push(TranscriptRound {
                    prompt,
                    raw_completion: raw,
                    extraction_outcome: ExtractionOutcome::Parsed,
                    validation: Some(report),
                });
                let transcript = RefinementTranscript {
                    rounds,
                    outcome: TranscriptFinal::Accepted(value.clone()),
                };
                return Ok((value, transcript));
            }
            Verdict::Reject(report) => (ExtractionOutcome::Parsed, Some(report), None),
            Verdict::Unparsed(e) => (ExtractionOutcome::ExtractionFailed, None, Some(e)),
        };
        let next = refine_prompt(&first, round + 1, &raw, report.as_ref(), extraction_error.as_deref(), opts.notes.as_deref());
        rounds.push(TranscriptRound {
            prompt,
            raw_completion: raw,
            extraction_outcome: outcome,
            validation: report.clone(),
        });
        last_report = report;
        prompt = next;
    }
    Err(OrchestratorError::RefinementExhausted { rounds, last_report })
}

/// Deterministic plan id for a query.
pub fn plan_id_for(query: &str) -> String {
    format!("plan-{}", &sha256_hex(query.as_bytes())[..12])
}

/// Query → validated, normalized plan. The plan is returned for review;
/// nothing is executed.
pub fn generate_plan(
    query: &str,
    provider: &dyn Provider,
    manifest: &CapabilityManifest,
    catalog: &MetricCatalog,
    opts: &LoopOptions,
) -> Result<(CollectionPlan, RefinementTranscript<CollectionPlan>), OrchestratorError> {
    let first = build_prompt(query, manifest, catalog, &opts.secrets)?;
    let provenance = Provenance::Llm {
        query: query.to_owned(),
        provider_label: provider.label(),
    };
    refine_loop(first, provider, opts, |raw| {
        let draft = match extract_plan(raw) {
            Ok(d) => d,
            Err(e) => return Verdict::Unparsed(e.to_string()),
        };
        let plan = draft.into_plan(plan_id_for(query), manifest.platform, provenance.clone(), opts.now);
        let report = plan::validate_plan_at(&plan, catalog, &opts.now);
        if !report.valid {
            return Verdict::Reject(report);
        }
        match plan::normalize_plan(&plan) {
            Ok(normalized) => {
                let report = plan::validate_plan_at(&normalized, catalog, &opts.now);
                if report.valid {
                    Verdict::Accept(normalized, report)
                } else {
                    Verdict::Reject(report)
                }
            }
            Err(e) => Verdict::Reject(ValidationReport::from_issues(vec![issue(
                Severity::Error,
                "INVALID_PLAN",
                "",
                e.to_string(),
            )])),
        }
    })
}

fn patterns_prompt(intent: &str) -> PromptEnvelope {
    PromptEnvelope {
        system_text: "You help screen code review comments for qualitative study.\n\
                      Given a research intent, list literal keywords or short phrases whose presence in a \
                      comment body marks it as relevant. Matching is case-insensitive substring search; \
                      do not use regular expressions.\n\
                      Answer with exactly one JSON object {\"keywords\": [\"...\", ...]} and nothing else."
            .into(),
        user_text: intent.to_owned(),
        key: intent.to_owned(),
        round: 0,
    }
}

/// Lower-cases, trims and dedupes, keeping first occurrences.
pub fn clean_patterns(raw: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in raw {
        let p = p.trim().to_lowercase();
        if !p.is_empty() && !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn parse_patterns(raw: &str) -> Result<Vec<String>, OrchestratorError> {
    let text = strip_fences(raw);
    let list: Json = match extract_object(text) {
        Ok(mut map) => map
            .remove("keywords")
            .ok_or_else(|| OrchestratorError::ExtractionFailed("object lacks `keywords`".into()))?,
        Err(_) => {
            let arr = first_balanced(text, b'[', b']')
                .ok_or_else(|| OrchestratorError::ExtractionFailed("no keyword list found".into()))?;
            serde_json::from_str(arr).map_err(|e| OrchestratorError::ExtractionFailed(e.to_string()))?
        }
    };
    let items: Vec<String> =
        serde_json::from_value(list).map_err(|e| OrchestratorError::ExtractionFailed(e.to_string()))?;
    let cleaned = clean_patterns(&items);
    if cleaned.is_empty() {
        return Err(OrchestratorError::ExtractionFailed("keyword list is empty".into()));
    }
    Ok(cleaned)
}

/// Intent → keyword list for screening. The result is data only.
pub fn generate_patterns(intent: &str, provider: &dyn Provider, secrets: &[&str]) -> Result<Vec<String>, OrchestratorError> {
    let prompt = patterns_prompt(intent);
    guard(&[&prompt.user_text], secrets)?;
    parse_patterns(&provider.complete(&prompt)?)
}

const SPEC_SCHEMA: &str = r#"{
  "spec_version": 1,
  "granularity": "<table name>",
  "filters": [{"column": "<column>", "op": "eq" | "lt" | "gt" | "contains", "value": <literal>}, ...],
  "group_by": {"column": "<column>", "bucketing": "none" | "iso_week" | "iso_month"},   // optional
  "aggregations": [{"function": "count" | "sum" | "mean" | "median" | "p90", "column": "<numeric column>" | "*"}, ...],
  "output": "table" | "timeseries"    // timeseries needs iso_week/iso_month bucketing on a timestamp column
}"#;

fn render_schema(schema: &DatasetSchema) -> String {
    let mut out = String::new();
    for (table, cols) in schema {
        let cols: Vec<String> = cols.iter().map(|c| format!("{} ({:?})", c.name, c.value_kind).to_lowercase()).collect();
        let _ = writeln!(out, "- {table}: {}", cols.join(", "));
    }
    out
}

/// Intent → validated analysis spec over the given dataset schema.
pub fn generate_analysis_spec(
    intent: &str,
    schema: &DatasetSchema,
    provider: &dyn Provider,
    opts: &LoopOptions,
) -> Result<(AnalysisSpec, RefinementTranscript<AnalysisSpec>), OrchestratorError> {
    if schema.is_empty() {
        return Err(OrchestratorError::InvalidConfig("dataset schema is empty".into()));
    }
    let first = PromptEnvelope {
        system_text: format!(
            "You design declarative analyses over a code review dataset.\n\n\
             Analysis document schema:\n{SPEC_SCHEMA}\n\n\
             Dataset tables and columns:\n{}\n\
             Reference only the columns listed. Answer with exactly one JSON object and nothing else.",
            render_schema(schema)
        ),
        user_text: intent.to_owned(),
        key: intent.to_owned(),
        round: 0,
    };
    guard(&[&first.system_text, &first.user_text], &opts.secrets)?;
    refine_loop(first, provider, opts, |raw| {
        let mut map = match extract_object(raw) {
            Ok(m) => m,
            Err(e) => return Verdict::Unparsed(e.to_string()),
        };
        map.entry("spec_version").or_insert(json!(analysis::SPEC_VERSION));
        let spec: AnalysisSpec = match serde_json::from_value(Json::Object(map)) {
            Ok(s) => s,
            Err(e) => return Verdict::Unparsed(e.to_string()),
        };
        let report = analysis::validate_spec(&spec, schema);
        if report.valid {
            Verdict::Accept(spec, report)
        } else {
            Verdict::Reject(report)
        }
    })
}
