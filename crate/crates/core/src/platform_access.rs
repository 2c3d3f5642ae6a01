//! Platform credentials, layered configuration and access verification.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{self, EndpointId};
use crate::http::{HttpClient, RawResponse, TransportError};
use crate::time::{self, Timestamp};

pub const DEFAULT_GITHUB_URL: &str = "https://api.github.com";
pub const DEFAULT_GITLAB_URL: &str = "https://gitlab.com/api/v4";

pub const ENV_PLATFORM: &str = "REVMINE_PLATFORM";
pub const ENV_TOKEN: &str = "REVMINE_TOKEN";
pub const ENV_PROJECT: &str = "REVMINE_PROJECT";
pub const ENV_BASE_URL: &str = "REVMINE_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformKind {
    Github,
    Gitlab,
}

impl PlatformKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlatformKind::Github => "github",
            PlatformKind::Gitlab => "gitlab",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "github" => Some(PlatformKind::Github),
            "gitlab" => Some(PlatformKind::Gitlab),
            _ => None,
        }
    }

    fn default_base_url(self) -> &'static str {
        match self {
            PlatformKind::Github => DEFAULT_GITHUB_URL,
            PlatformKind::Gitlab => DEFAULT_GITLAB_URL,
        }
    }

    pub fn default_api_version(self) -> &'static str {
        match self {
            PlatformKind::Github => "2022-11-28",
            PlatformKind::Gitlab => "v4",
        }
    }
}

impl fmt::Display for PlatformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Display form of a secret: the first four characters and an ellipsis for
/// tokens longer than eight characters, a bare ellipsis otherwise.
pub fn redact(token: &str) -> String {
    if token.chars().count() > 8 {
        let head: String = token.chars().take(4).collect();
        format!("{head}…")
    } else {
        "…".to_owned()
    }
}

/// A secret string whose `Debug`, `Display` and `Serialize` forms are
/// redacted.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct SecretString(String);

impl SecretString {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for SecretString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretString({})", redact(&self.0))
    }
}

impl fmt::Display for SecretString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&redact(&self.0))
    }
}

impl Serialize for SecretString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&redact(&self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlatformConfig {
    pub kind: PlatformKind,
    pub base_url: String,
    pub token: SecretString,
    pub project: String,
    pub api_version: String,
}

/// One configuration layer; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialPlatformConfig {
    pub kind: Option<String>,
    pub base_url: Option<String>,
    pub token: Option<String>,
    pub project: Option<String>,
    pub api_version: Option<String>,
}

impl PartialPlatformConfig {
    pub fn overlay(&mut self, upper: &PartialPlatformConfig) {
        macro_rules! take {
            ($($f:ident),*) => {$(if upper.$f.is_some() { self.$f = upper.$f.clone(); })*};
        }
        take!(kind, base_url, token, project, api_version);
    }

    pub fn from_env(env: &BTreeMap<String, String>) -> Self {
        let get = |k: &str| env.get(k).filter(|v| !v.is_empty()).cloned();
        Self {
            kind: get(ENV_PLATFORM),
            base_url: get(ENV_BASE_URL),
            token: get(ENV_TOKEN),
            project: get(ENV_PROJECT),
            api_version: None,
        }
    }
}

/// The on-disk configuration document (TOML): a `[platform]` section and an
/// optional `[llm]` section.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub platform: PartialPlatformConfig,
    #[serde(default)]
    pub llm: crate::orchestrator::PartialProviderConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::FileFormat {
            path: path.to_owned(),
            message: e.message().to_owned(),
        })
    }
}

/// Configuration sources, lowest precedence first: file, environment,
/// command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    pub env: BTreeMap<String, String>,
    pub overrides: PartialPlatformConfig,
}

impl ConfigSources {
    /// Sources with the `REVMINE_*` variables of the current process.
    pub fn with_process_env(file: Option<PathBuf>, overrides: PartialPlatformConfig) -> Self {
        let env = std::env::vars().filter(|(k, _)| k.starts_with("REVMINE_")).collect();
        Self { file, env, overrides }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("missing required setting `{0}`")]
    MissingField(&'static str),
    #[error("invalid base url `{0}`")]
    InvalidUrl(String),
    #[error("unknown platform `{0}` (expected github or gitlab)")]
    InvalidKind(String),
    #[error("invalid project identifier `{0}`")]
    InvalidProject(String),
    #[error("cannot read config file {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed config file {path}: {message}")]
    FileFormat { path: PathBuf, message: String },
}

/// Canonical absolute http(s) URL without trailing slash.
pub fn canonical_base_url(raw: &str) -> Result<String, ConfigError> {
    let url = reqwest::Url::parse(raw.trim()).map_err(|_| ConfigError::InvalidUrl(raw.to_owned()))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
        return Err(ConfigError::InvalidUrl(raw.to_owned()));
    }
    if url.query().is_some() || url.fragment().is_some() {
        return Err(ConfigError::InvalidUrl(raw.to_owned()));
    }
    Ok(url.as_str().trim_end_matches('/').to_owned())
}

/// Validates a project identifier; GitLab paths are percent-encoded.
pub fn canonical_project(kind: PlatformKind, raw: &str) -> Result<String, ConfigError> {
    let p = raw.trim();
    let bad = || ConfigError::InvalidProject(raw.to_owned());
    let segment_ok = |s: &str| {
        !s.is_empty()
            && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    };
    match kind {
        PlatformKind::Github => {
            let (owner, repo) = p.split_once('/').ok_or_else(bad)?;
            if segment_ok(owner) && segment_ok(repo) {
                Ok(p.to_owned())
            } else {
                Err(bad())
            }
        }
        PlatformKind::Gitlab => {
            if !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()) {
                return Ok(p.to_owned());
            }
            let decoded = p.replace("%2F", "/").replace("%2f", "/");
            let segments: Vec<_> = decoded.split('/').collect();
            if segments.len() >= 2 && segments.iter().all(|s| segment_ok(s)) {
                Ok(segments.join("%2F"))
            } else {
                Err(bad())
            }
        }
    }
}

/// Merges the layers (command line > environment > file) and applies
/// defaults.
pub fn load_config(sources: &ConfigSources) -> Result<PlatformConfig, ConfigError> {
    let mut merged = match &sources.file {
        Some(path) => ConfigFile::load(path)?.platform,
        None => PartialPlatformConfig::default(),
    };
    merged.overlay(&PartialPlatformConfig::from_env(&sources.env));
    merged.overlay(&sources.overrides);
    resolve(merged)
}

fn resolve(merged: PartialPlatformConfig) -> Result<PlatformConfig, ConfigError> {
    let kind_raw = merged.kind.ok_or(ConfigError::MissingField("kind"))?;
    let kind = PlatformKind::parse(&kind_raw).ok_or(ConfigError::InvalidKind(kind_raw))?;
    let token = merged.token.filter(|t| !t.is_empty()).ok_or(ConfigError::MissingField("token"))?;
    let project = merged.project.filter(|p| !p.is_empty()).ok_or(ConfigError::MissingField("project"))?;
    let base_url = canonical_base_url(merged.base_url.as_deref().unwrap_or(kind.default_base_url()))?;
    Ok(PlatformConfig {
        kind,
        base_url,
        token: SecretString::new(token),
        project: canonical_project(kind, &project)?,
        api_version: merged.api_version.unwrap_or_else(|| kind.default_api_version().to_owned()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointAvailability {
    pub endpoint_id: EndpointId,
    pub available: bool,
    pub probe_status: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimitSnapshot {
    pub remaining: i64,
    #[serde(with = "time::serde_ts")]
    pub reset_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityManifest {
    pub platform: PlatformKind,
    pub token_valid: bool,
    pub authenticated_user: Option<String>,
    pub scopes: Vec<String>,
    pub project_accessible: bool,
    pub endpoints: Vec<EndpointAvailability>,
    pub rate_limit_snapshot: Option<RateLimitSnapshot>,
    #[serde(with = "time::serde_ts")]
    pub checked_at: Timestamp,
}

impl CapabilityManifest {
    pub fn ready(&self) -> bool {
        self.token_valid && self.project_accessible
    }

    /// Human-readable multi-line rendering.
    pub fn render(&self) -> String {
        let mark = |b: bool| if b { "ok" } else { "FAIL" };
        let mut out = format!(
            "platform:           {}\ntoken valid:        {}\nauthenticated user: {}\nscopes:             {}\nproject accessible: {}\n",
            self.platform,
            mark(self.token_valid),
            self.authenticated_user.as_deref().unwrap_or("-"),
            if self.scopes.is_empty() { "-".to_owned() } else { self.scopes.join(", ") },
            mark(self.project_accessible),
        );
        if let Some(rl) = &self.rate_limit_snapshot {
            out.push_str(&format!("rate limit:         {} remaining, resets {}\n", rl.remaining, time::format_ts(&rl.reset_at)));
        }
        out.push_str("endpoints:\n");
        for e in &self.endpoints {
            out.push_str(&format!("  {:<16} {:<4} (HTTP {})\n", e.endpoint_id.as_str(), mark(e.available), e.probe_status));
        }
        out.push_str(&format!("checked at:         {}\n", time::format_ts(&self.checked_at)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("platform unreachable: {0}")]
    NetworkUnreachable(String),
    #[error("platform returned {status} on {endpoint}")]
    PlatformUnavailable { endpoint: EndpointId, status: u16 },
}

/// Rate-limit headers of either platform.
pub fn rate_limit_from(resp: &RawResponse) -> Option<RateLimitSnapshot> {
    let remaining = resp
        .header("x-ratelimit-remaining")
        .or_else(|| resp.header("ratelimit-remaining"))?
        .trim()
        .parse()
        .ok()?;
    let reset: i64 = resp
        .header("x-ratelimit-reset")
        .or_else(|| resp.header("ratelimit-reset"))?
        .trim()
        .parse()
        .ok()?;
    let reset_at = chrono::DateTime::from_timestamp(reset, 0)?;
    Some(RateLimitSnapshot { remaining, reset_at })
}

fn probe(client: &HttpClient, config: &PlatformConfig, req: &adapters::EndpointRequest) -> Result<RawResponse, AccessError> {
    let resp = client
        .get(&req.url(&config.base_url), &adapters::auth_headers(config))
        .map_err(|e| match e {
            TransportError::Connect(m) | TransportError::Timeout(m) | TransportError::Other(m) => {
                AccessError::NetworkUnreachable(m)
            }
        })?;
    if resp.status >= 500 {
        return Err(AccessError::PlatformUnavailable {
            endpoint: req.endpoint_id,
            status: resp.status,
        });
    }
    Ok(resp)
}

fn scopes_of(client: &HttpClient, config: &PlatformConfig, identity: &RawResponse) -> Vec<String> {
    let split = |s: &str| -> Vec<String> {
        s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
    };
    match config.kind {
        PlatformKind::Github => identity.header("x-oauth-scopes").map(split).unwrap_or_default(),
        PlatformKind::Gitlab => {
            let url = format!("{}/personal_access_tokens/self", config.base_url);
            match client.get(&url, &adapters::auth_headers(config)) {
                Ok(resp) if resp.status == 200 => serde_json::from_slice::<serde_json::Value>(&resp.body)
                    .ok()
                    .and_then(|v| {
                        v.get("scopes")?.as_array().map(|a| {
                            a.iter().filter_map(|s| s.as_str().map(str::to_owned)).collect()
                        })
                    })
                    .unwrap_or_default(),
                _ => Vec::new(),
            }
        }
    }
}

/// Probes identity, project and every declared collection endpoint with
/// read-only GETs. 4xx responses are recorded in the manifest; 5xx and
/// connection failures are errors.
pub fn verify_access(config: &PlatformConfig, client: &HttpClient) -> Result<CapabilityManifest, AccessError> {
    let probes = adapters::probe_requests(config, None);
    let identity_req = probes.iter().find(|r| r.endpoint_id == EndpointId::IdentityProbe).expect("identity probe");
    let identity = probe(client, config, identity_req)?;
    let token_valid = identity.status == 200;
    let declared: Vec<EndpointId> = adapters::declared_endpoints(config.kind).iter().map(|e| e.endpoint_id).collect();

    let mut manifest = CapabilityManifest {
        platform: config.kind,
        token_valid,
        authenticated_user: None,
        scopes: Vec::new(),
        project_accessible: false,
        endpoints: declared
            .iter()
            .map(|id| EndpointAvailability {
                endpoint_id: *id,
                available: false,
                probe_status: if *id == EndpointId::IdentityProbe { identity.status } else { 0 },
            })
            .collect(),
        rate_limit_snapshot: rate_limit_from(&identity),
        checked_at: chrono::Utc::now(),
    };
    if !token_valid {
        return Ok(manifest);
    }

    let user: Option<serde_json::Value> = serde_json::from_slice(&identity.body).ok();
    manifest.authenticated_user = user.as_ref().and_then(|u| {
        u.get("login").or_else(|| u.get("username")).and_then(|v| v.as_str()).map(str::to_owned)
    });
    manifest.scopes = scopes_of(client, config, &identity);

    let mut statuses: BTreeMap<EndpointId, u16> = BTreeMap::new();
    statuses.insert(EndpointId::IdentityProbe, identity.status);
    let project_req = probes.iter().find(|r| r.endpoint_id == EndpointId::ProjectProbe).expect("project probe");
    let project = probe(client, config, project_req)?;
    statuses.insert(EndpointId::ProjectProbe, project.status);
    manifest.project_accessible = project.status == 200;

    if manifest.project_accessible {
        let list_req = probes.iter().find(|r| r.endpoint_id == EndpointId::ListReviews).expect("list probe");
        let list = probe(client, config, list_req)?;
        statuses.insert(EndpointId::ListReviews, list.status);
        let sample = serde_json::from_slice::<serde_json::Value>(&list.body)
            .ok()
            .and_then(|page| adapters::review_numbers(config.kind, &page).ok())
            .and_then(|n| n.first().copied());
        match sample {
            Some(n) => {
                for req in adapters::probe_requests(config, Some(n)) {
                    if req.review_number.is_some() {
                        let resp = probe(client, config, &req)?;
                        statuses.insert(req.endpoint_id, resp.status);
                    }
                }
            }
            // Nothing to fan out from: per-review endpoints inherit the
            // listing outcome.
            None => {
                for id in &declared {
                    statuses.entry(*id).or_insert(list.status);
                }
            }
        }
    }

    for e in &mut manifest.endpoints {
        if let Some(status) = statuses.get(&e.endpoint_id) {
            e.probe_status = *status;
            e.available = (200..300).contains(status);
        }
    }
    Ok(manifest)
}
