//! Forge adapters: GitHub and GitLab request planning, pagination and
//! normalization into [`ReviewRecord`]s.
//!
//! Adapters are stateless translators. HTTP execution lives in the collector.

mod github;
mod gitlab;
pub mod records;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use records::*;

use crate::plan::{CollectionPlan, EntityKind, ReviewState};
use crate::platform_access::{PlatformConfig, PlatformKind};
use crate::time::{self, Timestamp};

pub const PAGE_SIZE: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointId {
    ListReviews,
    ReviewDetail,
    ReviewCommits,
    ReviewComments,
    ReviewFiles,
    IdentityProbe,
    ProjectProbe,
}

impl EndpointId {
    pub const ALL: [EndpointId; 7] = [
        EndpointId::ListReviews,
        EndpointId::ReviewDetail,
        EndpointId::ReviewCommits,
        EndpointId::ReviewComments,
        EndpointId::ReviewFiles,
        EndpointId::IdentityProbe,
        EndpointId::ProjectProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EndpointId::ListReviews => "list_reviews",
            EndpointId::ReviewDetail => "review_detail",
            EndpointId::ReviewCommits => "review_commits",
            EndpointId::ReviewComments => "review_comments",
            EndpointId::ReviewFiles => "review_files",
            EndpointId::IdentityProbe => "identity_probe",
            EndpointId::ProjectProbe => "project_probe",
        }
    }

    /// Entity whose raw documents this endpoint produces, for fan-out
    /// families and the list endpoint.
    pub fn entity(self) -> Option<EntityKind> {
        match self {
            EndpointId::ListReviews => Some(EntityKind::Reviews),
            EndpointId::ReviewCommits => Some(EntityKind::Commits),
            EndpointId::ReviewComments => Some(EntityKind::Comments),
            EndpointId::ReviewFiles => Some(EntityKind::Files),
            _ => None,
        }
    }

    pub fn for_entity(entity: EntityKind) -> EndpointId {
        match entity {
            EntityKind::Reviews => EndpointId::ListReviews,
            EntityKind::Commits => EndpointId::ReviewCommits,
            EntityKind::Comments => EndpointId::ReviewComments,
            EntityKind::Files => EndpointId::ReviewFiles,
        }
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One declared endpoint and its path template(s). GitHub's
/// `review_comments` spans two paths: review-thread comments (inline) and
/// issue comments (general).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeclaredEndpoint {
    pub endpoint_id: EndpointId,
    pub templates: Vec<&'static str>,
}

pub fn declared_endpoints(kind: PlatformKind) -> Vec<DeclaredEndpoint> {
    let table: &[(EndpointId, &[&'static str])] = match kind {
        PlatformKind::Github => github::ENDPOINTS,
        PlatformKind::Gitlab => gitlab::ENDPOINTS,
    };
    table
        .iter()
        .map(|(id, t)| DeclaredEndpoint {
            endpoint_id: *id,
            templates: t.to_vec(),
        })
        .collect()
}

/// Where a fan-out document came from when an endpoint has several paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Primary,
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointRequest {
    pub endpoint_id: EndpointId,
    pub method: String,
    pub path: String,
    pub query: Vec<(String, String)>,
    pub depends_on: Option<EndpointId>,
    pub review_number: Option<u64>,
    pub variant: Variant,
}

impl EndpointRequest {
    fn get(endpoint_id: EndpointId, path: String, query: Vec<(String, String)>) -> Self {
        Self {
            endpoint_id,
            method: "GET".into(),
            path,
            query,
            depends_on: None,
            review_number: None,
            variant: Variant::Primary,
        }
    }

    /// Absolute URL under `base_url`.
    pub fn url(&self, base_url: &str) -> String {
        let mut url = reqwest::Url::parse(&format!("{base_url}{}", self.path)).expect("canonical base url");
        if !self.query.is_empty() {
            url.query_pairs_mut().extend_pairs(self.query.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        }
        url.to_string()
    }

    /// Archive key (file stem) for the given page of this request.
    pub fn archive_key(&self, page: u32) -> String {
        match self.review_number {
            None => format!("page-{page:04}"),
            Some(n) => {
                let mut key = format!("review-{n}");
                if self.variant == Variant::General {
                    key.push_str("-general");
                }
                if page > 1 {
                    key.push_str(&format!("-page-{page:04}"));
                }
                key
            }
        }
    }
}

fn fill(template: &str, project: &str, number: Option<u64>) -> String {
    let mut out = template.replace("{project}", project);
    if let Some(n) = number {
        out = out.replace("{n}", &n.to_string());
    }
    out
}

fn project_path(config: &PlatformConfig) -> &str {
    &config.project
}

/// One family of fan-out requests performed per discovered review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FanoutFamily {
    pub endpoint_id: EndpointId,
    pub entity: EntityKind,
}

/// The request graph for a plan: the root listing plus dependent fan-out
/// families resolved per review number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestPlan {
    pub platform: PlatformKind,
    pub project: String,
    pub list: EndpointRequest,
    pub fanout: Vec<FanoutFamily>,
}

impl RequestPlan {
    /// Concrete requests for one family of one review.
    pub fn family_requests(&self, family: &FanoutFamily, number: u64) -> Vec<EndpointRequest> {
        let endpoints = declared_endpoints(self.platform);
        let templates = &endpoints
            .iter()
            .find(|e| e.endpoint_id == family.endpoint_id)
            .expect("declared fan-out endpoint")
            .templates;
        templates
            .iter()
            .enumerate()
            .map(|(i, t)| EndpointRequest {
                depends_on: Some(EndpointId::ListReviews),
                review_number: Some(number),
                variant: if i == 0 { Variant::Primary } else { Variant::General },
                ..EndpointRequest::get(
                    family.endpoint_id,
                    fill(t, &self.project, Some(number)),
                    vec![("per_page".into(), PAGE_SIZE.to_string())],
                )
            })
            .collect()
    }

    /// Every fan-out request for a review, in family order
    /// (commits, comments, files).
    pub fn fanout_for(&self, number: u64) -> Vec<EndpointRequest> {
        self.fanout.iter().flat_map(|f| self.family_requests(f, number)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("entity `{0}` is not served by this platform")]
    UnsupportedEntity(EntityKind),
}

/// Maps a normalized plan to the platform request graph. Time window and
/// states are pushed down into the listing query where the platform
/// supports it; every other filter applies at dataset build.
pub fn plan_to_requests(plan: &CollectionPlan, config: &PlatformConfig) -> Result<RequestPlan, AdapterError> {
    let project = project_path(config).to_owned();
    let list_template = declared_endpoints(plan.platform)
        .into_iter()
        .find(|e| e.endpoint_id == EndpointId::ListReviews)
        .expect("list endpoint")
        .templates[0];
    let query = match plan.platform {
        PlatformKind::Github => github::list_query(&plan.filters),
        PlatformKind::Gitlab => gitlab::list_query(&plan.filters),
    };
    let list = EndpointRequest::get(EndpointId::ListReviews, fill(list_template, &project, None), query);
    let fanout = plan
        .entities
        .iter()
        .filter(|e| **e != EntityKind::Reviews)
        .map(|e| FanoutFamily {
            endpoint_id: EndpointId::for_entity(*e),
            entity: *e,
        })
        .collect();
    Ok(RequestPlan {
        platform: plan.platform,
        project,
        list,
        fanout,
    })
}

/// Identity, project and per-endpoint probe requests (page size 1).
pub fn probe_requests(config: &PlatformConfig, sample_review: Option<u64>) -> Vec<EndpointRequest> {
    declared_endpoints(config.kind)
        .into_iter()
        .filter_map(|e| {
            let needs_review = e.templates[0].contains("{n}");
            if needs_review && sample_review.is_none() {
                return None;
            }
            let mut query = Vec::new();
            if !matches!(e.endpoint_id, EndpointId::IdentityProbe | EndpointId::ProjectProbe | EndpointId::ReviewDetail) {
                query.push(("per_page".to_string(), "1".to_string()));
            }
            let mut req = EndpointRequest::get(e.endpoint_id, fill(e.templates[0], &config.project, sample_review), query);
            if needs_review {
                req.review_number = sample_review;
            }
            Some(req)
        })
        .collect()
}

/// Authentication and API-version headers for a platform.
pub fn auth_headers(config: &PlatformConfig) -> Vec<(&'static str, String)> {
    match config.kind {
        PlatformKind::Github => vec![
            ("authorization", format!("Bearer {}", config.token.expose())),
            ("accept", "application/vnd.github+json".into()),
            ("x-github-api-version", config.api_version.clone()),
            ("user-agent", concat!("revmine/", env!("CARGO_PKG_VERSION")).into()),
        ],
        PlatformKind::Gitlab => vec![
            ("private-token", config.token.expose().to_owned()),
            ("user-agent", concat!("revmine/", env!("CARGO_PKG_VERSION")).into()),
        ],
    }
}

/// Position in a paginated listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageCursor {
    /// Absolute URL of the next page (GitHub `Link: rel="next"`).
    Url(String),
    /// Page number (GitLab `X-Next-Page`).
    Page(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed pagination: {0}")]
pub struct MalformedPagination(pub String);

/// Lower-cased header lookup helper shared with the collector.
pub fn header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

/// Next page of a 200 response, or `None` when the listing is done.
pub fn next_page(
    kind: PlatformKind,
    headers: &[(String, String)],
    body: &[u8],
) -> Result<Option<PageCursor>, MalformedPagination> {
    let cursor = match kind {
        PlatformKind::Github => match header(headers, "link") {
            Some(link) => github::parse_link_next(link)?.map(PageCursor::Url),
            None => None,
        },
        PlatformKind::Gitlab => match header(headers, "x-next-page") {
            Some(v) if v.trim().is_empty() => None,
            Some(v) => Some(PageCursor::Page(
                v.trim()
                    .parse()
                    .map_err(|_| MalformedPagination(format!("X-Next-Page `{v}` is not a page number")))?,
            )),
            None => None,
        },
    };
    if cursor.is_some() && is_empty_array(body) {
        return Ok(None);
    }
    Ok(cursor)
}

fn is_empty_array(body: &[u8]) -> bool {
    matches!(serde_json::from_slice::<Value>(body), Ok(Value::Array(a)) if a.is_empty())
}

/// Applies a cursor to a request, yielding the URL of that page.
pub fn page_url(base_url: &str, request: &EndpointRequest, cursor: &PageCursor) -> String {
    match cursor {
        PageCursor::Url(url) => url.clone(),
        PageCursor::Page(n) => {
            let mut req = request.clone();
            req.query.retain(|(k, _)| k != "page");
            req.query.push(("page".into(), n.to_string()));
            req.url(base_url)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("cannot normalize `{field}`: {reason}")]
pub struct NormalizationError {
    pub field: String,
    pub reason: String,
}

impl NormalizationError {
    pub(crate) fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) type NResult<T> = Result<T, NormalizationError>;

/// Dotted-path lookup (`"user.login"`).
pub(crate) fn lookup<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(doc, |v, key| v.get(key)).filter(|v| !v.is_null())
}

pub(crate) fn req_str(doc: &Value, path: &str) -> NResult<String> {
    match lookup(doc, path) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(NormalizationError::new(path, "expected a string")),
        None => Err(NormalizationError::new(path, "required field is missing")),
    }
}

pub(crate) fn opt_str(doc: &Value, path: &str) -> NResult<Option<String>> {
    match lookup(doc, path) {
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(NormalizationError::new(path, "expected a string")),
        None => Ok(None),
    }
}

pub(crate) fn req_u64(doc: &Value, path: &str) -> NResult<u64> {
    match lookup(doc, path) {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| NormalizationError::new(path, "expected a non-negative integer")),
        None => Err(NormalizationError::new(path, "required field is missing")),
    }
}

pub(crate) fn opt_u64(doc: &Value, path: &str) -> NResult<Option<u64>> {
    match lookup(doc, path) {
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| NormalizationError::new(path, "expected a non-negative integer")),
        None => Ok(None),
    }
}

/// Identifier that may be reported as a number or a string.
pub(crate) fn req_id(doc: &Value, path: &str) -> NResult<String> {
    match lookup(doc, path) {
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(NormalizationError::new(path, "expected an identifier")),
        None => Err(NormalizationError::new(path, "required field is missing")),
    }
}

pub(crate) fn req_ts(doc: &Value, path: &str) -> NResult<Timestamp> {
    let raw = req_str(doc, path)?;
    time::parse_ts(&raw).ok_or_else(|| NormalizationError::new(path, format!("`{raw}` is not an RFC 3339 timestamp")))
}

pub(crate) fn opt_ts(doc: &Value, path: &str) -> NResult<Option<Timestamp>> {
    match opt_str(doc, path)? {
        None => Ok(None),
        Some(raw) => time::parse_ts(&raw)
            .map(Some)
            .ok_or_else(|| NormalizationError::new(path, format!("`{raw}` is not an RFC 3339 timestamp"))),
    }
}

pub(crate) fn req_bool(doc: &Value, path: &str) -> bool {
    lookup(doc, path).and_then(Value::as_bool).unwrap_or(false)
}

/// Enforces the state/date invariants shared by both platforms.
pub(crate) fn finish_review(mut r: ReviewRecord) -> NResult<ReviewRecord> {
    match r.state {
        ReviewState::Open => {
            r.merged_at = None;
            r.closed_at = None;
        }
        ReviewState::Merged => {
            let merged = r
                .merged_at
                .ok_or_else(|| NormalizationError::new("merged_at", "merged review without a merge time"))?;
            if merged < r.created_at {
                return Err(NormalizationError::new("merged_at", "merge time precedes creation"));
            }
            r.closed_at = r.closed_at.or(Some(merged));
        }
        ReviewState::Closed => {
            r.merged_at = None;
        }
    }
    Ok(r)
}

/// Normalizes a review from its listing item, optionally overlaid with the
/// detail document. Children are attached separately.
pub fn normalize_review(kind: PlatformKind, item: &Value, detail: Option<&Value>) -> NResult<ReviewRecord> {
    let merged;
    let doc = match detail {
        Some(Value::Object(d)) => {
            let mut base = item.as_object().cloned().unwrap_or_default();
            base.extend(d.iter().map(|(k, v)| (k.clone(), v.clone())));
            merged = Value::Object(base);
            &merged
        }
        _ => item,
    };
    match kind {
        PlatformKind::Github => github::normalize_review(doc),
        PlatformKind::Gitlab => gitlab::normalize_review(doc),
    }
}

/// Normalizes one comment. `variant` distinguishes GitHub's issue comments
/// (general) from review-thread comments. Returns `None` for platform
/// events that are not reviewer feedback (GitLab system notes).
pub fn normalize_comment(kind: PlatformKind, variant: Variant, raw: &Value) -> NResult<Option<CommentRecord>> {
    match kind {
        PlatformKind::Github => github::normalize_comment(variant, raw).map(Some),
        PlatformKind::Gitlab => gitlab::normalize_comment(raw),
    }
}

pub fn normalize_commit(kind: PlatformKind, raw: &Value) -> NResult<CommitRecord> {
    let commit = match kind {
        PlatformKind::Github => github::normalize_commit(raw)?,
        PlatformKind::Gitlab => gitlab::normalize_commit(raw)?,
    };
    if commit.sha.len() != 40 || !commit.sha.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(NormalizationError::new("sha", format!("`{}` is not a 40-hex sha", commit.sha)));
    }
    Ok(commit)
}

pub fn normalize_file(kind: PlatformKind, raw: &Value) -> NResult<FileChangeRecord> {
    match kind {
        PlatformKind::Github => github::normalize_file(raw),
        PlatformKind::Gitlab => gitlab::normalize_file(raw),
    }
}

/// Review numbers in a raw listing page, in listing order.
pub fn review_numbers(kind: PlatformKind, page: &Value) -> NResult<Vec<u64>> {
    let field = match kind {
        PlatformKind::Github => "number",
        PlatformKind::Gitlab => "iid",
    };
    let items = page
        .as_array()
        .ok_or_else(|| NormalizationError::new("$", "listing page is not an array"))?;
    items.iter().map(|i| req_u64(i, field)).collect()
}

/// Splits a raw listing page into review items.
pub fn list_items(page: &Value) -> NResult<&Vec<Value>> {
    page.as_array()
        .ok_or_else(|| NormalizationError::new("$", "listing page is not an array"))
}
