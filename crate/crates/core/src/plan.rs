//! Declarative collection plans: the contract shared by manual configuration,
//! LLM orchestration and the collector.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{MetricCatalog, MetricCategory};
use crate::platform_access::PlatformKind;
use crate::time::{self, Timestamp};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Reviews,
    Commits,
    Comments,
    Files,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Reviews => "reviews",
            EntityKind::Commits => "commits",
            EntityKind::Comments => "comments",
            EntityKind::Files => "files",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    Open,
    Merged,
    Closed,
}

impl ReviewState {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewState::Open => "open",
            ReviewState::Merged => "merged",
            ReviewState::Closed => "closed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(ReviewState::Open),
            "merged" => Some(ReviewState::Merged),
            "closed" => Some(ReviewState::Closed),
            _ => None,
        }
    }
}

/// Inclusive creation-date window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    #[serde(with = "time::serde_ts")]
    pub start: Timestamp,
    #[serde(with = "time::serde_ts")]
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn contains(&self, ts: &Timestamp) -> bool {
        *ts >= self.start && *ts <= self.end
    }
}

/// Review-level filters. `None` components (and empty lists) are vacuously
/// true.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<TimeWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<ReviewState>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_comments: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_extensions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
}

impl FilterSet {
    pub fn is_empty(&self) -> bool {
        *self == FilterSet::default()
    }

    /// Canonical form: lowercased extensions, sorted/deduplicated lists,
    /// empty lists collapsed to `None`.
    pub fn normalized(&self) -> FilterSet {
        fn tidy<T: Ord + Clone>(list: &Option<Vec<T>>) -> Option<Vec<T>> {
            let set: BTreeSet<T> = list.as_ref()?.iter().cloned().collect();
            (!set.is_empty()).then(|| set.into_iter().collect())
        }
        FilterSet {
            time_window: self.time_window,
            states: tidy(&self.states),
            min_comments: self.min_comments,
            authors: tidy(&self.authors),
            file_extensions: tidy(
                &self
                    .file_extensions
                    .as_ref()
                    .map(|v| v.iter().map(|e| e.to_lowercase()).collect()),
            ),
            keywords: tidy(&self.keywords),
        }
    }
}

/// Either a whole category or a single metric.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSelection", into = "RawSelection")]
pub enum MetricSelection {
    Category(String),
    Metric(String),
}

impl MetricSelection {
    pub fn category(c: MetricCategory) -> Self {
        MetricSelection::Category(c.as_str().to_owned())
    }

    pub fn metric(id: impl Into<String>) -> Self {
        MetricSelection::Metric(id.into())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSelection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metric_id: Option<String>,
}

impl TryFrom<RawSelection> for MetricSelection {
    type Error = String;

    fn try_from(raw: RawSelection) -> Result<Self, Self::Error> {
        match (raw.category, raw.metric_id) {
            (Some(c), None) => Ok(MetricSelection::Category(c)),
            (None, Some(m)) => Ok(MetricSelection::Metric(m)),
            _ => Err("metric selection needs exactly one of `category` or `metric_id`".into()),
        }
    }
}

impl From<MetricSelection> for RawSelection {
    fn from(sel: MetricSelection) -> Self {
        match sel {
            MetricSelection::Category(c) => RawSelection { category: Some(c), metric_id: None },
            MetricSelection::Metric(m) => RawSelection { category: None, metric_id: Some(m) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Provenance {
    Manual,
    Llm { query: String, provider_label: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionPlan {
    pub plan_id: String,
    pub platform: PlatformKind,
    pub entities: BTreeSet<EntityKind>,
    #[serde(default)]
    pub filters: FilterSet,
    pub metrics: Vec<MetricSelection>,
    pub provenance: Provenance,
    #[serde(with = "time::serde_ts")]
    pub created_at: Timestamp,
    pub schema_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported schema_version {0}")]
    UnsupportedSchemaVersion(i64),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown metric category `{0}`")]
    UnknownCategory(String),
}

impl PlanError {
    fn from_json(err: &serde_json::Error) -> Self {
        PlanError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// Expands one selection to metric ids, in catalog order.
pub fn expand_selection(selection: &MetricSelection, catalog: &MetricCatalog) -> Result<Vec<String>, PlanError> {
    match selection {
        MetricSelection::Category(name) => {
            let category = MetricCategory::parse(name).ok_or_else(|| PlanError::UnknownCategory(name.clone()))?;
            Ok(catalog.members(category).map(|m| m.metric_id.to_owned()).collect())
        }
        MetricSelection::Metric(id) => match catalog.get(id) {
            Some(m) => Ok(vec![m.metric_id.to_owned()]),
            None => Err(PlanError::UnknownMetric(id.clone())),
        },
    }
}

/// Expands every selection; result is deduplicated and in catalog order.
pub fn expand_all(selections: &[MetricSelection], catalog: &MetricCatalog) -> Result<Vec<String>, PlanError> {
    let mut ids = BTreeSet::new();
    for sel in selections {
        for id in expand_selection(sel, catalog)? {
            ids.insert((catalog.position(&id).unwrap_or(usize::MAX), id));
        }
    }
    Ok(ids.into_iter().map(|(_, id)| id).collect())
}

/// Entities the plan needs, implied by its metrics and filters. Unknown
/// selections are ignored here; validation reports them.
pub fn required_entities(plan: &CollectionPlan) -> BTreeSet<EntityKind> {
    let catalog = crate::catalog::catalog();
    let mut out = BTreeSet::from([EntityKind::Reviews]);
    for sel in &plan.metrics {
        for id in expand_selection(sel, &catalog).unwrap_or_default() {
            let Some(m) = catalog.get(&id) else { continue };
            match m.category {
                MetricCategory::Commits => {
                    out.insert(EntityKind::Commits);
                }
                MetricCategory::Comments => {
                    out.insert(EntityKind::Comments);
                }
                MetricCategory::Files => {
                    out.insert(EntityKind::Files);
                }
                MetricCategory::Derived => match m.metric_id {
                    "commit_count" => {
                        out.insert(EntityKind::Commits);
                    }
                    "files_changed" => {
                        out.insert(EntityKind::Files);
                    }
                    "review_duration_hours" => {}
                    _ => {
                        out.insert(EntityKind::Comments);
                    }
                },
                MetricCategory::ReviewMeta => {}
            }
        }
    }
    let f = &plan.filters;
    if f.min_comments.is_some() || f.keywords.as_ref().is_some_and(|k| !k.is_empty()) {
        out.insert(EntityKind::Comments);
    }
    if f.file_extensions.as_ref().is_some_and(|e| !e.is_empty()) {
        out.insert(EntityKind::Files);
    }
    out
}

/// Expands categories to explicit ids, adds implied entities and tidies the
/// filters. Idempotent.
pub fn normalize_plan(plan: &CollectionPlan) -> Result<CollectionPlan, PlanError> {
    let catalog = crate::catalog::catalog();
    let metrics = expand_all(&plan.metrics, &catalog)?
        .into_iter()
        .map(MetricSelection::Metric)
        .collect();
    let mut out = CollectionPlan {
        metrics,
        filters: plan.filters.normalized(),
        ..plan.clone()
    };
    let required = required_entities(&out);
    out.entities.extend(required);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn from_issues(issues: Vec<Issue>) -> Self {
        let valid = !issues.iter().any(|i| i.severity == Severity::Error);
        Self { valid, issues }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

pub(crate) fn issue(severity: Severity, code: &str, path: impl Into<String>, message: impl Into<String>) -> Issue {
    Issue {
        severity,
        code: code.to_owned(),
        message: message.into(),
        path: path.into(),
    }
}

/// Checks a plan against the catalog. Problems are report entries, never
/// errors.
pub fn validate_plan(plan: &CollectionPlan, catalog: &MetricCatalog) -> ValidationReport {
    validate_plan_at(plan, catalog, &chrono::Utc::now())
}

pub fn validate_plan_at(plan: &CollectionPlan, catalog: &MetricCatalog, now: &Timestamp) -> ValidationReport {
    use Severity::*;
    let mut issues = Vec::new();

    if plan.schema_version != SCHEMA_VERSION {
        issues.push(issue(
            Error,
            "UNSUPPORTED_SCHEMA_VERSION",
            "schema_version",
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", plan.schema_version),
        ));
    }
    if plan.entities.is_empty() {
        issues.push(issue(Error, "EMPTY_ENTITIES", "entities", "entity set is empty"));
    } else if !plan.entities.contains(&EntityKind::Reviews) {
        issues.push(issue(
            Error,
            "MISSING_ROOT_ENTITY",
            "entities",
            "entities must include `reviews`, the root entity",
        ));
    }

    for (i, sel) in plan.metrics.iter().enumerate() {
        match expand_selection(sel, catalog) {
            Ok(_) => {}
            Err(PlanError::UnknownMetric(id)) => issues.push(issue(
                Error,
                "UNKNOWN_METRIC",
                format!("metrics[{i}].metric_id"),
                format!("`{id}` is not a catalog metric"),
            )),
            Err(PlanError::UnknownCategory(name)) => issues.push(issue(
                Error,
                "UNKNOWN_CATEGORY",
                format!("metrics[{i}].category"),
                format!("`{name}` is not a metric category"),
            )),
            Err(other) => issues.push(issue(Error, "INVALID_METRIC", format!("metrics[{i}]"), other.to_string())),
        }
    }
    if plan.metrics.is_empty() {
        issues.push(issue(Warning, "EMPTY_METRICS", "metrics", "no metrics selected; only review keys will be exported"));
    }

    issues.extend(filter_issues(&plan.filters, now));

    let missing: Vec<_> = required_entities(plan)
        .into_iter()
        .filter(|e| !plan.entities.contains(e))
        .map(|e| e.as_str())
        .collect();
    if !missing.is_empty() && !plan.entities.is_empty() {
        issues.push(issue(
            Warning,
            "IMPLIED_ENTITIES",
            "entities",
            format!("metrics or filters imply {}; normalization adds them", missing.join(", ")),
        ));
    }

    ValidationReport::from_issues(issues)
}

/// Window and extension checks, shared by plans and dataset builds.
fn filter_issues(filters: &FilterSet, now: &Timestamp) -> Vec<Issue> {
    use Severity::*;
    let mut issues = Vec::new();
    if let Some(w) = &filters.time_window {
        if w.start > w.end {
            issues.push(issue(
                Error,
                "WINDOW_INVERTED",
                "filters.time_window",
                format!("start {} is after end {}", time::format_ts(&w.start), time::format_ts(&w.end)),
            ));
        } else if w.start > *now {
            issues.push(issue(
                Warning,
                "FUTURE_WINDOW",
                "filters.time_window",
                "time window lies entirely in the future",
            ));
        }
    }

    for (i, ext) in filters.file_extensions.iter().flatten().enumerate() {
        if !is_well_formed_extension(ext) {
            issues.push(issue(
                Error,
                "MALFORMED_EXTENSION",
                format!("filters.file_extensions[{i}]"),
                format!("`{ext}` must start with `.` and contain no `/`"),
            ));
        }
    }
    issues
}

/// Filter-only validation for dataset builds over an existing run.
pub fn validate_filters(filters: &FilterSet) -> ValidationReport {
    ValidationReport::from_issues(filter_issues(filters, &chrono::Utc::now()))
}

pub fn is_well_formed_extension(ext: &str) -> bool {
    ext.len() > 1
        && ext.starts_with('.')
        && !ext.contains('/')
        && !ext.contains(char::is_whitespace)
}

/// Recursively orders object keys so the output does not depend on how
/// `serde_json` maps are configured.
pub(crate) fn canonical_value(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut entries: Vec<_> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical_value(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical_value).collect()),
        other => other,
    }
}

/// Pretty-printed JSON with sorted keys and a trailing newline.
pub(crate) fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = canonical_value(serde_json::to_value(value).expect("serializable value"));
    let mut out = serde_json::to_string_pretty(&v).expect("serializable value");
    out.push('\n');
    out
}

/// Canonical `plan.json` bytes.
pub fn serialize_plan(plan: &CollectionPlan) -> String {
    to_canonical_json(plan)
}

pub fn parse_plan(text: &str) -> Result<CollectionPlan, PlanError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| PlanError::from_json(&e))?;
    match value.get("schema_version") {
        None => {
            return Err(PlanError::Parse {
                line: 1,
                column: 1,
                message: "missing field `schema_version`".into(),
            })
        }
        Some(v) => match v.as_i64() {
            Some(n) if n == SCHEMA_VERSION as i64 => {}
            Some(n) => return Err(PlanError::UnsupportedSchemaVersion(n)),
            None => {
                return Err(PlanError::Parse {
                    line: 1,
                    column: 1,
                    message: "`schema_version` must be an integer".into(),
                })
            }
        },
    }
    serde_json::from_str(text).map_err(|e| PlanError::from_json(&e))
}

pub fn new_plan_id() -> String {
    format!("plan-{:012x}", rand::random::<u64>() & 0xffff_ffff_ffff)
}
