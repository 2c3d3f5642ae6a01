//! Summary reports, declarative analyses and keyword screening over
//! datasets. Everything here is a pure function of the dataset.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::archive::{self, ArchiveIoError};
use crate::catalog::{Granularity, ValueKind};
use crate::dataset::{self, find_ci, Column, Dataset, DatasetSchema, Table, Value};
use crate::plan::{issue, Severity, ValidationReport};
use crate::time::{self, Bucketing, Timestamp};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOp {
    Eq,
    Lt,
    Gt,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    pub column: String,
    pub op: RowOp,
    pub value: Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupBy {
    pub column: String,
    #[serde(default = "no_bucketing")]
    pub bucketing: Bucketing,
}

fn no_bucketing() -> Bucketing {
    Bucketing::None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunction {
    Count,
    Sum,
    Mean,
    Median,
    P90,
}

impl AggFunction {
    pub fn as_str(self) -> &'static str {
        match self {
            AggFunction::Count => "count",
            AggFunction::Sum => "sum",
            AggFunction::Mean => "mean",
            AggFunction::Median => "median",
            AggFunction::P90 => "p90",
        }
    }

    /// Value reported for a bucket without rows.
    fn empty_value(self) -> Option<f64> {
        match self {
            AggFunction::Count | AggFunction::Sum => Some(0.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregation {
    pub function: AggFunction,
    #[serde(default = "star")]
    pub column: String,
}

fn star() -> String {
    "*".into()
}

impl Aggregation {
    pub fn name(&self) -> String {
        format!("{}({})", self.function.as_str(), self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Table,
    Timeseries,
}

/// Declarative analysis document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    pub spec_version: u32,
    pub granularity: String,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
    #[serde(default)]
    pub group_by: Option<GroupBy>,
    pub aggregations: Vec<Aggregation>,
    pub output: OutputKind,
}

pub fn parse_spec(text: &str) -> Result<AnalysisSpec, serde_json::Error> {
    serde_json::from_str(text)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("analysis spec rejected: {}", summary(.0))]
    SpecValidation(ValidationReport),
    #[error("dataset lacks `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Archive(#[from] ArchiveIoError),
}

fn summary(report: &ValidationReport) -> String {
    report.errors().map(|i| i.message.as_str()).collect::<Vec<_>>().join("; ")
}

fn literal_fits(kind: ValueKind, op: RowOp, lit: &Json) -> bool {
    match (kind, op) {
        (ValueKind::String, RowOp::Eq | RowOp::Contains) => lit.is_string(),
        (ValueKind::String, _) => false,
        (_, RowOp::Contains) => false,
        (ValueKind::Integer | ValueKind::Float, _) => lit.is_number(),
        (ValueKind::Timestamp, _) => lit.as_str().and_then(time::parse_ts).is_some(),
        (ValueKind::Boolean, RowOp::Eq) => lit.is_boolean(),
        (ValueKind::Boolean, _) => false,
    }
}

/// Checks a spec against a dataset schema. Problems are report entries.
pub fn validate_spec(spec: &AnalysisSpec, schema: &DatasetSchema) -> ValidationReport {
    let mut issues = Vec::new();
    let err = |code: &str, path: String, msg: String| issue(Severity::Error, code, path, msg);
    if spec.spec_version != SPEC_VERSION {
        issues.push(err(
            "UNSUPPORTED_SPEC_VERSION",
            "spec_version".into(),
            format!("spec_version {} is not supported (expected {SPEC_VERSION})", spec.spec_version),
        ));
    }
    let Some(columns) = schema.get(&spec.granularity) else {
        issues.push(err(
            "UNKNOWN_TABLE",
            "granularity".into(),
            format!("dataset has no `{}` table", spec.granularity),
        ));
        return ValidationReport::from_issues(issues);
    };
    let kind_of = |name: &str| columns.iter().find(|c| c.name == name).map(|c| c.value_kind);
    let unknown = |path: String, name: &str| {
        issue(
            Severity::Error,
            "UNKNOWN_COLUMN",
            path,
            format!("column `{name}` is not in table `{}`", spec.granularity),
        )
    };

    for (i, f) in spec.filters.iter().enumerate() {
        let path = format!("filters[{i}]");
        match kind_of(&f.column) {
            None => issues.push(unknown(format!("{path}.column"), &f.column)),
            Some(kind) if !literal_fits(kind, f.op, &f.value) => issues.push(err(
                "TYPE_MISMATCH",
                path,
                format!("filter {:?} on `{}` does not accept {}", f.op, f.column, f.value),
            )),
            Some(_) => {}
        }
    }

    let mut time_bucketed = false;
    if let Some(g) = &spec.group_by {
        match kind_of(&g.column) {
            None => issues.push(unknown("group_by.column".into(), &g.column)),
            Some(kind) => {
                if g.bucketing != Bucketing::None {
                    if kind == ValueKind::Timestamp {
                        time_bucketed = true;
                    } else {
                        issues.push(err(
                            "TYPE_MISMATCH",
                            "group_by.bucketing".into(),
                            format!("time bucketing needs a timestamp column, `{}` is not", g.column),
                        ));
                    }
                }
            }
        }
    }

    if spec.aggregations.is_empty() {
        issues.push(err("EMPTY_AGGREGATIONS", "aggregations".into(), "at least one aggregation is required".into()));
    }
    for (i, a) in spec.aggregations.iter().enumerate() {
        let path = format!("aggregations[{i}]");
        if a.column == "*" {
            if a.function != AggFunction::Count {
                issues.push(err(
                    "TYPE_MISMATCH",
                    path,
                    format!("{} needs a numeric column, not `*`", a.function.as_str()),
                ));
            }
            continue;
        }
        match kind_of(&a.column) {
            None => issues.push(unknown(format!("{path}.column"), &a.column)),
            Some(kind) if a.function != AggFunction::Count && !kind.is_numeric() => issues.push(err(
                "NON_NUMERIC_AGGREGATION",
                path,
                format!("{} over non-numeric column `{}`", a.function.as_str(), a.column),
            )),
            Some(_) => {}
        }
    }

    if spec.output == OutputKind::Timeseries && !time_bucketed {
        issues.push(err(
            "TIMESERIES_WITHOUT_TIME_BUCKETING",
            "output".into(),
            "timeseries output needs group_by with iso_week or iso_month on a timestamp column".into(),
        ));
    }
    ValidationReport::from_issues(issues)
}

/// Grouping key with a total order: numbers numerically, text lexically.
#[derive(Debug, Clone, PartialEq)]
enum GroupKey {
    Num(f64),
    Text(String),
}

impl Eq for GroupKey {}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (GroupKey::Num(a), GroupKey::Num(b)) => a.total_cmp(b),
            (GroupKey::Num(_), GroupKey::Text(_)) => Ordering::Less,
            (GroupKey::Text(_), GroupKey::Num(_)) => Ordering::Greater,
            (GroupKey::Text(a), GroupKey::Text(b)) => a.cmp(b),
        }
    }
}

impl GroupKey {
    fn label(&self) -> String {
        match self {
            GroupKey::Num(n) => dataset::format_float(*n),
            GroupKey::Text(s) => s.clone(),
        }
    }
}

fn row_passes(value: &Value, f: &RowFilter) -> bool {
    match (value, f.op) {
        (Value::Absent, _) => false,
        (Value::Str(s), RowOp::Eq) => f.value.as_str() == Some(s.as_str()),
        (Value::Str(s), RowOp::Contains) => f.value.as_str().is_some_and(|lit| find_ci(s, lit).is_some()),
        (Value::Bool(b), RowOp::Eq) => f.value.as_bool() == Some(*b),
        (Value::Ts(t), op) => match f.value.as_str().and_then(time::parse_ts) {
            Some(lit) => compare(t.cmp(&lit), op),
            None => false,
        },
        (v, op) => match (v.as_f64(), f.value.as_f64()) {
            (Some(a), Some(b)) => a.partial_cmp(&b).is_some_and(|o| compare(o, op)),
            _ => false,
        },
    }
}

fn compare(ord: Ordering, op: RowOp) -> bool {
    match op {
        RowOp::Eq => ord == Ordering::Equal,
        RowOp::Lt => ord == Ordering::Less,
        RowOp::Gt => ord == Ordering::Greater,
        RowOp::Contains => false,
    }
}

/// Median; even counts take the mean of the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Nearest-rank percentile: the value at rank ceil(p/100 * n).
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn aggregate(agg: &Aggregation, table: &Table, rows: &[&Vec<Value>]) -> Option<f64> {
    if agg.column == "*" {
        return Some(rows.len() as f64);
    }
    let idx = table.column_index(&agg.column)?;
    let present = rows.iter().map(|r| &r[idx]).filter(|v| !v.is_absent());
    if agg.function == AggFunction::Count {
        return Some(present.count() as f64);
    }
    let nums: Vec<f64> = present.filter_map(Value::as_f64).collect();
    match agg.function {
        AggFunction::Count => unreachable!(),
        AggFunction::Sum => Some(nums.iter().sum()),
        AggFunction::Mean => mean(&nums),
        AggFunction::Median => median(&nums),
        AggFunction::P90 => percentile_nearest_rank(&nums, 90.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// Bucketed series sharing one label axis. Labels strictly increase and
/// empty buckets between the first and last are materialized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub labels: Vec<String>,
    pub series: Vec<Series>,
}

/// Aggregated rows; when grouped, the first column holds the group label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub grouped: bool,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisResult {
    Table(ResultTable),
    Timeseries(TimeSeries),
}

fn agg_value(function: AggFunction, v: Option<f64>) -> Value {
    match (function, v) {
        (_, None) => Value::Absent,
        (AggFunction::Count, Some(n)) => Value::Int(n as i64),
        (_, Some(x)) => Value::Float(x),
    }
}

/// filter → bucket → aggregate.
pub fn run_spec(ds: &Dataset, spec: &AnalysisSpec) -> Result<AnalysisResult, AnalysisError> {
    let report = validate_spec(spec, &ds.schema());
    if !report.valid {
        return Err(AnalysisError::SpecValidation(report));
    }
    let table = ds.table_by_name(&spec.granularity).expect("validated table");
    let filter_idx: Vec<(usize, &RowFilter)> = spec
        .filters
        .iter()
        .map(|f| (table.column_index(&f.column).expect("validated column"), f))
        .collect();
    let rows: Vec<&Vec<Value>> = table
        .rows
        .iter()
        .filter(|r| filter_idx.iter().all(|(i, f)| row_passes(&r[*i], f)))
        .collect();

    let Some(group) = &spec.group_by else {
        let values = spec
            .aggregations
            .iter()
            .map(|a| agg_value(a.function, aggregate(a, table, &rows)))
            .collect();
        return Ok(AnalysisResult::Table(ResultTable {
            columns: spec.aggregations.iter().map(Aggregation::name).collect(),
            grouped: false,
            rows: vec![values],
        }));
    };

    let gi = table.column_index(&group.column).expect("validated column");
    let mut groups: BTreeMap<GroupKey, Vec<&Vec<Value>>> = BTreeMap::new();
    let mut span: Option<(Timestamp, Timestamp)> = None;
    for row in &rows {
        let key = match (&row[gi], group.bucketing) {
            (Value::Absent, _) => continue,
            (Value::Ts(t), b) if b != Bucketing::None => {
                span = Some(match span {
                    None => (*t, *t),
                    Some((lo, hi)) => (lo.min(*t), hi.max(*t)),
                });
                GroupKey::Text(time::bucket_label(t, b).expect("time bucketing"))
            }
            (v, _) => match v.as_f64() {
                Some(n) => GroupKey::Num(n),
                None => GroupKey::Text(v.to_field()),
            },
        };
        groups.entry(key).or_default().push(row);
    }

    if spec.output == OutputKind::Timeseries {
        let labels = match span {
            Some((lo, hi)) => time::bucket_range(&lo, &hi, group.bucketing),
            None => Vec::new(),
        };
        let by_label: HashMap<String, &Vec<&Vec<Value>>> = groups.iter().map(|(k, v)| (k.label(), v)).collect();
        let series = spec
            .aggregations
            .iter()
            .map(|a| Series {
                name: a.name(),
                values: labels
                    .iter()
                    .map(|l| match by_label.get(l) {
                        Some(rows) => aggregate(a, table, rows),
                        None => a.function.empty_value(),
                    })
                    .collect(),
            })
            .collect();
        return Ok(AnalysisResult::Timeseries(TimeSeries { labels, series }));
    }

    let mut columns = vec![group.column.clone()];
    columns.extend(spec.aggregations.iter().map(Aggregation::name));
    let rows = groups
        .iter()
        .map(|(k, rows)| {
            std::iter::once(Value::Str(k.label()))
                .chain(spec.aggregations.iter().map(|a| agg_value(a.function, aggregate(a, table, rows))))
                .collect()
        })
        .collect();
    Ok(AnalysisResult::Table(ResultTable {
        columns,
        grouped: true,
        rows,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedWindow {
    #[serde(with = "time::serde_ts")]
    pub start: Timestamp,
    #[serde(with = "time::serde_ts")]
    pub end: Timestamp,
}

/// Headline statistics. Fields whose source columns are not in the
/// dataset are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub review_count: u64,
    pub avg_comments_per_review: Option<f64>,
    pub mean_review_duration_hours: Option<f64>,
    pub median_review_duration_hours: Option<f64>,
    pub distinct_authors: Option<u64>,
    pub distinct_commenters: Option<u64>,
    pub total_commits: Option<u64>,
    pub total_comments: Option<u64>,
    pub total_files_changed: Option<u64>,
    pub window: Option<ObservedWindow>,
}

impl SummaryReport {
    pub fn render(&self) -> String {
        fn f(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
        }
        fn n(v: Option<u64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
        }
        let window = self
            .window
            .as_ref()
            .map(|w| format!("{} .. {}", time::format_ts(&w.start), time::format_ts(&w.end)))
            .unwrap_or_else(|| "-".into());
        format!(
            "reviews:                      {}\n\
             avg comments per review:      {}\n\
             mean review duration (h):     {}\n\
             median review duration (h):   {}\n\
             distinct authors:             {}\n\
             distinct commenters:          {}\n\
             total commits:                {}\n\
             total comments:               {}\n\
             total files changed:          {}\n\
             window:                       {}\n",
            self.review_count,
            f(self.avg_comments_per_review),
            f(self.mean_review_duration_hours),
            f(self.median_review_duration_hours),
            n(self.distinct_authors),
            n(self.distinct_commenters),
            n(self.total_commits),
            n(self.total_comments),
            n(self.total_files_changed),
            window,
        )
    }
}

fn column_values<'a>(ds: &'a Dataset, g: Granularity, name: &str) -> Option<Vec<&'a Value>> {
    ds.table(g)?.column(name).map(|c| c.collect())
}

fn numeric(values: &[&Value]) -> Vec<f64> {
    values.iter().filter_map(|v| v.as_f64()).collect()
}

/// Per-review count from a derived column, or else from child table rows.
fn per_review_total(ds: &Dataset, derived: &str, child: Granularity) -> Option<Vec<f64>> {
    if let Some(col) = column_values(ds, Granularity::Review, derived) {
        return Some(numeric(&col));
    }
    let rows = ds.table(child)?.rows.len() as f64;
    let n = ds.table(Granularity::Review)?.rows.len();
    // Only the total is meaningful here; spread it over one entry.
    Some(if n == 0 { Vec::new() } else { vec![rows] })
}

pub fn summarize(ds: &Dataset) -> SummaryReport {
    let review_count = ds.table(Granularity::Review).map_or(0, |t| t.rows.len()) as u64;
    let comments = per_review_total(ds, "comment_count", Granularity::Comment);
    let commits = per_review_total(ds, "commit_count", Granularity::Commit);
    let files = per_review_total(ds, "files_changed", Granularity::File);
    let total = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v.iter().sum::<f64>() as u64);

    let durations = column_values(ds, Granularity::Review, "review_duration_hours").map(|v| numeric(&v));
    let distinct = |g: Granularity, col: &str| {
        column_values(ds, g, col).map(|v| {
            v.iter()
                .filter(|x| !x.is_absent())
                .map(|x| x.to_field())
                .collect::<BTreeSet<_>>()
                .len() as u64
        })
    };
    let window = column_values(ds, Granularity::Review, "created_at").and_then(|v| {
        let ts: Vec<&Timestamp> = v.iter().filter_map(|x| x.as_ts()).collect();
        Some(ObservedWindow {
            start: **ts.iter().min()?,
            end: **ts.iter().max()?,
        })
    });

    SummaryReport {
        review_count,
        avg_comments_per_review: total(&comments)
            .filter(|_| review_count > 0)
            .map(|c| c as f64 / review_count as f64),
        mean_review_duration_hours: durations.as_deref().and_then(mean),
        median_review_duration_hours: durations.as_deref().and_then(median),
        distinct_authors: distinct(Granularity::Review, "author"),
        distinct_commenters: distinct(Granularity::Comment, "comment_author"),
        total_commits: total(&commits),
        total_comments: total(&comments),
        total_files_changed: total(&files),
        window,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenHit {
    pub review_id: String,
    pub comment_id: String,
    pub pattern: String,
    pub snippet: String,
}

pub const SNIPPET_CONTEXT: usize = 40;

/// Up to `SNIPPET_CONTEXT` characters either side of a byte range.
pub fn snippet(body: &str, start: usize, end: usize) -> String {
    let before: Vec<(usize, char)> = body[..start].char_indices().collect();
    let from = before
        .len()
        .checked_sub(SNIPPET_CONTEXT)
        .map_or(0, |i| before[i].0);
    let to = body[end..]
        .char_indices()
        .nth(SNIPPET_CONTEXT)
        .map_or(body.len(), |(i, _)| end + i);
    body[from..to].to_owned()
}

/// Numeric-aware id ordering: numeric ids compare as numbers.
pub fn cmp_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u128>(), b.parse::<u128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Case-insensitive literal screening of comment bodies. One hit per
/// (comment, pattern) pair.
pub fn keyword_screen(ds: &Dataset, patterns: &[String]) -> Result<Vec<ScreenHit>, AnalysisError> {
    let table = ds
        .table(Granularity::Comment)
        .ok_or_else(|| AnalysisError::MissingColumn("comments.comment_body".into()))?;
    let body_i = table
        .column_index("comment_body")
        .ok_or_else(|| AnalysisError::MissingColumn("comments.comment_body".into()))?;
    let id_i = table.column_index("comment_id");
    let mut unique: Vec<&str> = Vec::new();
    for p in patterns {
        if !p.is_empty() && !unique.contains(&p.as_str()) {
            unique.push(p);
        }
    }
    let mut hits = Vec::new();
    for row in &table.rows {
        let Value::Str(body) = &row[body_i] else { continue };
        for p in &unique {
            if let Some((s, e)) = find_ci(body, p) {
                hits.push(ScreenHit {
                    review_id: row[0].to_field(),
                    comment_id: id_i.map(|i| row[i].to_field()).unwrap_or_default(),
                    pattern: (*p).to_owned(),
                    snippet: snippet(body, s, e),
                });
            }
        }
    }
    hits.sort_by(|a, b| {
        cmp_ids(&a.review_id, &b.review_id)
            .then_with(|| cmp_ids(&a.comment_id, &b.comment_id))
            .then_with(|| a.pattern.cmp(&b.pattern))
    });
    Ok(hits)
}

/// The dashboard's chart document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartData {
    pub kind: String,
    pub labels: Vec<String>,
    pub series: Vec<ChartSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSeries {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl AnalysisResult {
    pub fn chart_data(&self) -> ChartData {
        match self {
            AnalysisResult::Timeseries(ts) => ChartData {
                kind: "timeseries".into(),
                labels: ts.labels.clone(),
                series: ts
                    .series
                    .iter()
                    .map(|s| ChartSeries {
                        name: s.name.clone(),
                        values: s.values.clone(),
                    })
                    .collect(),
            },
            AnalysisResult::Table(t) => {
                let skip = t.grouped as usize;
                let labels = if t.grouped {
                    t.rows.iter().map(|r| r[0].to_field()).collect()
                } else {
                    vec!["all".to_owned()]
                };
                ChartData {
                    kind: "table".into(),
                    labels,
                    series: t.columns[skip..]
                        .iter()
                        .enumerate()
                        .map(|(i, name)| ChartSeries {
                            name: name.clone(),
                            values: t.rows.iter().map(|r| r[skip + i].as_f64()).collect(),
                        })
                        .collect(),
                }
            }
        }
    }

    /// Result as a dataset-style table for CSV export.
    pub fn to_table(&self) -> Table {
        let string_col = |name: &str| Column {
            name: name.to_owned(),
            value_kind: ValueKind::String,
        };
        let float_col = |name: &str| Column {
            name: name.to_owned(),
            value_kind: ValueKind::Float,
        };
        match self {
            AnalysisResult::Table(t) => Table {
                columns: t
                    .columns
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if t.grouped && i == 0 { string_col(c) } else { float_col(c) })
                    .collect(),
                rows: t.rows.clone(),
            },
            AnalysisResult::Timeseries(ts) => Table {
                columns: std::iter::once(string_col("bucket"))
                    .chain(ts.series.iter().map(|s| float_col(&s.name)))
                    .collect(),
                rows: ts
                    .labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        std::iter::once(Value::Str(l.clone()))
                            .chain(ts.series.iter().map(|s| s.values[i].map_or(Value::Absent, Value::Float)))
                            .collect()
                    })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    ChartData,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ExportFormat::Csv),
            "chart-data" | "chart_data" => Some(ExportFormat::ChartData),
            _ => None,
        }
    }
}

pub fn export_analysis(result: &AnalysisResult, out_dir: &Path, format: ExportFormat) -> Result<PathBuf, ArchiveIoError> {
    let (name, bytes) = match format {
        ExportFormat::Csv => ("analysis.csv", dataset::table_to_csv(&result.to_table())),
        ExportFormat::ChartData => {
            let mut text = serde_json::to_string_pretty(&result.chart_data()).expect("chart data");
            text.push('\n');
            ("chart-data.json", text.into_bytes())
        }
    };
    let path = out_dir.join(name);
    archive::atomic_write(&path, &bytes)?;
    Ok(path)
}
