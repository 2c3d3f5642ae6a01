//! Raw archive → normalized records → filtered, metric-projected tables,
//! exported as RFC 4180 CSV.

mod filters;
mod metrics;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

pub use filters::{apply_filters, contains_ci, find_ci, review_matches};
pub use metrics::{comment_metric, commit_metric, compute_metric, file_metric};

use crate::adapters::{self, ReviewRecord, Variant};
use crate::archive::{self, ArchiveIoError, RawKey};
use crate::catalog::{catalog, Granularity, ValueKind};
use crate::par::Execution;
use crate::plan::{self, CollectionPlan, EntityKind, FilterSet, PlanError};
use crate::platform_access::PlatformKind;
use crate::time::{self, Timestamp};

pub const DATASET_FILE: &str = "dataset.json";

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Ts(Timestamp),
    Bool(bool),
    Absent,
}

impl Value {
    pub fn is_absent(&self) -> bool {
        matches!(self, Value::Absent)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_ts(&self) -> Option<&Timestamp> {
        match self {
            Value::Ts(t) => Some(t),
            _ => None,
        }
    }

    /// CSV field text. Absent values are empty fields.
    pub fn to_field(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format_float(*f),
            Value::Ts(t) => time::format_ts(t),
            Value::Bool(b) => b.to_string(),
            Value::Absent => String::new(),
        }
    }

    /// Parses a CSV field of the given kind; empty fields are absent.
    pub fn from_field(field: &str, kind: ValueKind) -> Option<Value> {
        if field.is_empty() {
            return Some(Value::Absent);
        }
        Some(match kind {
            ValueKind::String => Value::Str(field.to_owned()),
            ValueKind::Integer => Value::Int(field.parse().ok()?),
            ValueKind::Float => Value::Float(field.parse().ok()?),
            ValueKind::Timestamp => Value::Ts(time::parse_ts(field)?),
            ValueKind::Boolean => Value::Bool(field.parse().ok()?),
        })
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Str(s) => Json::String(s.clone()),
            Value::Int(i) => Json::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f).map(Json::Number).unwrap_or(Json::Null),
            Value::Ts(t) => Json::String(time::format_ts(t)),
            Value::Bool(b) => Json::Bool(*b),
            Value::Absent => Json::Null,
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_field())
    }
}

/// Locale-free decimal rendering; integral values keep one decimal place.
pub fn format_float(f: f64) -> String {
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 1e15 {
        format!("{f:.1}")
    } else {
        format!("{f}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub value_kind: ValueKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<impl Iterator<Item = &Value>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(move |r| &r[i]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadWarning {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub file: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

/// Contents of `dataset.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dataset_id: String,
    pub source_run_id: String,
    pub applied_filters: FilterSet,
    pub metrics: Vec<String>,
    pub tables: Vec<TableMeta>,
    pub warnings: Vec<LoadWarning>,
    #[serde(with = "time::serde_ts")]
    pub built_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub tables: BTreeMap<Granularity, Table>,
}

/// Column schemas per table name; what analyses validate against.
pub type DatasetSchema = BTreeMap<String, Vec<Column>>;

impl Dataset {
    pub fn table(&self, g: Granularity) -> Option<&Table> {
        self.tables.get(&g)
    }

    pub fn table_by_name(&self, name: &str) -> Option<&Table> {
        Granularity::from_table_name(name).and_then(|g| self.tables.get(&g))
    }

    pub fn schema(&self) -> DatasetSchema {
        self.tables
            .iter()
            .map(|(g, t)| (g.table_name().to_owned(), t.columns.clone()))
            .collect()
    }

    /// Reads a dataset directory written by [`write_dataset`].
    pub fn load(dir: &Path) -> Result<Dataset, DatasetError> {
        let meta_path = dir.join(DATASET_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| ArchiveIoError::new(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Malformed(format!("{}: {e}", meta_path.display())))?;
        let mut tables = BTreeMap::new();
        for tm in &meta.tables {
            let g = Granularity::from_table_name(&tm.name)
                .ok_or_else(|| DatasetError::Malformed(format!("unknown table `{}`", tm.name)))?;
            let path = dir.join(&tm.file);
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_path(&path)
                .map_err(|e| ArchiveIoError::new(&path, e))?;
            let mut rows = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(|e| DatasetError::Malformed(format!("{}: {e}", path.display())))?;
                if rec.len() != tm.columns.len() {
                    return Err(DatasetError::Malformed(format!("{}: row width mismatch", path.display())));
                }
                let row = rec
                    .iter()
                    .zip(&tm.columns)
                    .map(|(field, col)| {
                        Value::from_field(field, col.value_kind).ok_or_else(|| {
                            DatasetError::Malformed(format!("{}: bad {} value `{field}`", path.display(), col.name))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push(row);
            }
            tables.insert(
                g,
                Table {
                    columns: tm.columns.clone(),
                    rows,
                },
            );
        }
        Ok(Dataset { meta, tables })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Archive(#[from] ArchiveIoError),
    #[error("run plan: {0}")]
    Plan(#[from] PlanError),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

/// Normalized records recovered from a run directory.
#[derive(Debug, Clone)]
pub struct LoadedArchive {
    pub plan: CollectionPlan,
    pub run_id: String,
    pub records: Vec<ReviewRecord>,
    pub warnings: Vec<LoadWarning>,
}

fn rel(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn read_json(run_dir: &Path, path: &Path) -> Result<Json, LoadWarning> {
    let bytes = fs::read(path).map_err(|e| LoadWarning {
        path: rel(run_dir, path),
        reason: e.to_string(),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| LoadWarning {
        path: rel(run_dir, path),
        reason: format!("invalid JSON: {e}"),
    })
}

/// Raw child files of one entity grouped by review number.
type ChildIndex = HashMap<u64, Vec<(RawKey, PathBuf)>>;

fn expected_variants(platform: PlatformKind, entity: EntityKind) -> &'static [Variant] {
    match (platform, entity) {
        (PlatformKind::Github, EntityKind::Comments) => &[Variant::Primary, Variant::General],
        _ => &[Variant::Primary],
    }
}

fn load_review(
    run_dir: &Path,
    platform: PlatformKind,
    source: &str,
    item: &Json,
    children: &[(EntityKind, ChildIndex)],
) -> Result<ReviewRecord, LoadWarning> {
    let mut record = adapters::normalize_review(platform, item, None).map_err(|e| LoadWarning {
        path: source.to_owned(),
        reason: e.to_string(),
    })?;
    for (entity, index) in children {
        let files = index.get(&record.number).map(Vec::as_slice).unwrap_or_default();
        for variant in expected_variants(platform, *entity) {
            if !files.iter().any(|(k, _)| k.variant() == *variant && k.page == 1) {
                let key = match variant {
                    Variant::Primary => format!("review-{}", record.number),
                    Variant::General => format!("review-{}-general", record.number),
                };
                return Err(LoadWarning {
                    path: archive::raw_rel_path(*entity, &key).to_string_lossy().into_owned(),
                    reason: format!("missing {entity} for review {}", record.number),
                });
            }
        }
        for (key, path) in files {
            let doc = read_json(run_dir, path)?;
            let warn = |reason: String| LoadWarning {
                path: rel(run_dir, path),
                reason,
            };
            let items = adapters::list_items(&doc).map_err(|e| warn(e.to_string()))?;
            for raw in items {
                match entity {
                    EntityKind::Commits => record
                        .commits
                        .push(adapters::normalize_commit(platform, raw).map_err(|e| warn(e.to_string()))?),
                    EntityKind::Comments => {
                        if let Some(c) = adapters::normalize_comment(platform, key.variant(), raw)
                            .map_err(|e| warn(e.to_string()))?
                        {
                            record.comments.push(c);
                        }
                    }
                    EntityKind::Files => record
                        .files
                        .push(adapters::normalize_file(platform, raw).map_err(|e| warn(e.to_string()))?),
                    EntityKind::Reviews => {}
                }
            }
        }
    }
    record.sort_children();
    Ok(record)
}

fn run_id_of(run_dir: &Path) -> String {
    let from_manifest = fs::read(run_dir.join(archive::MANIFEST_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<Json>(&b).ok())
        .and_then(|m| m.get("run_id").and_then(Json::as_str).map(str::to_owned));
    from_manifest.unwrap_or_else(|| {
        run_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

/// Normalizes every archived document of a run. Reviews whose documents
/// fail to normalize (or whose child documents are missing) are skipped
/// with a warning rather than failing the load.
pub fn load_archive(run_dir: &Path, exec: Execution) -> Result<LoadedArchive, DatasetError> {
    let plan_path = run_dir.join(archive::PLAN_FILE);
    let plan_text = fs::read_to_string(&plan_path).map_err(|e| ArchiveIoError::new(&plan_path, e))?;
    let plan = plan::parse_plan(&plan_text)?;
    let platform = plan.platform;
    let mut warnings = Vec::new();

    let mut items: Vec<(String, Json)> = Vec::new();
    for (key, path) in archive::list_raw(run_dir, EntityKind::Reviews)? {
        if key.review.is_some() {
            continue;
        }
        match read_json(run_dir, &path) {
            Ok(Json::Array(page)) => {
                let source = rel(run_dir, &path);
                items.extend(page.into_iter().enumerate().map(|(i, item)| (format!("{source}#{i}"), item)));
            }
            Ok(_) => warnings.push(LoadWarning {
                path: rel(run_dir, &path),
                reason: "listing page is not an array".into(),
            }),
            Err(w) => warnings.push(w),
        }
    }

    let mut children = Vec::new();
    for entity in plan.entities.iter().filter(|e| **e != EntityKind::Reviews) {
        let mut index: ChildIndex = HashMap::new();
        for (key, path) in archive::list_raw(run_dir, *entity)? {
            if let Some(n) = key.review {
                index.entry(n).or_default().push((key, path));
            }
        }
        children.push((*entity, index));
    }

    let results = exec.map(&items, |(source, item)| load_review(run_dir, platform, source, item, &children));
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for result in results {
        match result {
            Ok(r) => {
                if seen.insert(r.number) {
                    records.push(r);
                }
            }
            Err(w) => warnings.push(w),
        }
    }
    records.sort_by_key(|r| r.number);
    Ok(LoadedArchive {
        run_id: run_id_of(run_dir),
        plan,
        records,
        warnings,
    })
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub dataset_id: Option<String>,
    pub execution: Execution,
}

pub fn new_dataset_id() -> String {
    format!(
        "ds-{}-{:06x}",
        chrono::Utc::now().format("%Y%m%dT%H%M%SZ"),
        rand::random::<u32>() & 0xff_ffff
    )
}

/// Metrics used when a build names none: the plan's own selection, or
/// else every catalog metric the collected entities can serve.
pub fn default_metrics(plan: &CollectionPlan) -> Vec<String> {
    let cat = catalog();
    if let Ok(ids) = plan::expand_all(&plan.metrics, &cat) {
        if !ids.is_empty() {
            return ids;
        }
    }
    cat.descriptors()
        .iter()
        .filter(|m| {
            let probe = CollectionPlan {
                metrics: vec![plan::MetricSelection::metric(m.metric_id)],
                ..plan.clone()
            };
            plan::required_entities(&probe).is_subset(&plan.entities)
        })
        .map(|m| m.metric_id.to_owned())
        .collect()
}

fn columns_for(g: Granularity, metrics: &[String]) -> Vec<Column> {
    let cat = catalog();
    let mut cols = vec![Column {
        name: "review_id".into(),
        value_kind: ValueKind::String,
    }];
    for id in metrics {
        let m = cat.get(id).expect("validated metric");
        if m.granularity == g && m.metric_id != "review_id" {
            cols.push(Column {
                name: m.metric_id.into(),
                value_kind: m.value_kind,
            });
        }
    }
    cols
}

/// Projects filtered records onto tables. The reviews table is always
/// present; child tables only when one of their metrics is selected.
pub fn project(records: &[ReviewRecord], metrics: &[String], exec: Execution) -> Result<BTreeMap<Granularity, Table>, DatasetError> {
    let cat = catalog();
    for id in metrics {
        if cat.get(id).is_none() {
            return Err(DatasetError::UnknownMetric(id.clone()));
        }
    }
    let mut tables = BTreeMap::new();
    for g in Granularity::ALL {
        let columns = columns_for(g, metrics);
        if g != Granularity::Review && columns.len() == 1 {
            continue;
        }
        let names: Vec<&str> = columns.iter().skip(1).map(|c| c.name.as_str()).collect();
        let per_review: Vec<Vec<Vec<Value>>> = exec.map(records, |r| {
            let key = Value::Str(r.review_id.clone());
            let row = |f: &dyn Fn(&str) -> Value| {
                std::iter::once(key.clone()).chain(names.iter().map(|n| f(n))).collect::<Vec<_>>()
            };
            match g {
                Granularity::Review => vec![row(&|n| compute_metric(n, r).expect("review metric"))],
                Granularity::Commit => r
                    .commits
                    .iter()
                    .map(|c| row(&|n| commit_metric(n, c).expect("commit metric")))
                    .collect(),
                Granularity::Comment => r
                    .comments
                    .iter()
                    .map(|c| row(&|n| comment_metric(n, c).expect("comment metric")))
                    .collect(),
                Granularity::File => r
                    .files
                    .iter()
                    .map(|f| row(&|n| file_metric(n, f).expect("file metric")))
                    .collect(),
            }
        });
        tables.insert(
            g,
            Table {
                columns,
                rows: per_review.into_iter().flatten().collect(),
            },
        );
    }
    Ok(tables)
}

/// load → filter → project.
pub fn build_dataset(run_dir: &Path, metrics: &[String], filters: &FilterSet) -> Result<Dataset, DatasetError> {
    build_dataset_with(run_dir, metrics, filters, &BuildOptions::default())
}

pub fn build_dataset_with(
    run_dir: &Path,
    metrics: &[String],
    filters: &FilterSet,
    options: &BuildOptions,
) -> Result<Dataset, DatasetError> {
    let loaded = load_archive(run_dir, options.execution)?;
    let filters = filters.normalized();
    let kept = apply_filters(loaded.records, &filters);
    let tables = project(&kept, metrics, options.execution)?;
    let meta = DatasetMeta {
        dataset_id: options.dataset_id.clone().unwrap_or_else(new_dataset_id),
        source_run_id: loaded.run_id,
        applied_filters: filters,
        metrics: metrics.to_vec(),
        tables: tables
            .iter()
            .map(|(g, t)| TableMeta {
                name: g.table_name().into(),
                file: format!("{}.csv", g.table_name()),
                columns: t.columns.clone(),
                row_count: t.rows.len(),
            })
            .collect(),
        warnings: loaded.warnings,
        built_at: chrono::Utc::now(),
    };
    Ok(Dataset { meta, tables })
}

/// RFC 4180 writer: CRLF terminators, quoting only when a field holds a
/// comma, quote or line break.
pub fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(w)
}

pub fn table_to_csv(table: &Table) -> Vec<u8> {
    let mut w = csv_writer(Vec::new());
    w.write_record(table.columns.iter().map(|c| c.name.as_str())).expect("in-memory write");
    for row in &table.rows {
        w.write_record(row.iter().map(Value::to_field)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// Writes one CSV per table.
pub fn export_csv(dataset: &Dataset, out_dir: &Path) -> Result<Vec<PathBuf>, ArchiveIoError> {
    let mut paths = Vec::new();
    for (g, table) in &dataset.tables {
        let path = out_dir.join(format!("{}.csv", g.table_name()));
        archive::atomic_write(&path, &table_to_csv(table))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes the CSVs plus `dataset.json`.
pub fn write_dataset(dataset: &Dataset, out_dir: &Path) -> Result<Vec<PathBuf>, ArchiveIoError> {
    let mut paths = export_csv(dataset, out_dir)?;
    let meta_path = out_dir.join(DATASET_FILE);
    archive::atomic_write(&meta_path, plan::to_canonical_json(&dataset.meta).as_bytes())?;
    paths.push(meta_path);
    Ok(paths)
}
