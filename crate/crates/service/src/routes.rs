use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use revmine::analysis::{self, AnalysisSpec};
use revmine::collector::{self, CollectOptions, RunManifest, RunStatus};
use revmine::dataset::{self, BuildOptions, Dataset, DatasetMeta, DATASET_FILE};
use revmine::http::HttpClient;
use revmine::orchestrator::{self, LoopOptions, Provider};
use revmine::plan::{self, CollectionPlan, FilterSet};
use revmine::platform_access::{self, CapabilityManifest};
use revmine::{archive, catalog, Execution};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::jobs::{JobHandle, JobKind, JobState};
use crate::{has_file, safe_id, ApiError, AppState, Target, MAX_PAGE};

type Shared = Arc<AppState>;
type ApiResult = Result<Response, ApiError>;

pub(crate) fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/v1/platform/verify", post(verify))
        .route("/api/v1/plans", post(plans))
        .route("/api/v1/runs", post(create_run).get(list_runs))
        .route("/api/v1/runs/{run_id}", get(get_run))
        .route("/api/v1/datasets", post(create_dataset).get(list_datasets))
        .route("/api/v1/datasets/{dataset_id}", get(get_dataset))
        .route("/api/v1/datasets/{dataset_id}/rows", get(dataset_rows))
        .route("/api/v1/analyses", post(analyses))
        .route("/api/v1/keyword-screen", post(keyword_screen))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

fn ok(body: Value) -> ApiResult {
    Ok((StatusCode::OK, Json(body)).into_response())
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Canonical document form, identical to what `serialize_plan` writes.
fn plan_doc(p: &CollectionPlan) -> Value {
    serde_json::from_str(&plan::serialize_plan(p)).expect("canonical plan")
}

fn plan_from_doc(doc: &Value) -> Result<CollectionPlan, ApiError> {
    plan::parse_plan(&doc.to_string()).map_err(|e| ApiError::bad_request(format!("plan document: {e}")))
}

fn provider(state: &AppState) -> Result<Arc<dyn Provider>, ApiError> {
    state.config.provider.clone().ok_or_else(ApiError::no_provider)
}

fn loop_options(state: &AppState, notes: Option<String>) -> LoopOptions<'_> {
    LoopOptions {
        max_refinements: state.config.max_refinements,
        secrets: state.token().into_iter().collect(),
        notes,
        ..LoopOptions::default()
    }
}

// ---------------------------------------------------------------- platform

async fn verify(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let target: Target = parse_body(&body)?;
    if target.kind.is_none() {
        return Err(ApiError::bad_request("body must name the platform `kind`"));
    }
    let config = state.resolve(Some(&target))?;
    let st = state.clone();
    let manifest = blocking(move || {
        let m = platform_access::verify_access(&config, &HttpClient::new(st.config.http_timeout))?;
        if m.token_valid {
            st.remember(target, m.clone());
        }
        Ok(m)
    })
    .await?;
    ok(json!(manifest))
}

/// Last verified manifest, or a fresh probe with the current settings.
fn manifest_for_planning(state: &AppState) -> Result<CapabilityManifest, ApiError> {
    if let Some(m) = state.verified_manifest() {
        return Ok(m);
    }
    let config = state.resolve(None)?;
    Ok(platform_access::verify_access(&config, &HttpClient::new(state.config.http_timeout))?)
}

// ---------------------------------------------------------------- plans

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanRequest {
    query: Option<String>,
    plan: Option<Value>,
    notes: Option<String>,
}

async fn plans(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let req: PlanRequest = parse_body(&body)?;
    match (req.query, req.plan) {
        (Some(_), Some(_)) | (None, None) => Err(ApiError::bad_request("give exactly one of `query` or `plan`")),
        (None, Some(doc)) => {
            let p = plan_from_doc(&doc)?;
            let report = plan::validate_plan(&p, &catalog());
            let p = match report.valid {
                true => plan::normalize_plan(&p).unwrap_or(p),
                false => p,
            };
            ok(json!({"plan": plan_doc(&p), "validation": report}))
        }
        (Some(query), None) => {
            let provider = provider(&state)?;
            blocking(move || {
                let manifest = manifest_for_planning(&state)?;
                let opts = loop_options(&state, req.notes);
                let (p, transcript) =
                    orchestrator::generate_plan(&query, provider.as_ref(), &manifest, &catalog(), &opts)?;
                let report = plan::validate_plan(&p, &catalog());
                ok(json!({"plan": plan_doc(&p), "validation": report, "transcript": transcript}))
            })
            .await
        }
    }
}

// ---------------------------------------------------------------- runs

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    plan: Value,
    config: Option<Target>,
}

async fn create_run(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let req: RunRequest = parse_body(&body)?;
    let p = plan_from_doc(&req.plan)?;
    let report = plan::validate_plan(&p, &catalog());
    if !report.valid {
        return Err(ApiError::validation("plan_validation", report));
    }
    let config = state.resolve(req.config.as_ref())?;
    if config.kind != p.platform {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "platform_mismatch",
            format!("plan targets {} but the service is configured for {}", p.platform, config.kind),
        ));
    }
    let key = format!("{}|{}|{}", config.kind, config.base_url, config.project);
    if !state.claim(&key) {
        return Err(ApiError::conflict(format!("a collection for project `{}` is already executing", config.project)));
    }
    let run_id = collector::new_run_id(&state.config.collect.clock.now());
    let job = JobHandle::queued(&run_id, JobKind::CollectionRun);
    state.jobs.put(job.clone());

    let st = state.clone();
    let id = run_id.clone();
    std::thread::spawn(move || {
        st.jobs.set_state(&id, JobState::Running);
        let opts = CollectOptions {
            run_id: Some(id.clone()),
            ..st.config.collect.clone()
        };
        let client = HttpClient::new(st.config.http_timeout);
        let result = collector::execute_run(&p, &config, &st.runs_dir(), &client, &opts);
        let finished = match result {
            Ok(m) => JobHandle::for_run(&m, None),
            Err(e) => {
                tracing::warn!(run_id = %id, error = %e, "run ended with an error");
                match RunManifest::load(&st.runs_dir().join(&id)) {
                    Ok(m) if m.status == RunStatus::Failed => JobHandle::for_run(&m, None),
                    _ => JobHandle::failed(&id, JobKind::CollectionRun, e.to_string()),
                }
            }
        };
        st.jobs.put(finished);
        st.release(&key);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": job }))).into_response())
}

fn run_view(state: &AppState, run_id: &str) -> Option<(JobHandle, Option<RunManifest>)> {
    if !safe_id(run_id) {
        return None;
    }
    let live = state.jobs.get(run_id);
    match RunManifest::load(&state.runs_dir().join(run_id)) {
        Ok(m) => Some((JobHandle::for_run(&m, live.as_ref()), Some(m))),
        Err(_) => live.map(|j| (j, None)),
    }
}

async fn get_run(State(state): State<Shared>, Path(run_id): Path<String>) -> ApiResult {
    let (job, manifest) = run_view(&state, &run_id).ok_or_else(|| ApiError::not_found("run", &run_id))?;
    let mut body = json!({ "job": job });
    if let Some(m) = manifest {
        body["manifest"] = json!(m);
    }
    ok(body)
}

fn dir_names(dir: &std::path::Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| safe_id(n))
        .collect();
    names.sort();
    names
}

async fn list_runs(State(state): State<Shared>) -> ApiResult {
    let mut ids = dir_names(&state.runs_dir());
    for j in state.jobs.of_kind(JobKind::CollectionRun) {
        if !ids.contains(&j.job_id) {
            ids.push(j.job_id);
        }
    }
    ids.sort();
    let runs: Vec<Value> = ids
        .iter()
        .filter_map(|id| run_view(&state, id))
        .map(|(job, m)| match m {
            Some(m) => json!({
                "run_id": m.run_id,
                "status": m.status,
                "platform": m.platform,
                "project": m.project,
                "plan_id": m.plan_snapshot.get("plan_id"),
                "started_at": revmine::time::format_ts(&m.started_at),
                "finished_at": m.finished_at.as_ref().map(revmine::time::format_ts),
                "job": job,
            }),
            None => json!({"run_id": job.job_id, "status": "queued", "job": job}),
        })
        .collect();
    ok(json!({ "runs": runs }))
}

// ---------------------------------------------------------------- datasets

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRequest {
    run_id: String,
    #[serde(default)]
    filters: FilterSet,
    metrics: Option<Vec<String>>,
}

async fn create_dataset(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let req: DatasetRequest = parse_body(&body)?;
    if !safe_id(&req.run_id) {
        return Err(ApiError::not_found("run", &req.run_id));
    }
    let run_dir = state.runs_dir().join(&req.run_id);
    let manifest = match RunManifest::load(&run_dir) {
        Ok(m) => m,
        Err(_) => {
            return Err(match state.jobs.get(&req.run_id) {
                Some(j) if j.kind == JobKind::CollectionRun && !j.state.finished() => {
                    ApiError::conflict(format!("run `{}` has not started writing yet", req.run_id))
                }
                _ => ApiError::not_found("run", &req.run_id),
            })
        }
    };
    if !matches!(manifest.status, RunStatus::Completed | RunStatus::Partial) {
        return Err(ApiError::conflict(format!(
            "run `{}` is {}; datasets need a completed or partial run",
            req.run_id,
            manifest.status.as_str()
        )));
    }
    let report = plan::validate_filters(&req.filters);
    if !report.valid {
        return Err(ApiError::validation("filter_validation", report));
    }
    let metrics = match req.metrics {
        Some(m) => m,
        None => {
            let text = std::fs::read_to_string(run_dir.join(archive::PLAN_FILE))
                .map_err(|e| ApiError::internal(e.to_string()))?;
            let p = plan::parse_plan(&text).map_err(|e| ApiError::internal(e.to_string()))?;
            dataset::default_metrics(&p)
        }
    };
    if let Some(bad) = metrics.iter().find(|m| catalog().get(m).is_none()) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_metric", format!("unknown metric `{bad}`")));
    }

    let dataset_id = dataset::new_dataset_id();
    let job = JobHandle::queued(&dataset_id, JobKind::DatasetBuild);
    state.jobs.put(job.clone());
    let st = state.clone();
    let id = dataset_id.clone();
    std::thread::spawn(move || {
        st.jobs.set_state(&id, JobState::Running);
        let opts = BuildOptions {
            dataset_id: Some(id.clone()),
            execution: Execution::Parallel,
        };
        let tmp = st.datasets_dir().join(format!(".{id}.partial"));
        let result = dataset::build_dataset_with(&run_dir, &metrics, &req.filters, &opts)
            .map_err(|e| e.to_string())
            .and_then(|ds| dataset::write_dataset(&ds, &tmp).map_err(|e| e.to_string()))
            .and_then(|_| std::fs::rename(&tmp, st.datasets_dir().join(&id)).map_err(|e| e.to_string()));
        st.jobs.put(match result {
            Ok(()) => JobHandle::done(&id, JobKind::DatasetBuild),
            Err(e) => {
                tracing::warn!(dataset_id = %id, error = %e, "dataset build failed");
                let _ = std::fs::remove_dir_all(&tmp);
                JobHandle::failed(&id, JobKind::DatasetBuild, e)
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": job }))).into_response())
}

fn read_meta(state: &AppState, id: &str) -> Option<Value> {
    if !safe_id(id) {
        return None;
    }
    let bytes = std::fs::read(state.datasets_dir().join(id).join(DATASET_FILE)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

async fn get_dataset(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    if let Some(meta) = read_meta(&state, &id) {
        return ok(json!({"job": JobHandle::done(&id, JobKind::DatasetBuild), "metadata": meta}));
    }
    match state.jobs.get(&id).filter(|j| j.kind == JobKind::DatasetBuild) {
        Some(job) => ok(json!({ "job": job })),
        None => Err(ApiError::not_found("dataset", &id)),
    }
}

async fn list_datasets(State(state): State<Shared>) -> ApiResult {
    let datasets: Vec<Value> = dir_names(&state.datasets_dir())
        .iter()
        .filter_map(|id| read_meta(&state, id))
        .filter_map(|meta| serde_json::from_value::<DatasetMeta>(meta).ok())
        .map(|m| {
            json!({
                "dataset_id": m.dataset_id,
                "source_run_id": m.source_run_id,
                "built_at": revmine::time::format_ts(&m.built_at),
                "tables": m.tables.iter().map(|t| json!({"name": t.name, "row_count": t.row_count})).collect::<Vec<_>>(),
            })
        })
        .collect();
    ok(json!({ "datasets": datasets }))
}

fn load_dataset(state: &AppState, id: &str) -> Result<Dataset, ApiError> {
    if !safe_id(id) || !has_file(&state.datasets_dir().join(id), DATASET_FILE) {
        return Err(ApiError::not_found("dataset", id));
    }
    Ok(Dataset::load(&state.datasets_dir().join(id))?)
}

fn page_param(q: &HashMap<String, String>, name: &str, default: usize) -> Result<usize, ApiError> {
    match q.get(name) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::bad_request(format!("`{name}` must be a non-negative integer"))),
    }
}

async fn dataset_rows(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let table_name = q.get("table").cloned().unwrap_or_else(|| "reviews".into());
    let offset = page_param(&q, "offset", 0)?;
    let limit = page_param(&q, "limit", 100)?;
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("`limit` must be between 1 and {MAX_PAGE}")));
    }
    blocking(move || {
        let ds = load_dataset(&state, &id)?;
        let table = ds
            .table_by_name(&table_name)
            .ok_or_else(|| ApiError::bad_request(format!("dataset has no `{table_name}` table")))?;
        let rows: Vec<Vec<Value>> = table
            .rows
            .iter()
            .skip(offset)
            .take(limit)
            .map(|r| r.iter().map(|v| v.to_json()).collect())
            .collect();
        ok(json!({
            "table": table_name,
            "columns": table.columns,
            "rows": rows,
            "offset": offset,
            "limit": limit,
            "total": table.rows.len(),
        }))
    })
    .await
}

// ---------------------------------------------------------------- analyses

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisRequest {
    dataset_id: String,
    spec: Option<Value>,
    intent: Option<String>,
    notes: Option<String>,
}

async fn analyses(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let req: AnalysisRequest = parse_body(&body)?;
    if req.spec.is_some() && req.intent.is_some() {
        return Err(ApiError::bad_request("give at most one of `spec` or `intent`"));
    }
    let provider = match req.intent {
        Some(_) => Some(provider(&state)?),
        None => None,
    };
    blocking(move || {
        let ds = load_dataset(&state, &req.dataset_id)?;
        let (spec, transcript) = match (req.spec, req.intent, provider) {
            (Some(doc), _, _) => {
                let spec: AnalysisSpec = serde_json::from_value(doc)
                    .map_err(|e| ApiError::bad_request(format!("analysis spec: {e}")))?;
                (spec, None)
            }
            (None, Some(intent), Some(provider)) => {
                let opts = loop_options(&state, req.notes);
                let (spec, t) = orchestrator::generate_analysis_spec(&intent, &ds.schema(), provider.as_ref(), &opts)?;
                (spec, Some(json!(t)))
            }
            _ => return ok(json!({"kind": "summary", "summary": analysis::summarize(&ds)})),
        };
        let result = analysis::run_spec(&ds, &spec)?;
        let mut body = json!({
            "kind": "analysis",
            "spec": spec,
            "result": result,
            "chart_data": result.chart_data(),
        });
        if let Some(t) = transcript {
            body["transcript"] = t;
        }
        ok(body)
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScreenRequest {
    dataset_id: String,
    patterns: Option<Vec<String>>,
    intent: Option<String>,
}

async fn keyword_screen(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let req: ScreenRequest = parse_body(&body)?;
    let provider = match (&req.patterns, &req.intent) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(ApiError::bad_request("give exactly one of `patterns` or `intent`"))
        }
        (None, Some(_)) => Some(provider(&state)?),
        _ => None,
    };
    blocking(move || {
        let ds = load_dataset(&state, &req.dataset_id)?;
        let patterns = match (req.patterns, req.intent, provider) {
            (Some(p), _, _) => p,
            (None, Some(intent), Some(provider)) => {
                let secrets: Vec<&str> = state.token().into_iter().collect();
                orchestrator::generate_patterns(&intent, provider.as_ref(), &secrets)?
            }
            _ => unreachable!("checked above"),
        };
        let hits = analysis::keyword_screen(&ds, &patterns)?;
        ok(json!({"patterns": patterns, "hits": hits}))
    })
    .await
}
