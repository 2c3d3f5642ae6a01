use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{NaiveDate, TimeZone, Utc};
use revmine::analysis::{self, ExportFormat, ScreenHit};
use revmine::archive::{self, atomic_write};
use revmine::collector::{self, CollectOptions, RunManifest, RunStatus};
use revmine::dataset::{self, BuildOptions, Dataset};
use revmine::http::HttpClient;
use revmine::orchestrator::{self, HttpProvider, LoopOptions, MockProvider, PartialProviderConfig, Provider, ProviderConfig};
use revmine::plan::{self, CollectionPlan, FilterSet, ReviewState, Severity, TimeWindow, ValidationReport};
use revmine::platform_access::{self, ConfigFile, ConfigSources, PartialPlatformConfig};
use revmine::time::{self, Timestamp};
use revmine::{catalog, Execution, PlatformConfig, PlatformKind};
use revmine_service::ServiceConfig;
use serde::Serialize;

use crate::exit::{self, Failure, Outcome};
use crate::{AnalyzeArgs, AnalyzeCommand, CollectArgs, DatasetBuildArgs, PlanNewArgs, ServeArgs, Target, ENV_CONFIG};

const HTTP_TIMEOUT: Duration = Duration::from_secs(30);

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

pub fn render_report(r: &ValidationReport) -> String {
    let mut out = format!("validation: {}\n", if r.valid { "ok" } else { "FAILED" });
    for i in &r.issues {
        let sev = match i.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let path = if i.path.is_empty() { String::new() } else { format!(" at {}", i.path) };
        let _ = writeln!(out, "  {sev} {}{path}: {}", i.code, i.message);
    }
    out
}

// ---------------------------------------------------------------- config

/// Layers from the config file and `REVMINE_*` variables.
struct Settings {
    platform: PartialPlatformConfig,
    llm: PartialProviderConfig,
    env: BTreeMap<String, String>,
}

fn settings(config: Option<&Path>) -> Result<Settings, Failure> {
    let path = config.map(Path::to_owned).or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from));
    let file = match &path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let env = ConfigSources::with_process_env(None, PartialPlatformConfig::default()).env;
    let mut platform = file.platform;
    platform.overlay(&PartialPlatformConfig::from_env(&env));
    Ok(Settings {
        platform,
        llm: file.llm,
        env,
    })
}

impl Settings {
    /// Platform config with command-line overrides; `hint` fills in the
    /// kind when nothing else names one.
    fn platform_config(&self, t: &Target, hint: Option<PlatformKind>) -> Result<PlatformConfig, Failure> {
        let mut merged = self.platform.clone();
        merged.overlay(&PartialPlatformConfig {
            kind: t.platform.clone(),
            base_url: t.base_url.clone(),
            token: None,
            project: t.project.clone(),
            api_version: None,
        });
        if merged.kind.is_none() {
            merged.kind = hint.map(|k| k.as_str().to_owned());
        }
        let config = platform_access::load_config(&ConfigSources {
            file: None,
            env: BTreeMap::new(),
            overrides: merged,
        })?;
        if let Some(k) = hint.filter(|k| *k != config.kind) {
            return Err(Failure::new(
                exit::VALIDATION,
                format!("plan targets {k} but the configured platform is {}", config.kind),
            ));
        }
        Ok(config)
    }

    fn provider_config(&self) -> Result<ProviderConfig, Failure> {
        Ok(ProviderConfig::resolve(&self.llm, &self.env)?)
    }
}

// ---------------------------------------------------------------- auth

pub fn auth_verify(t: &Target, json: bool) -> Outcome {
    let s = settings(t.config.as_deref())?;
    let config = s.platform_config(t, None)?;
    let manifest = platform_access::verify_access(&config, &HttpClient::new(HTTP_TIMEOUT))?;
    if json {
        print_json(&manifest);
    } else {
        print!("{}", manifest.render());
    }
    Ok(if manifest.ready() { exit::OK } else { exit::AUTH })
}

// ---------------------------------------------------------------- plan

pub fn plan_new(a: &PlanNewArgs, json: bool) -> Outcome {
    let (p, transcript) = match (&a.query, &a.from_file) {
        (Some(q), None) => {
            let (p, t) = plan_from_query(a, q)?;
            (p, Some(t))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
            let p = plan::parse_plan(&text)?;
            let report = plan::validate_plan(&p, &catalog());
            if !report.valid {
                return Err(Failure::invalid("plan is not valid", report));
            }
            (plan::normalize_plan(&p)?, None)
        }
        _ => return Err(Failure::usage("give exactly one of --query or --from-file")),
    };
    let report = plan::validate_plan(&p, &catalog());
    let text = plan::serialize_plan(&p);
    if let (Some(path), Some(t)) = (&a.transcript, &transcript) {
        atomic_write(path, serde_json::to_string_pretty(t).expect("json").as_bytes())?;
    }
    match &a.out {
        Some(path) => {
            atomic_write(path, text.as_bytes())?;
            if json {
                print_json(&serde_json::json!({"plan_file": path, "plan": p, "validation": report}));
            } else {
                println!("wrote {}", path.display());
                print!("{}", render_report(&report));
            }
        }
        None if json => print_json(&serde_json::json!({"plan": p, "validation": report})),
        None => {
            println!("{text}");
            eprint!("{}", render_report(&report));
        }
    }
    Ok(exit::OK)
}

fn plan_from_query(
    a: &PlanNewArgs,
    query: &str,
) -> Result<(CollectionPlan, orchestrator::RefinementTranscript<CollectionPlan>), Failure> {
    let s = settings(a.target.config.as_deref())?;
    let (provider, max_refinements, key): (Box<dyn Provider>, u32, Option<String>) = match &a.mock_llm {
        Some(path) => (Box::new(MockProvider::load(path)?), s.llm.max_refinements.unwrap_or(orchestrator::DEFAULT_MAX_REFINEMENTS), None),
        None => {
            let pc = s.provider_config()?;
            let max = pc.max_refinements;
            let key = Some(pc.api_key.expose().to_owned()).filter(|k| !k.is_empty());
            (Box::new(HttpProvider::new(pc)), max, key)
        }
    };
    let config = s.platform_config(&a.target, None)?;
    let manifest = platform_access::verify_access(&config, &HttpClient::new(HTTP_TIMEOUT))?;
    if !manifest.ready() {
        return Err(Failure::new(exit::AUTH, "platform access check failed; run `revmine auth verify` for details"));
    }
    let mut secrets = vec![config.token.expose()];
    secrets.extend(key.as_deref());
    let opts = LoopOptions {
        max_refinements,
        secrets,
        notes: a.notes.clone(),
        ..LoopOptions::default()
    };
    Ok(orchestrator::generate_plan(query, provider.as_ref(), &manifest, &catalog(), &opts)?)
}

// ---------------------------------------------------------------- collect

fn read_plan(path: &Path) -> Result<CollectionPlan, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(plan::parse_plan(&text)?)
}

pub fn collect(a: &CollectArgs, json: bool) -> Outcome {
    let s = settings(a.target.config.as_deref())?;
    let mut opts = CollectOptions::default();
    if let Some(p) = a.parallel {
        if p == 0 {
            return Err(Failure::usage("--parallel must be at least 1"));
        }
        opts.parallelism = p;
    }
    let client = HttpClient::new(HTTP_TIMEOUT);
    let manifest = match &a.resume {
        Some(run_id) => {
            let run_dir = a.archive.join(run_id);
            let existing = RunManifest::load(&run_dir)
                .map_err(|_| Failure::usage(format!("no run `{run_id}` under {}", a.archive.display())))?;
            if let Some(path) = &a.plan {
                let stored = read_plan(&run_dir.join(archive::PLAN_FILE))?;
                let given = plan::normalize_plan(&read_plan(path)?)?;
                if stored != given {
                    return Err(Failure::usage(format!("{} is not the plan of run `{run_id}`", path.display())));
                }
            }
            let config = s.platform_config(&a.target, Some(existing.platform))?;
            if config.project != existing.project {
                return Err(Failure::usage(format!(
                    "run `{run_id}` collected project {} but the configured project is {}",
                    existing.project, config.project
                )));
            }
            collector::resume_run(run_id, &a.archive, &config, &client, &opts)?
        }
        None => {
            let p = read_plan(a.plan.as_deref().expect("clap requires --plan"))?;
            let config = s.platform_config(&a.target, Some(p.platform))?;
            std::fs::create_dir_all(&a.archive).map_err(|e| Failure::runtime(format!("{}: {e}", a.archive.display())))?;
            collector::execute_run(&p, &config, &a.archive, &client, &opts)?
        }
    };
    if json {
        print_json(&manifest);
    } else {
        let c = &manifest.counters;
        println!("run {} {}", manifest.run_id, manifest.status.as_str());
        println!("  dir:      {}", a.archive.join(&manifest.run_id).display());
        println!(
            "  requests: {}  retries: {}  pages: {}  reviews: {}  errors: {}",
            c.requests_issued, c.retries, c.pages_fetched, c.reviews_discovered, c.errors
        );
        if let Some(reason) = &manifest.failure_reason {
            println!("  reason:   {reason}");
        }
    }
    Ok(match manifest.status {
        RunStatus::Completed => exit::OK,
        RunStatus::Partial => exit::PARTIAL,
        _ => exit::RUNTIME,
    })
}

// ---------------------------------------------------------------- dataset

fn parse_bound(raw: &str, end_of_day: bool) -> Result<Timestamp, Failure> {
    if let Some(ts) = time::parse_ts(raw) {
        return Ok(ts);
    }
    let d = NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
        .map_err(|_| Failure::usage(format!("`{raw}` is not a timestamp (RFC 3339 or YYYY-MM-DD)")))?;
    let t = if end_of_day { d.and_hms_opt(23, 59, 59) } else { d.and_hms_opt(0, 0, 0) };
    Ok(Utc.from_utc_datetime(&t.expect("valid time")))
}

/// Flags onto a [`FilterSet`]; empty lists mean "no constraint".
pub fn filters_from(a: &DatasetBuildArgs) -> Result<FilterSet, Failure> {
    let list = |v: &Vec<String>| (!v.is_empty()).then(|| v.clone());
    let time_window = match (&a.since, &a.until) {
        (None, None) => None,
        (since, until) => Some(TimeWindow {
            start: match since {
                Some(s) => parse_bound(s, false)?,
                None => Utc.timestamp_opt(0, 0).unwrap(),
            },
            end: match until {
                Some(u) => parse_bound(u, true)?,
                None => Utc::now(),
            },
        }),
    };
    let states = a
        .states
        .iter()
        .map(|s| ReviewState::parse(s.trim()).ok_or_else(|| Failure::usage(format!("unknown state `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FilterSet {
        time_window,
        states: (!states.is_empty()).then_some(states),
        min_comments: a.min_comments,
        authors: list(&a.authors),
        file_extensions: list(&a.file_extensions),
        keywords: list(&a.keywords),
    })
}

pub fn dataset_build(a: &DatasetBuildArgs, json: bool) -> Outcome {
    let manifest = RunManifest::load(&a.run).map_err(|_| Failure::usage(format!("{} is not a run directory", a.run.display())))?;
    if !matches!(manifest.status, RunStatus::Completed | RunStatus::Partial) {
        return Err(Failure::runtime(format!(
            "run {} is {}; datasets need a completed or partial run",
            manifest.run_id,
            manifest.status.as_str()
        )));
    }
    let filters = filters_from(a)?;
    let report = plan::validate_filters(&filters);
    if !report.valid {
        return Err(Failure::invalid("filters are not valid", report));
    }
    let metrics = match a.metrics.is_empty() {
        false => a.metrics.clone(),
        true => dataset::default_metrics(&read_plan(&a.run.join(archive::PLAN_FILE))?),
    };
    let opts = BuildOptions {
        dataset_id: None,
        execution: if a.sequential { Execution::Sequential } else { Execution::default() },
    };
    let ds = dataset::build_dataset_with(&a.run, &metrics, &filters, &opts)?;
    dataset::write_dataset(&ds, &a.out)?;
    if json {
        print_json(&ds.meta);
    } else {
        println!("dataset {} from run {}", ds.meta.dataset_id, ds.meta.source_run_id);
        for t in &ds.meta.tables {
            println!("  {:<10} {:>7} rows  {}", t.name, t.row_count, a.out.join(&t.file).display());
        }
        if !ds.meta.warnings.is_empty() {
            println!("  {} warning(s), see dataset.json", ds.meta.warnings.len());
        }
    }
    Ok(exit::OK)
}

// ---------------------------------------------------------------- analyze

pub fn hits_csv(hits: &[ScreenHit]) -> Vec<u8> {
    let mut w = dataset::csv_writer(Vec::new());
    w.write_record(["review_id", "comment_id", "pattern", "snippet"]).expect("in-memory write");
    for h in hits {
        w.write_record([&h.review_id, &h.comment_id, &h.pattern, &h.snippet]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub fn analyze(a: &AnalyzeArgs, json: bool) -> Outcome {
    let dir = a.dataset.as_deref().ok_or_else(|| Failure::usage("--dataset is required"))?;
    let format = ExportFormat::parse(&a.format).ok_or_else(|| Failure::usage(format!("unknown format `{}`", a.format)))?;
    let ds = Dataset::load(dir)?;
    let out = a.out.clone().unwrap_or_else(|| dir.join("analysis"));
    std::fs::create_dir_all(&out).map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?;
    match &a.what {
        AnalyzeCommand::Summary => {
            let report = analysis::summarize(&ds);
            let path = out.join("summary.json");
            atomic_write(&path, serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
            if json {
                print_json(&report);
            } else {
                print!("{}", report.render());
                eprintln!("wrote {}", path.display());
            }
        }
        AnalyzeCommand::Spec { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
            let spec = analysis::parse_spec(&text)
                .map_err(|e| Failure::new(exit::VALIDATION, format!("analysis spec: {e}")))?;
            let result = analysis::run_spec(&ds, &spec)?;
            let written = analysis::export_analysis(&result, &out, format)?;
            if json {
                print_json(&serde_json::json!({"spec": spec, "result": result, "chart_data": result.chart_data()}));
            } else {
                print!("{}", String::from_utf8_lossy(&dataset::table_to_csv(&result.to_table())));
                eprintln!("wrote {}", written.display());
            }
        }
        AnalyzeCommand::Screen { patterns } => {
            let hits = analysis::keyword_screen(&ds, patterns)?;
            let path = out.join("hits.csv");
            atomic_write(&path, &hits_csv(&hits))?;
            if json {
                print_json(&serde_json::json!({"patterns": patterns, "hits": hits}));
            } else {
                println!("{} hit(s)", hits.len());
                for h in &hits {
                    println!("  {} {} [{}] {}", h.review_id, h.comment_id, h.pattern, h.snippet);
                }
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(exit::OK)
}

// ---------------------------------------------------------------- serve

pub fn serve(a: &ServeArgs) -> Outcome {
    let s = settings(a.config.as_deref())?;
    let mut config = ServiceConfig::new(&a.root);
    config.platform = s.platform.clone();
    config.max_refinements = s.llm.max_refinements.unwrap_or(orchestrator::DEFAULT_MAX_REFINEMENTS);
    config.http_timeout = HTTP_TIMEOUT;
    config.provider = match &a.mock_llm {
        Some(path) => Some(Arc::new(MockProvider::load(path)?)),
        None => match s.provider_config() {
            Ok(pc) => Some(Arc::new(HttpProvider::new(pc))),
            Err(e) => {
                tracing::info!(reason = %e.message, "no LLM provider; query endpoints will answer 503");
                None
            }
        },
    };
    revmine_service::serve_until_signal(config, &a.addr, |addr| {
        use std::io::Write;
        println!("listening on http://{addr}/api/v1");
        let _ = std::io::stdout().flush();
    })
    .map_err(|e| Failure::runtime(format!("cannot serve on {}: {e}", a.addr)))?;
    Ok(exit::OK)
}
