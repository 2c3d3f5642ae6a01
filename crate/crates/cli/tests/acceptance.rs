//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if
//! any fails. Fixture servers and the mock provider only; no network.

#[macro_use]
#[path = "acceptance/support.rs"]
mod support;
#[path = "acceptance/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use revmine::adapters::{self, ReviewRecord, Variant};
use revmine::analysis::{self, AggFunction, Aggregation, AnalysisResult, AnalysisSpec, GroupBy, OutputKind, RowFilter, RowOp};
use revmine::archive;
use revmine::catalog::{Granularity, MetricCategory};
use revmine::collector::{self, CollectorError, RunManifest, RunStatus};
use revmine::dataset::{self, Dataset, Value};
use revmine::orchestrator::{self, LoopOptions, MockProvider, OrchestratorError, PromptEnvelope, Provider, ProviderError};
use revmine::plan::{self, CollectionPlan, EntityKind, FilterSet, MetricSelection, Provenance, ReviewState, TimeWindow};
use revmine::platform_access::{self, PartialPlatformConfig};
use revmine::time::{self, Bucketing};
use revmine::{catalog, PlatformKind};
use revmine_fixtures::corpus::{github, gitlab};
use revmine_fixtures::{ForgeServer, Platform, SynthConfig};
use serde_json::{json, Value as Json};
use support::*;

// Pinned budgets and sizes.
const C1_PLANS: usize = 100;
const C1_BUDGET: Duration = Duration::from_secs(5);
const C2_MAX_REFINEMENTS: [u32; 5] = [0, 1, 2, 3, 5];
const C3_REVIEWS: usize = 250;
const C3_PARALLELISM: usize = 4;
const C3_BUDGET: Duration = Duration::from_secs(60);
const C3_RETRY_AFTER: Duration = Duration::from_secs(2);
const C6_ARCHIVES: u64 = 20;
const C6_MAX_REVIEWS: usize = 50;
const C6_FILTER_PAIRS: usize = 200;
const C9_BUDGET: Duration = Duration::from_secs(90);

type Outcome = Result<String, String>;

fn main() {
    let logs = capture_logs();
    let criteria: [(u32, &str, &dyn Fn() -> Outcome); 10] = [
        (1, "plan round-trip and determinism", &c1_plan_round_trip),
        (2, "query orchestration", &c2_orchestration),
        (3, "collection completeness and robustness", &c3_collection),
        (4, "crash/resume equivalence", &c4_resume),
        (5, "normalization conformance", &c5_normalization),
        (6, "dataset oracle equivalence", &c6_dataset_oracle),
        (7, "CSV dialect", &c7_csv),
        (8, "analysis conservation and conventions", &c8_analysis),
        (9, "service contract", &c9_service),
        (10, "secret hygiene", &|| c10_secrets(&logs.contents())),
    ];
    println!("\nrevmine acceptance ({} criteria)", criteria.len());
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {n:>2}  {name}: {detail} [{secs:.2}s]"),
            Err(why) => {
                println!("FAIL  {n:>2}  {name}: {why} [{secs:.2}s]");
                failed.push(n);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed\n");
    } else {
        println!("acceptance: failed {failed:?}\n");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn word(rng: &mut StdRng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'q', 'z', 'é', '"', ',', ' ', '-', '7', '\\', 'ß'];
    (0..rng.random_range(1..10)).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn random_ts(rng: &mut StdRng) -> chrono::DateTime<Utc> {
    Utc.timestamp_opt(rng.random_range(1_400_000_000..1_720_000_000), 0).unwrap()
}

fn random_plan(rng: &mut StdRng, i: usize) -> CollectionPlan {
    let ids: Vec<&str> = catalog().descriptors().iter().map(|m| m.metric_id).collect();
    let mut metrics = Vec::new();
    for _ in 0..rng.random_range(0..7) {
        metrics.push(if rng.random_bool(0.3) {
            MetricSelection::category(MetricCategory::ALL[rng.random_range(0..MetricCategory::ALL.len())])
        } else {
            MetricSelection::metric(ids[rng.random_range(0..ids.len())])
        });
    }
    let mut entities: BTreeSet<EntityKind> =
        [EntityKind::Commits, EntityKind::Comments, EntityKind::Files].into_iter().filter(|_| rng.random_bool(0.5)).collect();
    entities.insert(EntityKind::Reviews);
    let maybe = |rng: &mut StdRng| rng.random_bool(0.5);
    let filters = FilterSet {
        time_window: maybe(rng).then(|| {
            let start = random_ts(rng);
            TimeWindow { start, end: start + chrono::Duration::seconds(rng.random_range(0..200_000_000)) }
        }),
        states: maybe(rng).then(|| {
            [ReviewState::Open, ReviewState::Merged, ReviewState::Closed].into_iter().filter(|_| rng.random_bool(0.5)).collect()
        }),
        min_comments: maybe(rng).then(|| rng.random_range(0..30)),
        authors: maybe(rng).then(|| (0..rng.random_range(0..4)).map(|_| word(rng)).collect()),
        file_extensions: maybe(rng).then(|| (0..rng.random_range(0..4)).map(|_| format!(".{}", ["java", "RS", "py", "tsx"][rng.random_range(0..4)])).collect()),
        keywords: maybe(rng).then(|| (0..rng.random_range(0..4)).map(|_| word(rng)).collect()),
    };
    let mut p = CollectionPlan {
        plan_id: format!("plan-{i}-{}", rng.random::<u32>()),
        platform: if rng.random_bool(0.5) { PlatformKind::Github } else { PlatformKind::Gitlab },
        entities,
        filters,
        metrics,
        provenance: if rng.random_bool(0.5) {
            Provenance::Manual
        } else {
            Provenance::Llm { query: word(rng), provider_label: "mock".into() }
        },
        created_at: random_ts(rng),
        schema_version: plan::SCHEMA_VERSION,
    };
    p.entities.extend(plan::required_entities(&p));
    p
}

fn c1_plan_round_trip() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xC1);
    let started = Instant::now();
    let (mut accepted, mut skipped) = (0, 0);
    while accepted < C1_PLANS {
        let p = random_plan(&mut rng, accepted);
        if !plan::validate_plan(&p, &catalog()).valid {
            skipped += 1;
            ensure!(skipped < 10 * C1_PLANS, "generator produces too many invalid plans");
            continue;
        }
        let text = plan::serialize_plan(&p);
        let back = plan::parse_plan(&text).map_err(|e| format!("{}: {e}", p.plan_id))?;
        ensure!(back == p, "{} changed across serialize/parse", p.plan_id);
        ensure!(plan::serialize_plan(&back) == text, "{} re-serializes differently", p.plan_id);
        ensure!(plan::serialize_plan(&p) == text, "{} serializes nondeterministically", p.plan_id);
        accepted += 1;
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < C1_BUDGET, "took {elapsed:?}, budget {C1_BUDGET:?}");
    Ok(format!("{accepted} plans round-trip byte-identically in {:.3}s (< {}s)", elapsed.as_secs_f64(), C1_BUDGET.as_secs()))
}

// ---------------------------------------------------------------- 2

struct AlwaysInvalid(AtomicU32);

impl Provider for AlwaysInvalid {
    fn label(&self) -> String {
        "always-invalid".into()
    }

    fn complete(&self, _: &PromptEnvelope) -> Result<String, ProviderError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Ok(r#"{"entities": ["reviews"], "metrics": [{"metric_id": "not_a_metric"}]}"#.into())
    }
}

fn c2_orchestration() -> Outcome {
    let srv = server(Platform::Gitlab, SynthConfig::new(2, 5), 0);
    let manifest = platform_access::verify_access(&config_for(&srv, Platform::Gitlab), &client()).map_err(|e| e.to_string())?;
    let mock = MockProvider::load(&mock_llm()).map_err(|e| e.to_string())?;
    let opts = LoopOptions { secrets: vec![TOKEN], ..LoopOptions::default() };
    let (p, transcript) = orchestrator::generate_plan(QUERY, &mock, &manifest, &catalog(), &opts).map_err(|e| e.to_string())?;

    let entities: BTreeSet<EntityKind> = [EntityKind::Reviews, EntityKind::Commits, EntityKind::Comments].into();
    ensure!(p.entities == entities, "entities {:?}", p.entities);
    let window = TimeWindow {
        start: Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
        end: Utc.with_ymd_and_hms(2023, 12, 31, 23, 59, 59).unwrap(),
    };
    ensure!(p.filters.time_window == Some(window), "time window {:?}", p.filters.time_window);
    ensure!(p.filters.min_comments == Some(1), "min_comments {:?}", p.filters.min_comments);
    let expanded = plan::expand_all(&p.metrics, &catalog()).map_err(|e| e.to_string())?;
    let commits: Vec<String> = catalog().members(MetricCategory::Commits).map(|m| m.metric_id.to_owned()).collect();
    ensure!(commits.len() == 6 && expanded == commits, "metrics {expanded:?}");
    ensure!(plan::validate_plan(&p, &catalog()).valid, "generated plan does not validate");
    ensure!(transcript.rounds.len() == 1, "{} rounds for a well-formed completion", transcript.rounds.len());

    // The command line gives the same plan.
    let out = scratch("c2").join("plan.json");
    let o = cli(&["plan", "new", "--query", QUERY, "--mock-llm", p_(&mock_llm()), "--out", p_(&out)], &cli_env(&srv, "gitlab"));
    ensure!(o.status.code() == Some(0), "revmine plan new exited {:?}", o.status.code());
    let mut from_cli = plan::parse_plan(&fs::read_to_string(&out).unwrap()).map_err(|e| e.to_string())?;
    from_cli.created_at = p.created_at;
    ensure!(from_cli == p, "CLI plan differs from the library plan");

    for max in C2_MAX_REFINEMENTS {
        let provider = AlwaysInvalid(AtomicU32::new(0));
        let opts = LoopOptions { max_refinements: max, ..LoopOptions::default() };
        match orchestrator::generate_plan(QUERY, &provider, &manifest, &catalog(), &opts) {
            Err(OrchestratorError::RefinementExhausted { rounds, .. }) => {
                ensure!(rounds.len() == 1 + max as usize, "max {max}: {} rounds", rounds.len());
            }
            other => return Err(format!("max {max}: expected exhaustion, got {:?}", other.map(|_| ()))),
        }
        let calls = provider.0.load(Ordering::SeqCst);
        ensure!(calls == 1 + max, "max {max}: {calls} provider calls");
    }
    Ok(format!(
        "6 commit metrics, 2023 window, min_comments=1; always-invalid provider stops after 1+max rounds for max in {C2_MAX_REFINEMENTS:?}"
    ))
}

fn p_(path: &Path) -> &str {
    p(path)
}

// ---------------------------------------------------------------- 3

fn commits_plan(kind: PlatformKind) -> CollectionPlan {
    CollectionPlan {
        plan_id: "acceptance-commits".into(),
        platform: kind,
        entities: [EntityKind::Reviews, EntityKind::Commits].into(),
        filters: FilterSet::default(),
        metrics: vec![MetricSelection::metric("commit_count")],
        provenance: Provenance::Manual,
        created_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        schema_version: plan::SCHEMA_VERSION,
    }
}

fn count_files(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

fn c3_collection() -> Outcome {
    let root = scratch("c3");
    let srv = server(Platform::Github, SynthConfig::new(11, C3_REVIEWS), 3);
    let cfg = config_for(&srv, Platform::Github);
    let (mut opts, _) = virtual_opts(C3_PARALLELISM);
    opts.run_id = Some("clean".into());
    let started = Instant::now();
    let m = collector::execute_run(&commits_plan(PlatformKind::Github), &cfg, &root, &client(), &opts).map_err(|e| e.to_string())?;
    let clean_time = started.elapsed();
    let run = root.join("clean");
    ensure!(m.status == RunStatus::Completed, "status {}", m.status.as_str());
    let (pages, fanout) = (count_files(&run.join("raw/reviews")), count_files(&run.join("raw/commits")));
    ensure!(pages == 3 && fanout == C3_REVIEWS, "{pages} list pages, {fanout} fan-out files");
    let in_flight = srv.max_in_flight();
    ensure!(in_flight <= C3_PARALLELISM, "{in_flight} requests in flight, limit {C3_PARALLELISM}");
    ensure!(clean_time < C3_BUDGET, "took {clean_time:?}");

    let srv = server(Platform::Github, SynthConfig::new(11, C3_REVIEWS), 0);
    srv.fail("/pulls", Some(2), 500, Some(1));
    srv.throttle_once("/pulls/7/commits", None, C3_RETRY_AFTER.as_secs());
    let (mut opts, clock) = virtual_opts(C3_PARALLELISM);
    opts.run_id = Some("faulted".into());
    let started = Instant::now();
    let m = collector::execute_run(&commits_plan(PlatformKind::Github), &config_for(&srv, Platform::Github), &root, &client(), &opts)
        .map_err(|e| e.to_string())?;
    let faulted_time = started.elapsed();
    let run = root.join("faulted");
    ensure!(m.status == RunStatus::Completed, "faulted run status {}", m.status.as_str());
    ensure!(m.counters.retries == 2 && m.error_log.len() == 2, "retries {} error_log {}", m.counters.retries, m.error_log.len());
    let log = fs::read_to_string(run.join(archive::LOG_FILE)).map_err(|e| e.to_string())?;
    let warned: Vec<Json> = log.lines().filter_map(|l| serde_json::from_str::<Json>(l).ok()).filter(|v| v["level"] == "warn").collect();
    let logged = |s: &str| warned.iter().any(|v| v["status"].to_string().contains(s));
    ensure!(logged("500") && logged("429"), "retries missing from log.ndjson");
    let waited = clock.sleeps().into_iter().max().unwrap_or_default();
    ensure!(waited >= C3_RETRY_AFTER, "longest wait {waited:?}, Retry-After {C3_RETRY_AFTER:?}");
    let (pages, fanout) = (count_files(&run.join("raw/reviews")), count_files(&run.join("raw/commits")));
    ensure!(pages == 3 && fanout == C3_REVIEWS, "faulted run: {pages} pages, {fanout} fan-out files");
    ensure!(srv.max_in_flight() <= C3_PARALLELISM, "faulted run exceeded parallelism");
    ensure!(faulted_time < C3_BUDGET, "faulted run took {faulted_time:?}");
    Ok(format!(
        "3 pages + {C3_REVIEWS} fan-out files; in flight {in_flight} <= {C3_PARALLELISM}; 500 and 429 retried and logged, virtual wait {:.1}s >= {}s; {:.2}s/{:.2}s < {}s",
        waited.as_secs_f64(),
        C3_RETRY_AFTER.as_secs(),
        clean_time.as_secs_f64(),
        faulted_time.as_secs_f64(),
        C3_BUDGET.as_secs()
    ))
}

// ---------------------------------------------------------------- 4

/// Relative path to bytes for `plan.json` and everything under `raw/`.
fn archive_files(run_dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let raw = run_dir.join(archive::RAW_DIR);
    let mut out: BTreeMap<String, Vec<u8>> = archive::walk_files(&raw)
        .into_iter()
        .map(|rel| (rel.to_string_lossy().into_owned(), fs::read(raw.join(&rel)).unwrap()))
        .collect();
    out.insert(archive::PLAN_FILE.into(), fs::read(run_dir.join(archive::PLAN_FILE)).unwrap());
    out
}

fn first_difference(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> String {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.into_iter().find(|k| a.get(*k) != b.get(*k)).cloned().unwrap_or_default()
}

fn c4_resume() -> Outcome {
    let root = scratch("c4");
    let srv = server(Platform::Github, SynthConfig::new(4, 120), 0);
    let cfg = config_for(&srv, Platform::Github);
    let mut run_plan = commits_plan(PlatformKind::Github);
    run_plan.entities.insert(EntityKind::Comments);
    run_plan.metrics.push(MetricSelection::metric("comment_count"));
    let (mut opts, _) = virtual_opts(4);
    opts.run_id = Some("reference".into());
    let m = collector::execute_run(&run_plan, &cfg, &root, &client(), &opts).map_err(|e| e.to_string())?;
    let reference = archive_files(&root.join("reference"));
    let checkpoints = m.checkpoints.list.pages_completed as usize + m.checkpoints.fanout.values().map(|c| c.completed.len()).sum::<usize>();

    let mut rng = StdRng::seed_from_u64(0xC4);
    let mut halts: Vec<usize> = vec![1, 2, 3, checkpoints - 1];
    halts.extend((0..6).map(|_| rng.random_range(1..checkpoints)));
    for k in &halts {
        let id = format!("halt-{k}");
        opts.run_id = Some(id.clone());
        opts.halt_after_checkpoints = Some(*k);
        match collector::execute_run(&run_plan, &cfg, &root, &client(), &opts) {
            Err(CollectorError::Interrupted(_)) => {}
            other => return Err(format!("halt after {k}: {:?}", other.map(|m| m.status))),
        }
        opts.halt_after_checkpoints = None;
        let m = collector::resume_run(&id, &root, &cfg, &client(), &opts).map_err(|e| e.to_string())?;
        ensure!(m.status == RunStatus::Completed, "halt after {k}: resumed to {}", m.status.as_str());
        let got = archive_files(&root.join(&id));
        ensure!(got == reference, "halt after {k}: {} differs", first_difference(&got, &reference));
    }

    // A real SIGKILL of the command-line collector.
    let slow = server(Platform::Github, SynthConfig::new(4, 120), 15);
    let env = cli_env(&slow, "github");
    let plan_file = root.join("plan.json");
    fs::write(&plan_file, plan::serialize_plan(&run_plan)).unwrap();
    let archive_dir = root.join("killed");
    let mut child = cli_command(&["collect", "--plan", p(&plan_file), "--archive", p(&archive_dir), "--parallel", "2"], &env)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let run_dir = loop {
        let found = fs::read_dir(&archive_dir).ok().and_then(|mut d| d.next()).map(|e| e.unwrap().path());
        if let Some(dir) = found.filter(|d| count_files(&d.join("raw/commits")) >= 40) {
            break dir;
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err("collector made no progress".into());
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let at_kill = count_files(&run_dir.join("raw/commits"));
    child.kill().unwrap();
    child.wait().unwrap();
    let killed = RunManifest::load(&run_dir).map_err(|e| e.to_string())?;
    ensure!(killed.status == RunStatus::Running, "killed run shows {}", killed.status.as_str());
    let o = cli(&["collect", "--archive", p(&archive_dir), "--resume", &killed.run_id], &env);
    ensure!(o.status.code() == Some(0), "resume exited {:?}", o.status.code());
    let got = archive_files(&run_dir);
    ensure!(got == reference, "killed+resumed run: {} differs", first_difference(&got, &reference));
    Ok(format!(
        "{} files identical after halts at checkpoints {halts:?} and after SIGKILL at {} fan-out files",
        reference.len(),
        at_kill
    ))
}

// ---------------------------------------------------------------- 5

fn docs(text: &str) -> Result<Vec<Json>, String> {
    serde_json::from_str::<Json>(text)
        .map_err(|e| e.to_string())?
        .as_array()
        .cloned()
        .ok_or_else(|| "fixture is not an array".into())
}

fn assemble(k: PlatformKind, review: &Json, children: &[(&str, Variant)], commits: &str, files: &str) -> Result<ReviewRecord, String> {
    let e = |e: adapters::NormalizationError| -> String { e.to_string() };
    let mut r = adapters::normalize_review(k, review, None).map_err(e)?;
    for (text, variant) in children {
        for c in docs(text)? {
            r.comments.extend(adapters::normalize_comment(k, *variant, &c).map_err(e)?);
        }
    }
    r.commits = docs(commits)?.iter().map(|c| adapters::normalize_commit(k, c)).collect::<Result<_, _>>().map_err(e)?;
    r.files = docs(files)?.iter().map(|f| adapters::normalize_file(k, f)).collect::<Result<_, _>>().map_err(e)?;
    r.sort_children();
    Ok(r)
}

fn c5_normalization() -> Outcome {
    let mut listed = 0;
    for (k, list) in [(PlatformKind::Github, github::PULLS), (PlatformKind::Gitlab, gitlab::MERGE_REQUESTS)] {
        for item in docs(list)? {
            adapters::normalize_review(k, &item, None).map_err(|e| format!("{k}: {e}"))?;
            listed += 1;
        }
    }
    let gh = assemble(
        PlatformKind::Github,
        &docs(github::PULLS)?[0],
        &[(github::PULL_17_COMMENTS, Variant::Primary), (github::ISSUE_17_COMMENTS, Variant::General)],
        github::PULL_17_COMMITS,
        github::PULL_17_FILES,
    )?;
    let mut gl = assemble(
        PlatformKind::Gitlab,
        &docs(gitlab::MERGE_REQUESTS)?[0],
        &[(gitlab::MR_17_NOTES, Variant::Primary)],
        gitlab::MR_17_COMMITS,
        gitlab::MR_17_DIFFS,
    )?;
    ensure!(gh.platform == PlatformKind::Github && gl.platform == PlatformKind::Gitlab, "platform fields");
    gl.platform = gh.platform;
    gl.review_id = gh.review_id.clone();
    ensure!(gh == gl, "paired reviews differ beyond platform/id");

    // Synthetic archives of both platforms load without warnings.
    let mut synthetic = 0;
    for platform in [Platform::Github, Platform::Gitlab] {
        let run = collect_all(platform, SynthConfig::new(55, 40), &format!("c5-{}", kind_of(platform)))?;
        let loaded = dataset::load_archive(&run, revmine::Execution::default()).map_err(|e| e.to_string())?;
        ensure!(loaded.warnings.is_empty(), "{platform:?} archive: {:?}", loaded.warnings.first());
        synthetic += loaded.records.len();
    }
    Ok(format!(
        "{listed} recorded listing items and the paired review normalize; GitHub/GitLab pair equal modulo platform/id; {synthetic} synthetic reviews load cleanly"
    ))
}

// ---------------------------------------------------------------- 6

/// Collects every entity of a synthetic project into `scratch(name)/run`.
fn collect_all(platform: Platform, synth: SynthConfig, name: &str) -> Result<PathBuf, String> {
    let srv = server(platform, synth, 0);
    let root = scratch(name);
    let (mut opts, _) = virtual_opts(8);
    opts.run_id = Some("run".into());
    let p = CollectionPlan {
        entities: [EntityKind::Reviews, EntityKind::Commits, EntityKind::Comments, EntityKind::Files].into(),
        metrics: vec![],
        ..commits_plan(kind_of(platform))
    };
    let m = collector::execute_run(&p, &config_for(&srv, platform), &root, &client(), &opts).map_err(|e| e.to_string())?;
    ensure!(m.status == RunStatus::Completed, "fixture collection ended {}", m.status.as_str());
    Ok(root.join("run"))
}

fn all_metrics() -> Vec<String> {
    catalog().descriptors().iter().map(|m| m.metric_id.to_owned()).collect()
}

fn review_ids(ds: &Dataset) -> BTreeSet<String> {
    ds.table(Granularity::Review).unwrap().column("review_id").unwrap().map(Value::to_field).collect()
}

fn c6_dataset_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xC6);
    let metrics = all_metrics();
    let (mut builds, mut reviews_checked) = (0, 0);
    for seed in 0..C6_ARCHIVES {
        let platform = if seed % 2 == 0 { Platform::Github } else { Platform::Gitlab };
        let n = rng.random_range(1..=C6_MAX_REVIEWS);
        let run = collect_all(platform, SynthConfig::new(100 + seed, n), &format!("c6/{seed}"))?;
        let all = oracle::reviews(&run, platform == Platform::Github);
        ensure!(all.len() == n, "archive {seed}: oracle sees {} of {n} reviews", all.len());
        let mut filter_sets = vec![FilterSet::default()];
        filter_sets.extend((0..6).map(|_| oracle::random_filters(&mut rng)));
        for f in filter_sets {
            let ds = dataset::build_dataset(&run, &metrics, &f).map_err(|e| e.to_string())?;
            let expected: Vec<_> = all.iter().filter(|r| oracle::keep(r, &f)).cloned().collect();
            oracle::check(&ds, &expected).map_err(|e| format!("archive {seed}, filters {f:?}: {e}"))?;
            builds += 1;
            reviews_checked += expected.len();
        }
    }

    let run = collect_all(Platform::Github, SynthConfig::new(77, C6_MAX_REVIEWS), "c6/monotone")?;
    for i in 0..C6_FILTER_PAIRS {
        let base = oracle::random_filters(&mut rng);
        let tighter = oracle::tighten(&base, &oracle::random_filters(&mut rng));
        let wide = review_ids(&dataset::build_dataset(&run, &["comment_count".into()], &base).map_err(|e| e.to_string())?);
        let narrow = review_ids(&dataset::build_dataset(&run, &["comment_count".into()], &tighter).map_err(|e| e.to_string())?);
        ensure!(narrow.is_subset(&wide), "pair {i}: tightening {base:?} added rows");
    }
    Ok(format!(
        "{C6_ARCHIVES} archives, {builds} builds, {reviews_checked} review rows match the oracle (floats within {:e}); {C6_FILTER_PAIRS} filter pairs monotone",
        oracle::EPS
    ))
}

// ---------------------------------------------------------------- 7

fn c7_csv() -> Outcome {
    let run = collect_all(Platform::Github, SynthConfig::new(21, 50), "c7")?;
    let ds = dataset::build_dataset(&run, &all_metrics(), &FilterSet::default()).map_err(|e| e.to_string())?;
    let out = scratch("c7/dataset");
    dataset::write_dataset(&ds, &out).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    let mut fields = 0;
    for (g, table) in &ds.tables {
        let text = fs::read_to_string(out.join(format!("{}.csv", g.table_name()))).map_err(|e| e.to_string())?;
        let rows = oracle::parse_rfc4180(&text).map_err(|e| format!("{}: {e}", g.table_name()))?;
        let header: Vec<String> = table.columns.iter().map(|c| c.name.clone()).collect();
        ensure!(rows.first() == Some(&header), "{} header", g.table_name());
        ensure!(rows.len() == table.rows.len() + 1, "{} row count", g.table_name());
        for (parsed, row) in rows[1..].iter().zip(&table.rows) {
            let expected: Vec<String> = row.iter().map(Value::to_field).collect();
            ensure!(parsed == &expected, "{} row differs after parsing", g.table_name());
            for (v, f) in row.iter().zip(&expected) {
                fields += 1;
                for (case, hit) in [
                    ("comma", f.contains(',')),
                    ("quote", f.contains('"')),
                    ("newline", f.contains('\n')),
                    ("absent", v.is_absent()),
                    ("empty", matches!(v, Value::Str(s) if s.is_empty())),
                ] {
                    if hit {
                        seen.insert(case);
                    }
                }
            }
        }
    }
    let cases = BTreeSet::from(["comma", "quote", "newline", "absent", "empty"]);
    ensure!(seen == cases, "escaping cases covered: {seen:?}");
    Ok(format!("{} tables, {fields} fields identical through an independent RFC 4180 reader; cases {cases:?} exercised", ds.tables.len()))
}

// ---------------------------------------------------------------- 8

fn spec(granularity: &str, group_by: Option<GroupBy>, aggregations: Vec<Aggregation>, output: OutputKind, filters: Vec<RowFilter>) -> AnalysisSpec {
    AnalysisSpec { spec_version: analysis::SPEC_VERSION, granularity: granularity.into(), filters, group_by, aggregations, output }
}

/// Per-aggregation totals of a result.
fn totals(result: &AnalysisResult) -> Vec<f64> {
    match result {
        AnalysisResult::Timeseries(ts) => ts.series.iter().map(|s| s.values.iter().flatten().sum()).collect(),
        AnalysisResult::Table(t) => {
            let skip = usize::from(t.grouped);
            (skip..t.columns.len()).map(|c| t.rows.iter().filter_map(|r| r[c].as_f64()).sum()).collect()
        }
    }
}

fn c8_analysis() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xC8);
    let mut checked = 0;
    for seed in 0..4u64 {
        let platform = if seed % 2 == 0 { Platform::Github } else { Platform::Gitlab };
        let run = collect_all(platform, SynthConfig::new(300 + seed, 50), &format!("c8/{seed}"))?;
        let ds = dataset::build_dataset(&run, &all_metrics(), &FilterSet::default()).map_err(|e| e.to_string())?;
        let cases: [(&str, &str, Vec<&str>); 3] = [
            ("reviews", "created_at", vec!["*", "comment_count", "commit_count", "files_changed"]),
            ("comments", "comment_created_at", vec!["*", "comment_line"]),
            ("commits", "commit_committed_at", vec!["*"]),
        ];
        for (table, time_col, cols) in cases {
            for _ in 0..6 {
                let aggs: Vec<Aggregation> = cols
                    .iter()
                    .map(|c| Aggregation {
                        function: if *c == "*" { AggFunction::Count } else { AggFunction::Sum },
                        column: (*c).into(),
                    })
                    .collect();
                let filters = if table == "reviews" && rng.random_bool(0.5) {
                    vec![RowFilter { column: "state".into(), op: RowOp::Eq, value: json!(["open", "merged", "closed"][rng.random_range(0..3)]) }]
                } else {
                    vec![]
                };
                let flat = analysis::run_spec(&ds, &spec(table, None, aggs.clone(), OutputKind::Table, filters.clone())).map_err(|e| e.to_string())?;
                let want = totals(&flat);
                let bucketing = if rng.random_bool(0.5) { Bucketing::IsoWeek } else { Bucketing::IsoMonth };
                for output in [OutputKind::Timeseries, OutputKind::Table] {
                    let by = GroupBy { column: time_col.into(), bucketing };
                    let bucketed = analysis::run_spec(&ds, &spec(table, Some(by), aggs.clone(), output, filters.clone())).map_err(|e| e.to_string())?;
                    let got = totals(&bucketed);
                    ensure!(got == want, "{table} {bucketing:?} {output:?}: bucket totals {got:?} vs {want:?}");
                    checked += 1;
                }
            }
        }
    }

    let hand: [(&[f64], f64, f64); 6] = [
        (&[5.0], 5.0, 5.0),
        (&[9.0, 1.0, 5.0], 5.0, 9.0),
        (&[4.0, 1.0, 3.0, 2.0], 2.5, 4.0),
        (&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0], 5.5, 9.0),
        (&[11.0, 10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 6.0, 10.0),
        (&[12.0, 1.5, 30.0, 4.0, 8.0, 2.0], 6.0, 30.0),
    ];
    for (values, median, p90) in hand {
        ensure!(analysis::median(values) == Some(median), "median of {values:?}");
        ensure!(analysis::percentile_nearest_rank(values, 90.0) == Some(p90), "p90 of {values:?}");
    }
    ensure!(analysis::median(&[]).is_none() && analysis::percentile_nearest_rank(&[], 90.0).is_none(), "empty sets");

    let mut boundary_days = 0;
    for year in 1990..=2040 {
        let days = (20..=31).map(|d| (year, 12, d)).chain((1..=10).map(|d| (year + 1, 1, d)));
        for (y, m, d) in days {
            let ts = Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap();
            let label = time::bucket_label(&ts, Bucketing::IsoWeek).unwrap_or_default();
            let want = oracle::iso_week(y.into(), m.into(), d.into());
            ensure!(label == want, "{y}-{m:02}-{d:02}: {label} vs calendar oracle {want}");
            boundary_days += 1;
        }
    }
    for ((y, m, d), label) in [((2021, 1, 3), "2020-W53"), ((2023, 1, 1), "2022-W52"), ((2027, 1, 1), "2026-W53"), ((2024, 12, 30), "2025-W01")] {
        ensure!(oracle::iso_week(y, m, d) == label, "oracle self-check {y}-{m}-{d}");
    }
    Ok(format!(
        "{checked} bucketed results conserve totals; median/p90 on {} hand sets; {boundary_days} year-boundary dates match the calendar oracle",
        hand.len()
    ))
}

// ---------------------------------------------------------------- 9

struct Api {
    client: reqwest::blocking::Client,
    base: String,
}

impl Api {
    fn send(&self, what: &str, req: reqwest::blocking::RequestBuilder) -> (u16, Json) {
        let resp = req.send().unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().unwrap();
        record(format!("HTTP {what}"), text.clone());
        (status, serde_json::from_str(&text).unwrap_or(Json::Null))
    }

    fn get(&self, path: &str) -> (u16, Json) {
        self.send(&format!("GET {path}"), self.client.get(format!("{}{path}", self.base)))
    }

    fn post(&self, path: &str, body: Json) -> (u16, Json) {
        self.send(&format!("POST {path}"), self.client.post(format!("{}{path}", self.base)).json(&body))
    }

    fn wait(&self, path: &str) -> Result<Json, String> {
        let deadline = Instant::now() + C9_BUDGET;
        loop {
            let (status, body) = self.get(path);
            ensure!(status == 200, "GET {path}: {status} {body}");
            if !matches!(body["job"]["state"].as_str(), Some("queued" | "running")) {
                return Ok(body);
            }
            ensure!(Instant::now() < deadline, "{path} never finished");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

fn strip(mut v: Json, keys: &[&str]) -> Json {
    if let Some(o) = v.as_object_mut() {
        for k in keys {
            o.remove(*k);
        }
    }
    v
}

fn service(root: &Path, srv: &ForgeServer) -> revmine_service::ServiceHandle {
    let mut config = revmine_service::ServiceConfig::new(root);
    config.platform = PartialPlatformConfig {
        kind: Some("gitlab".into()),
        base_url: Some(srv.base_url().into()),
        token: Some(srv.token()),
        project: Some(srv.project().into()),
        api_version: None,
    };
    config.provider = Some(std::sync::Arc::new(MockProvider::load(&mock_llm()).unwrap()));
    config.collect.parallelism = 8;
    config.http_timeout = Duration::from_secs(10);
    revmine_service::spawn(config, "127.0.0.1:0").unwrap()
}

fn c9_service() -> Outcome {
    let root = scratch("c9");
    let srv = server(Platform::Gitlab, SynthConfig::new(9, 120).with_comments(70), 0);
    let started = Instant::now();
    let handle = service(&root, &srv);
    let api = Api { client: reqwest::blocking::Client::new(), base: handle.base_url() };
    let mut golden = 0;
    let volatile = ["checked_at", "rate_limit_snapshot"];

    let (s, body) = api.post("/platform/verify", json!({"kind": "gitlab", "project": srv.project(), "base_url": srv.base_url()}));
    ensure!(s == 200, "verify: {s} {body}");
    let manifest = platform_access::verify_access(&config_for(&srv, Platform::Gitlab), &client()).map_err(|e| e.to_string())?;
    ensure!(strip(body, &volatile) == strip(json!(manifest), &volatile), "verify body differs from the capability manifest");
    golden += 1;

    let (s, body) = api.post("/plans", json!({ "query": QUERY }));
    ensure!(s == 200, "plans: {s} {body}");
    let (expected, _) = orchestrator::generate_plan(QUERY, &MockProvider::load(&mock_llm()).unwrap(), &manifest, &catalog(), &LoopOptions::default())
        .map_err(|e| e.to_string())?;
    let expected_doc: Json = serde_json::from_str(&plan::serialize_plan(&expected)).unwrap();
    ensure!(strip(body["plan"].clone(), &["created_at"]) == strip(expected_doc, &["created_at"]), "plan body differs");
    ensure!(body["validation"] == json!(plan::validate_plan(&expected, &catalog())), "validation body differs");
    golden += 1;

    let plan_doc = body["plan"].clone();
    let (s, body) = api.post("/runs", json!({ "plan": plan_doc }));
    ensure!(s == 202, "runs: {s} {body}");
    let run_id = body["job"]["job_id"].as_str().unwrap_or_default().to_owned();
    let run = api.wait(&format!("/runs/{run_id}"))?;
    ensure!(run["job"]["state"] == "done", "run ended {}", run["job"]);
    let on_disk = RunManifest::load(&root.join("runs").join(&run_id)).map_err(|e| e.to_string())?;
    ensure!(run["manifest"] == json!(on_disk), "run body differs from the manifest");
    golden += 1;

    let (s, body) = api.post("/datasets", json!({ "run_id": run_id, "filters": plan_doc["filters"] }));
    ensure!(s == 202, "datasets: {s} {body}");
    let ds_id = body["job"]["job_id"].as_str().unwrap_or_default().to_owned();
    let built = api.wait(&format!("/datasets/{ds_id}"))?;
    let ds = Dataset::load(&root.join("datasets").join(&ds_id)).map_err(|e| e.to_string())?;
    ensure!(built["metadata"] == json!(ds.meta), "dataset metadata differs");
    let reviews = ds.table_by_name("reviews").ok_or("no reviews table")?;
    let expected_rows = oracle::reviews(&root.join("runs").join(&run_id), false).iter().filter(|r| oracle::keep(r, &expected.filters)).count();
    ensure!(reviews.rows.len() == expected_rows, "{} reviews survive the query filters, oracle says {expected_rows}", reviews.rows.len());
    golden += 1;

    let rows_json = |rows: &[Vec<Value>]| -> Json { rows.iter().map(|r| r.iter().map(Value::to_json).collect::<Vec<_>>()).collect() };
    let (s, page) = api.get(&format!("/datasets/{ds_id}/rows?table=reviews&offset=10&limit=25"));
    ensure!(s == 200, "rows: {s}");
    let want_rows = rows_json(&reviews.rows[10..35]);
    ensure!(page["total"] == reviews.rows.len(), "rows total {}", page["total"]);
    ensure!(page["rows"] == want_rows, "rows page differs: {} vs {}", page["rows"][0], want_rows[0]);
    golden += 1;

    // A wider dataset over the same run for the analysis endpoints.
    let wide: Vec<&str> = [MetricCategory::ReviewMeta, MetricCategory::Comments, MetricCategory::Commits]
        .into_iter()
        .flat_map(|c| catalog().members(c).map(|m| m.metric_id).collect::<Vec<_>>())
        .collect();
    let (s, body) = api.post("/datasets", json!({ "run_id": run_id, "filters": plan_doc["filters"], "metrics": wide }));
    ensure!(s == 202, "wide dataset: {s} {body}");
    let wide_id = body["job"]["job_id"].as_str().unwrap_or_default().to_owned();
    let built = api.wait(&format!("/datasets/{wide_id}"))?;
    let wide_ds = Dataset::load(&root.join("datasets").join(&wide_id)).map_err(|e| e.to_string())?;
    ensure!(built["metadata"] == json!(wide_ds.meta), "wide dataset metadata differs");
    let (query_ds_id, ds, ds_id) = (ds_id, wide_ds, wide_id);
    let (s, body) = api.post("/analyses", json!({ "dataset_id": ds_id }));
    ensure!(s == 200 && body["summary"] == json!(analysis::summarize(&ds)), "summary differs");
    let a_spec = spec(
        "reviews",
        Some(GroupBy { column: "created_at".into(), bucketing: Bucketing::IsoWeek }),
        vec![Aggregation { function: AggFunction::Count, column: "*".into() }],
        OutputKind::Timeseries,
        vec![],
    );
    let (s, body) = api.post("/analyses", json!({ "dataset_id": ds_id, "spec": a_spec }));
    let result = analysis::run_spec(&ds, &a_spec).map_err(|e| e.to_string())?;
    ensure!(s == 200 && body["result"] == json!(result) && body["chart_data"] == json!(result.chart_data()), "analysis differs");
    let patterns = vec!["lgtm".to_owned(), "nit".to_owned()];
    let (s, body) = api.post("/keyword-screen", json!({ "dataset_id": ds_id, "patterns": patterns }));
    let hits = analysis::keyword_screen(&ds, &patterns).map_err(|e| e.to_string())?;
    ensure!(s == 200 && body["hits"] == json!(hits), "keyword screen differs");
    ensure!(!hits.is_empty(), "keyword screen found nothing to compare");
    golden += 3;
    let pipeline = started.elapsed();
    ensure!(pipeline < C9_BUDGET, "pipeline took {pipeline:?}");

    let (_, runs_before) = api.get("/runs");
    let (_, datasets_before) = api.get("/datasets");
    handle.shutdown();
    let handle = service(&root, &srv);
    let api = Api { client: reqwest::blocking::Client::new(), base: handle.base_url() };
    let (_, runs_after) = api.get("/runs");
    let (_, datasets_after) = api.get("/datasets");
    ensure!(runs_after == runs_before, "run list changed across restart");
    ensure!(datasets_after == datasets_before, "dataset list changed across restart");
    let (_, again) = api.get(&format!("/runs/{run_id}"));
    ensure!(again["manifest"] == run["manifest"], "run lost across restart");
    let (_, page_again) = api.get(&format!("/datasets/{query_ds_id}/rows?table=reviews&offset=10&limit=25"));
    ensure!(page_again == page, "dataset rows changed across restart");
    handle.shutdown();
    Ok(format!(
        "{golden} endpoint bodies equal module output; verify->plan->run->dataset->analysis over HTTP in {:.2}s (< {}s); restart kept 1 run and 2 datasets ({} filtered reviews)",
        pipeline.as_secs_f64(),
        C9_BUDGET.as_secs(),
        reviews.rows.len()
    ))
}

// ---------------------------------------------------------------- 10

fn c10_secrets(logs: &str) -> Outcome {
    let occurrences = |text: &str| text.matches(TOKEN).count();
    ensure!(occurrences(&format!("x{TOKEN}x")) == 1, "scanner self-check");
    let mut hits = Vec::new();
    let mut files = 0;
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for rel in archive::walk_files(root()) {
        let bytes = fs::read(root().join(&rel)).map_err(|e| e.to_string())?;
        files += 1;
        let name = rel.to_string_lossy();
        let kind = if name.contains("/raw/") {
            "raw"
        } else if name.ends_with(archive::MANIFEST_FILE) {
            "manifest"
        } else if name.ends_with(archive::LOG_FILE) {
            "log"
        } else if name.ends_with(".csv") || name.ends_with(dataset::DATASET_FILE) {
            "dataset"
        } else {
            "other"
        };
        *kinds.entry(kind).or_default() += 1;
        if occurrences(&String::from_utf8_lossy(&bytes)) > 0 {
            hits.push(name.into_owned());
        }
    }
    let emitted = emitted();
    for (origin, text) in &emitted {
        if occurrences(text) > 0 {
            hits.push(origin.clone());
        }
    }
    if occurrences(logs) > 0 {
        hits.push("in-process logs".into());
    }
    for kind in ["raw", "manifest", "log", "dataset"] {
        ensure!(kinds.get(kind).copied().unwrap_or(0) > 0, "no {kind} files were produced to scan");
    }
    let http = emitted.iter().filter(|(o, _)| o.starts_with("HTTP")).count();
    ensure!(http > 0 && !logs.is_empty(), "nothing emitted to scan");
    ensure!(hits.is_empty(), "raw token found in {} place(s), first {}", hits.len(), hits[0]);
    Ok(format!(
        "0 occurrences in {files} files {kinds:?}, {http} HTTP bodies, {} CLI streams, {} bytes of logs",
        emitted.len() - http,
        logs.len()
    ))
}
