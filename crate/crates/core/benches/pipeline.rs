//! Parallel vs sequential archive loading and dataset projection.

use std::hint::black_box;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use revmine::collector::{self, CollectOptions};
use revmine::dataset::{self, BuildOptions};
use revmine::http::HttpClient;
use revmine::par::Execution;
use revmine::plan::{CollectionPlan, EntityKind, FilterSet, Provenance};
use revmine::platform_access::SecretString;
use revmine::time::VirtualClock;
use revmine::{catalog, PlatformConfig, PlatformKind};
use revmine_fixtures::{ForgeServer, Platform, SynthConfig, SyntheticProject};

const REVIEWS: usize = 400;

fn archive(root: &Path) -> std::path::PathBuf {
    let srv = ForgeServer::start(Platform::Github, SyntheticProject::generate(&SynthConfig::new(11, REVIEWS)));
    let config = PlatformConfig {
        kind: PlatformKind::Github,
        base_url: srv.base_url().to_owned(),
        token: SecretString::new(srv.token()),
        project: srv.project().to_owned(),
        api_version: "2022-11-28".into(),
    };
    let plan = CollectionPlan {
        plan_id: "plan-bench".into(),
        platform: PlatformKind::Github,
        entities: [EntityKind::Reviews, EntityKind::Commits, EntityKind::Comments, EntityKind::Files].into(),
        filters: FilterSet::default(),
        metrics: vec![],
        provenance: Provenance::Manual,
        created_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        schema_version: 1,
    };
    let opts = CollectOptions {
        parallelism: 8,
        clock: Arc::new(VirtualClock::new(Utc::now())),
        run_id: Some("bench".into()),
        ..CollectOptions::default()
    };
    collector::execute_run(&plan, &config, root, &HttpClient::new(Duration::from_secs(10)), &opts).unwrap();
    root.join("bench")
}

fn bench(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = archive(tmp.path());
    let metrics: Vec<String> = catalog().descriptors().iter().map(|m| m.metric_id.to_owned()).collect();
    let records = dataset::load_archive(&run_dir, Execution::Sequential).unwrap().records;

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(20);
    for exec in [Execution::Parallel, Execution::Sequential] {
        let name = format!("{exec:?}").to_lowercase();
        group.bench_with_input(BenchmarkId::new("load_archive", &name), &exec, |b, &e| {
            b.iter(|| black_box(dataset::load_archive(&run_dir, e).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("project", &name), &exec, |b, &e| {
            b.iter(|| black_box(dataset::project(&records, &metrics, e).unwrap()))
        });
        let opts = BuildOptions {
            dataset_id: Some("ds-bench".into()),
            execution: exec,
        };
        group.bench_with_input(BenchmarkId::new("build_dataset", &name), &opts, |b, o| {
            b.iter(|| black_box(dataset::build_dataset_with(&run_dir, &metrics, &FilterSet::default(), o).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
