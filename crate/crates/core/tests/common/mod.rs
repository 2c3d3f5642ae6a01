#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use revmine::collector::{CollectOptions, RetryPolicy};
use revmine::plan::{CollectionPlan, EntityKind, FilterSet, MetricSelection, Provenance};
use revmine::platform_access::SecretString;
use revmine::time::VirtualClock;
use revmine::{PlatformConfig, PlatformKind};
use revmine_fixtures::{ForgeServer, Platform};

pub fn kind_of(p: Platform) -> PlatformKind {
    match p {
        Platform::Github => PlatformKind::Github,
        Platform::Gitlab => PlatformKind::Gitlab,
    }
}

pub fn config_for(srv: &ForgeServer, p: Platform) -> PlatformConfig {
    PlatformConfig {
        kind: kind_of(p),
        base_url: srv.base_url().to_owned(),
        token: SecretString::new(srv.token()),
        project: srv.project().to_owned(),
        api_version: "2022-11-28".into(),
    }
}

pub fn plan(kind: PlatformKind, entities: &[EntityKind], metrics: &[&str], filters: FilterSet) -> CollectionPlan {
    CollectionPlan {
        plan_id: "plan-test".into(),
        platform: kind,
        entities: entities.iter().copied().collect::<BTreeSet<_>>(),
        filters,
        metrics: metrics.iter().map(|m| MetricSelection::metric(*m)).collect(),
        provenance: Provenance::Manual,
        created_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        schema_version: 1,
    }
}

/// Options with a virtual clock so backoff costs no wall time.
pub fn virtual_opts(parallelism: usize) -> (CollectOptions, Arc<VirtualClock>) {
    let clock = Arc::new(VirtualClock::new(Utc::now()));
    let opts = CollectOptions {
        parallelism,
        policy: RetryPolicy {
            base_delay: Duration::from_millis(500),
            ..RetryPolicy::default()
        },
        clock: clock.clone(),
        ..CollectOptions::default()
    };
    (opts, clock)
}
