//! Local HTTP interface over the pipeline, under `/api/v1`.
//!
//! Handlers only map requests onto library calls. All state lives in the
//! workspace directory: `runs/`, `datasets/` and `service.json` (the last
//! verified target, without its token).

mod error;
mod jobs;
mod routes;

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use revmine::collector::CollectOptions;
use revmine::orchestrator::{Provider, DEFAULT_MAX_REFINEMENTS};
use revmine::platform_access::{self, CapabilityManifest, ConfigSources, PartialPlatformConfig, PlatformConfig};
use serde::{Deserialize, Serialize};
use tokio::runtime::Runtime;
use tokio::sync::oneshot;

pub use error::ApiError;
pub use jobs::{JobHandle, JobKind, JobState, Progress};
use routes::router;

pub const DEFAULT_ADDR: &str = "127.0.0.1:8787";
pub const RUNS_DIR: &str = "runs";
pub const DATASETS_DIR: &str = "datasets";
pub const STATE_FILE: &str = "service.json";
pub const MAX_PAGE: usize = 500;

pub struct ServiceConfig {
    /// Workspace directory.
    pub root: PathBuf,
    /// Platform settings from the config file and environment; the only
    /// place the token is held.
    pub platform: PartialPlatformConfig,
    pub provider: Option<Arc<dyn Provider>>,
    pub max_refinements: u32,
    pub collect: CollectOptions,
    pub http_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            platform: PartialPlatformConfig::default(),
            provider: None,
            max_refinements: DEFAULT_MAX_REFINEMENTS,
            collect: CollectOptions::default(),
            http_timeout: Duration::from_secs(30),
        }
    }
}

/// Platform settings a client may choose. There is deliberately no token
/// field; bodies carrying one are rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_version: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Persisted {
    target: Option<Target>,
    manifest: Option<CapabilityManifest>,
}

pub(crate) struct AppState {
    pub config: ServiceConfig,
    pub jobs: jobs::JobTable,
    busy: Mutex<HashSet<String>>,
    persisted: Mutex<Persisted>,
}

impl AppState {
    fn open(config: ServiceConfig) -> io::Result<Self> {
        std::fs::create_dir_all(config.root.join(RUNS_DIR))?;
        std::fs::create_dir_all(config.root.join(DATASETS_DIR))?;
        let persisted = std::fs::read(config.root.join(STATE_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        Ok(Self {
            config,
            jobs: jobs::JobTable::default(),
            busy: Mutex::new(HashSet::new()),
            persisted: Mutex::new(persisted),
        })
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.config.root.join(RUNS_DIR)
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.config.root.join(DATASETS_DIR)
    }

    pub fn token(&self) -> Option<&str> {
        self.config.platform.token.as_deref().filter(|t| !t.is_empty())
    }

    /// Server settings overlaid by `target` (or the last verified one).
    pub fn resolve(&self, target: Option<&Target>) -> Result<PlatformConfig, ApiError> {
        let stored = self.persisted.lock().unwrap().target.clone();
        let mut merged = self.config.platform.clone();
        if let Some(t) = target.or(stored.as_ref()) {
            merged.overlay(&PartialPlatformConfig {
                kind: t.kind.clone(),
                base_url: t.base_url.clone(),
                token: None,
                project: t.project.clone(),
                api_version: t.api_version.clone(),
            });
        }
        Ok(platform_access::load_config(&ConfigSources {
            file: None,
            env: BTreeMap::new(),
            overrides: merged,
        })?)
    }

    pub fn verified_manifest(&self) -> Option<CapabilityManifest> {
        self.persisted.lock().unwrap().manifest.clone()
    }

    pub fn remember(&self, target: Target, manifest: CapabilityManifest) {
        let mut p = self.persisted.lock().unwrap();
        p.target = Some(target);
        p.manifest = Some(manifest);
        let bytes = serde_json::to_vec_pretty(&*p).expect("state");
        if let Err(e) = revmine::archive::atomic_write(&self.config.root.join(STATE_FILE), &bytes) {
            tracing::warn!(error = %e, "could not persist service state");
        }
    }

    /// Claims the project for one collection at a time.
    pub fn claim(&self, key: &str) -> bool {
        self.busy.lock().unwrap().insert(key.to_owned())
    }

    pub fn release(&self, key: &str) {
        self.busy.lock().unwrap().remove(key);
    }
}

fn runtime() -> io::Result<Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .thread_name("revmine-service")
        .build()
}

/// A service running on its own runtime.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    rt: Option<Runtime>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port/api/v1`
    pub fn base_url(&self) -> String {
        format!("http://{}/api/v1", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(rt) = self.rt.take() {
            rt.shutdown_timeout(Duration::from_secs(5));
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn bind(addr: &str) -> io::Result<std::net::TcpListener> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

/// Binds `addr` and serves in the background.
pub fn spawn(config: ServiceConfig, addr: &str) -> io::Result<ServiceHandle> {
    let state = Arc::new(AppState::open(config)?);
    let listener = bind(addr)?;
    let local = listener.local_addr()?;
    let rt = runtime()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state);
    rt.spawn(async move {
        let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    tracing::info!(addr = %local, "service listening");
    Ok(ServiceHandle {
        addr: local,
        shutdown: Some(tx),
        rt: Some(rt),
    })
}

/// Serves until SIGINT or SIGTERM. `ready` is called once bound.
pub fn serve_until_signal(config: ServiceConfig, addr: &str, ready: impl FnOnce(SocketAddr)) -> io::Result<()> {
    let state = Arc::new(AppState::open(config)?);
    let listener = bind(addr)?;
    ready(listener.local_addr()?);
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, router(state)).with_graceful_shutdown(signal()).await
    })
}

async fn signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown signal received");
}

/// Ids become directory names; anything path-like is refused.
pub(crate) fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub(crate) fn has_file(dir: &Path, name: &str) -> bool {
    dir.join(name).is_file()
}
