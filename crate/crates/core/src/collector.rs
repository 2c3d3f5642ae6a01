//! Executes a plan's request graph: paginated listing, bounded fan-out,
//! retries, rate-limit budgeting, raw archiving, checkpointed manifests and
//! resumption.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::adapters::{self, AdapterError, EndpointId, EndpointRequest, FanoutFamily, PageCursor, RequestPlan};
use crate::archive::{self, sha256_hex, ArchiveIoError};
use crate::catalog::catalog;
use crate::http::{RawResponse, Transport, TransportError};
use crate::plan::{self, CollectionPlan, EntityKind, ValidationReport};
use crate::platform_access::{PlatformConfig, PlatformKind};
use crate::time::{self, Clock, SystemClock, Timestamp};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub multiplier: f64,
    /// Relative jitter, uniform in ±jitter.
    pub jitter: f64,
    pub max_delay: Duration,
    pub honor_retry_after: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            multiplier: 2.0,
            jitter: 0.2,
            max_delay: Duration::from_secs(60),
            honor_retry_after: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given `attempt` ≥ 1 failures.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let factor = if self.jitter > 0.0 {
            1.0 + rand::random_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64((nominal * factor).clamp(0.0, self.max_delay.as_secs_f64()))
    }
}

pub fn is_retriable_status(status: u16) -> bool {
    matches!(status, 429 | 500 | 502 | 503 | 504)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateBudget {
    pub remaining: Option<i64>,
    pub reset_at: Option<Timestamp>,
    pub min_reserve: i64,
}

impl Default for RateBudget {
    fn default() -> Self {
        Self {
            remaining: None,
            reset_at: None,
            min_reserve: 10,
        }
    }
}

impl RateBudget {
    pub fn with_reserve(min_reserve: i64) -> Self {
        Self {
            min_reserve,
            ..Self::default()
        }
    }

    /// Time to wait before the next request, if the reserve is reached.
    pub fn wait(&self, now: &Timestamp) -> Option<Duration> {
        match (self.remaining, self.reset_at) {
            (Some(r), Some(reset)) if r <= self.min_reserve && reset > *now => (reset - *now).to_std().ok(),
            _ => None,
        }
    }

    pub fn observe(&mut self, resp: &RawResponse) {
        if let Some(snap) = crate::platform_access::rate_limit_from(resp) {
            self.remaining = Some(snap.remaining);
            self.reset_at = Some(snap.reset_at);
        }
    }
}

/// One HTTP attempt as logged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    #[serde(with = "time::serde_ts")]
    pub timestamp: Timestamp,
    pub attempt: u32,
    pub status: Option<u16>,
    pub reason: Option<String>,
    pub duration_ms: u64,
}

impl Attempt {
    pub fn failed(&self) -> bool {
        self.status.is_none_or(|s| !(200..300).contains(&s))
    }

    fn status_or_reason(&self) -> String {
        match (&self.status, &self.reason) {
            (Some(s), _) => s.to_string(),
            (None, Some(r)) => r.clone(),
            (None, None) => "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub response: RawResponse,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("non-retriable HTTP {status}")]
    NonRetriable { status: u16, attempts: Vec<Attempt> },
    #[error("retries exhausted (last: {last})")]
    RetriesExhausted {
        last_status: Option<u16>,
        last: String,
        attempts: Vec<Attempt>,
    },
}

impl FetchError {
    pub fn attempts(&self) -> &[Attempt] {
        match self {
            FetchError::NonRetriable { attempts, .. } | FetchError::RetriesExhausted { attempts, .. } => attempts,
        }
    }
}

fn retry_after(resp: &RawResponse) -> Option<Duration> {
    resp.header("retry-after")?.trim().parse::<u64>().ok().map(Duration::from_secs)
}

/// GET with retries, backoff and rate budgeting. Returns the first 2xx.
pub fn fetch_with_retry(
    transport: &dyn Transport,
    url: &str,
    headers: &[(&str, String)],
    policy: &RetryPolicy,
    budget: &Mutex<RateBudget>,
    clock: &dyn Clock,
) -> Result<Fetched, FetchError> {
    let mut attempts = Vec::new();
    let max = policy.max_attempts.max(1);
    for n in 1..=max {
        let wait = budget.lock().unwrap().wait(&clock.now());
        if let Some(w) = wait {
            tracing::info!(seconds = w.as_secs(), "rate budget reserve reached, waiting for reset");
            clock.sleep(w);
            budget.lock().unwrap().remaining = None;
        }
        let timestamp = clock.now();
        let started = Instant::now();
        let result = transport.get(url, headers);
        let duration_ms = started.elapsed().as_millis() as u64;
        let (status, reason, resp) = match result {
            Ok(resp) => {
                budget.lock().unwrap().observe(&resp);
                (Some(resp.status), None, Some(resp))
            }
            Err(e) => {
                let kind = match e {
                    TransportError::Connect(_) => "connect_error",
                    TransportError::Timeout(_) => "timeout",
                    TransportError::Other(_) => "transport_error",
                };
                (None, Some(kind.to_owned()), None)
            }
        };
        attempts.push(Attempt {
            timestamp,
            attempt: n,
            status,
            reason: reason.clone(),
            duration_ms,
        });
        let retriable = match (&resp, &reason) {
            (Some(r), _) if r.is_success() => {
                return Ok(Fetched {
                    response: resp.unwrap(),
                    attempts,
                })
            }
            (Some(r), _) => is_retriable_status(r.status),
            (None, Some(kind)) => kind != "transport_error",
            (None, None) => false,
        };
        if !retriable {
            return match status {
                Some(status) => Err(FetchError::NonRetriable { status, attempts }),
                None => Err(FetchError::RetriesExhausted {
                    last_status: None,
                    last: reason.unwrap_or_default(),
                    attempts,
                }),
            };
        }
        if n == max {
            return Err(FetchError::RetriesExhausted {
                last_status: status,
                last: status.map(|s| s.to_string()).or(reason).unwrap_or_default(),
                attempts,
            });
        }
        let mut delay = policy.backoff(n);
        if policy.honor_retry_after {
            if let Some(ra) = resp.as_ref().and_then(retry_after) {
                delay = delay.max(ra);
            }
        }
        clock.sleep(delay);
    }
    unreachable!("loop returns on the last attempt")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Completed,
    Partial,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Pending => "pending",
            RunStatus::Running => "running",
            RunStatus::Completed => "completed",
            RunStatus::Partial => "partial",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub requests_issued: u64,
    pub retries: u64,
    pub pages_fetched: u64,
    pub reviews_discovered: u64,
    pub errors: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListCheckpoint {
    pub pages_completed: u32,
    pub next_cursor: Option<PageCursor>,
    pub exhausted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCheckpoint {
    pub completed: BTreeSet<u64>,
    pub failed: BTreeSet<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoints {
    pub list: ListCheckpoint,
    /// Keyed by fan-out endpoint id.
    pub fanout: BTreeMap<String, FamilyCheckpoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEntry {
    #[serde(with = "time::serde_ts")]
    pub timestamp: Timestamp,
    pub endpoint_id: EndpointId,
    pub review_number: Option<u64>,
    pub status_or_reason: String,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    #[serde(with = "time::serde_ts")]
    pub timestamp: Timestamp,
    pub action: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub platform: PlatformKind,
    pub project: String,
    pub plan_snapshot: Json,
    pub plan_sha256: String,
    pub status: RunStatus,
    #[serde(with = "time::serde_ts")]
    pub started_at: Timestamp,
    #[serde(with = "time::serde_ts::option")]
    pub finished_at: Option<Timestamp>,
    pub counters: Counters,
    pub checkpoints: Checkpoints,
    pub error_log: Vec<ErrorEntry>,
    pub audit: Vec<AuditEntry>,
    pub failure_reason: Option<String>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<RunManifest, CollectorError> {
        let path = run_dir.join(archive::MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| ArchiveIoError::new(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CollectorError::Archive(ArchiveIoError::new(&path, e)))
    }

    /// (done, total) fan-out units; the listing counts as one unit until
    /// exhausted.
    pub fn progress(&self) -> (u64, u64) {
        let families = self.checkpoints.fanout.len() as u64;
        let done: u64 = self
            .checkpoints
            .fanout
            .values()
            .map(|f| (f.completed.len() + f.failed.len()) as u64)
            .sum();
        let list_done = self.checkpoints.list.exhausted as u64;
        (done + list_done, self.counters.reviews_discovered * families + 1)
    }

    fn write(&self, run_dir: &Path) -> Result<(), ArchiveIoError> {
        archive::atomic_write(&run_dir.join(archive::MANIFEST_FILE), plan::to_canonical_json(self).as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollectorError {
    #[error(transparent)]
    Archive(#[from] ArchiveIoError),
    #[error("plan is not valid")]
    InvalidPlan(ValidationReport),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("run `{0}` not found")]
    RunNotFound(String),
    #[error("stored plan.json of run `{0}` does not match its checksum")]
    PlanMismatch(String),
    #[error("run `{run_id}` is locked by process {pid}")]
    Locked { run_id: String, pid: u32 },
    #[error("run `{run_id}` cannot be resumed from status {status}")]
    NotResumable { run_id: String, status: &'static str },
    #[error("authentication revoked mid-run (HTTP 401 on {endpoint}); run `{run_id}` marked failed")]
    AuthRevoked { run_id: String, endpoint: &'static str },
    #[error("run `{0}` interrupted")]
    Interrupted(String),
}

// ---------------------------------------------------------------- locking

#[derive(Debug, Serialize, Deserialize)]
struct LockInfo {
    pid: u32,
    nonce: String,
}

static HELD_LOCKS: Mutex<Option<HashSet<String>>> = Mutex::new(None);

fn held(nonce: &str) -> bool {
    HELD_LOCKS.lock().unwrap().as_ref().is_some_and(|s| s.contains(nonce))
}

fn set_held(nonce: &str, on: bool) {
    let mut guard = HELD_LOCKS.lock().unwrap();
    let set = guard.get_or_insert_with(HashSet::new);
    if on {
        set.insert(nonce.to_owned());
    } else {
        set.remove(nonce);
    }
}

#[cfg(unix)]
fn pid_alive(pid: u32) -> bool {
    // Signal 0 checks existence without delivering anything.
    let r = unsafe { libc::kill(pid as libc::pid_t, 0) };
    r == 0 || std::io::Error::last_os_error().raw_os_error() == Some(libc::EPERM)
}

#[cfg(not(unix))]
fn pid_alive(_pid: u32) -> bool {
    true
}

/// Exclusive ownership of a run directory via `<run>/.lock`.
pub struct RunLock {
    path: PathBuf,
    nonce: String,
    armed: bool,
}

impl RunLock {
    pub fn acquire(run_dir: &Path, run_id: &str) -> Result<RunLock, CollectorError> {
        let path = run_dir.join(archive::LOCK_FILE);
        let nonce = format!("{:016x}", rand::random::<u64>());
        let info = serde_json::to_vec(&LockInfo {
            pid: std::process::id(),
            nonce: nonce.clone(),
        })
        .expect("lock info");
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(&info).map_err(|e| ArchiveIoError::new(&path, e))?;
                    set_held(&nonce, true);
                    return Ok(RunLock { path, nonce, armed: true });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let existing: Option<LockInfo> = fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok());
                    let stale = match &existing {
                        None => true,
                        Some(l) if l.pid == std::process::id() => !held(&l.nonce),
                        Some(l) => !pid_alive(l.pid),
                    };
                    if !stale {
                        return Err(CollectorError::Locked {
                            run_id: run_id.to_owned(),
                            pid: existing.map_or(0, |l| l.pid),
                        });
                    }
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(ArchiveIoError::new(&path, e).into()),
            }
        }
        Err(CollectorError::Locked {
            run_id: run_id.to_owned(),
            pid: 0,
        })
    }

    /// Leaves the lock file behind as a crashed executor would.
    fn abandon(mut self) {
        set_held(&self.nonce, false);
        self.armed = false;
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        if self.armed {
            let _ = fs::remove_file(&self.path);
            set_held(&self.nonce, false);
        }
    }
}

// ---------------------------------------------------------------- logging

struct RunLog {
    file: fs::File,
    path: PathBuf,
}

impl RunLog {
    fn open(run_dir: &Path) -> Result<RunLog, ArchiveIoError> {
        let path = run_dir.join(archive::LOG_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ArchiveIoError::new(&path, e))?;
        Ok(RunLog { file, path })
    }

    fn write(&mut self, record: Json) -> Result<(), ArchiveIoError> {
        let mut line = record.to_string();
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| ArchiveIoError::new(&self.path, e))
    }

    fn attempt(&mut self, endpoint: EndpointId, review: Option<u64>, a: &Attempt) -> Result<(), ArchiveIoError> {
        self.write(json!({
            "timestamp": time::format_ts(&a.timestamp),
            "level": if a.failed() { "warn" } else { "info" },
            "endpoint_id": endpoint.as_str(),
            "review_number": review,
            "status": a.status_or_reason(),
            "attempt": a.attempt,
            "duration_ms": a.duration_ms,
        }))
    }

    fn event(&mut self, at: &Timestamp, level: &str, message: &str) -> Result<(), ArchiveIoError> {
        self.write(json!({
            "timestamp": time::format_ts(at),
            "level": level,
            "endpoint_id": null,
            "status": null,
            "attempt": null,
            "duration_ms": null,
            "message": message,
        }))
    }
}

// ---------------------------------------------------------------- executor

#[derive(Clone)]
pub struct CollectOptions {
    pub parallelism: usize,
    pub policy: RetryPolicy,
    pub min_reserve: i64,
    pub clock: Arc<dyn Clock>,
    pub run_id: Option<String>,
    /// Stop (as if killed) after this many checkpoint writes.
    pub halt_after_checkpoints: Option<usize>,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            parallelism: DEFAULT_PARALLELISM,
            policy: RetryPolicy::default(),
            min_reserve: 10,
            clock: Arc::new(SystemClock),
            run_id: None,
            halt_after_checkpoints: None,
        }
    }
}

impl std::fmt::Debug for CollectOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollectOptions")
            .field("parallelism", &self.parallelism)
            .field("policy", &self.policy)
            .field("min_reserve", &self.min_reserve)
            .field("run_id", &self.run_id)
            .finish()
    }
}

pub fn new_run_id(now: &Timestamp) -> String {
    format!("{}-{:06x}", now.format("%Y%m%dT%H%M%SZ"), rand::random::<u32>() & 0xff_ffff)
}

/// Read-only context shared with fan-out workers.
struct Ctx<'a> {
    run_dir: PathBuf,
    config: &'a PlatformConfig,
    transport: &'a dyn Transport,
    opts: &'a CollectOptions,
    requests: RequestPlan,
    budget: Mutex<RateBudget>,
    headers: Vec<(&'static str, String)>,
}

impl Ctx<'_> {
    fn fetch(&self, url: &str) -> Result<Fetched, FetchError> {
        fetch_with_retry(self.transport, url, &self.headers, &self.opts.policy, &self.budget, self.opts.clock.as_ref())
    }
}

/// Mutable executor state, owned by the single writer.
struct State {
    manifest: RunManifest,
    log: RunLog,
    checkpoints_written: usize,
}

enum Stop {
    Halt,
    Auth(EndpointId),
}

impl State {
    fn record(&mut self, endpoint: EndpointId, review: Option<u64>, attempts: &[Attempt]) -> Result<(), ArchiveIoError> {
        let c = &mut self.manifest.counters;
        c.requests_issued += attempts.len() as u64;
        c.retries += attempts.len().saturating_sub(1) as u64;
        for a in attempts {
            self.log.attempt(endpoint, review, a)?;
            if a.failed() {
                self.manifest.error_log.push(ErrorEntry {
                    timestamp: a.timestamp,
                    endpoint_id: endpoint,
                    review_number: review,
                    status_or_reason: a.status_or_reason(),
                    attempt: a.attempt,
                });
                self.manifest.counters.errors += 1;
            }
        }
        Ok(())
    }

    /// Persists the manifest after a checkpoint advance.
    fn checkpoint(&mut self, ctx: &Ctx) -> Result<Option<Stop>, ArchiveIoError> {
        self.manifest.write(&ctx.run_dir)?;
        self.checkpoints_written += 1;
        Ok(match ctx.opts.halt_after_checkpoints {
            Some(n) if self.checkpoints_written >= n => Some(Stop::Halt),
            _ => None,
        })
    }
}

fn review_numbers_in(kind: PlatformKind, body: &[u8]) -> Result<Vec<u64>, String> {
    let doc: Json = serde_json::from_slice(body).map_err(|e| format!("listing page is not JSON: {e}"))?;
    adapters::review_numbers(kind, &doc).map_err(|e| e.to_string())
}

enum ListOutcome {
    Done(Vec<u64>),
    Failed(String),
    Stopped(Stop),
}

fn list_phase(ctx: &Ctx, st: &mut State) -> Result<ListOutcome, CollectorError> {
    let kind = ctx.config.kind;
    let mut numbers = Vec::new();
    for (key, path) in archive::list_raw(&ctx.run_dir, EntityKind::Reviews)? {
        if key.review.is_some() || key.page > st.manifest.checkpoints.list.pages_completed {
            continue;
        }
        let body = fs::read(&path).map_err(|e| ArchiveIoError::new(&path, e))?;
        numbers.extend(review_numbers_in(kind, &body).map_err(|e| ArchiveIoError::new(&path, e))?);
    }
    while !st.manifest.checkpoints.list.exhausted {
        let page = st.manifest.checkpoints.list.pages_completed + 1;
        let url = match &st.manifest.checkpoints.list.next_cursor {
            None if page == 1 => ctx.requests.list.url(&ctx.config.base_url),
            None => {
                return Ok(ListOutcome::Failed("listing cursor lost".into()));
            }
            Some(c) => adapters::page_url(&ctx.config.base_url, &ctx.requests.list, c),
        };
        let fetched = ctx.fetch(&url);
        let attempts = match &fetched {
            Ok(f) => f.attempts.clone(),
            Err(e) => e.attempts().to_vec(),
        };
        st.record(EndpointId::ListReviews, None, &attempts)?;
        let resp = match fetched {
            Ok(f) => f.response,
            Err(FetchError::NonRetriable { status: 401, .. }) => return Ok(ListOutcome::Stopped(Stop::Auth(EndpointId::ListReviews))),
            Err(e) => return Ok(ListOutcome::Failed(format!("review listing page {page}: {e}"))),
        };
        archive::write_raw(&ctx.run_dir, EntityKind::Reviews, &ctx.requests.list.archive_key(page), &resp.body)?;
        let found = match review_numbers_in(kind, &resp.body) {
            Ok(n) => n,
            Err(e) => return Ok(ListOutcome::Failed(format!("review listing page {page}: {e}"))),
        };
        let next = match adapters::next_page(kind, &resp.headers, &resp.body) {
            Ok(n) => n,
            Err(e) => return Ok(ListOutcome::Failed(e.to_string())),
        };
        numbers.extend(found);
        let mut seen = HashSet::new();
        let distinct = numbers.iter().filter(|n| seen.insert(**n)).count();
        let m = &mut st.manifest;
        m.counters.pages_fetched += 1;
        m.counters.reviews_discovered = distinct as u64;
        m.checkpoints.list.pages_completed = page;
        m.checkpoints.list.exhausted = next.is_none();
        m.checkpoints.list.next_cursor = next;
        if let Some(stop) = st.checkpoint(ctx)? {
            return Ok(ListOutcome::Stopped(stop));
        }
    }
    let mut seen = HashSet::new();
    numbers.retain(|n| seen.insert(*n));
    Ok(ListOutcome::Done(numbers))
}

enum FamilyOutcome {
    Done,
    Failed,
    Auth,
}

struct FamilyResult {
    family: FanoutFamily,
    number: u64,
    pages: Vec<(String, Vec<u8>)>,
    attempts: Vec<Attempt>,
    outcome: FamilyOutcome,
}

/// Fetches every request (and page) of one family for one review.
fn fetch_family(ctx: &Ctx, family: &FanoutFamily, number: u64) -> FamilyResult {
    let mut result = FamilyResult {
        family: family.clone(),
        number,
        pages: Vec::new(),
        attempts: Vec::new(),
        outcome: FamilyOutcome::Done,
    };
    for req in ctx.requests.family_requests(family, number) {
        if let Err(outcome) = fetch_paginated(ctx, &req, &mut result) {
            result.outcome = outcome;
            break;
        }
    }
    result
}

fn fetch_paginated(ctx: &Ctx, req: &EndpointRequest, out: &mut FamilyResult) -> Result<(), FamilyOutcome> {
    let mut url = req.url(&ctx.config.base_url);
    let mut page = 1;
    loop {
        let fetched = ctx.fetch(&url);
        match fetched {
            Ok(f) => {
                out.attempts.extend(f.attempts);
                let next = adapters::next_page(ctx.config.kind, &f.response.headers, &f.response.body)
                    .map_err(|_| FamilyOutcome::Failed)?;
                out.pages.push((req.archive_key(page), f.response.body));
                match next {
                    None => return Ok(()),
                    Some(cursor) => {
                        url = adapters::page_url(&ctx.config.base_url, req, &cursor);
                        page += 1;
                    }
                }
            }
            Err(e) => {
                out.attempts.extend(e.attempts().iter().cloned());
                return Err(match e {
                    FetchError::NonRetriable { status: 401, .. } => FamilyOutcome::Auth,
                    _ => FamilyOutcome::Failed,
                });
            }
        }
    }
}

fn fanout_phase(ctx: &Ctx, st: &mut State, numbers: &[u64]) -> Result<Option<Stop>, CollectorError> {
    let mut work = VecDeque::new();
    for n in numbers {
        for family in &ctx.requests.fanout {
            let cp = st.manifest.checkpoints.fanout.entry(family.endpoint_id.as_str().to_owned()).or_default();
            if !cp.completed.contains(n) {
                work.push_back((family.clone(), *n));
            }
        }
    }
    if work.is_empty() {
        return Ok(None);
    }
    let queue = Mutex::new(work);
    let abort = AtomicBool::new(false);
    let workers = ctx.opts.parallelism.max(1);
    let (tx, rx) = mpsc::channel::<FamilyResult>();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (queue, abort) = (&queue, &abort);
            s.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let Some((family, n)) = queue.lock().unwrap().pop_front() else { break };
                if tx.send(fetch_family(ctx, &family, n)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut stop = None;
        for res in rx {
            if stop.is_some() {
                continue;
            }
            match persist_family(ctx, st, res) {
                Ok(None) => {}
                Ok(Some(s)) => {
                    abort.store(true, Ordering::SeqCst);
                    stop = Some(Ok(s));
                }
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    stop = Some(Err(e));
                }
            }
        }
        stop.transpose()
    })
}

/// Single-writer step: archive the pages, then advance the checkpoint.
fn persist_family(ctx: &Ctx, st: &mut State, res: FamilyResult) -> Result<Option<Stop>, CollectorError> {
    let endpoint = res.family.endpoint_id;
    st.record(endpoint, Some(res.number), &res.attempts)?;
    let cp_key = endpoint.as_str().to_owned();
    match res.outcome {
        FamilyOutcome::Auth => return Ok(Some(Stop::Auth(endpoint))),
        FamilyOutcome::Failed => {
            let cp = st.manifest.checkpoints.fanout.entry(cp_key).or_default();
            cp.failed.insert(res.number);
        }
        FamilyOutcome::Done => {
            for (key, body) in &res.pages {
                archive::write_raw(&ctx.run_dir, res.family.entity, key, body)?;
            }
            st.manifest.counters.pages_fetched += res.pages.len() as u64;
            let cp = st.manifest.checkpoints.fanout.entry(cp_key).or_default();
            cp.failed.remove(&res.number);
            cp.completed.insert(res.number);
        }
    }
    Ok(st.checkpoint(ctx)?)
}

fn drive(ctx: &Ctx, st: &mut State, lock: RunLock) -> Result<RunManifest, CollectorError> {
    let clock = ctx.opts.clock.as_ref();
    let run_id = st.manifest.run_id.clone();
    let stop = match list_phase(ctx, st)? {
        ListOutcome::Stopped(s) => Some(s),
        ListOutcome::Failed(reason) => {
            tracing::warn!(run_id = %run_id, %reason, "review listing failed");
            st.manifest.status = RunStatus::Failed;
            st.manifest.failure_reason = Some(reason.clone());
            st.manifest.finished_at = Some(clock.now());
            st.log.event(&clock.now(), "error", &reason)?;
            st.manifest.write(&ctx.run_dir)?;
            return Ok(st.manifest.clone());
        }
        ListOutcome::Done(numbers) => fanout_phase(ctx, st, &numbers)?,
    };
    match stop {
        Some(Stop::Halt) => {
            lock.abandon();
            return Err(CollectorError::Interrupted(run_id));
        }
        Some(Stop::Auth(endpoint)) => {
            st.manifest.status = RunStatus::Failed;
            st.manifest.failure_reason = Some(format!("authentication revoked (HTTP 401 on {})", endpoint.as_str()));
            st.manifest.finished_at = Some(clock.now());
            st.log.event(&clock.now(), "error", "authentication revoked")?;
            st.manifest.write(&ctx.run_dir)?;
            return Err(CollectorError::AuthRevoked {
                run_id,
                endpoint: endpoint.as_str(),
            });
        }
        None => {}
    }
    let any_failed = st.manifest.checkpoints.fanout.values().any(|f| !f.failed.is_empty());
    st.manifest.status = if any_failed { RunStatus::Partial } else { RunStatus::Completed };
    st.manifest.failure_reason = None;
    st.manifest.finished_at = Some(clock.now());
    st.log.event(&clock.now(), "info", &format!("run finished: {}", st.manifest.status.as_str()))?;
    st.manifest.write(&ctx.run_dir)?;
    tracing::info!(run_id = %run_id, status = st.manifest.status.as_str(), "run finished");
    Ok(st.manifest.clone())
}

fn context<'a>(
    run_dir: PathBuf,
    plan: &CollectionPlan,
    config: &'a PlatformConfig,
    transport: &'a dyn Transport,
    opts: &'a CollectOptions,
) -> Result<Ctx<'a>, CollectorError> {
    Ok(Ctx {
        run_dir,
        requests: adapters::plan_to_requests(plan, config)?,
        config,
        transport,
        opts,
        budget: Mutex::new(RateBudget::with_reserve(opts.min_reserve)),
        headers: adapters::auth_headers(config),
    })
}

/// Creates a run directory under `archive_root` and executes the plan.
pub fn execute_run(
    plan: &CollectionPlan,
    config: &PlatformConfig,
    archive_root: &Path,
    transport: &dyn Transport,
    opts: &CollectOptions,
) -> Result<RunManifest, CollectorError> {
    let report = plan::validate_plan(plan, &catalog());
    if !report.valid {
        return Err(CollectorError::InvalidPlan(report));
    }
    let plan = plan::normalize_plan(plan).map_err(|e| {
        CollectorError::InvalidPlan(ValidationReport::from_issues(vec![plan::issue(
            plan::Severity::Error,
            "INVALID_PLAN",
            "",
            e.to_string(),
        )]))
    })?;
    let now = opts.clock.now();
    let run_id = opts.run_id.clone().unwrap_or_else(|| new_run_id(&now));
    let run_dir = archive_root.join(&run_id);
    if run_dir.join(archive::MANIFEST_FILE).exists() {
        return Err(CollectorError::Locked { run_id, pid: 0 });
    }
    fs::create_dir_all(&run_dir).map_err(|e| ArchiveIoError::new(&run_dir, e))?;
    let lock = RunLock::acquire(&run_dir, &run_id)?;

    let plan_json = plan::serialize_plan(&plan);
    archive::atomic_write(&run_dir.join(archive::PLAN_FILE), plan_json.as_bytes())?;
    let ctx = context(run_dir.clone(), &plan, config, transport, opts)?;
    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        platform: config.kind,
        project: config.project.clone(),
        plan_snapshot: serde_json::from_str(&plan_json).expect("canonical plan"),
        plan_sha256: sha256_hex(plan_json.as_bytes()),
        status: RunStatus::Pending,
        started_at: now,
        finished_at: None,
        counters: Counters::default(),
        checkpoints: Checkpoints::default(),
        error_log: Vec::new(),
        audit: Vec::new(),
        failure_reason: None,
    };
    for f in &ctx.requests.fanout {
        manifest.checkpoints.fanout.insert(f.endpoint_id.as_str().to_owned(), FamilyCheckpoint::default());
    }
    manifest.write(&run_dir)?;
    manifest.status = RunStatus::Running;
    manifest.write(&run_dir)?;
    let mut state = State {
        manifest,
        log: RunLog::open(&run_dir)?,
        checkpoints_written: 0,
    };
    state.log.event(&now, "info", &format!("run {run_id} started"))?;
    tracing::info!(run_id = %run_id, "run started");
    drive(&ctx, &mut state, lock)
}

/// Continues an interrupted, partial or failed run. Only work missing
/// from the checkpoints is issued.
pub fn resume_run(
    run_id: &str,
    archive_root: &Path,
    config: &PlatformConfig,
    transport: &dyn Transport,
    opts: &CollectOptions,
) -> Result<RunManifest, CollectorError> {
    let run_dir = archive_root.join(run_id);
    if !run_dir.join(archive::MANIFEST_FILE).is_file() {
        return Err(CollectorError::RunNotFound(run_id.to_owned()));
    }
    let lock = RunLock::acquire(&run_dir, run_id)?;
    archive::sweep_temp_files(&run_dir)?;
    let mut manifest = RunManifest::load(&run_dir)?;
    let plan_path = run_dir.join(archive::PLAN_FILE);
    let plan_bytes = fs::read(&plan_path).map_err(|e| ArchiveIoError::new(&plan_path, e))?;
    if sha256_hex(&plan_bytes) != manifest.plan_sha256 {
        return Err(CollectorError::PlanMismatch(run_id.to_owned()));
    }
    let plan = plan::parse_plan(&String::from_utf8_lossy(&plan_bytes))
        .map_err(|_| CollectorError::PlanMismatch(run_id.to_owned()))?;
    let now = opts.clock.now();
    let mut log = RunLog::open(&run_dir)?;

    if manifest.status == RunStatus::Completed {
        manifest.audit.push(AuditEntry {
            timestamp: now,
            action: "resume".into(),
            detail: "run already completed; nothing to do".into(),
        });
        log.event(&now, "info", "resume requested on completed run")?;
        manifest.write(&run_dir)?;
        return Ok(manifest);
    }

    manifest.audit.push(AuditEntry {
        timestamp: now,
        action: "resume".into(),
        detail: format!("resumed from status {}", manifest.status.as_str()),
    });
    manifest.status = RunStatus::Running;
    manifest.finished_at = None;
    manifest.write(&run_dir)?;
    let ctx = context(run_dir, &plan, config, transport, opts)?;
    let mut state = State {
        manifest,
        log,
        checkpoints_written: 0,
    };
    state.log.event(&now, "info", &format!("run {run_id} resumed"))?;
    drive(&ctx, &mut state, lock)
}
