//! In-process GitHub/GitLab REST look-alike serving a [`SyntheticProject`],
//! with fault injection and request accounting.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{Query, State};
use axum::http::{HeaderMap, HeaderValue, Method, Response, StatusCode, Uri};
use axum::Router;
use chrono::{DateTime, Utc};
use serde_json::{json, Value};
use tokio::runtime::Runtime;

use crate::synth::{github, gitlab, Platform, State as ReviewState, SyntheticProject};

#[derive(Debug, Clone)]
pub struct ForgeOptions {
    pub token: String,
    /// GitHub `owner/repo`, GitLab numeric id or `%2F`-encoded path.
    pub project: String,
    /// Artificial per-request delay; makes concurrency observable.
    pub latency: Duration,
    pub rate_remaining: i64,
}

impl ForgeOptions {
    pub fn new(platform: Platform) -> Self {
        Self {
            token: "fixture-token-0123456789".into(),
            project: match platform {
                Platform::Github => "octo/demo".into(),
                Platform::Gitlab => "4242".into(),
            },
            latency: Duration::ZERO,
            rate_remaining: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RequestRecord {
    pub method: String,
    /// Path below the API root.
    pub path: String,
    pub query: Vec<(String, String)>,
    pub page: u32,
    pub status: u16,
    pub at: Instant,
    pub authorization: Option<String>,
}

#[derive(Debug, Clone)]
struct FaultRule {
    path_suffix: String,
    page: Option<u32>,
    remaining: Option<usize>,
    status: u16,
    retry_after: Option<u64>,
    body: Option<String>,
}

struct Shared {
    platform: Platform,
    project: SyntheticProject,
    opts: ForgeOptions,
    base_url: String,
    token: Mutex<String>,
    faults: Mutex<Vec<FaultRule>>,
    log: Mutex<Vec<RequestRecord>>,
    bodies: Mutex<HashMap<String, Vec<u8>>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    served: AtomicUsize,
    revoke_after: Mutex<Option<usize>>,
}

pub struct ForgeServer {
    base_url: String,
    shared: Arc<Shared>,
    rt: Option<Runtime>,
}

pub(crate) fn runtime() -> Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("tokio runtime")
}

pub(crate) fn serve(rt: &Runtime, listener: std::net::TcpListener, app: Router) {
    listener.set_nonblocking(true).expect("nonblocking");
    rt.spawn(async move {
        let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
        let _ = axum::serve(listener, app).await;
    });
}

impl ForgeServer {
    pub fn start(platform: Platform, project: SyntheticProject) -> Self {
        Self::start_with(platform, project, ForgeOptions::new(platform))
    }

    pub fn start_with(platform: Platform, project: SyntheticProject, opts: ForgeOptions) -> Self {
        let rt = runtime();
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let root = match platform {
            Platform::Github => "",
            Platform::Gitlab => "/api/v4",
        };
        let base_url = format!("http://{addr}{root}");
        let shared = Arc::new(Shared {
            platform,
            project,
            token: Mutex::new(opts.token.clone()),
            opts,
            base_url: base_url.clone(),
            faults: Mutex::new(Vec::new()),
            log: Mutex::new(Vec::new()),
            bodies: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            served: AtomicUsize::new(0),
            revoke_after: Mutex::new(None),
        });
        let app = Router::new().fallback(handle).with_state(shared.clone());
        serve(&rt, listener, app);
        ForgeServer {
            base_url,
            shared,
            rt: Some(rt),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn token(&self) -> String {
        self.shared.token.lock().unwrap().clone()
    }

    pub fn project(&self) -> &str {
        &self.shared.opts.project
    }

    pub fn data(&self) -> &SyntheticProject {
        &self.shared.project
    }

    pub fn set_token(&self, token: &str) {
        *self.shared.token.lock().unwrap() = token.to_string();
    }

    /// Every request after the first `n` is rejected with 401.
    pub fn revoke_token_after(&self, n: usize) {
        *self.shared.revoke_after.lock().unwrap() = Some(n);
    }

    /// Answers `status` for requests whose path ends with `path_suffix`
    /// (and whose page matches, if given), `times` times or forever.
    pub fn fail(&self, path_suffix: &str, page: Option<u32>, status: u16, times: Option<usize>) {
        self.push_rule(FaultRule {
            path_suffix: path_suffix.into(),
            page,
            remaining: times,
            status,
            retry_after: None,
            body: None,
        });
    }

    /// One 429 carrying `Retry-After: secs`.
    pub fn throttle_once(&self, path_suffix: &str, page: Option<u32>, secs: u64) {
        self.push_rule(FaultRule {
            path_suffix: path_suffix.into(),
            page,
            remaining: Some(1),
            status: 429,
            retry_after: Some(secs),
            body: None,
        });
    }

    /// Serves `body` with status 200 in place of the real document.
    pub fn replace_body(&self, path_suffix: &str, page: Option<u32>, body: &str) {
        self.push_rule(FaultRule {
            path_suffix: path_suffix.into(),
            page,
            remaining: None,
            status: 200,
            retry_after: None,
            body: Some(body.into()),
        });
    }

    pub fn clear_faults(&self) {
        self.shared.faults.lock().unwrap().clear();
    }

    fn push_rule(&self, rule: FaultRule) {
        self.shared.faults.lock().unwrap().push(rule);
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.log.lock().unwrap().len()
    }

    /// Requests whose path ends with `suffix`.
    pub fn count_matching(&self, suffix: &str) -> usize {
        self.shared.log.lock().unwrap().iter().filter(|r| r.path.ends_with(suffix)).count()
    }

    pub fn reset_log(&self) {
        self.shared.log.lock().unwrap().clear();
        self.shared.max_in_flight.store(0, Ordering::SeqCst);
    }

    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }

    /// Bytes of the last successful response for `path` and `page`, with
    /// `path` below the API root.
    pub fn served_body(&self, path: &str, page: u32) -> Option<Vec<u8>> {
        self.shared.bodies.lock().unwrap().get(&format!("{path}?page={page}")).cloned()
    }
}

impl Drop for ForgeServer {
    fn drop(&mut self) {
        if let Some(rt) = self.rt.take() {
            rt.shutdown_background();
        }
    }
}

struct Reply {
    status: u16,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, v: &Value) -> Self {
        Reply {
            status,
            headers: Vec::new(),
            body: serde_json::to_vec(v).unwrap(),
        }
    }
}

async fn handle(
    State(s): State<Arc<Shared>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    Query(query): Query<Vec<(String, String)>>,
) -> Response<Body> {
    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.max_in_flight.fetch_max(now, Ordering::SeqCst);
    if !s.opts.latency.is_zero() {
        tokio::time::sleep(s.opts.latency).await;
    }
    let root = match s.platform {
        Platform::Github => "",
        Platform::Gitlab => "/api/v4",
    };
    let path = uri.path().strip_prefix(root).unwrap_or(uri.path()).to_string();
    let page: u32 = param(&query, "page").and_then(|p| p.parse().ok()).unwrap_or(1);
    let auth = headers
        .get("authorization")
        .or_else(|| headers.get("private-token"))
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);

    let mut reply = respond(&s, &method, &path, &query, page, &headers);
    let remaining = (s.opts.rate_remaining - s.served.load(Ordering::SeqCst) as i64).max(0);
    let reset = (Utc::now().timestamp() + 3600).to_string();
    let (rem_h, reset_h) = match s.platform {
        Platform::Github => ("x-ratelimit-remaining", "x-ratelimit-reset"),
        Platform::Gitlab => ("ratelimit-remaining", "ratelimit-reset"),
    };
    reply.headers.push((rem_h.into(), remaining.to_string()));
    reply.headers.push((reset_h.into(), reset));
    if reply.status == 200 {
        s.bodies.lock().unwrap().insert(format!("{path}?page={page}"), reply.body.clone());
    }

    s.log.lock().unwrap().push(RequestRecord {
        method: method.to_string(),
        path,
        query,
        page,
        status: reply.status,
        at: Instant::now(),
        authorization: auth,
    });
    s.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut resp = Response::builder().status(StatusCode::from_u16(reply.status).unwrap());
    resp = resp.header("content-type", "application/json");
    for (k, v) in &reply.headers {
        resp = resp.header(k.as_str(), HeaderValue::from_str(v).unwrap());
    }
    resp.body(Body::from(reply.body)).unwrap()
}

fn param<'a>(query: &'a [(String, String)], key: &str) -> Option<&'a str> {
    query.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn authorized(s: &Shared, headers: &HeaderMap) -> bool {
    let token = s.token.lock().unwrap().clone();
    let get = |k: &str| headers.get(k).and_then(|v| v.to_str().ok()).map(str::to_owned);
    match s.platform {
        Platform::Github => {
            matches!(get("authorization"), Some(a) if a == format!("Bearer {token}") || a == format!("token {token}"))
        }
        Platform::Gitlab => {
            get("private-token").as_deref() == Some(token.as_str())
                || get("authorization") == Some(format!("Bearer {token}"))
        }
    }
}

fn respond(s: &Shared, method: &Method, path: &str, query: &[(String, String)], page: u32, headers: &HeaderMap) -> Reply {
    let served = s.served.fetch_add(1, Ordering::SeqCst);
    let revoked = matches!(*s.revoke_after.lock().unwrap(), Some(n) if served >= n);
    if revoked || !authorized(s, headers) {
        let msg = match s.platform {
            Platform::Github => json!({"message": "Bad credentials"}),
            Platform::Gitlab => json!({"message": "401 Unauthorized"}),
        };
        return Reply::json(401, &msg);
    }
    {
        let mut faults = s.faults.lock().unwrap();
        let hit = faults.iter_mut().position(|f| {
            path.ends_with(&f.path_suffix) && f.page.is_none_or(|p| p == page) && f.remaining != Some(0)
        });
        if let Some(i) = hit {
            let f = &mut faults[i];
            if let Some(n) = f.remaining.as_mut() {
                *n -= 1;
            }
            let mut reply = match &f.body {
                Some(b) => Reply {
                    status: f.status,
                    headers: Vec::new(),
                    body: b.clone().into_bytes(),
                },
                None => Reply::json(f.status, &json!({"message": format!("injected {}", f.status)})),
            };
            if let Some(secs) = f.retry_after {
                reply.headers.push(("retry-after".into(), secs.to_string()));
            }
            return reply;
        }
    }
    if method != Method::GET {
        return Reply::json(405, &json!({"message": "method not allowed"}));
    }
    route(s, path, query, page)
}

fn not_found() -> Reply {
    Reply::json(404, &json!({"message": "Not Found"}))
}

fn project_matches(s: &Shared, p: &str) -> bool {
    let norm = |x: &str| x.replace("%2F", "/").replace("%2f", "/");
    norm(p) == norm(&s.opts.project)
}

fn route(s: &Shared, path: &str, query: &[(String, String)], page: u32) -> Reply {
    let data = &s.project;
    match s.platform {
        Platform::Github => {
            if path == "/user" {
                let mut r = Reply::json(200, &json!({"login": "mining-bot", "id": 1}));
                r.headers.push(("x-oauth-scopes".into(), "repo, read:org".into()));
                return r;
            }
            let Some(rest) = path.strip_prefix("/repos/") else { return not_found() };
            let parts: Vec<&str> = rest.split('/').collect();
            if parts.len() < 2 || !project_matches(s, &format!("{}/{}", parts[0], parts[1])) {
                return not_found();
            }
            match &parts[2..] {
                [] => Reply::json(200, &json!({"full_name": s.opts.project, "private": false})),
                ["pulls"] => {
                    let state = param(query, "state").unwrap_or("open");
                    let items: Vec<Value> = data
                        .reviews
                        .iter()
                        .filter(|r| match state {
                            "open" => r.state == ReviewState::Open,
                            "closed" => r.state != ReviewState::Open,
                            _ => true,
                        })
                        .map(github::pull)
                        .collect();
                    paginate(s, path, query, page, items)
                }
                [kind, n, tail @ ..] => {
                    let Some(r) = n.parse().ok().and_then(|n| data.review(n)) else { return not_found() };
                    match (*kind, tail) {
                        ("pulls", []) => Reply::json(200, &github::pull(r)),
                        ("pulls", ["comments"]) => paginate(s, path, query, page, github::review_comments(r)),
                        ("pulls", ["commits"]) => paginate(s, path, query, page, github::commits(r)),
                        ("pulls", ["files"]) => paginate(s, path, query, page, github::files(r)),
                        ("issues", ["comments"]) => paginate(s, path, query, page, github::issue_comments(r)),
                        _ => not_found(),
                    }
                }
                _ => not_found(),
            }
        }
        Platform::Gitlab => {
            if path == "/user" {
                return Reply::json(200, &json!({"username": "mining-bot", "id": 1}));
            }
            if path == "/personal_access_tokens/self" {
                return Reply::json(200, &json!({"name": "ci", "scopes": ["read_api"], "active": true}));
            }
            let Some(rest) = path.strip_prefix("/projects/") else { return not_found() };
            let parts: Vec<&str> = rest.split('/').collect();
            if !project_matches(s, parts[0]) {
                return not_found();
            }
            match &parts[1..] {
                [] => Reply::json(200, &json!({"id": 4242, "path_with_namespace": "group/demo"})),
                ["merge_requests"] => {
                    let state = param(query, "state").unwrap_or("all");
                    let after = param(query, "created_after").and_then(parse_ts);
                    let before = param(query, "created_before").and_then(parse_ts);
                    let items: Vec<Value> = data
                        .reviews
                        .iter()
                        .filter(|r| match state {
                            "opened" => r.state == ReviewState::Open,
                            "merged" => r.state == ReviewState::Merged,
                            "closed" => r.state == ReviewState::Closed,
                            _ => true,
                        })
                        .filter(|r| after.is_none_or(|a| r.created_at >= a))
                        .filter(|r| before.is_none_or(|b| r.created_at <= b))
                        .map(gitlab::merge_request)
                        .collect();
                    paginate(s, path, query, page, items)
                }
                ["merge_requests", n, tail @ ..] => {
                    let Some(r) = n.parse().ok().and_then(|n| data.review(n)) else { return not_found() };
                    match tail {
                        [] => Reply::json(200, &gitlab::merge_request(r)),
                        ["notes"] => paginate(s, path, query, page, gitlab::notes(r)),
                        ["commits"] => paginate(s, path, query, page, gitlab::commits(r)),
                        ["diffs"] => paginate(s, path, query, page, gitlab::diffs(r)),
                        _ => not_found(),
                    }
                }
                _ => not_found(),
            }
        }
    }
}

fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}

fn encode(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~:".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn page_url(s: &Shared, path: &str, query: &[(String, String)], page: usize) -> String {
    let mut q: Vec<String> = query
        .iter()
        .filter(|(k, _)| k != "page")
        .map(|(k, v)| format!("{}={}", encode(k), encode(v)))
        .collect();
    q.push(format!("page={page}"));
    format!("{}{}?{}", s.base_url, path, q.join("&"))
}

fn paginate(s: &Shared, path: &str, query: &[(String, String)], page: u32, items: Vec<Value>) -> Reply {
    let default = match s.platform {
        Platform::Github => 30,
        Platform::Gitlab => 20,
    };
    let per_page = param(query, "per_page").and_then(|p| p.parse::<usize>().ok()).unwrap_or(default).clamp(1, 100);
    let page = page.max(1) as usize;
    let total = items.len();
    let pages = total.div_ceil(per_page).max(1);
    let slice: Vec<Value> = items.into_iter().skip((page - 1) * per_page).take(per_page).collect();
    let mut reply = Reply::json(200, &Value::Array(slice));
    match s.platform {
        Platform::Github => {
            if page < pages {
                let link = format!(
                    "<{}>; rel=\"next\", <{}>; rel=\"last\"",
                    page_url(s, path, query, page + 1),
                    page_url(s, path, query, pages)
                );
                reply.headers.push(("link".into(), link));
            }
        }
        Platform::Gitlab => {
            let next = if page < pages { (page + 1).to_string() } else { String::new() };
            reply.headers.push(("x-page".into(), page.to_string()));
            reply.headers.push(("x-per-page".into(), per_page.to_string()));
            reply.headers.push(("x-total".into(), total.to_string()));
            reply.headers.push(("x-total-pages".into(), pages.to_string()));
            reply.headers.push(("x-next-page".into(), next));
        }
    }
    reply
}
