use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use chrono::Utc;
use revmine::collector::{CollectOptions, RetryPolicy};
use revmine::http::HttpClient;
use revmine::platform_access::SecretString;
use revmine::time::VirtualClock;
use revmine::{PlatformConfig, PlatformKind};
use revmine_fixtures::{ForgeOptions, ForgeServer, Platform, SynthConfig, SyntheticProject};

/// Every fixture server in the suite accepts this token and nothing else.
pub const TOKEN: &str = "rvm-acceptance-7c2f91d4e8b3-token";

pub const QUERY: &str =
    "Collect the commits of all the merge requests created in 2023 that include at least one reviewer comment.";

/// Returns `Err` from the enclosing criterion when the condition fails.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Scratch space shared by all criteria; scanned for the token at the end.
pub fn root() -> &'static Path {
    static ROOT: OnceLock<tempfile::TempDir> = OnceLock::new();
    ROOT.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

pub fn scratch(name: &str) -> PathBuf {
    let dir = root().join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Text that left the system outside the workspace: HTTP bodies, CLI
/// output, log lines.
static EMITTED: Mutex<Vec<(String, String)>> = Mutex::new(Vec::new());

pub fn record(origin: impl Into<String>, text: impl Into<String>) {
    EMITTED.lock().unwrap().push((origin.into(), text.into()));
}

pub fn emitted() -> Vec<(String, String)> {
    EMITTED.lock().unwrap().clone()
}

#[derive(Clone, Default)]
pub struct LogBuffer(Arc<Mutex<Vec<u8>>>);

impl Write for LogBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl LogBuffer {
    pub fn contents(&self) -> String {
        String::from_utf8_lossy(&self.0.lock().unwrap()).into_owned()
    }
}

/// In-process logs at debug level into a buffer.
pub fn capture_logs() -> LogBuffer {
    let buf = LogBuffer::default();
    let writer = buf.clone();
    tracing_subscriber::fmt()
        .with_env_filter("debug,hyper=info,reqwest=info,h2=info")
        .with_ansi(false)
        .with_writer(move || writer.clone())
        .init();
    buf
}

pub fn server(platform: Platform, synth: SynthConfig, latency_ms: u64) -> ForgeServer {
    let opts = ForgeOptions {
        token: TOKEN.into(),
        latency: Duration::from_millis(latency_ms),
        ..ForgeOptions::new(platform)
    };
    ForgeServer::start_with(platform, SyntheticProject::generate(&synth), opts)
}

pub fn kind_of(p: Platform) -> PlatformKind {
    match p {
        Platform::Github => PlatformKind::Github,
        Platform::Gitlab => PlatformKind::Gitlab,
    }
}

pub fn config_for(srv: &ForgeServer, p: Platform) -> PlatformConfig {
    let kind = kind_of(p);
    PlatformConfig {
        kind,
        base_url: srv.base_url().into(),
        token: SecretString::new(srv.token()),
        project: srv.project().into(),
        api_version: kind.default_api_version().into(),
    }
}

pub fn client() -> HttpClient {
    HttpClient::new(Duration::from_secs(10))
}

/// Options on a virtual clock, so backoff and `Retry-After` cost no wall time.
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

pub fn mock_llm() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mock_llm.json")
}

pub fn cli_env(srv: &ForgeServer, kind: &str) -> Vec<(&'static str, String)> {
    vec![
        ("REVMINE_PLATFORM", kind.into()),
        ("REVMINE_TOKEN", srv.token()),
        ("REVMINE_PROJECT", srv.project().into()),
        ("REVMINE_BASE_URL", srv.base_url().into()),
    ]
}

pub fn cli_command(args: &[&str], env: &[(&str, String)]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_revmine"));
    c.args(args).env_clear().envs(env.iter().map(|(k, v)| (*k, v.as_str())));
    c
}

/// Runs the binary with debug logging and records everything it prints.
pub fn cli(args: &[&str], env: &[(&str, String)]) -> Output {
    let mut full = vec!["-vv"];
    full.extend_from_slice(args);
    let out = cli_command(&full, env).output().unwrap();
    record(format!("revmine {} (stdout)", args.join(" ")), String::from_utf8_lossy(&out.stdout));
    record(format!("revmine {} (stderr)", args.join(" ")), String::from_utf8_lossy(&out.stderr));
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
