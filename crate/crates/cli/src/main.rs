//! `revmine`: the pipeline from a terminal.
//!
//! Exit codes: 0 success, 1 usage, 2 auth/permission, 3 partial
//! collection, 4 validation, 5 runtime/infrastructure.
//!
//! Tokens and API keys are read from `REVMINE_*` variables or the config
//! file only; no flag accepts them.

mod commands;
mod exit;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exit::Failure;

/// Env var naming a default config file.
pub const ENV_CONFIG: &str = "REVMINE_CONFIG";

#[derive(Parser)]
#[command(name = "revmine", version, about = "Mine code review data from GitHub and GitLab")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Platform credentials.
    Auth {
        #[command(subcommand)]
        command: AuthCommand,
    },
    /// Collection plans.
    Plan {
        #[command(subcommand)]
        command: PlanCommand,
    },
    /// Execute or resume a collection run.
    Collect(CollectArgs),
    /// Datasets built from runs.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Analyses over a dataset.
    Analyze(AnalyzeArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Clone, Default)]
pub struct Target {
    /// TOML config file ([platform] and [llm] sections). Defaults to $REVMINE_CONFIG.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// github or gitlab
    #[arg(long, value_name = "K")]
    pub platform: Option<String>,
    /// owner/name (GitHub) or numeric id / path (GitLab)
    #[arg(long, value_name = "P")]
    pub project: Option<String>,
    /// API root, for self-hosted instances
    #[arg(long, value_name = "U")]
    pub base_url: Option<String>,
}

#[derive(Subcommand)]
enum AuthCommand {
    /// Check token, permissions and endpoints.
    Verify(Target),
}

#[derive(Subcommand)]
enum PlanCommand {
    /// Create a plan from a query or a file. Never executes it.
    New(PlanNewArgs),
}

#[derive(Args)]
pub struct PlanNewArgs {
    /// Natural-language query.
    #[arg(long, value_name = "TEXT", conflicts_with = "from_file", required_unless_present = "from_file")]
    pub query: Option<String>,
    /// Canned completions instead of a live LLM.
    #[arg(long, value_name = "PATH", requires = "query")]
    pub mock_llm: Option<PathBuf>,
    /// Plan document to validate and normalize.
    #[arg(long, value_name = "PATH")]
    pub from_file: Option<PathBuf>,
    /// Where to write the plan; stdout if omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write the refinement transcript here.
    #[arg(long, value_name = "PATH", requires = "query")]
    pub transcript: Option<PathBuf>,
    /// Feedback passed to the LLM on top of the query.
    #[arg(long, value_name = "TEXT", requires = "query")]
    pub notes: Option<String>,
    #[command(flatten)]
    pub target: Target,
}

#[derive(Args)]
pub struct CollectArgs {
    /// Plan file. With --resume, must match the stored plan.
    #[arg(long, value_name = "PATH", required_unless_present = "resume")]
    pub plan: Option<PathBuf>,
    /// Archive root; each run gets a subdirectory.
    #[arg(long, value_name = "DIR")]
    pub archive: PathBuf,
    /// Continue an existing run instead of starting one.
    #[arg(long, value_name = "RUN_ID")]
    pub resume: Option<String>,
    /// Concurrent requests.
    #[arg(long, value_name = "P")]
    pub parallel: Option<usize>,
    #[command(flatten)]
    pub target: Target,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build CSV tables from a run.
    Build(DatasetBuildArgs),
}

#[derive(Args)]
pub struct DatasetBuildArgs {
    /// Run directory.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    /// File extensions, e.g. .java,.kt
    #[arg(long = "ext", value_name = "EXT", value_delimiter = ',')]
    pub file_extensions: Vec<String>,
    /// Created at or after (RFC 3339 or YYYY-MM-DD).
    #[arg(long, value_name = "TS")]
    pub since: Option<String>,
    /// Created at or before (RFC 3339 or YYYY-MM-DD).
    #[arg(long, value_name = "TS")]
    pub until: Option<String>,
    /// Repeatable; matches titles, descriptions and comments
    #[arg(long = "keyword", value_name = "W")]
    pub keywords: Vec<String>,
    /// open, merged, closed
    #[arg(long = "state", value_name = "S", value_delimiter = ',')]
    pub states: Vec<String>,
    #[arg(long, value_name = "N")]
    pub min_comments: Option<u32>,
    #[arg(long = "author", value_name = "LOGIN")]
    pub authors: Vec<String>,
    /// Metric ids; defaults to the run plan's metrics.
    #[arg(long, value_name = "ID", value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Dataset directory to create.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Single-threaded projection.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub what: AnalyzeCommand,
    /// Dataset directory.
    #[arg(long, value_name = "DIR", global = true)]
    pub dataset: Option<PathBuf>,
    /// Output directory; defaults to <dataset>/analysis.
    #[arg(long, value_name = "DIR", global = true)]
    pub out: Option<PathBuf>,
    /// csv or chart-data (spec only)
    #[arg(long, value_name = "F", global = true, default_value = "csv")]
    pub format: String,
}

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    /// Headline statistics.
    Summary,
    /// Run an analysis spec.
    Spec {
        #[arg(value_name = "SPEC.json")]
        path: PathBuf,
    },
    /// Find comments matching keywords.
    Screen {
        #[arg(long = "pattern", value_name = "W", required = true)]
        patterns: Vec<String>,
    },
}

#[derive(Args)]
pub struct ServeArgs {
    /// Workspace directory for runs and datasets.
    #[arg(long, value_name = "DIR")]
    pub root: PathBuf,
    /// Loopback by default. There is no auth on the API.
    #[arg(long, value_name = "HOST:PORT", default_value = revmine_service::DEFAULT_ADDR)]
    pub addr: String,
    /// Canned completions for POST /plans.
    #[arg(long, value_name = "PATH")]
    pub mock_llm: Option<PathBuf>,
    /// Defaults to $REVMINE_CONFIG.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| default.into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    init_logging(cli.verbose);
    let json = cli.json;
    let outcome = match cli.command {
        Command::Auth { command: AuthCommand::Verify(t) } => commands::auth_verify(&t, json),
        Command::Plan { command: PlanCommand::New(a) } => commands::plan_new(&a, json),
        Command::Collect(a) => commands::collect(&a, json),
        Command::Dataset { command: DatasetCommand::Build(a) } => commands::dataset_build(&a, json),
        Command::Analyze(a) => commands::analyze(&a, json),
        Command::Serve(a) => commands::serve(&a),
    };
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            report_failure(&f, json);
            ExitCode::from(f.code)
        }
    }
}

fn report_failure(f: &Failure, json: bool) {
    if json {
        let body = serde_json::json!({"error": {"exit_code": f.code, "message": f.message, "validation": f.report}});
        println!("{}", serde_json::to_string_pretty(&body).expect("json"));
    } else if let Some(r) = &f.report {
        eprint!("{}", commands::render_report(r));
    }
    eprintln!("error: {}", f.message);
}
