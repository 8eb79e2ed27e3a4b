//! `pdmw`: operator command line for the warehouse.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error,
//! 3 pipeline abort, 4 authentication or authorization failure.
//!
//! Secrets never travel as arguments. Passwords come from `PDMW_PASSWORD`
//! (or `PDMW_NEW_PASSWORD` for `user add`) or an interactive prompt, and a
//! session id from `PDMW_SESSION`.

mod auth;
mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pdm_warehouse::config::ConfigError;
use pdm_warehouse::jobcontrol::JobError;
use pdm_warehouse::store::StoreError;

#[derive(Debug, Parser)]
#[command(
    name = "pdmw",
    version,
    about = "Embedded product-data-management warehouse"
)]
pub struct Cli {
    /// Warehouse directory; overrides the config file.
    #[arg(long, global = true, env = "PDMW_WAREHOUSE")]
    warehouse: Option<PathBuf>,
    /// Config file; defaults to ./pdmw.toml when present.
    #[arg(long, global = true, env = "PDMW_CONFIG")]
    config: Option<PathBuf>,
    /// Fixed current time (RFC 3339) instead of the wall clock.
    #[arg(long, global = true, env = "PDMW_CLOCK")]
    clock: Option<String>,
    /// Render output as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Authenticate as this user; the password is read from PDMW_PASSWORD
    /// or prompted for. Without it, PDMW_SESSION is used.
    #[arg(long, global = true)]
    user: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty warehouse.
    Init,
    /// Row counts per relation.
    Status,
    /// Manage logins.
    #[command(subcommand)]
    User(UserCommand),
    /// Open a session and print its id.
    Login {
        #[arg(long)]
        username: String,
    },
    /// Run the load pipeline.
    #[command(subcommand)]
    Etl(EtlCommand),
    /// Render a report.
    Report {
        kind: ReportKind,
        /// Row limit for `history`.
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Schedule and run jobs.
    #[command(subcommand)]
    Jobs(JobsCommand),
    /// Submit an instruction and print its acknowledgement.
    Submit {
        instruction: String,
        #[arg(long)]
        token: Option<String>,
    },
    /// Record an output against an input.
    Output {
        #[arg(long)]
        input: u64,
        payload: String,
    },
    /// The caller's inputs and outputs, newest first.
    History {
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Write a fresh snapshot and truncate the journal.
    Snapshot,
}

#[derive(Debug, Subcommand)]
enum UserCommand {
    /// Add a login. The first login may be added without credentials.
    Add(UserAdd),
}

#[derive(Debug, Args)]
pub struct UserAdd {
    #[arg(long)]
    username: String,
    /// Full name.
    #[arg(long)]
    name: String,
    /// Organisation name; created when missing.
    #[arg(long)]
    org: String,
    /// Type code for a newly created organisation.
    #[arg(long, default_value = "ORG")]
    org_type: String,
    /// Comma-separated permissions; `admin` for the first login by default.
    #[arg(long)]
    rights: Option<String>,
    #[arg(long)]
    email: Option<String>,
    #[arg(long)]
    role: Option<String>,
}

#[derive(Debug, Subcommand)]
enum EtlCommand {
    /// Load configured sources.
    Run {
        /// Only these sources, in config order.
        #[arg(long = "source")]
        sources: Vec<String>,
        /// Ignore watermarks and re-read every row.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportKind {
    Projects,
    Aggregates,
    History,
}

#[derive(Debug, Subcommand)]
enum JobsCommand {
    /// Schedule jobs from the config file (all when none named).
    Add { names: Vec<String> },
    /// Scheduled jobs and their next due times.
    List,
    /// Start and execute every due run.
    Tick,
    /// Run history.
    Status { name: Option<String> },
}

#[derive(Debug)]
pub enum CliError {
    Runtime(String),
    Usage(String),
    Abort(String),
    Auth(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Abort(_) => 3,
            CliError::Auth(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Runtime(m) | CliError::Usage(m) | CliError::Abort(m) | CliError::Auth(m) => m,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Occupied(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<JobError> for CliError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::InvalidSpec(_) | JobError::DuplicateName(_) | JobError::UnknownJob(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult = Result<String, CliError>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("PDMW_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("error")),
        )
        .with_writer(std::io::stderr)
        .without_time()
        .init();
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
