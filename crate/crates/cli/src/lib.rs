//! Scenario-driven front end for `qtraj`: one TOML file describes one study,
//! the selected subcommand runs it and writes a CSV or JSON table.

pub mod config;
pub mod run;
pub mod table;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use config::{ConfigError, Format, ScenarioConfig, Task, Violation};
use run::RunError;
use table::{Metadata, ResultTable};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One command-line call: the subcommand plus overrides of the document.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub task: Task,
    pub config: PathBuf,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(RunError),
    Io { path: String, message: String },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Run(e) => write!(f, "{e}"),
            CliError::Io { path, message } => write!(f, "{path}: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Io { .. } => 1,
        }
    }

    /// Machine-readable record written to stderr on failure.
    pub fn record(&self) -> Value {
        let body = match self {
            CliError::Config(ConfigError::Syntax { message, line, column }) => {
                json!({ "kind": "syntax", "message": message, "line": line, "column": column })
            }
            CliError::Config(ConfigError::Schema(v)) => json!({ "kind": "schema", "message": self.to_string(), "violations": v }),
            CliError::Run(e) => json!({ "kind": "run", "module": e.module, "operation": e.operation, "message": e.message }),
            CliError::Io { path, message } => json!({ "kind": "io", "path": path, "message": message }),
        };
        json!({ "error": body })
    }
}

/// Parses, applies command-line overrides and checks that the document
/// declares the subcommand's task.
pub fn load(inv: &Invocation) -> Result<(ScenarioConfig, String), CliError> {
    let text = std::fs::read_to_string(&inv.config).map_err(|e| CliError::Io { path: inv.config.display().to_string(), message: e.to_string() })?;
    let mut cfg = config::parse_config_in(&text, inv.config.parent().unwrap_or(Path::new("."))).map_err(CliError::Config)?;
    if cfg.task != inv.task {
        return Err(CliError::Config(ConfigError::Schema(vec![Violation {
            path: "task".into(),
            message: format!("document declares task {} but the subcommand is {}", cfg.task.name(), inv.task.name()),
            line: None,
            column: None,
        }])));
    }
    if inv.seed.is_some() {
        cfg.seed = inv.seed;
    }
    if let Some(f) = inv.format {
        cfg.format = f;
    }
    if inv.output.is_some() {
        cfg.output_path = inv.output.clone();
    }
    let hash = format!("{:x}", Sha256::digest(text.as_bytes()));
    Ok((cfg, hash))
}

/// Renders `table` in the configured format.
pub fn render(cfg: &ScenarioConfig, table: &ResultTable, meta: &Metadata) -> String {
    match cfg.format {
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(meta),
    }
}

/// Runs one invocation end to end and writes the table (stdout when no path
/// is configured).
pub fn execute(inv: &Invocation) -> Result<(), CliError> {
    let (cfg, hash) = load(inv)?;
    let start = Instant::now();
    let table = run::run_scenario(&cfg).map_err(CliError::Run)?;
    let meta = Metadata {
        task: cfg.task.name().into(),
        config_sha256: hash,
        seed: cfg.seed,
        version: VERSION.into(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let text = render(&cfg, &table, &meta);
    match &cfg.output_path {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() }),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io { path: "<stdout>".into(), message: e.to_string() }),
    }
}
