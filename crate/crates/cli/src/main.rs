//! `bento`: run measurement boxes, clean task state, list tasks, re-render
//! reports, and host the peer processes the networked tasks talk to.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use bento_core::runner::REPORT_FILE;
use bento_core::{clean, execute_box, parse_box, render_report, Registry, ReportFormat, RunReport, TaskKind};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bento", version, about = "Extensible benchmark harness")]
struct Cli {
    /// Log harness progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Directory holding plugin task directories.
    #[arg(long, global = true, env = "BENTO_PLUGINS")]
    plugins: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every test of a measurement box.
    Run {
        /// Box file (JSON).
        box_path: PathBuf,
        /// Run directory; defaults to ./bento-runs/<timestamp>.
        #[arg(long)]
        workspace: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        /// Overwrite an existing report in the workspace.
        #[arg(long)]
        force: bool,
    },
    /// Run the clean phase of tasks and remove their artifacts.
    Clean {
        tasks: Vec<String>,
        /// Clean every task that left state in the workspace.
        #[arg(long, conflicts_with = "tasks")]
        all: bool,
        #[arg(long)]
        workspace: PathBuf,
    },
    /// List available tasks.
    List,
    /// Re-render the report of a finished run.
    Report {
        run_dir: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Echo sink for `net_tcp` sources on another machine.
    ServeNet {
        #[arg(long, default_value = "0.0.0.0:7700")]
        listen: String,
    },
    /// Storage node for `pred_pushdown`.
    ServeStorageNode {
        #[arg(long, default_value = "0.0.0.0:7710")]
        listen: String,
        /// Directory holding the generated tables.
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// One key-range partition server for `index`.
    ServeIndexPartition {
        #[arg(long, default_value = "0.0.0.0:7720")]
        listen: String,
    },
}

/// Exit status for a run in which at least one test failed.
const TESTS_FAILED: u8 = 2;

fn registry(plugins: Option<&Path>) -> Result<Registry> {
    let mut reg = bento_tasks::builtin_registry();
    if let Some(root) = plugins {
        let warnings = reg.load_plugins(root).with_context(|| format!("loading plugins from {}", root.display()))?;
        for w in warnings {
            log::warn!("{w}");
        }
    }
    Ok(reg)
}

fn default_workspace() -> PathBuf {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    PathBuf::from("bento-runs").join(format!("{}-{:03}", now.as_secs(), now.subsec_millis()))
}

fn cmd_run(
    box_path: &Path,
    workspace: Option<PathBuf>,
    format: ReportFormat,
    force: bool,
    plugins: Option<&Path>,
) -> Result<ExitCode> {
    let mut reg = registry(plugins)?;
    let text = std::fs::read_to_string(box_path).with_context(|| format!("reading {}", box_path.display()))?;
    let mbox = parse_box(&text, &reg).with_context(|| format!("{}", box_path.display()))?;
    let workspace = workspace.unwrap_or_else(default_workspace);
    if workspace.join(REPORT_FILE).exists() && !force {
        bail!("{} already holds a report; pass --force to overwrite", workspace.display());
    }
    log::info!("workspace {}", workspace.display());
    let report = execute_box(&mbox, &workspace, &mut reg)?;
    print!("{}", render_report(&report, format));
    if report.has_failures() {
        for (task, id) in report.failed_tests() {
            log::warn!("{task}#{id} failed");
        }
        return Ok(ExitCode::from(TESTS_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

/// Task directories present in a workspace, i.e. tasks that left state behind.
fn tasks_in(workspace: &Path, reg: &Registry) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(workspace).with_context(|| format!("reading {}", workspace.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_dir() && reg.contains(&name) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_clean(tasks: Vec<String>, all: bool, workspace: &Path, plugins: Option<&Path>) -> Result<ExitCode> {
    let mut reg = registry(plugins)?;
    let names = if all { tasks_in(workspace, &reg)? } else { tasks };
    if names.is_empty() && !all {
        bail!("name the tasks to clean or pass --all");
    }
    clean(&mut reg, &names, workspace)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_list(plugins: Option<&Path>) -> Result<ExitCode> {
    let reg = registry(plugins)?;
    for d in reg.list() {
        let kind = match d.kind {
            TaskKind::Builtin => "builtin",
            TaskKind::Plugin => "plugin",
        };
        let params: Vec<&str> = d.schema.entries().iter().map(|p| p.name.as_str()).collect();
        let metrics: Vec<&str> = d.metrics.iter().map(|m| m.name.as_str()).collect();
        println!("{:<14} {:<8} params: {}", d.name, kind, params.join(", "));
        println!("{:<14} {:<8} metrics: {}", "", "", metrics.join(", "));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(run_dir: &Path, format: ReportFormat) -> Result<ExitCode> {
    let path = run_dir.join(REPORT_FILE);
    let report = RunReport::read_json(&path).with_context(|| format!("reading {}", path.display()))?;
    print!("{}", render_report(&report, format));
    Ok(ExitCode::SUCCESS)
}

fn serve(server: std::io::Result<bento_tasks::wire::Server>, what: &str) -> Result<ExitCode> {
    let server = server.with_context(|| format!("starting {what}"))?;
    eprintln!("{what} listening on {}", server.local_addr());
    server.wait();
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let plugins = cli.plugins.as_deref();
    match cli.command {
        Command::Run { box_path, workspace, format, force } => cmd_run(&box_path, workspace, format, force, plugins),
        Command::Clean { tasks, all, workspace } => cmd_clean(tasks, all, &workspace, plugins),
        Command::List => cmd_list(plugins),
        Command::Report { run_dir, format } => cmd_report(&run_dir, format),
        Command::ServeNet { listen } => {
            let sink = bento_tasks::network::spawn_sink(&listen).map_err(std::io::Error::other);
            serve(sink, "echo sink")
        }
        Command::ServeStorageNode { listen, data_dir } => {
            std::fs::create_dir_all(&data_dir)?;
            serve(bento_tasks::pushdown::spawn_storage_node(&listen, data_dir), "storage node")
        }
        Command::ServeIndexPartition { listen } => {
            serve(bento_tasks::index::spawn_partition_server(&listen), "index partition")
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
