//! Command-line driver: scenario files in, a JSON report and optional CSV tables out.

pub mod commands;
pub mod scenario;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use homoclinic::Error;
use serde::Serialize;
use serde_json::Value;

use commands::{CommandResult, Outcome, Table};
use scenario::Scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESES_FAILED: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Spectrum,
    Projectors,
    Index,
    Class,
    Certify,
    Solve,
    Realize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "homoclinic", version, about = "Dichotomies, Fredholm indices and bifurcation certificates for discrete systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// csv additionally writes the tables next to report.json.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Overrides the seed in the scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Dichotomy spectrum per parameter sample.
    Spectrum(Common),
    /// Half-line projector families and their dichotomy constants.
    Projectors(Common),
    /// Fredholm index by the subspace and truncated-operator routes.
    Index(Common),
    /// Index bundle class over the parameter loop.
    Class(Common),
    /// Bifurcation certificate and heuristic localization.
    Certify(Common),
    /// Bounded half-line solutions of the inhomogeneous equation.
    Solve(Common),
    /// Tabulate the field into a standalone scenario.
    Realize(Common),
}

impl Sub {
    fn split(&self) -> (Command, &Common) {
        match self {
            Sub::Spectrum(c) => (Command::Spectrum, c),
            Sub::Projectors(c) => (Command::Projectors, c),
            Sub::Index(c) => (Command::Index, c),
            Sub::Class(c) => (Command::Class, c),
            Sub::Certify(c) => (Command::Certify, c),
            Sub::Solve(c) => (Command::Solve, c),
            Sub::Realize(c) => (Command::Realize, c),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Command,
    pub seed: u64,
    pub scenario: Value,
    pub status: String,
    pub exit_code: i32,
    pub warnings: Vec<String>,
    pub results: Value,
}

pub fn exit_code_of(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Domain(_) | Error::NotABundle(_) => EXIT_INPUT,
        Error::Certification(_) => EXIT_HYPOTHESES_FAILED,
        _ => EXIT_NUMERIC,
    }
}

/// Everything a run produces, before anything touches the disk.
pub struct RunOutput {
    pub report: Report,
    pub tables: Vec<Table>,
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n"
    }
}

fn failure(command: Command, seed: u64, scenario: Value, e: &Error) -> RunOutput {
    let code = exit_code_of(e);
    RunOutput {
        report: Report {
            tool: "homoclinic",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            scenario,
            status: if code == EXIT_INPUT { "input_error".into() } else { "numeric_failure".into() },
            exit_code: code,
            warnings: vec![e.to_string()],
            results: Value::Null,
        },
        tables: Vec::new(),
        files: Vec::new(),
    }
}

/// Run one command on a parsed scenario in the current rayon pool.
pub fn execute(command: Command, mut sc: Scenario, seed_override: Option<u64>) -> RunOutput {
    if let Some(s) = seed_override {
        sc.seed = s;
    }
    let seed = sc.seed;
    let built = match sc.build() {
        Ok(b) => b,
        Err(e) => return failure(command, seed, serde_json::to_value(&sc).unwrap_or(Value::Null), &e),
    };
    sc.materialize(&built);
    let echo = serde_json::to_value(&sc).unwrap_or(Value::Null);
    let r: homoclinic::Result<CommandResult> = match command {
        Command::Spectrum => commands::spectrum(&sc, &built),
        Command::Projectors => commands::projectors(&sc, &built),
        Command::Index => commands::index(&sc, &built),
        Command::Class => commands::class(&sc, &built),
        Command::Certify => commands::certify(&sc, &built),
        Command::Solve => commands::solve(&sc, &built, seed),
        Command::Realize => commands::realize(&sc, &built),
    };
    match r {
        Err(e) => failure(command, seed, echo, &e),
        Ok(cr) => {
            let (status, code) = match cr.outcome {
                Outcome::Ok => ("ok", EXIT_OK),
                Outcome::HypothesesFailed => ("hypotheses_failed", EXIT_HYPOTHESES_FAILED),
                Outcome::Indeterminate => ("indeterminate", EXIT_NUMERIC),
            };
            RunOutput {
                report: Report {
                    tool: "homoclinic",
                    version: env!("CARGO_PKG_VERSION"),
                    command,
                    seed,
                    scenario: echo,
                    status: status.into(),
                    exit_code: code,
                    warnings: cr.warnings,
                    results: cr.results,
                },
                tables: cr.tables,
                files: cr.files,
            }
        }
    }
}

/// Load, run in a pool of `threads` workers, and return the output.
pub fn execute_file(command: Command, path: &Path, seed: Option<u64>, threads: Option<usize>) -> RunOutput {
    let sc = match scenario::load(path) {
        Ok(s) => s,
        Err(e) => return failure(command, seed.unwrap_or(0), Value::Null, &e),
    };
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t.max(1));
    }
    match b.build() {
        Ok(pool) => pool.install(|| execute(command, sc, seed)),
        Err(e) => failure(command, seed.unwrap_or(0), Value::Null, &Error::Input(format!("thread pool: {e}"))),
    }
}

fn write_table(dir: &Path, t: &Table) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(dir.join(&t.name))?;
    w.write_record(&t.header)?;
    for r in &t.rows {
        w.write_record(r)?;
    }
    w.flush()
}

pub fn write_output(out: &RunOutput, dir: &Path, format: Format) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), out.report_json())?;
    for (name, text) in &out.files {
        std::fs::write(dir.join(name), text)?;
    }
    if format == Format::Csv {
        for t in &out.tables {
            write_table(dir, t)?;
        }
    }
    Ok(())
}

/// Parse arguments, run, write outputs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let (command, common) = cli.command.split();
    let out = execute_file(command, &common.scenario, common.seed, common.threads);
    if let Err(e) = write_output(&out, &common.out, common.format) {
        eprintln!("cannot write outputs to {}: {e}", common.out.display());
        return EXIT_INPUT;
    }
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}: {}", out.report.status, common.out.join("report.json").display());
    out.report.exit_code
}
