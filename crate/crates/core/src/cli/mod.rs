//! Command-line front end: `bench`, `race <scenario>` and `trace <scenario>`.
//!
//! Every output starts with a line `# dyntraj <command> config_sha256=<hex>
//! seed=<n>` (CSV) or carries the same two fields at the top level (JSON).
//! The hash is taken over the scenario as parsed, after command-line
//! overrides, so two outputs with the same hash and seed came from the same
//! configuration.

pub mod bench;
pub mod scenario;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::TrajError;
use crate::poly::Vec3;
use crate::sim::{run_race, run_trace, RaceResult, TimingMode, TraceRecord};

use self::bench::BenchReport;
use self::scenario::{RaceScenario, SchemaError, TraceScenario};

#[derive(Debug, Parser)]
#[command(name = "dyntraj", version, about = "Dynamic minimum-snap trajectories with Gaussian modifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the scenario timing mode.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Write to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time base solves and stacked modifier evaluation.
    Bench {
        #[arg(long, default_value_t = bench::REPETITIONS)]
        repetitions: usize,
        #[arg(long, default_value_t = bench::WARMUP)]
        warmup: usize,
    },
    /// Run every (speed limit, inflation) cell of a race scenario.
    Race { scenario: PathBuf },
    /// Sample the reference of a scripted scenario.
    Trace { scenario: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Wall,
    Virtual,
}

impl From<Mode> for TimingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Wall => TimingMode::Wall,
            Mode::Virtual => TimingMode::Virtual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug)]
pub enum CliError {
    Schema(SchemaError),
    Solver(String),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(e) => write!(f, "scenario error {e}"),
            CliError::Solver(e) => write!(f, "solver failure: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<TrajError> for CliError {
    fn from(e: TrajError) -> Self {
        match e {
            TrajError::InvalidInput(message) => CliError::Schema(SchemaError {
                path: String::new(),
                message,
            }),
            other => CliError::Solver(other.to_string()),
        }
    }
}

/// Parses `std::env::args`, runs the command and maps the outcome to the
/// process exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dyntraj: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let text = match &cli.command {
        Command::Bench { repetitions, warmup } => {
            let report = bench::run_bench(*warmup, (*repetitions).max(2))?;
            render_bench(&report, cli.format, cli.seed.unwrap_or(0))
        }
        Command::Race { scenario } => {
            let mut s: RaceScenario = load(scenario)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            if let Some(mode) = cli.mode {
                s.timing = mode.into();
            }
            let (rows, failures) = race_rows(&s)?;
            let text = render_race(&rows, cli.format, &config_hash(&s), s.seed);
            emit(cli.out.as_deref(), &text)?;
            if failures > 0 {
                return Err(CliError::Solver(format!("{failures} regeneration(s) failed")));
            }
            return Ok(());
        }
        Command::Trace { scenario } => {
            let mut s: TraceScenario = load(scenario)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            if let Some(mode) = cli.mode {
                s.timing = mode.into();
            }
            let result = run_trace(&s.config())?;
            if result.solver_failures > 0 {
                return Err(CliError::Solver(format!("{} regeneration(s) failed", result.solver_failures)));
            }
            render_trace(&result.records, cli.format, &config_hash(&s), s.seed)
        }
    };
    emit(cli.out.as_deref(), &text)
}

fn load<T: serde::de::DeserializeOwned + scenario::Versioned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    scenario::parse(&text).map_err(CliError::Schema)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("scenario types serialise");
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One line of the race table: means over the runs of a grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceRow {
    pub speed_limit: f64,
    pub inflation: f64,
    pub reference_max_speed: f64,
    pub reference_mean_speed: f64,
    pub max_speed: f64,
    pub mean_speed: f64,
    pub elapsed_time: f64,
    pub success: f64,
    pub runs: u64,
}

pub const RACE_COLUMNS: &str =
    "speed_limit,inflation,reference_max_speed,reference_mean_speed,max_speed,mean_speed,elapsed_time,success,runs";

/// Runs the scenario grid. Also returns the number of failed solves.
pub fn race_rows(s: &RaceScenario) -> Result<(Vec<RaceRow>, usize), CliError> {
    if s.runs == 0 {
        return Err(CliError::Schema(SchemaError {
            path: "runs".into(),
            message: "must be at least 1".into(),
        }));
    }
    let mut rows = Vec::new();
    let mut failures = 0;
    for mut config in s.grid() {
        let results: Vec<RaceResult> = (0..s.runs)
            .map(|k| {
                config.seed = s.seed.wrapping_add(k);
                run_race(&config)
            })
            .collect::<Result<_, _>>()?;
        failures += results.iter().map(|r| r.solver_failures).sum::<usize>();
        let mean = |f: fn(&RaceResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
        rows.push(RaceRow {
            speed_limit: config.speed_limit,
            inflation: config.inflation,
            reference_max_speed: mean(|r| r.reference_max_speed),
            reference_mean_speed: mean(|r| r.reference_mean_speed),
            max_speed: mean(|r| r.max_speed),
            mean_speed: mean(|r| r.mean_speed),
            elapsed_time: mean(|r| r.elapsed_time),
            success: mean(|r| r.success_rate),
            runs: s.runs,
        });
    }
    Ok((rows, failures))
}

fn header(command: &str, hash: &str, seed: u64) -> String {
    format!("# dyntraj {command} config_sha256={hash} seed={seed}\n")
}

#[derive(Serialize)]
struct JsonOutput<'a, T: Serialize> {
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn json<T: Serialize>(command: &str, hash: &str, seed: u64, body: T) -> String {
    let out = JsonOutput {
        command,
        config_sha256: hash,
        seed,
        body,
    };
    let mut text = serde_json::to_string_pretty(&out).expect("output types serialise");
    text.push('\n');
    text
}

pub fn render_race(rows: &[RaceRow], format: Format, hash: &str, seed: u64) -> String {
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Body<'a> {
                rows: &'a [RaceRow],
            }
            json("race", hash, seed, Body { rows })
        }
        Format::Csv => {
            let mut out = header("race", hash, seed);
            out.push_str(RACE_COLUMNS);
            out.push('\n');
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.speed_limit,
                    r.inflation,
                    r.reference_max_speed,
                    r.reference_mean_speed,
                    r.max_speed,
                    r.mean_speed,
                    r.elapsed_time,
                    r.success,
                    r.runs
                );
            }
            out
        }
    }
}

pub const TRACE_COLUMNS: &str = "t,position_x,position_y,position_z,velocity_x,velocity_y,velocity_z,\
acceleration_x,acceleration_y,acceleration_z,vehicle_position_x,vehicle_position_y,vehicle_position_z,\
vehicle_velocity_x,vehicle_velocity_y,vehicle_velocity_z,epoch,active_modifiers";

fn push_vec(out: &mut String, v: Option<Vec3>) {
    match v {
        Some(v) => {
            let _ = write!(out, ",{},{},{}", v.x, v.y, v.z);
        }
        None => out.push_str(",,,"),
    }
}

pub fn render_trace(records: &[TraceRecord], format: Format, hash: &str, seed: u64) -> String {
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Body<'a> {
                records: &'a [TraceRecord],
            }
            json("trace", hash, seed, Body { records })
        }
        Format::Csv => {
            let mut out = header("trace", hash, seed);
            out.push_str(TRACE_COLUMNS);
            out.push('\n');
            for r in records {
                let _ = write!(out, "{}", r.t);
                push_vec(&mut out, Some(r.position));
                push_vec(&mut out, Some(r.velocity));
                push_vec(&mut out, Some(r.acceleration));
                push_vec(&mut out, r.vehicle_position);
                push_vec(&mut out, r.vehicle_velocity);
                let _ = writeln!(out, ",{},{}", r.epoch, r.active_modifiers);
            }
            out
        }
    }
}

pub const BENCH_COLUMNS: &str = "benchmark,count,mean_s,std_s,repetitions";

pub fn render_bench(report: &BenchReport, format: Format, seed: u64) -> String {
    let hash = config_hash(&(bench::SOLVE_SIZES, bench::LGM_COUNTS));
    match format {
        Format::Json => json("bench", &hash, seed, report),
        Format::Csv => {
            let mut out = header("bench", &hash, seed);
            out.push_str(BENCH_COLUMNS);
            out.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.benchmark, r.count, r.timing.mean, r.timing.std, r.timing.repetitions
                );
            }
            let _ = writeln!(out, "# solve6_over_lgm64={}", report.solve6_over_lgm64);
            let _ = writeln!(out, "# lgm512_over_lgm64={}", report.lgm512_over_lgm64);
            out
        }
    }
}
