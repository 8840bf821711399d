//! Command-line front end: monthly runs, sensitivity sweeps and synthetic
//! fixtures. `main.rs` only parses arguments and maps errors to exit codes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evdr_core::ingestion::{
    bill_rows, load_manifest, schedule_rows, write_bill, write_fixture, write_schedule,
    IngestError, LoadedScenario, MarketBaseline, RegulationBaseline,
};
use evdr_core::problems::{optimize_month, schedule_baseline, MonthResult, ProblemError, ProblemId};
use evdr_core::synth::{generate, SynthConfig};
use evdr_milp::{EnumerationSolver, ExternalSolver, HighsSolver, MilpError, SolverBackend};
use serde::Serialize;

pub mod sweep;

pub use sweep::{parse_grid, read_sweep, run_sweep, Grid, SweepArgs, SweepParam, SweepRow, SweepSummary};

#[derive(Debug, Parser)]
#[command(name = "evdr", version, about = "Day-ahead EV fleet charging under California DR programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one billing period and write month_result.json, schedule.csv and bill.csv.
    Run(RunArgs),
    /// Re-solve a period over a parameter grid and write sweep.csv.
    Sweep(SweepArgs),
    /// Write a seeded synthetic fixture (manifest plus input files).
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    /// Bundled HiGHS.
    Highs,
    /// Exhaustive enumeration; small models only.
    Reference,
    /// HiGHS-compatible executable named by EVDR_SOLVER_PATH.
    External,
}

#[derive(Clone, Debug, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "highs")]
    pub solver: SolverChoice,
    /// Wall-clock limit per solve, seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Relative MIP gap.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Solver random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SolverArgs {
    pub fn backend(&self) -> Result<Box<dyn SolverBackend + Send + Sync>, CliError> {
        Ok(match self.solver {
            SolverChoice::Highs => Box::new(HighsSolver {
                random_seed: (self.seed % i32::MAX as u64) as i32,
                ..HighsSolver::default()
            }),
            SolverChoice::Reference => Box::new(EnumerationSolver::default()),
            SolverChoice::External => Box::new(ExternalSolver::from_env().map_err(milp_error)?),
        })
    }

    /// Applies --time-limit and --gap over the manifest's limits.
    pub fn apply(&self, l: &mut LoadedScenario) -> Result<(), CliError> {
        if let Some(t) = self.time_limit {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::config("--time-limit must be a positive number of seconds"));
            }
            l.scenario.limits.time_limit = Some(Duration::from_secs_f64(t));
        }
        if let Some(g) = self.gap {
            if !(0.0..1.0).contains(&g) {
                return Err(CliError::config("--gap must lie in [0, 1)"));
            }
            l.scenario.limits.mip_gap = g;
        }
        Ok(())
    }
}

fn parse_problem(s: &str) -> Result<ProblemId, String> {
    s.parse().map_err(|e: ProblemError| e.to_string())
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_problem, default_value = "p1")]
    pub problem: ProblemId,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 2016)]
    pub year: i32,
    #[arg(long, default_value_t = 7)]
    pub month: u32,
    /// Use only the first N days of the month.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub dt: u32,
    #[arg(long)]
    pub vehicles_weekday: Option<usize>,
    #[arg(long)]
    pub vehicles_weekend: Option<usize>,
    /// Shortest and longest connected duration, hours.
    #[arg(long)]
    pub dwell_min: Option<f64>,
    #[arg(long)]
    pub dwell_max: Option<f64>,
    #[arg(long)]
    pub capacity_reserve: Option<f64>,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            seed: self.seed,
            year: self.year,
            month: self.month,
            n_days: self.days,
            dt_minutes: self.dt,
            vehicles_weekday: self.vehicles_weekday.unwrap_or(d.vehicles_weekday),
            vehicles_weekend: self.vehicles_weekend.unwrap_or(d.vehicles_weekend),
            dwell_min_h: self.dwell_min.unwrap_or(d.dwell_min_h),
            dwell_max_h: self.dwell_max.unwrap_or(d.dwell_max_h),
            capacity_reserve_kw: self.capacity_reserve.unwrap_or(d.capacity_reserve_kw),
            ..d
        }
    }
}

// ------------------------------------------------------------------ errors

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Solver,
    Config,
    Data,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Solver => 1,
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: ErrorKind, error: impl Into<anyhow::Error>) -> Self {
        Self { kind, error: error.into() }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, anyhow::anyhow!("{message}"))
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Data, anyhow::anyhow!("{message}"))
    }

    /// `{"error": {"kind", "exit_code", "message", "causes"}}` for stderr.
    pub fn to_json(&self) -> String {
        let causes: Vec<String> = self.error.chain().skip(1).map(|c| c.to_string()).collect();
        serde_json::json!({
            "error": {
                "kind": self.kind,
                "exit_code": self.kind.exit_code(),
                "message": self.error.to_string(),
                "causes": causes,
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} error: {:#}", self.kind, self.error)
    }
}

fn milp_error(e: MilpError) -> CliError {
    let kind = match e {
        MilpError::BackendUnavailable(_) | MilpError::TooManyBinaries { .. } => ErrorKind::Config,
        _ => ErrorKind::Solver,
    };
    CliError::new(kind, e)
}

pub fn problem_error(e: ProblemError) -> CliError {
    let kind = match &e {
        ProblemError::MissingProduct(_) | ProblemError::BaselineMissing(_) => ErrorKind::Config,
        ProblemError::NoSolution { .. }
        | ProblemError::InconsistentObjective { .. }
        | ProblemError::InfeasibleSchedule { .. } => ErrorKind::Solver,
        ProblemError::Milp(_) => {
            let ProblemError::Milp(m) = e else { unreachable!() };
            return milp_error(m);
        }
        _ => ErrorKind::Data,
    };
    CliError::new(kind, e)
}

pub fn ingest_error(e: IngestError, manifest: &Path) -> CliError {
    match e {
        IngestError::Problem(p) => problem_error(p),
        IngestError::Io { ref path, .. } if Path::new(path) == manifest => CliError::new(ErrorKind::Config, e),
        e if e.is_config() => CliError::new(ErrorKind::Config, e),
        e => CliError::new(ErrorKind::Data, e),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ErrorKind::Data, anyhow::Error::new(e).context(format!("writing {}", path.display())))
}

// ----------------------------------------------------------------- helpers

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

/// Loads a manifest and reports its diagnostics through the log.
pub fn load(manifest: &Path, solver: &SolverArgs) -> Result<LoadedScenario, CliError> {
    let mut l = load_manifest(manifest).map_err(|e| ingest_error(e, manifest))?;
    for d in &l.diagnostics {
        log::warn!("{d}");
    }
    for w in &l.warnings {
        log::warn!("{w}");
    }
    solver.apply(&mut l)?;
    Ok(l)
}

/// Solves for the cost-optimal schedule when `id` uses it as a baseline.
pub fn prepare(l: &mut LoadedScenario, id: ProblemId, backend: &dyn SolverBackend) -> Result<(), CliError> {
    let needed = match id {
        ProblemId::P3 => l.scenario.regulation.is_some() && l.regulation_baseline == RegulationBaseline::Fixed,
        ProblemId::P4 => l.scenario.pdr.is_some() && l.pdr_baseline == MarketBaseline::Schedule,
        ProblemId::P5 => l.scenario.dbp.is_some() && l.dbp_baseline == MarketBaseline::Schedule,
        _ => false,
    };
    if needed {
        let schedule = schedule_baseline(&l.scenario, backend).map_err(problem_error)?;
        l.apply_schedule(&schedule);
    }
    Ok(())
}

/// What `run` prints on success.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub problem: ProblemId,
    pub objective_usd: f64,
    pub bill_total_usd: String,
    pub r_as_usd: f64,
    pub r_pdr_usd: f64,
    pub r_dbp_usd: f64,
    pub diagnostics: usize,
    pub artifacts: Vec<PathBuf>,
}

/// Writes the three run artifacts into `out`.
pub fn write_artifacts(r: &MonthResult, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let json = serde_json::to_vec_pretty(r).map_err(|e| CliError::new(ErrorKind::Data, e))?;
    let mut schedule = Vec::new();
    write_schedule(&schedule_rows(r), &mut schedule).map_err(|e| CliError::new(ErrorKind::Data, e))?;
    let mut bill = Vec::new();
    write_bill(&bill_rows(r), &mut bill).map_err(|e| CliError::new(ErrorKind::Data, e))?;
    let files = [
        ("month_result.json", json),
        ("schedule.csv", schedule),
        ("bill.csv", bill),
    ];
    let mut paths = Vec::new();
    for (name, bytes) in files {
        let p = out.join(name);
        write_atomic(&p, &bytes)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn run(args: &RunArgs) -> Result<RunSummary, CliError> {
    let backend = args.solver.backend()?;
    let mut l = load(&args.manifest, &args.solver)?;
    prepare(&mut l, args.problem, backend.as_ref())?;
    let mut r = optimize_month(&l.scenario, args.problem, backend.as_ref()).map_err(problem_error)?;
    r.warnings.extend(l.warnings.iter().cloned());
    let artifacts = write_artifacts(&r, &args.out)?;
    Ok(RunSummary {
        problem: r.problem,
        objective_usd: r.objective,
        bill_total_usd: r.bill.total().to_string(),
        r_as_usd: r.r_as,
        r_pdr_usd: r.r_pdr,
        r_dbp_usd: r.r_dbp,
        diagnostics: l.diagnostics.len(),
        artifacts,
    })
}

pub fn synth(args: &SynthArgs) -> Result<PathBuf, CliError> {
    let cfg = args.config();
    let data = generate(&cfg).map_err(problem_error)?;
    write_fixture(&data, cfg.charger, &args.out).map_err(|e| ingest_error(e, Path::new("")))
}

/// Runs a parsed command and returns the JSON printed on success.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let json = match &cli.command {
        Command::Run(a) => serde_json::to_string(&run(a)?),
        Command::Sweep(a) => serde_json::to_string(&run_sweep(a)?),
        Command::Synth(a) => serde_json::to_string(&serde_json::json!({ "manifest": synth(a)? })),
    };
    json.map_err(|e| CliError::new(ErrorKind::Data, e))
}
