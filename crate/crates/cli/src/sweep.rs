//! Sensitivity sweeps: capacity reserve, connected-duration stretch,
//! participation threshold and baseline mode.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use evdr_core::fleet::flexibility_index;
use evdr_core::ingestion::{LoadedScenario, MarketBaseline, RegulationBaseline};
use evdr_core::problems::{optimize_month, ProblemId};
use evdr_core::stats::pearson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{load, prepare, problem_error, write_atomic, CliError, ErrorKind, SolverArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    /// PDP capacity reserve level, kW (Problem 2).
    PdpCrl,
    /// Connected-duration stretch ratio, at least 1.
    FlexRatio,
    /// Minimum participation threshold of the problem's market, kW.
    RegThreshold,
    /// Free versus fixed (P3) or history versus schedule (P4, P5) baseline.
    BaselineMode,
}

impl SweepParam {
    fn default_problem(self) -> ProblemId {
        match self {
            SweepParam::PdpCrl => ProblemId::P2,
            _ => ProblemId::P3,
        }
    }

    fn allows(self, id: ProblemId) -> bool {
        match self {
            SweepParam::PdpCrl => id == ProblemId::P2,
            SweepParam::FlexRatio => true,
            SweepParam::RegThreshold | SweepParam::BaselineMode => {
                matches!(id, ProblemId::P3 | ProblemId::P4 | ProblemId::P5)
            }
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    /// One or more manifests; several give the flexibility/revenue correlation.
    #[arg(long, required = true, num_args = 1..)]
    pub manifest: Vec<PathBuf>,
    #[arg(long, value_parser = crate::parse_problem)]
    pub problem: Option<ProblemId>,
    #[arg(long, value_enum)]
    pub sweep: SweepParam,
    /// `a:b:step` or a comma-separated list; ignored by baseline_mode.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// Sweep grid values, nonempty and strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid(pub Vec<f64>);

/// Parses `a:b:step` (inclusive of `b` up to rounding) or `x,y,z`. The grid
/// must be nonempty, finite and strictly increasing.
pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let num = |t: &str| -> Result<f64, String> {
        let v: f64 = t.trim().parse().map_err(|_| format!("`{t}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{t}` is not finite"))
        }
    };
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(format!("grid `{s}` must be a:b:step"));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step <= 0.0 {
            return Err("grid step must be positive".into());
        }
        if b < a {
            return Err("grid end lies before its start".into());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        if n > 100_000 {
            return Err("grid has more than 100000 points".into());
        }
        // Multiply rather than accumulate so points do not drift.
        (0..=n).map(|k| a + k as f64 * step).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<f64>, String>>()?
    };
    if values.is_empty() {
        return Err("grid is empty".into());
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err("grid must be strictly increasing".into());
    }
    Ok(Grid(values))
}

/// One solved grid point. Money columns from the bill are exact decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub manifest: String,
    pub parameter: SweepParam,
    pub value: String,
    pub problem: ProblemId,
    pub objective_usd: f64,
    pub bill_total_usd: String,
    pub energy_charge_usd: String,
    pub demand_charge_usd: String,
    pub pdp_credit_peak_usd: String,
    pub pdp_credit_partpeak_usd: String,
    pub pdp_event_charge_usd: String,
    pub pdp_benefit_usd: String,
    pub r_as_usd: f64,
    pub r_pdr_usd: f64,
    pub r_dbp_usd: f64,
    pub market_revenue_usd: f64,
    pub flexibility_index: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub table: PathBuf,
    /// Pearson correlation of flexibility index and market revenue across
    /// rows, when several manifests were swept and it is defined.
    pub correlation: Option<f64>,
}

#[derive(Clone, Debug)]
enum Point {
    Number(f64),
    Mode(&'static str),
}

impl Point {
    fn label(&self) -> String {
        match self {
            Point::Number(v) => v.to_string(),
            Point::Mode(m) => (*m).to_string(),
        }
    }
}

fn points(args: &SweepArgs, id: ProblemId) -> Result<Vec<Point>, CliError> {
    if args.sweep == SweepParam::BaselineMode {
        let modes = if id == ProblemId::P3 { ["free", "fixed"] } else { ["history", "schedule"] };
        return Ok(modes.into_iter().map(Point::Mode).collect());
    }
    let grid = args
        .grid
        .clone()
        .ok_or_else(|| CliError::config(format!("--grid is required for {:?}", args.sweep)))?
        .0;
    match args.sweep {
        SweepParam::PdpCrl | SweepParam::RegThreshold if grid[0] < 0.0 => {
            Err(CliError::config("grid values must be nonnegative"))
        }
        SweepParam::FlexRatio if grid[0] < 1.0 => Err(CliError::config("flex_ratio grid values must be at least 1")),
        _ => Ok(grid.into_iter().map(Point::Number).collect()),
    }
}

/// Applies one grid point to a loaded scenario.
fn apply(l: &mut LoadedScenario, param: SweepParam, id: ProblemId, p: &Point) -> Result<(), CliError> {
    let sc = &mut l.scenario;
    match (param, p) {
        (SweepParam::PdpCrl, Point::Number(x)) => {
            let pdp = sc.pdp.as_mut().ok_or_else(|| CliError::config("pdp_crl sweep needs a pdp section"))?;
            pdp.capacity_reserve = *x;
        }
        (SweepParam::FlexRatio, Point::Number(x)) => {
            let grid = sc.grid;
            sc.sessions = sc.sessions.iter().map(|s| s.stretched(*x, grid)).collect();
        }
        (SweepParam::RegThreshold, Point::Number(x)) => match id {
            ProblemId::P3 => {
                let m = sc.regulation.as_mut().ok_or_else(|| CliError::config("P3 needs a regulation section"))?;
                m.min_bid_up = *x;
                m.min_bid_down = *x;
            }
            ProblemId::P4 => sc.pdr.as_mut().ok_or_else(|| CliError::config("P4 needs a pdr section"))?.min_sell = *x,
            _ => {
                sc.dbp.as_mut().ok_or_else(|| CliError::config("P5 needs a dbp section"))?.min_reduction = *x;
            }
        },
        (SweepParam::BaselineMode, Point::Mode(m)) => match *m {
            "free" => l.regulation_baseline = RegulationBaseline::Free,
            "fixed" => l.regulation_baseline = RegulationBaseline::Fixed,
            "history" => {}
            _ => {
                if id == ProblemId::P4 {
                    l.pdr_baseline = MarketBaseline::Schedule;
                } else {
                    l.dbp_baseline = MarketBaseline::Schedule;
                }
            }
        },
        _ => unreachable!("points match their parameter"),
    }
    sc.validate().map_err(problem_error)
}

fn solve_point(
    base: &LoadedScenario,
    name: &str,
    args: &SweepArgs,
    id: ProblemId,
    p: &Point,
) -> Result<SweepRow, CliError> {
    let backend = args.solver.backend()?;
    let mut l = base.clone();
    apply(&mut l, args.sweep, id, p)?;
    prepare(&mut l, id, backend.as_ref())?;
    let r = optimize_month(&l.scenario, id, backend.as_ref()).map_err(problem_error)?;
    let env = l.scenario.envelopes().map_err(problem_error)?;
    let flex = flexibility_index(&env).map_err(|e| CliError::new(ErrorKind::Data, e))?;
    let b = &r.bill;
    Ok(SweepRow {
        manifest: name.to_string(),
        parameter: args.sweep,
        value: p.label(),
        problem: id,
        objective_usd: r.objective,
        bill_total_usd: b.total().to_string(),
        energy_charge_usd: b.c_ec.to_string(),
        demand_charge_usd: b.c_dc.to_string(),
        pdp_credit_peak_usd: b.pdp_credit_peak.to_string(),
        pdp_credit_partpeak_usd: b.pdp_credit_partpeak.to_string(),
        pdp_event_charge_usd: b.c_pdp.to_string(),
        pdp_benefit_usd: b.pdp_benefit().to_string(),
        r_as_usd: r.r_as,
        r_pdr_usd: r.r_pdr,
        r_dbp_usd: r.r_dbp,
        market_revenue_usd: r.market_revenue(),
        flexibility_index: flex,
    })
}

fn manifest_name(path: &Path, index: usize) -> String {
    let stem = path
        .parent()
        .and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{index}:{stem}")
}

/// Solves every (manifest, point) pair on up to `--jobs` threads. Each row
/// is written to `points/` as it finishes; `sweep.csv` is written last.
pub fn run_sweep(args: &SweepArgs) -> Result<SweepSummary, CliError> {
    let id = args.problem.unwrap_or(args.sweep.default_problem());
    if !args.sweep.allows(id) {
        return Err(CliError::config(format!("{:?} does not apply to {id}", args.sweep)));
    }
    if args.jobs == 0 {
        return Err(CliError::config("--jobs must be at least 1"));
    }
    let pts = points(args, id)?;
    let bases: Vec<(String, LoadedScenario)> = args
        .manifest
        .iter()
        .enumerate()
        .map(|(i, m)| Ok((manifest_name(m, i), load(m, &args.solver)?)))
        .collect::<Result<_, CliError>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..bases.len())
        .flat_map(|m| (0..pts.len()).map(move |k| (m, k)))
        .enumerate()
        .map(|(n, (m, k))| (n, m, k))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::new(ErrorKind::Config, e))?;
    let points_dir = args.out.join("points");
    let rows: Vec<SweepRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, m, k)| {
                let (name, base) = &bases[m];
                let row = solve_point(base, name, args, id, &pts[k])?;
                let json = serde_json::to_vec_pretty(&row).map_err(|e| CliError::new(ErrorKind::Data, e))?;
                write_atomic(&points_dir.join(format!("{n:05}.json")), &json)?;
                Ok(row)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::new(ErrorKind::Data, e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    let table = args.out.join("sweep.csv");
    write_atomic(&table, &bytes)?;

    let correlation = if bases.len() > 1 {
        let x: Vec<f64> = rows.iter().map(|r| r.flexibility_index).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.market_revenue_usd).collect();
        let r = pearson(&x, &y);
        let json = serde_json::json!({ "x": "flexibility_index", "y": "market_revenue_usd", "n": rows.len(), "pearson": r });
        write_atomic(&args.out.join("correlation.json"), json.to_string().as_bytes())?;
        r
    } else {
        None
    };
    Ok(SweepSummary {
        rows: rows.len(),
        table,
        correlation,
    })
}

/// Reads a `sweep.csv` back.
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::new(ErrorKind::Data, e))?;
    rdr.deserialize()
        .collect::<Result<Vec<SweepRow>, _>>()
        .map_err(|e| CliError::new(ErrorKind::Data, e))
}
