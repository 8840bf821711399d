//! The five monthly scheduling problems, their solution and re-settlement.
//!
//! Each problem is a single MILP over the billing period because demand
//! charges couple the days. After solving, [`optimize_month`] polishes the
//! point (selectors re-picked, binaries fixed, LP re-solved), extracts the
//! schedules and settles every dollar through [`crate::tariff`] and
//! [`crate::markets`]. The settled total must match the model objective.

mod baseline;
mod build;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use evdr_milp::{solve, Limits, MilpError, SolveStats, Solution, SolverBackend, Status, EPS_INT};
use rust_decimal::prelude::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{history_baseline, schedule_baseline, uncontrolled_history};
pub use build::{build, build_p1, build_p2, build_p3, build_p4, build_p5, BuiltProblem, ObjectiveParts, VarGrid};

use crate::fleet::{check_feasible, day_envelope, AggregateEnvelope, AggregateProfile, FleetError, VehicleSession, ViolationKind};
use crate::grid::{GridError, StepGrid};
use crate::markets::{
    dbp_revenue, pdr_revenue, regulation_revenue, DbpProgram, MarketError, PdrMarket, RegulationMarket,
    RegulationPlan,
};
use crate::tariff::{settle, BillResult, PdpPolicy, TariffCalendar, TariffError, TariffSchedule};

/// Tolerance between the model objective and the re-settled bill ($).
pub const EPS_OBJ: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemId {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl ProblemId {
    pub const ALL: [ProblemId; 5] = [Self::P1, Self::P2, Self::P3, Self::P4, Self::P5];
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ProblemId {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, ProblemError> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(Self::P1),
            "p2" => Ok(Self::P2),
            "p3" => Ok(Self::P3),
            "p4" => Ok(Self::P4),
            "p5" => Ok(Self::P5),
            _ => Err(ProblemError::Invalid(format!("unknown problem `{s}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("problem needs a {0}")]
    MissingProduct(&'static str),
    #[error("baseline missing: {0}")]
    BaselineMissing(String),
    #[error("fixed baseline of {value} kW at day {day}, step {step} is not a feasible fleet power")]
    BaselineMismatch { day: usize, step: usize, value: f64 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("solver finished with status {status:?} and no usable point")]
    NoSolution { status: Status },
    #[error("objective {objective} differs from settled total {settled}")]
    InconsistentObjective { objective: f64, settled: f64 },
    #[error("extracted {what} schedule of day {day} fails at step {step}: {kind:?}")]
    InfeasibleSchedule {
        what: &'static str,
        day: usize,
        step: usize,
        kind: ViolationKind,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Tariff(#[from] TariffError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// Everything one billing period needs. Per-step series are `[day][step]`.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: StepGrid,
    pub days: Vec<NaiveDate>,
    pub sessions: Vec<VehicleSession>,
    /// Non-EV site load (kW).
    pub baseload: Vec<Vec<f64>>,
    pub tariff: TariffSchedule,
    pub pdp: Option<PdpPolicy>,
    /// Allow staying out of PDP when enrolment would not pay off.
    pub pdp_opt_out: bool,
    pub regulation: Option<RegulationMarket>,
    /// Fixed regulation baseline; `None` lets the optimizer choose it.
    pub regulation_baseline: Option<Vec<Vec<f64>>>,
    pub pdr: Option<PdrMarket>,
    pub dbp: Option<DbpProgram>,
    pub limits: Limits,
}

pub(crate) struct Prepared {
    pub env: Vec<AggregateEnvelope>,
    pub cal: TariffCalendar,
}

impl Scenario {
    /// Scenario with no sessions, zero baseload and no market products.
    pub fn empty(grid: StepGrid, days: Vec<NaiveDate>, tariff: TariffSchedule) -> Self {
        let n = grid.steps_per_day();
        Self {
            grid,
            baseload: vec![vec![0.0; n]; days.len()],
            days,
            sessions: Vec::new(),
            tariff,
            pdp: None,
            pdp_opt_out: false,
            regulation: None,
            regulation_baseline: None,
            pdr: None,
            dbp: None,
            limits: Limits::default(),
        }
    }

    pub(crate) fn check_series(&self, what: &str, s: &[Vec<f64>]) -> Result<(), ProblemError> {
        let n = self.grid.steps_per_day();
        if s.len() != self.days.len() || s.iter().any(|r| r.len() != n) {
            return Err(ProblemError::Invalid(format!(
                "{what} must have {} days of {n} steps",
                self.days.len()
            )));
        }
        if s.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ProblemError::Invalid(format!("{what} has non-finite values")));
        }
        Ok(())
    }

    fn check_prices(&self, what: &str, s: &[Vec<Option<f64>>]) -> Result<(), ProblemError> {
        let n = self.grid.steps_per_day();
        if s.len() != self.days.len() || s.iter().any(|r| r.len() != n) {
            return Err(ProblemError::Invalid(format!(
                "{what} must have {} days of {n} steps",
                self.days.len()
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        crate::grid::validate_period(&self.days)?;
        self.check_series("baseload", &self.baseload)?;
        for s in &self.sessions {
            s.validate(self.grid)?;
            if s.e_req > 0.0 && s.e_req < s.min_step_energy(self.grid) - crate::EPS_FEAS {
                return Err(ProblemError::Invalid(format!(
                    "session {} on {} requests {} kWh, less than one step at minimum power",
                    s.vehicle_id, s.day, s.e_req
                )));
            }
            if !self.days.contains(&s.day) {
                return Err(ProblemError::Invalid(format!(
                    "session {} on {} lies outside the billing period",
                    s.vehicle_id, s.day
                )));
            }
        }
        if let Some(p) = &self.pdp {
            p.validate()?;
        }
        if let Some(r) = &self.regulation {
            r.validate()?;
            self.check_prices("regulation up prices", &r.price_up)?;
            self.check_prices("regulation down prices", &r.price_down)?;
        }
        if let Some(p) = &self.pdr {
            p.validate()?;
            self.check_prices("PDR prices", &p.price)?;
        }
        if let Some(p) = &self.dbp {
            p.validate(self.grid)?;
        }
        Ok(())
    }

    /// Sessions grouped by day index.
    pub fn sessions_by_day(&self) -> Vec<Vec<VehicleSession>> {
        let index: BTreeMap<NaiveDate, usize> = self.days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let mut out = vec![Vec::new(); self.days.len()];
        for s in &self.sessions {
            if let Some(&i) = index.get(&s.day) {
                out[i].push(s.clone());
            }
        }
        out
    }

    pub fn envelopes(&self) -> Result<Vec<AggregateEnvelope>, ProblemError> {
        self.sessions_by_day()
            .iter()
            .map(|s| day_envelope(s, self.grid).map_err(ProblemError::from))
            .collect()
    }

    pub fn calendar(&self) -> TariffCalendar {
        self.tariff.calendar(&self.days, self.grid)
    }

    pub(crate) fn prepare(&self) -> Result<Prepared, ProblemError> {
        self.validate()?;
        Ok(Prepared {
            env: self.envelopes()?,
            cal: self.calendar(),
        })
    }
}

/// Solved and settled billing period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonthResult {
    pub problem: ProblemId,
    pub days: Vec<NaiveDate>,
    pub dt_minutes: u32,
    /// Model objective at the polished point ($).
    pub objective: f64,
    /// Bill settled from the extracted schedule.
    pub bill: BillResult,
    pub r_as: f64,
    pub r_pdr: f64,
    pub r_dbp: f64,
    /// Settled bill minus market revenues ($).
    pub settled_total: f64,
    pub baseload: Vec<Vec<f64>>,
    /// Aggregate EV schedule per day.
    pub schedules: Vec<AggregateProfile>,
    /// Regulation baseline (P3) or the known market baseline (P4/P5).
    pub baseline: Option<Vec<Vec<f64>>>,
    pub bid_up: Option<Vec<Vec<f64>>>,
    pub bid_down: Option<Vec<Vec<f64>>>,
    pub sell: Option<Vec<Vec<f64>>>,
    pub reduction: Option<Vec<Vec<f64>>>,
    pub status: Status,
    pub stats: SolveStats,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MonthResult {
    pub fn ev_power(&self) -> Vec<Vec<f64>> {
        self.schedules.iter().map(|s| s.p.clone()).collect()
    }

    /// Baseload plus EV power.
    pub fn site_load(&self) -> Vec<Vec<f64>> {
        self.baseload
            .iter()
            .zip(&self.schedules)
            .map(|(l, s)| l.iter().zip(&s.p).map(|(a, b)| a + b).collect())
            .collect()
    }

    pub fn market_revenue(&self) -> f64 {
        self.r_as + self.r_pdr + self.r_dbp
    }
}

/// Values below this magnitude are reported as exact zeros.
const ZERO_SNAP: f64 = 1e-9;

fn clean(v: f64) -> f64 {
    if v.abs() < ZERO_SNAP {
        0.0
    } else {
        v
    }
}

/// Re-picks max selectors at the current point, fixes every binary and
/// re-solves the remaining LP so that epigraph auxiliaries are tight.
fn polish(
    built: &BuiltProblem,
    backend: &dyn SolverBackend,
    limits: &Limits,
    mut values: Vec<f64>,
) -> Result<Vec<f64>, ProblemError> {
    for _ in 0..3 {
        let mut changed = false;
        for g in &built.groups {
            let best = g
                .terms
                .iter()
                .map(|e| e.eval(&values))
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 + 1e-12 { (k, v) } else { acc });
            for (k, &s) in g.selectors.iter().enumerate() {
                let want = if k == best.0 { 1.0 } else { 0.0 };
                if (values[s.index()] - want).abs() > EPS_INT {
                    changed = true;
                }
                values[s.index()] = want;
            }
        }
        let mut fixed = built.model.clone();
        for v in built.model.var_handles() {
            if built.model.var_def(v).is_binary() {
                fixed.fix(v, values[v.index()].round())?;
            }
        }
        let lp = solve(&fixed, backend, limits)?;
        if !(lp.has_point() && lp.status == Status::Optimal) {
            log::warn!("polishing LP returned {:?}; keeping the MILP point", lp.status);
            return Ok(values);
        }
        values = lp.values;
        if !changed {
            break;
        }
    }
    Ok(values)
}

fn grid_values(sol: &[f64], vars: &[Vec<evdr_milp::Var>]) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|row| row.iter().map(|v| clean(sol[v.index()])).collect())
        .collect()
}

fn opt_grid_values(sol: &[f64], vars: &VarGrid) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|row| row.iter().map(|v| v.map_or(0.0, |v| clean(sol[v.index()]))).collect())
        .collect()
}

fn dec_f64(x: rust_decimal::Decimal) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Builds, solves, polishes, extracts and re-settles one problem.
pub fn optimize_month(
    sc: &Scenario,
    id: ProblemId,
    backend: &dyn SolverBackend,
) -> Result<MonthResult, ProblemError> {
    if id == ProblemId::P2 && sc.pdp_opt_out {
        let enrolled = solve_one(sc, id, backend, false)?;
        let out = solve_one(sc, ProblemId::P1, backend, true)?;
        let mut best = if out.objective < enrolled.objective { out } else { enrolled };
        best.problem = ProblemId::P2;
        return Ok(best);
    }
    solve_one(sc, id, backend, false)
}

fn solve_one(
    sc: &Scenario,
    id: ProblemId,
    backend: &dyn SolverBackend,
    opted_out: bool,
) -> Result<MonthResult, ProblemError> {
    let built = build(sc, id)?;
    let sol: Solution = solve(&built.model, backend, &sc.limits)?;
    if !sol.has_point() {
        return Err(ProblemError::NoSolution { status: sol.status });
    }
    let values = polish(&built, backend, &sc.limits, sol.values.clone())?;
    let objective = built.model.objective().eval(&values);

    let env = sc.envelopes()?;
    let power = grid_values(&values, &built.power);
    let schedules: Vec<AggregateProfile> = power
        .iter()
        .zip(&built.on)
        .map(|(p, on)| AggregateProfile {
            p: p.clone(),
            on: on.iter().map(|v| values[v.index()] > 0.5).collect(),
        })
        .collect();
    for (d, (s, e)) in schedules.iter().zip(&env).enumerate() {
        let f = check_feasible(s, e, sc.grid);
        if let Some((step, kind)) = f.first_violation {
            return Err(ProblemError::InfeasibleSchedule { what: "EV", day: d, step, kind });
        }
    }

    let cal = sc.calendar();
    let load: Vec<Vec<f64>> = sc
        .baseload
        .iter()
        .zip(&power)
        .map(|(l, p)| l.iter().zip(p).map(|(a, b)| a + b).collect())
        .collect();
    let pdp = if id == ProblemId::P2 { sc.pdp.as_ref() } else { None };
    let mut bill = settle(&load, &cal, pdp, false)?;
    bill.pdp_opted_out = opted_out;

    let mut result = MonthResult {
        problem: id,
        days: sc.days.clone(),
        dt_minutes: sc.grid.dt_minutes(),
        objective,
        bill,
        r_as: 0.0,
        r_pdr: 0.0,
        r_dbp: 0.0,
        settled_total: 0.0,
        baseload: sc.baseload.clone(),
        schedules,
        baseline: None,
        bid_up: None,
        bid_down: None,
        sell: None,
        reduction: None,
        status: sol.status,
        stats: sol.stats.clone(),
        warnings: Vec::new(),
    };

    match id {
        ProblemId::P1 | ProblemId::P2 => {}
        ProblemId::P3 => {
            let market = sc.regulation.as_ref().ok_or(ProblemError::MissingProduct("regulation market"))?;
            let base_vars = built.baseline.as_ref().expect("P3 baseline vars");
            let plan = RegulationPlan {
                baseline: grid_values(&values, base_vars),
                bid_up: opt_grid_values(&values, built.bid_up.as_ref().expect("P3 bids")),
                bid_down: opt_grid_values(&values, built.bid_down.as_ref().expect("P3 bids")),
            };
            for (d, e) in env.iter().enumerate() {
                let profile = AggregateProfile::from_power(plan.baseline[d].clone());
                if let Some((step, kind)) = check_feasible(&profile, e, sc.grid).first_violation {
                    return Err(ProblemError::InfeasibleSchedule { what: "baseline", day: d, step, kind });
                }
            }
            result.r_as = regulation_revenue(&plan, market, sc.grid);
            result.baseline = Some(plan.baseline);
            result.bid_up = Some(plan.bid_up);
            result.bid_down = Some(plan.bid_down);
        }
        ProblemId::P4 => {
            let market = sc.pdr.as_ref().ok_or(ProblemError::MissingProduct("PDR market"))?;
            let sell = opt_grid_values(&values, built.sell.as_ref().expect("P4 sell"));
            result.r_pdr = pdr_revenue(&sell, market, sc.grid);
            result.baseline = Some(market.baseline.clone());
            result.sell = Some(sell);
        }
        ProblemId::P5 => {
            let program = sc.dbp.as_ref().ok_or(ProblemError::MissingProduct("DBP program"))?;
            let red = opt_grid_values(&values, built.reduction.as_ref().expect("P5 reduction"));
            result.r_dbp = dbp_revenue(&red, &sc.days, program, sc.grid)?;
            if !program.baseline.is_empty() {
                result.baseline = Some(program.baseline.clone());
            }
            result.reduction = Some(red);
        }
    }

    result.settled_total = dec_f64(result.bill.total()) - result.market_revenue();
    if (result.settled_total - objective).abs() > EPS_OBJ {
        return Err(ProblemError::InconsistentObjective {
            objective,
            settled: result.settled_total,
        });
    }
    Ok(result)
}
