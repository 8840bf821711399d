//! Mixed-integer linear modelling for the scheduling problems.
//!
//! A [`MipModel`] is built once, independently of any solver, using the
//! encoders in [`encode`] for the recurring constraint patterns
//! (semicontinuous power, epigraph/hypograph maxima, big-M indicators and
//! minimum-consecutive blocks). It is then handed to a [`SolverBackend`]:
//!
//! - [`EnumerationSolver`]: exhaustive branching over binaries with a dense
//!   simplex at each leaf. Exact, and only meant for tiny instances.
//! - [`HighsSolver`]: in-process HiGHS (feature `highs`, on by default).
//! - [`ExternalSolver`]: writes an LP file and runs a HiGHS-compatible executable.

pub mod encode;
pub mod enumerate;
pub mod external;
#[cfg(feature = "highs")]
pub mod highs_backend;
pub mod lpfile;
pub mod model;
pub mod simplex;
pub mod verify;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::BigMConfig;
pub use enumerate::EnumerationSolver;
pub use external::ExternalSolver;
#[cfg(feature = "highs")]
pub use highs_backend::HighsSolver;
pub use model::{Cmp, Constraint, LinExpr, MipModel, ObjSense, Var, VarDef, VarKind};

/// Feasibility tolerance used when judging solutions (kW / kWh scale).
pub const EPS_FEAS: f64 = 1e-6;
/// Distance from {0, 1} accepted for binary values.
pub const EPS_INT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("invalid bounds for {what}: [{lo}, {hi}]")]
    InvalidBounds { what: String, lo: f64, hi: f64 },
    #[error("variable name `{0}` registered twice")]
    DuplicateName(String),
    #[error("unknown variable handle {0}")]
    UnknownVar(usize),
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
    #[error("epigraph requires at least one term")]
    EmptyTerms,
    #[error("cannot derive a finite big-M for `{0}`")]
    UnboundedExpr(String),
    #[error("invalid consecutive window: n_c = {n_c}, horizon = {horizon}")]
    InvalidWindow { n_c: usize, horizon: usize },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("enumeration supports at most {limit} free binaries, model has {found}")]
    TooManyBinaries { limit: usize, found: usize },
    #[error("limit reached before any feasible solution was found")]
    LimitWithoutIncumbent,
    #[error("backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    Limit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub backend: String,
    pub elapsed_s: f64,
    /// Branch nodes (enumeration) when the backend reports them.
    pub nodes: Option<u64>,
    /// LP solves performed (enumeration only).
    pub lp_solves: Option<u64>,
    pub mip_gap: Option<f64>,
    pub num_vars: usize,
    pub num_constraints: usize,
    pub num_binaries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub status: Status,
    /// Objective including the model's constant term. NaN unless a point is available.
    pub objective: f64,
    /// One value per model variable; empty when no point is available.
    pub values: Vec<f64>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn has_point(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn eval(&self, expr: &LinExpr) -> f64 {
        expr.eval(&self.values)
    }

    pub fn is_on(&self, v: Var) -> bool {
        self.values[v.index()] > 0.5
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub time_limit: Option<Duration>,
    /// Relative MIP gap accepted by branch-and-bound backends.
    pub mip_gap: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            time_limit: Some(Duration::from_secs(300)),
            mip_gap: 1e-4,
        }
    }
}

impl Limits {
    /// Proven optimality, no time limit. Used for cross-backend checks.
    pub fn exact() -> Self {
        Self {
            time_limit: None,
            mip_gap: 0.0,
        }
    }
}

/// Adapter contract: load a model, solve it under limits, report status and values.
pub trait SolverBackend {
    fn name(&self) -> &'static str;

    /// Whether one backend value may be used from several threads at once.
    fn is_shareable(&self) -> bool;

    fn solve(&self, model: &MipModel, limits: &Limits) -> Result<Solution, MilpError>;
}

/// Solves `model` with `backend`. An empty model is optimal with its constant objective.
pub fn solve(
    model: &MipModel,
    backend: &dyn SolverBackend,
    limits: &Limits,
) -> Result<Solution, MilpError> {
    if model.num_vars() == 0 {
        return Ok(Solution {
            status: Status::Optimal,
            objective: model.objective().constant,
            values: Vec::new(),
            stats: base_stats(model, backend.name()),
        });
    }
    let sol = backend.solve(model, limits)?;
    if sol.status == Status::Optimal {
        let worst = verify::max_violation(model, &sol.values);
        if worst > 10.0 * EPS_FEAS {
            log::warn!(
                "{} returned an optimal point violating the model by {worst:e}",
                backend.name()
            );
        }
    }
    Ok(sol)
}

pub(crate) fn base_stats(model: &MipModel, backend: &str) -> SolveStats {
    SolveStats {
        backend: backend.to_string(),
        num_vars: model.num_vars(),
        num_constraints: model.constraints().len(),
        num_binaries: model.num_binaries(),
        ..SolveStats::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_model_is_optimal_with_zero_objective() {
        let m = MipModel::new();
        let sol = solve(&m, &EnumerationSolver::default(), &Limits::exact()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_eq!(sol.objective, 0.0);
    }
}
