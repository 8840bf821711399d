//! Exact reference backend: depth-first branching over every free binary.
//!
//! Each node first checks row activity intervals under the current partial
//! assignment, then solves the continuous relaxation with the in-crate
//! simplex. Subtrees whose relaxation cannot beat the incumbent are cut.
//! Nothing here depends on HiGHS, so it can serve as an independent check.

use std::time::Instant;

use crate::model::{Cmp, MipModel, ObjSense};
use crate::simplex::{solve_lp, LpOutcome, LpProblem, LpRow};
use crate::{base_stats, Limits, MilpError, Solution, SolverBackend, Status, EPS_FEAS, EPS_INT};

#[derive(Clone, Debug)]
pub struct EnumerationSolver {
    /// Refuse models with more free binaries than this.
    pub max_binaries: usize,
}

impl Default for EnumerationSolver {
    fn default() -> Self {
        Self { max_binaries: 20 }
    }
}

impl SolverBackend for EnumerationSolver {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn is_shareable(&self) -> bool {
        true
    }

    fn solve(&self, model: &MipModel, limits: &Limits) -> Result<Solution, MilpError> {
        let free: Vec<usize> = model
            .vars()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_binary() && d.lb < d.ub)
            .map(|(i, _)| i)
            .collect();
        if free.len() > self.max_binaries {
            return Err(MilpError::TooManyBinaries {
                limit: self.max_binaries,
                found: free.len(),
            });
        }
        let mut search = Search::new(model, limits);
        let root: Vec<(f64, f64)> = model
            .vars()
            .iter()
            .map(|d| {
                if d.is_binary() {
                    (d.lb.ceil(), d.ub.floor())
                } else {
                    (d.lb, d.ub)
                }
            })
            .collect();
        if root.iter().any(|(lo, hi)| lo > hi) {
            return Ok(search.finish(Status::Infeasible));
        }
        let status = search.run(root, &free);
        Ok(search.finish(status))
    }
}

struct Search<'a> {
    model: &'a MipModel,
    limits: &'a Limits,
    /// Objective multiplier turning the model into a minimisation.
    sign: f64,
    start: Instant,
    nodes: u64,
    lp_solves: u64,
    best: Option<(f64, Vec<f64>)>,
    unbounded: bool,
    timed_out: bool,
}

impl<'a> Search<'a> {
    fn new(model: &'a MipModel, limits: &'a Limits) -> Self {
        Self {
            model,
            limits,
            sign: match model.sense() {
                ObjSense::Minimize => 1.0,
                ObjSense::Maximize => -1.0,
            },
            start: Instant::now(),
            nodes: 0,
            lp_solves: 0,
            best: None,
            unbounded: false,
            timed_out: false,
        }
    }

    fn run(&mut self, root: Vec<(f64, f64)>, free: &[usize]) -> Status {
        let mut stack = vec![root];
        while let Some(bounds) = stack.pop() {
            if let Some(limit) = self.limits.time_limit {
                if self.start.elapsed() > limit {
                    self.timed_out = true;
                    break;
                }
            }
            self.nodes += 1;
            if !self.rows_possible(&bounds) {
                continue;
            }
            self.lp_solves += 1;
            let (x, obj) = match solve_relaxation(self.model, &bounds, self.sign) {
                LpOutcome::Optimal { x, objective } => (x, objective),
                LpOutcome::Infeasible => continue,
                LpOutcome::Unbounded => {
                    self.unbounded = true;
                    break;
                }
                LpOutcome::IterationLimit => {
                    log::warn!("reference simplex hit its iteration limit; node skipped");
                    continue;
                }
            };
            if self.dominated(obj) {
                continue;
            }
            let fractional = free
                .iter()
                .copied()
                .filter(|&i| bounds[i].0 < bounds[i].1)
                .map(|i| (i, (x[i] - x[i].round()).abs()))
                .filter(|&(_, f)| f > EPS_INT)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match fractional {
                None => self.accept(&bounds, free, &x, obj),
                Some((i, _)) => {
                    let mut down = bounds.clone();
                    down[i] = (0.0, 0.0);
                    let mut up = bounds;
                    up[i] = (1.0, 1.0);
                    // Explore the side the relaxation leans towards first.
                    if x[i] >= 0.5 {
                        stack.push(down);
                        stack.push(up);
                    } else {
                        stack.push(up);
                        stack.push(down);
                    }
                }
            }
        }
        if self.unbounded {
            Status::Unbounded
        } else if self.timed_out {
            Status::Limit
        } else if self.best.is_some() {
            Status::Optimal
        } else {
            Status::Infeasible
        }
    }

    /// Records an integral relaxation point, re-solving with binaries pinned so
    /// the stored values are exactly 0/1.
    fn accept(&mut self, bounds: &[(f64, f64)], free: &[usize], x: &[f64], obj: f64) {
        let mut pinned = bounds.to_vec();
        for &i in free {
            let v = x[i].round().clamp(0.0, 1.0);
            pinned[i] = (v, v);
        }
        self.lp_solves += 1;
        let (point, value) = match solve_relaxation(self.model, &pinned, self.sign) {
            LpOutcome::Optimal { x, objective } => (x, objective),
            _ => (x.to_vec(), obj),
        };
        if self.best.as_ref().map_or(true, |(b, _)| value < *b) {
            self.best = Some((value, point));
        }
    }

    fn dominated(&self, bound: f64) -> bool {
        match &self.best {
            None => false,
            Some((inc, _)) => {
                let slack = (self.limits.mip_gap * inc.abs()).max(1e-9 * (1.0 + inc.abs()));
                bound >= inc - slack
            }
        }
    }

    /// Interval test: can each row still be satisfied under `bounds`?
    fn rows_possible(&self, bounds: &[(f64, f64)]) -> bool {
        for c in self.model.constraints() {
            let (mut lo, mut hi) = (0.0, 0.0);
            for &(v, coef) in &c.terms {
                let (l, u) = bounds[v.index()];
                if coef > 0.0 {
                    lo += coef * l;
                    hi += coef * u;
                } else {
                    lo += coef * u;
                    hi += coef * l;
                }
            }
            let tol = EPS_FEAS * (1.0 + c.rhs.abs());
            let ok = match c.cmp {
                Cmp::Le => lo <= c.rhs + tol,
                Cmp::Ge => hi >= c.rhs - tol,
                Cmp::Eq => lo <= c.rhs + tol && hi >= c.rhs - tol,
            };
            if !ok {
                return false;
            }
        }
        true
    }

    fn finish(self, status: Status) -> Solution {
        let mut stats = base_stats(self.model, "reference");
        stats.elapsed_s = self.start.elapsed().as_secs_f64();
        stats.nodes = Some(self.nodes);
        stats.lp_solves = Some(self.lp_solves);
        let keep_point = matches!(status, Status::Optimal | Status::Limit);
        match self.best {
            Some((_, values)) if keep_point => {
                let objective = self.model.objective().eval(&values);
                stats.mip_gap = (status == Status::Optimal).then_some(0.0);
                Solution {
                    status,
                    objective,
                    values,
                    stats,
                }
            }
            _ => Solution {
                status,
                objective: f64::NAN,
                values: Vec::new(),
                stats,
            },
        }
    }
}

/// Continuous relaxation over `bounds`. Variables with equal bounds are
/// substituted as constants. Returns values for every model variable and the
/// signed objective without its constant.
fn solve_relaxation(model: &MipModel, bounds: &[(f64, f64)], sign: f64) -> LpOutcome {
    let n = model.num_vars();
    let mut col = vec![usize::MAX; n];
    let mut lp = LpProblem::default();
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if lo < hi {
            col[i] = lp.lb.len();
            lp.lb.push(lo);
            lp.ub.push(hi);
            lp.cost.push(0.0);
        }
    }
    for &(v, c) in &model.objective().terms {
        let i = v.index();
        if col[i] != usize::MAX {
            lp.cost[col[i]] += sign * c;
        }
    }
    for c in model.constraints() {
        let mut rhs = c.rhs;
        let mut terms = Vec::with_capacity(c.terms.len());
        for &(v, coef) in &c.terms {
            let i = v.index();
            if col[i] == usize::MAX {
                rhs -= coef * bounds[i].0;
            } else {
                terms.push((col[i], coef));
            }
        }
        if terms.is_empty() {
            let tol = EPS_FEAS * (1.0 + c.rhs.abs());
            let ok = match c.cmp {
                Cmp::Le => rhs >= -tol,
                Cmp::Ge => rhs <= tol,
                Cmp::Eq => rhs.abs() <= tol,
            };
            if !ok {
                return LpOutcome::Infeasible;
            }
            continue;
        }
        lp.rows.push(LpRow {
            terms,
            cmp: c.cmp,
            rhs,
        });
    }
    let sub = if lp.lb.is_empty() {
        LpOutcome::Optimal {
            x: Vec::new(),
            objective: 0.0,
        }
    } else {
        solve_lp(&lp)
    };
    match sub {
        LpOutcome::Optimal { x: sx, .. } => {
            let x: Vec<f64> = (0..n)
                .map(|i| if col[i] == usize::MAX { bounds[i].0 } else { sx[col[i]] })
                .collect();
            let objective = sign
                * model
                    .objective()
                    .terms
                    .iter()
                    .map(|&(v, c)| c * x[v.index()])
                    .sum::<f64>();
            LpOutcome::Optimal { x, objective }
        }
        other => other,
    }
}
