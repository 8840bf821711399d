//! In-process HiGHS backend.

use std::num::NonZeroU32;
use std::time::Instant;

use highs::{ColProblem, HighsModelStatus, HighsSolutionStatus, Sense};

use crate::model::{Cmp, MipModel, ObjSense};
use crate::{base_stats, Limits, MilpError, Solution, SolverBackend, Status};

#[derive(Clone, Debug)]
pub struct HighsSolver {
    pub threads: u32,
    pub random_seed: i32,
    pub feasibility_tol: f64,
}

impl Default for HighsSolver {
    fn default() -> Self {
        Self {
            threads: 1,
            random_seed: 0,
            feasibility_tol: 1e-7,
        }
    }
}

impl SolverBackend for HighsSolver {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn is_shareable(&self) -> bool {
        true
    }

    fn solve(&self, model: &MipModel, limits: &Limits) -> Result<Solution, MilpError> {
        let start = Instant::now();
        let mut pb = ColProblem::default();
        let rows: Vec<_> = model
            .constraints()
            .iter()
            .map(|c| match c.cmp {
                Cmp::Le => pb.add_row(f64::NEG_INFINITY..=c.rhs),
                Cmp::Ge => pb.add_row(c.rhs..=f64::INFINITY),
                Cmp::Eq => pb.add_row(c.rhs..=c.rhs),
            })
            .collect();
        let mut col_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.num_vars()];
        for (r, c) in model.constraints().iter().enumerate() {
            for &(v, coef) in &c.terms {
                col_entries[v.index()].push((r, coef));
            }
        }
        let mut cost = vec![0.0; model.num_vars()];
        for &(v, c) in &model.objective().terms {
            cost[v.index()] += c;
        }
        for (i, def) in model.vars().iter().enumerate() {
            let entries: Vec<_> = col_entries[i].iter().map(|&(r, c)| (rows[r], c)).collect();
            pb.add_column_with_integrality(cost[i], def.lb..=def.ub, entries, def.is_binary());
        }
        let sense = match model.sense() {
            ObjSense::Minimize => Sense::Minimise,
            ObjSense::Maximize => Sense::Maximise,
        };
        let mut hm = pb
            .try_optimise(sense)
            .map_err(|e| MilpError::Backend(format!("HiGHS rejected the model: {e:?}")))?;
        hm.make_quiet();
        hm.set_threads(NonZeroU32::new(self.threads.max(1)).expect("nonzero"));
        let set = |hm: &mut highs::Model, k: &str, v: f64| {
            hm.try_set_option(k, v)
                .map_err(|e| MilpError::Backend(format!("option {k}: {e:?}")))
        };
        set(&mut hm, "mip_rel_gap", limits.mip_gap)?;
        set(&mut hm, "mip_feasibility_tolerance", self.feasibility_tol)?;
        set(&mut hm, "primal_feasibility_tolerance", self.feasibility_tol)?;
        if let Some(t) = limits.time_limit {
            set(&mut hm, "time_limit", t.as_secs_f64())?;
        }
        hm.try_set_option("random_seed", self.random_seed)
            .map_err(|e| MilpError::Backend(format!("option random_seed: {e:?}")))?;
        let solved = hm
            .try_solve()
            .map_err(|e| MilpError::Backend(format!("HiGHS run failed: {e:?}")))?;

        let status = match solved.status() {
            HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => Status::Optimal,
            HighsModelStatus::Infeasible => Status::Infeasible,
            HighsModelStatus::Unbounded => Status::Unbounded,
            // Only reported by presolve; ambiguity is resolved as infeasible because
            // every variable in the scheduling models is bounded.
            HighsModelStatus::UnboundedOrInfeasible => Status::Infeasible,
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedSolutionLimit
            | HighsModelStatus::ObjectiveBound
            | HighsModelStatus::ObjectiveTarget
            | HighsModelStatus::ReachedInterrupt
            | HighsModelStatus::ReachedMemoryLimit => Status::Limit,
            other => return Err(MilpError::Backend(format!("HiGHS status {other:?}"))),
        };
        let mut stats = base_stats(model, "highs");
        let has_point = match status {
            Status::Optimal => true,
            Status::Limit => solved.primal_solution_status() == HighsSolutionStatus::Feasible,
            _ => false,
        };
        let (values, objective) = if has_point {
            let mut values = solved.get_solution().columns().to_vec();
            for (x, def) in values.iter_mut().zip(model.vars()) {
                if def.is_binary() {
                    *x = x.round();
                }
                *x = x.clamp(def.lb, def.ub);
            }
            let obj = model.objective().eval(&values);
            (values, obj)
        } else {
            (Vec::new(), f64::NAN)
        };
        if model.num_binaries() > 0 && has_point {
            let gap = solved.mip_gap();
            stats.mip_gap = gap.is_finite().then_some(gap);
        }
        stats.elapsed_s = start.elapsed().as_secs_f64();
        Ok(Solution {
            status,
            objective,
            values,
            stats,
        })
    }
}
