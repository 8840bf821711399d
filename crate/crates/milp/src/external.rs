//! Backend that shells out to a HiGHS-compatible executable.
//!
//! The model goes through [`crate::lpfile`]; the executable is invoked as
//! `<path> --model_file <lp> --solution_file <sol> --options_file <opt>` and
//! must write a HiGHS-style solution file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use crate::lpfile::{column_names, write_lp};
use crate::model::MipModel;
use crate::{base_stats, Limits, MilpError, Solution, SolverBackend, Status};

/// Environment variable naming the solver executable.
pub const SOLVER_PATH_ENV: &str = "EVDR_SOLVER_PATH";

#[derive(Clone, Debug)]
pub struct ExternalSolver {
    pub path: PathBuf,
    /// When set, the LP and solution files are kept in this directory.
    pub keep_dir: Option<PathBuf>,
}

impl ExternalSolver {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            keep_dir: None,
        }
    }

    pub fn from_env() -> Result<Self, MilpError> {
        std::env::var_os(SOLVER_PATH_ENV)
            .filter(|p| !p.is_empty())
            .map(Self::new)
            .ok_or_else(|| MilpError::BackendUnavailable(format!("{SOLVER_PATH_ENV} is not set")))
    }

    fn run_in(&self, dir: &Path, model: &MipModel, limits: &Limits) -> Result<Solution, MilpError> {
        let start = Instant::now();
        let lp = dir.join("model.lp");
        let sol = dir.join("model.sol");
        let opt = dir.join("highs.opt");
        write_lp(model, &lp)?;
        let mut opts = format!(
            "mip_rel_gap = {}\nthreads = 1\nrandom_seed = 0\noutput_flag = false\n",
            limits.mip_gap
        );
        if let Some(t) = limits.time_limit {
            opts.push_str(&format!("time_limit = {}\n", t.as_secs_f64()));
        }
        std::fs::write(&opt, opts)?;
        let output = Command::new(&self.path)
            .arg("--model_file")
            .arg(&lp)
            .arg("--solution_file")
            .arg(&sol)
            .arg("--options_file")
            .arg(&opt)
            .output()
            .map_err(|e| {
                MilpError::BackendUnavailable(format!("cannot run {}: {e}", self.path.display()))
            })?;
        if !output.status.success() && !sol.exists() {
            return Err(MilpError::Backend(format!(
                "{} exited with {}: {}",
                self.path.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let text = std::fs::read_to_string(&sol).map_err(|e| {
            MilpError::Backend(format!("no solution file from {}: {e}", self.path.display()))
        })?;
        let parsed = parse_solution(&text)?;
        let mut stats = base_stats(model, "external");
        let (values, objective) = match parsed.columns {
            Some(cols) if matches!(parsed.status, Status::Optimal | Status::Limit) => {
                let values = map_columns(model, &cols)?;
                let obj = model.objective().eval(&values);
                (values, obj)
            }
            _ => (Vec::new(), f64::NAN),
        };
        stats.elapsed_s = start.elapsed().as_secs_f64();
        Ok(Solution {
            status: parsed.status,
            objective,
            values,
            stats,
        })
    }
}

impl SolverBackend for ExternalSolver {
    fn name(&self) -> &'static str {
        "external"
    }

    fn is_shareable(&self) -> bool {
        true
    }

    fn solve(&self, model: &MipModel, limits: &Limits) -> Result<Solution, MilpError> {
        match &self.keep_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                self.run_in(dir, model, limits)
            }
            None => {
                let dir = tempfile::tempdir()?;
                self.run_in(dir.path(), model, limits)
            }
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct ParsedSolution {
    pub status: Status,
    /// Primal column values by name, when the file carries a primal point.
    pub columns: Option<Vec<(String, f64)>>,
}

/// Parses the raw HiGHS solution file layout.
pub fn parse_solution(text: &str) -> Result<ParsedSolution, MilpError> {
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    let bad = |msg: &str| MilpError::Backend(format!("malformed solution file: {msg}"));
    let at = lines
        .iter()
        .position(|l| *l == "Model status")
        .ok_or_else(|| bad("missing `Model status`"))?;
    let raw = lines[at + 1..]
        .iter()
        .find(|l| !l.is_empty())
        .ok_or_else(|| bad("empty model status"))?;
    let status = match raw.to_ascii_lowercase().as_str() {
        "optimal" => Status::Optimal,
        "infeasible" => Status::Infeasible,
        "unbounded" => Status::Unbounded,
        "primal infeasible or unbounded" | "unbounded or infeasible" => Status::Infeasible,
        s if s.contains("limit") || s.contains("interrupt") => Status::Limit,
        s => return Err(MilpError::Backend(format!("solver reported status `{s}`"))),
    };

    let mut columns = None;
    if let Some(p) = lines.iter().position(|l| *l == "# Primal solution values") {
        let rest = &lines[p + 1..];
        let feasible = rest.iter().find(|l| !l.is_empty()).copied() != Some("None");
        if feasible {
            if let Some(h) = rest.iter().position(|l| l.starts_with("# Columns")) {
                let n: usize = rest[h]
                    .trim_start_matches("# Columns")
                    .trim()
                    .parse()
                    .map_err(|_| bad("bad column count"))?;
                let mut cols = Vec::with_capacity(n);
                for l in rest.iter().skip(h + 1).take(n) {
                    let mut it = l.split_whitespace();
                    let (Some(name), Some(v)) = (it.next(), it.next()) else {
                        return Err(bad("bad column line"));
                    };
                    let v: f64 = v.parse().map_err(|_| bad("bad column value"))?;
                    cols.push((name.to_string(), v));
                }
                if cols.len() != n {
                    return Err(bad("truncated column section"));
                }
                columns = Some(cols);
            }
        }
    }
    Ok(ParsedSolution { status, columns })
}

fn map_columns(model: &MipModel, cols: &[(String, f64)]) -> Result<Vec<f64>, MilpError> {
    let names = column_names(model);
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut values: Vec<f64> = model.vars().iter().map(|d| d.lb.max(0.0).min(d.ub)).collect();
    let mut seen = vec![false; values.len()];
    for (name, v) in cols {
        let i = index
            .get(name.as_str())
            .copied()
            .ok_or_else(|| MilpError::Backend(format!("unknown column `{name}` in solution")))?;
        values[i] = *v;
        seen[i] = true;
    }
    for ((x, def), s) in values.iter_mut().zip(model.vars()).zip(&seen) {
        if !s && def.lb.is_infinite() && def.ub.is_infinite() {
            *x = 0.0;
        }
        if def.is_binary() {
            *x = x.round();
        }
        *x = x.clamp(def.lb, def.ub);
    }
    Ok(values)
}
