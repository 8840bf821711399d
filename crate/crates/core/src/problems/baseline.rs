//! Known baselines for the PDR and DBP problems.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use evdr_milp::SolverBackend;

use super::{optimize_month, ProblemError, ProblemId, Scenario};
use crate::fleet::{uncontrolled_profile, VehicleSession};
use crate::grid::StepGrid;
use crate::markets::{compute_baseline, HistoryDay, MarketError};

/// Uncontrolled EV profiles of every day from `first` to `last` inclusive.
/// Days without sessions contribute a zero profile.
pub fn uncontrolled_history(
    sessions: &[VehicleSession],
    first: NaiveDate,
    last: NaiveDate,
    grid: StepGrid,
) -> Vec<HistoryDay> {
    let mut by_day: BTreeMap<NaiveDate, Vec<VehicleSession>> = BTreeMap::new();
    for s in sessions {
        by_day.entry(s.day).or_default().push(s.clone());
    }
    first
        .iter_days()
        .take_while(|d| *d <= last)
        .map(|date| HistoryDay {
            date,
            profile: by_day
                .get(&date)
                .map(|s| uncontrolled_profile(s, grid))
                .unwrap_or_else(|| vec![0.0; grid.steps_per_day()]),
        })
        .collect()
}

/// Per-day history baseline. When fewer than `n_days` matching days
/// exist, the available ones are averaged and a warning is recorded.
pub fn history_baseline(
    history: &[HistoryDay],
    days: &[NaiveDate],
    n_days: usize,
    warnings: &mut Vec<String>,
) -> Result<Vec<Vec<f64>>, ProblemError> {
    days.iter()
        .map(|&day| match compute_baseline(history, day, n_days) {
            Ok(b) => Ok(b),
            Err(MarketError::InsufficientHistory { found, needed }) if found > 0 => {
                warnings.push(format!("{day}: baseline averages {found} of {needed} days"));
                compute_baseline(history, day, found).map_err(ProblemError::from)
            }
            Err(MarketError::InsufficientHistory { .. }) => Err(ProblemError::BaselineMissing(format!(
                "no history of the same day type before {day}"
            ))),
            Err(e) => Err(e.into()),
        })
        .collect()
}

/// Cost-optimal schedule used as the market baseline: Problem 2 when a PDP
/// policy is configured, Problem 1 otherwise.
pub fn schedule_baseline(sc: &Scenario, backend: &dyn SolverBackend) -> Result<Vec<Vec<f64>>, ProblemError> {
    let id = if sc.pdp.is_some() { ProblemId::P2 } else { ProblemId::P1 };
    Ok(optimize_month(sc, id, backend)?.ev_power())
}
