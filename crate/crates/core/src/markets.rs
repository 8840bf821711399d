//! Regulation, proxy demand response and demand bidding products.
//!
//! Per-step prices are `Option`s: `None` means the product is not offered in
//! that step and nothing can be bid or sold there.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{DayType, StepGrid};

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("invalid market parameters: {0}")]
    Invalid(String),
    #[error("need {needed} history days of the same type, found {found}")]
    InsufficientHistory { needed: usize, found: usize },
    #[error("reduction of {value} kW at day {day}, step {step} lies outside every event window")]
    OutsideEventWindow { day: usize, step: usize, value: f64 },
    #[error("series shape mismatch: {0}")]
    Shape(String),
}

pub type PriceSeries = Vec<Vec<Option<f64>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationMarket {
    /// $/kW per hour of committed capacity.
    pub price_up: PriceSeries,
    pub price_down: PriceSeries,
    /// Dispatched fraction of the up commitment, in [−1, 0].
    pub rho_up: f64,
    /// Dispatched fraction of the down commitment, in [0, 1].
    pub rho_down: f64,
    pub min_bid_up: f64,
    pub min_bid_down: f64,
    /// Steps over which a bid must stay constant.
    pub commitment_len: usize,
}

impl RegulationMarket {
    /// Utilization factors calibrated for the demonstration; not published values.
    pub const DEFAULT_RHO_UP: f64 = -0.15;
    pub const DEFAULT_RHO_DOWN: f64 = 0.15;
    pub const DEFAULT_MIN_BID: f64 = 10.0;

    pub fn new(price_up: PriceSeries, price_down: PriceSeries) -> Self {
        Self {
            price_up,
            price_down,
            rho_up: Self::DEFAULT_RHO_UP,
            rho_down: Self::DEFAULT_RHO_DOWN,
            min_bid_up: Self::DEFAULT_MIN_BID,
            min_bid_down: Self::DEFAULT_MIN_BID,
            commitment_len: 1,
        }
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |m: &str| Err(MarketError::Invalid(m.to_string()));
        if !(-1.0..=0.0).contains(&self.rho_up) {
            return bad("rho_up must lie in [-1, 0]");
        }
        if !(0.0..=1.0).contains(&self.rho_down) {
            return bad("rho_down must lie in [0, 1]");
        }
        if !(self.min_bid_up >= 0.0 && self.min_bid_down >= 0.0) {
            return bad("minimum bids must be nonnegative");
        }
        if self.commitment_len == 0 {
            return bad("commitment length must be at least one step");
        }
        let negative = self
            .price_up
            .iter()
            .chain(&self.price_down)
            .flatten()
            .flatten()
            .any(|&p| p < 0.0 || !p.is_finite());
        if negative {
            return bad("regulation prices must be finite and nonnegative");
        }
        if self.price_up.len() != self.price_down.len() {
            return Err(MarketError::Shape("up and down price days differ".into()));
        }
        Ok(())
    }
}

/// Day-ahead regulation schedule of one billing period (`[day][step]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulationPlan {
    pub baseline: Vec<Vec<f64>>,
    pub bid_up: Vec<Vec<f64>>,
    pub bid_down: Vec<Vec<f64>>,
}

/// Capacity payment: Σ (up·π_up + down·π_down)·Δt.
pub fn regulation_revenue(plan: &RegulationPlan, market: &RegulationMarket, grid: StepGrid) -> f64 {
    let dt = grid.dt_hours();
    let mut total = 0.0;
    for d in 0..plan.bid_up.len() {
        for t in 0..plan.bid_up[d].len() {
            let up = market.price_up.get(d).and_then(|r| r.get(t)).copied().flatten().unwrap_or(0.0);
            let down = market.price_down.get(d).and_then(|r| r.get(t)).copied().flatten().unwrap_or(0.0);
            total += (plan.bid_up[d][t] * up + plan.bid_down[d][t] * down) * dt;
        }
    }
    total
}

/// Expected actual power P = B + ρ_up·up + ρ_down·down.
pub fn apply_utilization(plan: &RegulationPlan, market: &RegulationMarket) -> Vec<Vec<f64>> {
    plan.baseline
        .iter()
        .zip(&plan.bid_up)
        .zip(&plan.bid_down)
        .map(|((b, u), dn)| {
            b.iter()
                .zip(u)
                .zip(dn)
                .map(|((b, u), dn)| b + market.rho_up * u + market.rho_down * dn)
                .collect()
        })
        .collect()
}

/// One historical day of aggregate load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryDay {
    pub date: NaiveDate,
    pub profile: Vec<f64>,
}

/// Pointwise mean of the `n_days` most recent history days of the same
/// day type as `target`, all strictly before it.
pub fn compute_baseline(
    history: &[HistoryDay],
    target: NaiveDate,
    n_days: usize,
) -> Result<Vec<f64>, MarketError> {
    if n_days == 0 {
        return Err(MarketError::Invalid("baseline needs at least one day".into()));
    }
    let kind = DayType::of(target);
    let mut pool: Vec<&HistoryDay> = history
        .iter()
        .filter(|h| h.date < target && DayType::of(h.date) == kind)
        .collect();
    pool.sort_by(|a, b| b.date.cmp(&a.date));
    if pool.len() < n_days {
        return Err(MarketError::InsufficientHistory {
            needed: n_days,
            found: pool.len(),
        });
    }
    let pool = &pool[..n_days];
    let n = pool[0].profile.len();
    if pool.iter().any(|h| h.profile.len() != n) {
        return Err(MarketError::Shape("history days have different lengths".into()));
    }
    Ok((0..n)
        .map(|t| pool.iter().map(|h| h.profile[t]).sum::<f64>() / n_days as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdrMarket {
    /// $/kWh of virtual supply.
    pub price: PriceSeries,
    pub min_sell: f64,
    /// Minimum block length in steps.
    pub min_consecutive: usize,
    /// Known baseline per day and step (kW).
    pub baseline: Vec<Vec<f64>>,
}

impl PdrMarket {
    pub const DEFAULT_MIN_SELL: f64 = 10.0;

    pub fn validate(&self) -> Result<(), MarketError> {
        if !(self.min_sell >= 0.0) {
            return Err(MarketError::Invalid("min_sell must be nonnegative".into()));
        }
        if self.min_consecutive == 0 {
            return Err(MarketError::Invalid("min_consecutive must be at least one step".into()));
        }
        if self.price.iter().flatten().flatten().any(|p| !p.is_finite()) {
            return Err(MarketError::Invalid("PDR prices must be finite".into()));
        }
        Ok(())
    }
}

/// Σ sell·π·Δt.
pub fn pdr_revenue(sell: &[Vec<f64>], market: &PdrMarket, grid: StepGrid) -> f64 {
    let dt = grid.dt_hours();
    sell.iter()
        .enumerate()
        .flat_map(|(d, row)| row.iter().enumerate().map(move |(t, &s)| (d, t, s)))
        .map(|(d, t, s)| {
            let p = market.price.get(d).and_then(|r| r.get(t)).copied().flatten().unwrap_or(0.0);
            s * p * dt
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbpEvent {
    pub date: NaiveDate,
    /// First step of the event.
    pub start: usize,
    /// One past the last step.
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbpProgram {
    /// $ per kWh of reduction.
    pub credit: f64,
    pub events: Vec<DbpEvent>,
    pub min_reduction: f64,
    /// Minimum commitment in steps.
    pub min_duration: usize,
    pub baseline: Vec<Vec<f64>>,
}

impl DbpProgram {
    pub const DEFAULT_CREDIT: f64 = 0.5;
    pub const DEFAULT_MIN_REDUCTION: f64 = 10.0;

    pub fn validate(&self, grid: StepGrid) -> Result<(), MarketError> {
        if !(self.credit >= 0.0) {
            return Err(MarketError::Invalid("DBP credit must be nonnegative".into()));
        }
        if self.min_duration == 0 {
            return Err(MarketError::Invalid("min_duration must be at least one step".into()));
        }
        for e in &self.events {
            if e.start >= e.end || e.end > grid.steps_per_day() {
                return Err(MarketError::Invalid(format!(
                    "event on {} has invalid steps {}..{}",
                    e.date, e.start, e.end
                )));
            }
        }
        Ok(())
    }

    /// Whether step `t` of `date` lies inside an event.
    pub fn in_event(&self, date: NaiveDate, t: usize) -> bool {
        self.events.iter().any(|e| e.date == date && e.start <= t && t < e.end)
    }
}

/// credit · Σ reduction·Δt. Reductions outside events are rejected.
pub fn dbp_revenue(
    reduction: &[Vec<f64>],
    days: &[NaiveDate],
    program: &DbpProgram,
    grid: StepGrid,
) -> Result<f64, MarketError> {
    if reduction.len() != days.len() {
        return Err(MarketError::Shape(format!(
            "{} reduction days for {} dates",
            reduction.len(),
            days.len()
        )));
    }
    let dt = grid.dt_hours();
    let mut energy = 0.0;
    for (d, row) in reduction.iter().enumerate() {
        for (t, &r) in row.iter().enumerate() {
            if r.abs() <= crate::EPS_FEAS {
                continue;
            }
            if !program.in_event(days[d], t) {
                return Err(MarketError::OutsideEventWindow { day: d, step: t, value: r });
            }
            energy += r * dt;
        }
    }
    Ok(program.credit * energy)
}
