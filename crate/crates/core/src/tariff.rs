//! Time-of-use billing: energy charge, demand charge and peak-day pricing.
//!
//! Rates are kept as decimals from the configuration through settlement so a
//! unit load reproduces the published rates exactly.

use std::collections::HashSet;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rust_decimal::prelude::{FromPrimitive, ToPrimitive};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{is_weekend, StepGrid};

pub const PEAK: &str = "peak";
pub const PART_PEAK: &str = "part_peak";

#[derive(Debug, Error, PartialEq)]
pub enum TariffError {
    #[error("invalid tariff config: {0}")]
    Config(String),
    #[error("calendar mismatch: {0}")]
    CalendarMismatch(String),
    #[error("non-finite load {value} at day {day}, step {step}")]
    NonFinite { day: usize, step: usize, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Summer,
    Winter,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayFilter {
    #[default]
    All,
    Weekdays,
    Weekends,
}

impl DayFilter {
    pub fn matches(self, date: NaiveDate) -> bool {
        match self {
            DayFilter::All => true,
            DayFilter::Weekdays => !is_weekend(date),
            DayFilter::Weekends => is_weekend(date),
        }
    }
}

/// Half-open wall-clock window `[start, end)` in minutes after midnight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow", into = "RawWindow")]
pub struct TimeWindow {
    pub start: u32,
    pub end: u32,
}

impl TimeWindow {
    pub fn new(start: u32, end: u32) -> Result<Self, TariffError> {
        if start >= end || end > 1440 {
            return Err(TariffError::Config(format!(
                "window {} - {} is empty or exceeds the day",
                fmt_hhmm(start),
                fmt_hhmm(end)
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, minute: u32) -> bool {
        self.start <= minute && minute < self.end
    }

    /// Steps whose start time lies inside the window.
    pub fn steps(&self, grid: StepGrid) -> impl Iterator<Item = usize> + '_ {
        (0..grid.steps_per_day()).filter(move |&t| self.contains(grid.step_start(t)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawWindow {
    start: String,
    end: String,
}

impl TryFrom<RawWindow> for TimeWindow {
    type Error = TariffError;
    fn try_from(w: RawWindow) -> Result<Self, TariffError> {
        TimeWindow::new(parse_hhmm(&w.start)?, parse_hhmm(&w.end)?)
    }
}

impl From<TimeWindow> for RawWindow {
    fn from(w: TimeWindow) -> Self {
        RawWindow {
            start: fmt_hhmm(w.start),
            end: fmt_hhmm(w.end),
        }
    }
}

/// `HH:MM`, with `24:00` allowed as the end of the day.
pub fn parse_hhmm(s: &str) -> Result<u32, TariffError> {
    let bad = || TariffError::Config(format!("bad time `{s}`, expected HH:MM"));
    let (h, m) = s.trim().split_once(':').ok_or_else(bad)?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

pub fn fmt_hhmm(minute: u32) -> String {
    format!("{:02}:{:02}", minute / 60, minute % 60)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub season: Season,
    pub period: String,
    #[serde(default)]
    pub days: DayFilter,
    pub windows: Vec<TimeWindow>,
    pub rate: Decimal,
}

impl RateEntry {
    fn applies(&self, season: Season, date: NaiveDate, minute: u32) -> bool {
        self.season == season && self.days.matches(date) && self.windows.iter().any(|w| w.contains(minute))
    }
}

/// JSON tariff document. Energy entries resolve by first match in list order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TariffConfig {
    pub name: String,
    pub summer_months: Vec<u32>,
    pub energy: Vec<RateEntry>,
    pub demand: Vec<RateEntry>,
}

/// A validated tariff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TariffConfig", into = "TariffConfig")]
pub struct TariffSchedule {
    config: TariffConfig,
}

impl TryFrom<TariffConfig> for TariffSchedule {
    type Error = TariffError;
    fn try_from(c: TariffConfig) -> Result<Self, TariffError> {
        TariffSchedule::new(c)
    }
}

impl From<TariffSchedule> for TariffConfig {
    fn from(s: TariffSchedule) -> Self {
        s.config
    }
}

impl TariffSchedule {
    pub fn new(config: TariffConfig) -> Result<Self, TariffError> {
        for m in &config.summer_months {
            if !(1..=12).contains(m) {
                return Err(TariffError::Config(format!("summer month {m} out of range")));
            }
        }
        for e in config.energy.iter().chain(&config.demand) {
            if e.rate < Decimal::ZERO {
                return Err(TariffError::Config(format!("negative rate for `{}`", e.period)));
            }
            if e.windows.is_empty() {
                return Err(TariffError::Config(format!("`{}` has no time windows", e.period)));
            }
        }
        for season in [Season::Summer, Season::Winter] {
            let mut seen = HashSet::new();
            for d in config.demand.iter().filter(|d| d.season == season) {
                if !seen.insert(d.period.as_str()) {
                    return Err(TariffError::Config(format!(
                        "demand period `{}` defined twice for {season:?}",
                        d.period
                    )));
                }
            }
        }
        // Every minute of every (season, day type) needs an energy rate.
        // 2016-06-06 is a Monday and 2016-06-04 a Saturday.
        let probes = [
            NaiveDate::from_ymd_opt(2016, 6, 6).expect("valid date"),
            NaiveDate::from_ymd_opt(2016, 6, 4).expect("valid date"),
        ];
        for season in [Season::Summer, Season::Winter] {
            for date in probes {
                for minute in 0..1440 {
                    if !config.energy.iter().any(|e| e.applies(season, date, minute)) {
                        return Err(TariffError::Config(format!(
                            "no energy rate for {season:?} {} at {}",
                            if is_weekend(date) { "weekends" } else { "weekdays" },
                            fmt_hhmm(minute)
                        )));
                    }
                }
            }
        }
        Ok(Self { config })
    }

    pub fn from_json(text: &str) -> Result<Self, TariffError> {
        let cfg: TariffConfig =
            serde_json::from_str(text).map_err(|e| TariffError::Config(e.to_string()))?;
        Self::new(cfg)
    }

    /// The bundled PG&E E-19 schedule.
    pub fn e19() -> Self {
        Self::from_json(include_str!("../data/e19.json")).expect("bundled tariff is valid")
    }

    pub fn config(&self) -> &TariffConfig {
        &self.config
    }

    pub fn season(&self, date: NaiveDate) -> Season {
        if self.config.summer_months.contains(&date.month()) {
            Season::Summer
        } else {
            Season::Winter
        }
    }

    fn energy_entry(&self, date: NaiveDate, minute: u32) -> &RateEntry {
        let season = self.season(date);
        self.config
            .energy
            .iter()
            .find(|e| e.applies(season, date, minute))
            .expect("coverage checked at construction")
    }

    pub fn energy_rate(&self, date: NaiveDate, minute: u32) -> Decimal {
        self.energy_entry(date, minute).rate
    }

    pub fn energy_period(&self, date: NaiveDate, minute: u32) -> &str {
        &self.energy_entry(date, minute).period
    }

    /// Resolves rates and period membership on a concrete step grid.
    pub fn calendar(&self, days: &[NaiveDate], grid: StepGrid) -> TariffCalendar {
        let n = grid.steps_per_day();
        let mut energy_rate = Vec::with_capacity(days.len());
        let mut energy_period = Vec::with_capacity(days.len());
        for &d in days {
            let mut rates = Vec::with_capacity(n);
            let mut periods = Vec::with_capacity(n);
            for t in 0..n {
                let e = self.energy_entry(d, grid.step_start(t));
                rates.push(e.rate);
                periods.push(e.period.clone());
            }
            energy_rate.push(rates);
            energy_period.push(periods);
        }
        let mut demand: Vec<DemandPeriod> = Vec::new();
        for &d in days {
            let season = self.season(d);
            for entry in self.config.demand.iter().filter(|e| e.season == season) {
                if !demand.iter().any(|p| p.id == entry.period && p.season == season) {
                    demand.push(DemandPeriod {
                        id: entry.period.clone(),
                        season,
                        rate: entry.rate,
                        mask: vec![vec![false; n]; days.len()],
                    });
                }
            }
        }
        for (di, &d) in days.iter().enumerate() {
            let season = self.season(d);
            for entry in self.config.demand.iter().filter(|e| e.season == season) {
                let p = demand
                    .iter_mut()
                    .find(|p| p.id == entry.period && p.season == season)
                    .expect("registered above");
                if !entry.days.matches(d) {
                    continue;
                }
                for t in 0..n {
                    if entry.windows.iter().any(|w| w.contains(grid.step_start(t))) {
                        p.mask[di][t] = true;
                    }
                }
            }
        }
        TariffCalendar {
            grid,
            days: days.to_vec(),
            energy_rate,
            energy_period,
            demand,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandPeriod {
    pub id: String,
    pub season: Season,
    pub rate: Decimal,
    /// `mask[day][step]`: whether the step belongs to this period.
    pub mask: Vec<Vec<bool>>,
}

impl DemandPeriod {
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask.iter().enumerate().flat_map(|(d, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(move |(t, _)| (d, t))
        })
    }
}

/// Tariff resolved onto the steps of a billing period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TariffCalendar {
    pub grid: StepGrid,
    pub days: Vec<NaiveDate>,
    pub energy_rate: Vec<Vec<Decimal>>,
    pub energy_period: Vec<Vec<String>>,
    pub demand: Vec<DemandPeriod>,
}

impl TariffCalendar {
    pub fn energy_rate_f64(&self, d: usize, t: usize) -> f64 {
        self.energy_rate[d][t].to_f64().unwrap_or(f64::NAN)
    }

    fn check_shape(&self, load: &[Vec<f64>]) -> Result<(), TariffError> {
        if load.len() != self.days.len() {
            return Err(TariffError::CalendarMismatch(format!(
                "{} days of load for a {}-day calendar",
                load.len(),
                self.days.len()
            )));
        }
        let n = self.grid.steps_per_day();
        for (d, row) in load.iter().enumerate() {
            if row.len() != n {
                return Err(TariffError::CalendarMismatch(format!(
                    "day {d} has {} steps, expected {n}",
                    row.len()
                )));
            }
            for (t, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(TariffError::NonFinite { day: d, step: t, value: v });
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn dec(x: f64) -> Decimal {
    Decimal::from_f64(x).unwrap_or(Decimal::ZERO)
}

fn dt_dec(grid: StepGrid) -> Decimal {
    Decimal::from(grid.dt_minutes()) / Decimal::from(60)
}

/// Energy charge: Σ load · Δt · λ(t).
pub fn energy_charge(load: &[Vec<f64>], cal: &TariffCalendar) -> Result<Decimal, TariffError> {
    cal.check_shape(load)?;
    let dt = dt_dec(cal.grid);
    let mut total = Decimal::ZERO;
    for (d, row) in load.iter().enumerate() {
        for (t, &p) in row.iter().enumerate() {
            total += dec(p) * dt * cal.energy_rate[d][t];
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodPeak {
    pub period: String,
    /// Billing-period maximum (kW), floored at zero; zero when the period has no steps.
    pub peak_kw: f64,
    pub rate: Decimal,
    pub charge: Decimal,
}

/// Demand charge: each period's rate times its maximum load across all days.
pub fn demand_charge(
    load: &[Vec<f64>],
    cal: &TariffCalendar,
) -> Result<(Decimal, Vec<PeriodPeak>), TariffError> {
    cal.check_shape(load)?;
    let mut peaks = Vec::with_capacity(cal.demand.len());
    let mut total = Decimal::ZERO;
    for p in &cal.demand {
        let peak = p
            .steps()
            .map(|(d, t)| load[d][t])
            .fold(0.0f64, f64::max);
        let charge = dec(peak) * p.rate;
        total += charge;
        peaks.push(PeriodPeak {
            period: p.id.clone(),
            peak_kw: peak,
            rate: p.rate,
            charge,
        });
    }
    Ok((total, peaks))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpPolicy {
    /// Capacity reservation level (kW).
    pub capacity_reserve: f64,
    /// Surcharge on event energy above the reserve ($/kWh).
    pub event_rate: Decimal,
    pub credit_peak: Decimal,
    pub credit_partpeak: Decimal,
    pub event_days: Vec<NaiveDate>,
    #[serde(default = "default_event_window")]
    pub event_window: TimeWindow,
}

pub fn default_event_window() -> TimeWindow {
    TimeWindow { start: 14 * 60, end: 18 * 60 }
}

impl PdpPolicy {
    /// Configuration defaults; not published values.
    pub fn with_defaults(capacity_reserve: f64, event_days: Vec<NaiveDate>) -> Self {
        Self {
            capacity_reserve,
            event_rate: Decimal::from_str("1.20").expect("literal"),
            credit_peak: Decimal::from_str("5.70").expect("literal"),
            credit_partpeak: Decimal::from_str("1.20").expect("literal"),
            event_days,
            event_window: default_event_window(),
        }
    }

    pub fn validate(&self) -> Result<(), TariffError> {
        if !(self.capacity_reserve >= 0.0) {
            return Err(TariffError::Config("capacity reserve must be nonnegative".into()));
        }
        for r in [self.event_rate, self.credit_peak, self.credit_partpeak] {
            if r < Decimal::ZERO {
                return Err(TariffError::Config("PDP rates must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// `(day index, step)` of every event step inside the calendar.
    pub fn event_steps(&self, cal: &TariffCalendar) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (d, date) in cal.days.iter().enumerate() {
            if self.event_days.contains(date) {
                out.extend(self.event_window.steps(cal.grid).map(|t| (d, t)));
            }
        }
        out
    }

    /// Event steps that fall in the given energy period.
    pub fn credit_steps(&self, cal: &TariffCalendar, period: &str) -> Vec<(usize, usize)> {
        self.event_steps(cal)
            .into_iter()
            .filter(|&(d, t)| cal.energy_period[d][t] == period)
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PdpSettlement {
    pub credit_peak: Decimal,
    pub credit_partpeak: Decimal,
    pub event_charge: Decimal,
}

impl PdpSettlement {
    /// Credits minus event charge.
    pub fn benefit(&self) -> Decimal {
        self.credit_peak + self.credit_partpeak - self.event_charge
    }
}

pub fn pdp_settlement(
    load: &[Vec<f64>],
    cal: &TariffCalendar,
    policy: &PdpPolicy,
) -> Result<PdpSettlement, TariffError> {
    cal.check_shape(load)?;
    let cr = dec(policy.capacity_reserve);
    let credit = |period: &str, rate: Decimal| {
        let steps = policy.credit_steps(cal, period);
        if steps.is_empty() {
            return Decimal::ZERO;
        }
        let peak = steps.iter().map(|&(d, t)| dec(load[d][t])).max().unwrap_or(Decimal::ZERO);
        rate * (peak - cr).max(Decimal::ZERO)
    };
    let dt = dt_dec(cal.grid);
    let excess: Decimal = policy
        .event_steps(cal)
        .iter()
        .map(|&(d, t)| (dec(load[d][t]) - cr).max(Decimal::ZERO) * dt)
        .sum();
    Ok(PdpSettlement {
        credit_peak: credit(PEAK, policy.credit_peak),
        credit_partpeak: credit(PART_PEAK, policy.credit_partpeak),
        event_charge: policy.event_rate * excess,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BillResult {
    pub c_ec: Decimal,
    pub c_dc: Decimal,
    pub pdp_credit_peak: Decimal,
    pub pdp_credit_partpeak: Decimal,
    pub c_pdp: Decimal,
    /// Whether the PDP legs were waived because their net benefit was negative.
    #[serde(default)]
    pub pdp_opted_out: bool,
    pub peaks: Vec<PeriodPeak>,
}

impl BillResult {
    /// Net bill: energy + demand − credits + event charge (PDP legs skipped when opted out).
    pub fn total(&self) -> Decimal {
        let base = self.c_ec + self.c_dc;
        if self.pdp_opted_out {
            base
        } else {
            base - self.pdp_credit_peak - self.pdp_credit_partpeak + self.c_pdp
        }
    }

    pub fn pdp_benefit(&self) -> Decimal {
        self.pdp_credit_peak + self.pdp_credit_partpeak - self.c_pdp
    }
}

/// Full settlement of a load profile. With `opt_out`, a negative PDP
/// benefit is waived (the customer would not enrol).
pub fn settle(
    load: &[Vec<f64>],
    cal: &TariffCalendar,
    pdp: Option<&PdpPolicy>,
    opt_out: bool,
) -> Result<BillResult, TariffError> {
    let c_ec = energy_charge(load, cal)?;
    let (c_dc, peaks) = demand_charge(load, cal)?;
    let pdp = match pdp {
        Some(p) => pdp_settlement(load, cal, p)?,
        None => PdpSettlement::default(),
    };
    Ok(BillResult {
        c_ec,
        c_dc,
        pdp_credit_peak: pdp.credit_peak,
        pdp_credit_partpeak: pdp.credit_partpeak,
        c_pdp: pdp.event_charge,
        pdp_opted_out: opt_out && pdp.benefit() < Decimal::ZERO,
        peaks,
    })
}
