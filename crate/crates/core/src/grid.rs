//! Step grid and billing-period calendar helpers.

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("step length of {0} min does not divide a day")]
    BadStep(u32),
    #[error("billing period is empty")]
    EmptyPeriod,
    #[error("billing period days must be increasing and unique ({0})")]
    Unordered(NaiveDate),
    #[error("billing period spans more than one month ({0})")]
    MixedMonths(NaiveDate),
}

/// Fixed-length steps over a wall-clock day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct StepGrid {
    dt_minutes: u32,
}

impl StepGrid {
    pub fn new(dt_minutes: u32) -> Result<Self, GridError> {
        if dt_minutes == 0 || 1440 % dt_minutes != 0 {
            return Err(GridError::BadStep(dt_minutes));
        }
        Ok(Self { dt_minutes })
    }

    pub fn dt_minutes(self) -> u32 {
        self.dt_minutes
    }

    pub fn dt_hours(self) -> f64 {
        self.dt_minutes as f64 / 60.0
    }

    pub fn steps_per_day(self) -> usize {
        (1440 / self.dt_minutes) as usize
    }

    /// Minute of day at which step `t` starts.
    pub fn step_start(self, t: usize) -> u32 {
        t as u32 * self.dt_minutes
    }

    /// Index of the first step starting at or after `time` (may equal `steps_per_day`).
    pub fn ceil_step(self, time: NaiveTime) -> usize {
        time.num_seconds_from_midnight().div_ceil(self.dt_minutes * 60) as usize
    }

    /// Index of the last step boundary at or before `time`.
    pub fn floor_step(self, time: NaiveTime) -> usize {
        (time.num_seconds_from_midnight() / (self.dt_minutes * 60)) as usize
    }
}

impl Default for StepGrid {
    fn default() -> Self {
        Self { dt_minutes: 15 }
    }
}

impl TryFrom<u32> for StepGrid {
    type Error = GridError;
    fn try_from(v: u32) -> Result<Self, GridError> {
        Self::new(v)
    }
}

impl From<StepGrid> for u32 {
    fn from(g: StepGrid) -> u32 {
        g.dt_minutes
    }
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub fn of(date: NaiveDate) -> Self {
        if is_weekend(date) {
            DayType::Weekend
        } else {
            DayType::Weekday
        }
    }
}

/// Every date of a calendar month.
pub fn month_days(year: i32, month: u32) -> Vec<NaiveDate> {
    let Some(first) = NaiveDate::from_ymd_opt(year, month, 1) else {
        return Vec::new();
    };
    first
        .iter_days()
        .take_while(|d| d.month() == month)
        .collect()
}

/// Checks that `days` is a nonempty increasing run of dates inside one month.
pub fn validate_period(days: &[NaiveDate]) -> Result<(), GridError> {
    let first = *days.first().ok_or(GridError::EmptyPeriod)?;
    for w in days.windows(2) {
        if w[1] <= w[0] {
            return Err(GridError::Unordered(w[1]));
        }
    }
    if let Some(d) = days
        .iter()
        .find(|d| d.month() != first.month() || d.year() != first.year())
    {
        return Err(GridError::MixedMonths(*d));
    }
    Ok(())
}
