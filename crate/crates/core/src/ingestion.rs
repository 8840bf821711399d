//! File formats: sessions, baseload and price CSVs, event calendars, the
//! scenario manifest, and the schedule/bill artifacts written by the CLI.
//!
//! Parsers never panic on malformed input. Row-level problems are collected
//! as [`Diagnostic`]s with a line number; only structural failures (I/O,
//! wrong header, unreadable JSON) are errors.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{ChargerSpec, VehicleSession};
use crate::grid::{month_days, StepGrid};
use crate::markets::{DbpEvent, DbpProgram, PdrMarket, RegulationMarket};
use crate::problems::{history_baseline, uncontrolled_history, MonthResult, ProblemError, Scenario};
use crate::tariff::{fmt_hhmm, parse_hhmm, BillResult, PdpPolicy, TariffError, TariffSchedule, TimeWindow};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    HeaderMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("{path}: irregular time series: {message}")]
    IrregularSource { path: String, message: String },
    #[error("{path}: {message}")]
    Data { path: String, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Tariff(#[from] TariffError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

impl IngestError {
    /// Configuration problems (as opposed to bad data).
    pub fn is_config(&self) -> bool {
        matches!(self, IngestError::Manifest(_) | IngestError::Tariff(_))
            || matches!(self, IngestError::Json { path, .. } if path.ends_with("manifest.json"))
    }
}

/// One rejected or adjusted input row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub source: String,
    /// 1-based line in the file, 0 when not tied to a line.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.source, self.line, self.message)
    }
}

fn diag(source: &str, line: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        source: source.to_string(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Site-local wall-clock timestamp. Offsets, when present, are dropped.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    None
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>, source: &str) -> Result<Vec<String>, IngestError> {
    let h = rdr.headers().map_err(|e| IngestError::Data {
        path: source.to_string(),
        message: format!("unreadable header: {e}"),
    })?;
    Ok(h.iter().map(|s| s.trim_start_matches('\u{feff}').to_string()).collect())
}

fn expect_header(found: &[String], expected: &[&str], source: &str) -> Result<(), IngestError> {
    if found.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(IngestError::HeaderMismatch {
            path: source.to_string(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

fn parse_num(field: Option<&str>, what: &str) -> Result<f64, String> {
    let s = field.ok_or_else(|| format!("missing {what}"))?;
    let v: f64 = s.parse().map_err(|_| format!("{what} `{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what} `{s}` is not finite"))
    }
}

// ---------------------------------------------------------------- sessions

pub const SESSION_HEADER: [&str; 5] = [
    "vehicle_id",
    "arrival_iso8601",
    "departure_iso8601",
    "energy_kwh",
    "max_power_kw",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSessionRecord {
    pub vehicle_id: String,
    pub arrival: NaiveDateTime,
    pub departure: NaiveDateTime,
    pub energy_kwh: f64,
    pub max_power_kw: f64,
}

pub fn parse_sessions<R: Read>(
    reader: R,
    source: &str,
) -> Result<(Vec<RawSessionRecord>, Vec<Diagnostic>), IngestError> {
    let mut rdr = csv_reader(reader);
    expect_header(&headers(&mut rdr, source)?, &SESSION_HEADER, source)?;
    let mut out = Vec::new();
    let mut diags = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                diags.push(diag(source, i + 2, format!("unreadable row: {e}")));
                continue;
            }
        };
        let line = line_of(&rec, i + 2);
        let parsed = (|| -> Result<RawSessionRecord, String> {
            if rec.len() != SESSION_HEADER.len() {
                return Err(format!("expected {} fields, found {}", SESSION_HEADER.len(), rec.len()));
            }
            let vehicle_id = rec[0].to_string();
            if vehicle_id.is_empty() {
                return Err("empty vehicle_id".into());
            }
            let arrival = parse_timestamp(&rec[1]).ok_or_else(|| format!("bad arrival `{}`", &rec[1]))?;
            let departure = parse_timestamp(&rec[2]).ok_or_else(|| format!("bad departure `{}`", &rec[2]))?;
            if departure <= arrival {
                return Err("departure is not after arrival".into());
            }
            let energy_kwh = parse_num(rec.get(3), "energy_kwh")?;
            if energy_kwh < 0.0 {
                return Err("negative energy_kwh".into());
            }
            let max_power_kw = parse_num(rec.get(4), "max_power_kw")?;
            if max_power_kw <= 0.0 {
                return Err("max_power_kw must be positive".into());
            }
            Ok(RawSessionRecord {
                vehicle_id,
                arrival,
                departure,
                energy_kwh,
                max_power_kw,
            })
        })();
        match parsed {
            Ok(r) => {
                if seen.insert((r.vehicle_id.clone(), r.arrival)) {
                    out.push(r);
                } else {
                    diags.push(diag(source, line, format!("duplicate session {} at {}", r.vehicle_id, r.arrival)));
                }
            }
            Err(m) => diags.push(diag(source, line, m)),
        }
    }
    Ok((out, diags))
}

pub fn read_sessions(path: &Path) -> Result<(Vec<RawSessionRecord>, Vec<Diagnostic>), IngestError> {
    parse_sessions(open(path)?, &path.display().to_string())
}

pub fn write_sessions<W: Write>(records: &[RawSessionRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SESSION_HEADER)?;
    for r in records {
        w.write_record([
            r.vehicle_id.clone(),
            format_timestamp(r.arrival),
            format_timestamp(r.departure),
            r.energy_kwh.to_string(),
            r.max_power_kw.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grid boundary at or after `t` (same or next day).
fn snap_up(t: NaiveDateTime, grid: StepGrid) -> NaiveDateTime {
    let step = grid.ceil_step(t.time());
    t.date().and_time(NaiveTime::MIN) + Duration::minutes(step as i64 * grid.dt_minutes() as i64)
}

fn snap_down(t: NaiveDateTime, grid: StepGrid) -> NaiveDateTime {
    let step = grid.floor_step(t.time());
    t.date().and_time(NaiveTime::MIN) + Duration::minutes(step as i64 * grid.dt_minutes() as i64)
}

/// Snaps records onto the grid, splits them at midnight and clips
/// undeliverable requests. Energy of a split session is prorated by the
/// steps available in each part.
pub fn to_sessions(
    records: &[RawSessionRecord],
    grid: StepGrid,
    charger: ChargerSpec,
) -> (Vec<VehicleSession>, Vec<Diagnostic>) {
    let mut out = Vec::new();
    let mut diags = Vec::new();
    let dt = grid.dt_minutes() as i64;
    for (i, r) in records.iter().enumerate() {
        let src = format!("session {}", r.vehicle_id);
        let a = snap_up(r.arrival, grid);
        let d = snap_down(r.departure, grid);
        if d <= a {
            diags.push(diag(&src, i + 1, "no full step remains after snapping to the grid"));
            continue;
        }
        let spec = ChargerSpec {
            p_min: charger.p_min.min(r.max_power_kw * charger.eta_c),
            p_max: r.max_power_kw,
            eta_c: charger.eta_c,
        };
        let mut parts: Vec<(NaiveDate, usize, usize)> = Vec::new();
        let mut cur = a;
        while cur < d {
            let day = cur.date();
            let midnight = day.and_time(NaiveTime::MIN) + Duration::days(1);
            let end = d.min(midnight);
            let t0 = ((cur - day.and_time(NaiveTime::MIN)).num_minutes() / dt) as usize;
            let t1 = ((end - day.and_time(NaiveTime::MIN)).num_minutes() / dt) as usize;
            if t1 > t0 {
                parts.push((day, t0, t1));
            }
            cur = end;
        }
        let total_steps: usize = parts.iter().map(|p| p.2 - p.1).sum();
        for (day, t0, t1) in parts {
            let share = (t1 - t0) as f64 / total_steps as f64;
            let s = VehicleSession {
                vehicle_id: r.vehicle_id.clone(),
                day,
                t_arrive: t0,
                t_depart: t1,
                e_req: r.energy_kwh * share,
                spec,
            };
            let (s, raised) = s.raised_to_min_step(grid);
            if raised {
                diags.push(diag(
                    &src,
                    i + 1,
                    format!("request on {day} raised to one minimum-power step ({:.3} kWh)", s.e_req),
                ));
            }
            let (s, clipped) = s.clipped(grid);
            if clipped {
                diags.push(diag(
                    &src,
                    i + 1,
                    format!("request on {day} clipped to the deliverable {:.3} kWh", s.e_req),
                ));
            }
            out.push(s);
        }
    }
    (out, diags)
}

// ------------------------------------------------------------- time series

/// Timestamped columns as read from a CSV; empty cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    pub source: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: BTreeMap<String, Vec<Option<f64>>>,
}

pub fn parse_timeseries<R: Read>(
    reader: R,
    source: &str,
    allowed: &[&str],
) -> Result<(TimeSeriesTable, Vec<Diagnostic>), IngestError> {
    let mut rdr = csv_reader(reader);
    let h = headers(&mut rdr, source)?;
    let bad_header = || IngestError::HeaderMismatch {
        path: source.to_string(),
        expected: format!("timestamp_iso8601 followed by any of {}", allowed.join(",")),
        found: h.join(","),
    };
    if h.first().map(String::as_str) != Some("timestamp_iso8601") || h.len() < 2 {
        return Err(bad_header());
    }
    let names: Vec<String> = h[1..].to_vec();
    let unique: HashSet<&String> = names.iter().collect();
    if names.iter().any(|n| !allowed.contains(&n.as_str())) || unique.len() != names.len() {
        return Err(bad_header());
    }
    let mut table = TimeSeriesTable {
        source: source.to_string(),
        timestamps: Vec::new(),
        columns: names.iter().map(|n| (n.clone(), Vec::new())).collect(),
    };
    let mut diags = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                diags.push(diag(source, i + 2, format!("unreadable row: {e}")));
                continue;
            }
        };
        let line = line_of(&rec, i + 2);
        if rec.len() != h.len() {
            diags.push(diag(source, line, format!("expected {} fields, found {}", h.len(), rec.len())));
            continue;
        }
        let Some(ts) = parse_timestamp(&rec[0]) else {
            diags.push(diag(source, line, format!("bad timestamp `{}`", &rec[0])));
            continue;
        };
        if table.timestamps.last().is_some_and(|&prev| ts <= prev) {
            diags.push(diag(source, line, "timestamp not after the previous row"));
            continue;
        }
        let mut row = Vec::with_capacity(names.len());
        let mut ok = true;
        for (k, name) in names.iter().enumerate() {
            let cell = &rec[k + 1];
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            match parse_num(Some(cell), name) {
                Ok(v) => row.push(Some(v)),
                Err(m) => {
                    diags.push(diag(source, line, m));
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        table.timestamps.push(ts);
        for (name, v) in names.iter().zip(row) {
            table.columns.get_mut(name).expect("column").push(v);
        }
    }
    Ok((table, diags))
}

impl TimeSeriesTable {
    /// Source resolution in minutes: the smallest spacing, which must divide every other.
    pub fn resolution(&self) -> Result<i64, IngestError> {
        let irregular = |m: String| IngestError::IrregularSource {
            path: self.source.clone(),
            message: m,
        };
        if self.timestamps.len() < 2 {
            return Err(irregular("need at least two rows".into()));
        }
        let gaps: Vec<i64> = self
            .timestamps
            .windows(2)
            .map(|w| (w[1] - w[0]).num_seconds())
            .collect();
        let step = *gaps.iter().min().expect("two rows");
        if step % 60 != 0 || gaps.iter().any(|g| g % step != 0) {
            return Err(irregular(format!("spacing of {step} s does not divide every gap")));
        }
        if self.timestamps.iter().any(|t| t.second() != 0) {
            return Err(irregular("timestamps must fall on whole minutes".into()));
        }
        Ok(step / 60)
    }
}

/// Values of one column per day and grid step. Coarser sources are
/// replicated, finer ones averaged over the step (time-weighted, missing
/// cells skipped). Steps without source data are `None`.
pub fn resample_prices(
    table: &TimeSeriesTable,
    column: &str,
    days: &[NaiveDate],
    grid: StepGrid,
) -> Result<Vec<Vec<Option<f64>>>, IngestError> {
    let src = table.resolution()?;
    let dt = grid.dt_minutes() as i64;
    if !(src % dt == 0 || dt % src == 0) {
        return Err(IngestError::IrregularSource {
            path: table.source.clone(),
            message: format!("{src}-minute source cannot be mapped onto a {dt}-minute grid"),
        });
    }
    let values = table.columns.get(column).ok_or_else(|| IngestError::Data {
        path: table.source.clone(),
        message: format!("missing column {column}"),
    })?;
    let by_time: BTreeMap<NaiveDateTime, Option<f64>> =
        table.timestamps.iter().copied().zip(values.iter().copied()).collect();
    let lookup = |t: NaiveDateTime| by_time.get(&t).copied().flatten();
    let mut out = Vec::with_capacity(days.len());
    for day in days {
        let midnight = day.and_time(NaiveTime::MIN);
        let mut row = Vec::with_capacity(grid.steps_per_day());
        for t in 0..grid.steps_per_day() {
            let start = midnight + Duration::minutes(grid.step_start(t) as i64);
            if src >= dt {
                let off = (start - midnight).num_minutes();
                row.push(lookup(midnight + Duration::minutes(off - off % src)));
            } else {
                let parts: Vec<f64> = (0..dt / src)
                    .filter_map(|k| lookup(start + Duration::minutes(k * src)))
                    .collect();
                row.push(if parts.is_empty() {
                    None
                } else {
                    Some(parts.iter().sum::<f64>() / parts.len() as f64)
                });
            }
        }
        out.push(row);
    }
    Ok(out)
}

pub const PRICE_COLUMNS: [&str; 3] = ["reg_up_usd_per_kw", "reg_down_usd_per_kw", "pdr_usd_per_kwh"];
pub const BASELOAD_COLUMNS: [&str; 1] = ["load_kw"];

pub fn read_prices(path: &Path) -> Result<(TimeSeriesTable, Vec<Diagnostic>), IngestError> {
    parse_timeseries(open(path)?, &path.display().to_string(), &PRICE_COLUMNS)
}

/// Baseload on the grid; every step must be covered.
pub fn read_baseload(
    path: &Path,
    days: &[NaiveDate],
    grid: StepGrid,
) -> Result<(Vec<Vec<f64>>, Vec<Diagnostic>), IngestError> {
    let (table, diags) = parse_timeseries(open(path)?, &path.display().to_string(), &BASELOAD_COLUMNS)?;
    let series = resample_prices(&table, "load_kw", days, grid)?;
    let mut out = Vec::with_capacity(days.len());
    for (d, row) in series.into_iter().enumerate() {
        let mut r = Vec::with_capacity(row.len());
        for (t, v) in row.into_iter().enumerate() {
            r.push(v.ok_or_else(|| IngestError::Data {
                path: table.source.clone(),
                message: format!("no load value for {} step {t}", days[d]),
            })?);
        }
        out.push(r);
    }
    Ok((out, diags))
}

pub fn write_timeseries<W: Write>(
    writer: W,
    columns: &[&str],
    days: &[NaiveDate],
    grid: StepGrid,
    values: &[Vec<Vec<Option<f64>>>],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp_iso8601"];
    header.extend_from_slice(columns);
    w.write_record(&header)?;
    for (d, day) in days.iter().enumerate() {
        for t in 0..grid.steps_per_day() {
            let ts = day.and_time(NaiveTime::MIN) + Duration::minutes(grid.step_start(t) as i64);
            let mut rec = vec![format_timestamp(ts)];
            for col in values {
                rec.push(col[d][t].map_or(String::new(), |v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------------ events

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub date: NaiveDate,
    pub start_local: String,
    pub end_local: String,
}

impl EventRecord {
    pub fn window(&self) -> Result<TimeWindow, TariffError> {
        TimeWindow::new(parse_hhmm(&self.start_local)?, parse_hhmm(&self.end_local)?)
    }
}

pub fn parse_events(text: &str, source: &str) -> Result<Vec<EventRecord>, IngestError> {
    let events: Vec<EventRecord> = serde_json::from_str(text).map_err(|e| IngestError::Json {
        path: source.to_string(),
        message: e.to_string(),
    })?;
    for e in &events {
        e.window().map_err(|err| IngestError::Data {
            path: source.to_string(),
            message: format!("event on {}: {err}", e.date),
        })?;
    }
    Ok(events)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>, IngestError> {
    parse_events(&read_text(path)?, &path.display().to_string())
}

/// Event steps: those whose start falls inside the window.
pub fn to_dbp_events(events: &[EventRecord], grid: StepGrid) -> Result<Vec<DbpEvent>, IngestError> {
    let mut out = Vec::new();
    for e in events {
        let w = e.window()?;
        let steps: Vec<usize> = w.steps(grid).collect();
        if let (Some(&first), Some(&last)) = (steps.first(), steps.last()) {
            out.push(DbpEvent {
                date: e.date,
                start: first,
                end: last + 1,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarketBaseline {
    /// Mean of previous same-type days of uncontrolled charging.
    #[default]
    History,
    /// The cost-optimal schedule of the period itself.
    Schedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegulationBaseline {
    #[default]
    Free,
    /// Fixed to the cost-optimal schedule.
    Fixed,
}

fn default_dt() -> u32 {
    15
}

fn default_history_days() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdpManifest {
    pub events: PathBuf,
    pub capacity_reserve_kw: f64,
    #[serde(default)]
    pub event_rate: Option<Decimal>,
    #[serde(default)]
    pub credit_peak: Option<Decimal>,
    #[serde(default)]
    pub credit_partpeak: Option<Decimal>,
    #[serde(default)]
    pub opt_out: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulationManifest {
    #[serde(default)]
    pub rho_up: Option<f64>,
    #[serde(default)]
    pub rho_down: Option<f64>,
    #[serde(default)]
    pub min_bid_up_kw: Option<f64>,
    #[serde(default)]
    pub min_bid_down_kw: Option<f64>,
    #[serde(default)]
    pub commitment_minutes: Option<u32>,
    #[serde(default)]
    pub baseline: RegulationBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdrManifest {
    #[serde(default)]
    pub min_sell_kw: Option<f64>,
    #[serde(default)]
    pub min_block_minutes: Option<u32>,
    #[serde(default)]
    pub baseline: MarketBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbpManifest {
    pub events: PathBuf,
    #[serde(default)]
    pub credit: Option<f64>,
    #[serde(default)]
    pub min_reduction_kw: Option<f64>,
    #[serde(default)]
    pub min_duration_minutes: Option<u32>,
    #[serde(default)]
    pub baseline: MarketBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsManifest {
    #[serde(default)]
    pub time_limit_s: Option<f64>,
    #[serde(default)]
    pub mip_gap: Option<f64>,
}

/// Scenario manifest. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub year: i32,
    pub month: u32,
    /// Restrict the period to the first days of the month.
    #[serde(default)]
    pub n_days: Option<usize>,
    #[serde(default = "default_dt")]
    pub dt_minutes: u32,
    pub sessions: PathBuf,
    #[serde(default)]
    pub history_sessions: Option<PathBuf>,
    pub baseload: PathBuf,
    /// Tariff JSON; the bundled E-19 schedule when absent.
    #[serde(default)]
    pub tariff: Option<PathBuf>,
    #[serde(default)]
    pub prices: Option<PathBuf>,
    #[serde(default)]
    pub charger: Option<ChargerSpec>,
    #[serde(default = "default_history_days")]
    pub baseline_history_days: usize,
    #[serde(default)]
    pub pdp: Option<PdpManifest>,
    #[serde(default)]
    pub regulation: Option<RegulationManifest>,
    #[serde(default)]
    pub pdr: Option<PdrManifest>,
    #[serde(default)]
    pub dbp: Option<DbpManifest>,
    #[serde(default)]
    pub limits: Option<LimitsManifest>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::Manifest(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn days(&self) -> Result<Vec<NaiveDate>, IngestError> {
        let all = month_days(self.year, self.month);
        if all.is_empty() {
            return Err(IngestError::Manifest(format!("invalid month {}-{}", self.year, self.month)));
        }
        let n = self.n_days.unwrap_or(all.len());
        if n == 0 || n > all.len() {
            return Err(IngestError::Manifest(format!("n_days must lie in 1..={}", all.len())));
        }
        Ok(all[..n].to_vec())
    }
}

/// Steps covering `minutes`, rounded up.
fn minutes_to_steps(minutes: u32, grid: StepGrid) -> usize {
    minutes.div_ceil(grid.dt_minutes()).max(1) as usize
}

/// A scenario assembled from files, with the baselines that still need a solve.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub pdr_baseline: MarketBaseline,
    pub dbp_baseline: MarketBaseline,
    pub regulation_baseline: RegulationBaseline,
    pub diagnostics: Vec<Diagnostic>,
    pub warnings: Vec<String>,
}

impl LoadedScenario {
    /// Whether any baseline must come from a solved schedule.
    pub fn needs_schedule(&self) -> bool {
        (self.scenario.pdr.is_some() && self.pdr_baseline == MarketBaseline::Schedule)
            || (self.scenario.dbp.is_some() && self.dbp_baseline == MarketBaseline::Schedule)
            || (self.scenario.regulation.is_some() && self.regulation_baseline == RegulationBaseline::Fixed)
    }

    /// Installs a solved cost-optimal schedule wherever a baseline asks for it.
    pub fn apply_schedule(&mut self, schedule: &[Vec<f64>]) {
        if self.pdr_baseline == MarketBaseline::Schedule {
            if let Some(p) = self.scenario.pdr.as_mut() {
                p.baseline = schedule.to_vec();
            }
        }
        if self.dbp_baseline == MarketBaseline::Schedule {
            if let Some(p) = self.scenario.dbp.as_mut() {
                p.baseline = schedule.to_vec();
            }
        }
        if self.regulation_baseline == RegulationBaseline::Fixed && self.scenario.regulation.is_some() {
            self.scenario.regulation_baseline = Some(schedule.to_vec());
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<LoadedScenario, IngestError> {
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_scenario(&manifest, base)
}

pub fn load_scenario(m: &Manifest, base: &Path) -> Result<LoadedScenario, IngestError> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let grid = StepGrid::new(m.dt_minutes).map_err(|e| IngestError::Manifest(e.to_string()))?;
    let days = m.days()?;
    let charger = m.charger.unwrap_or_default();
    charger
        .validate()
        .map_err(|e| IngestError::Manifest(e.to_string()))?;
    let mut diagnostics = Vec::new();
    let mut warnings = Vec::new();

    let tariff = match &m.tariff {
        Some(p) => TariffSchedule::from_json(&read_text(&resolve(p))?)?,
        None => TariffSchedule::e19(),
    };

    let (records, d) = read_sessions(&resolve(&m.sessions))?;
    diagnostics.extend(d);
    let (sessions, d) = to_sessions(&records, grid, charger);
    diagnostics.extend(d);
    let (in_period, outside): (Vec<VehicleSession>, Vec<VehicleSession>) =
        sessions.into_iter().partition(|s| days.contains(&s.day));
    if !outside.is_empty() {
        warnings.push(format!("{} session parts fall outside the period and are ignored", outside.len()));
    }

    let (baseload, d) = read_baseload(&resolve(&m.baseload), &days, grid)?;
    diagnostics.extend(d);

    let mut sc = Scenario::empty(grid, days.clone(), tariff);
    sc.sessions = in_period;
    sc.baseload = baseload;
    if let Some(l) = &m.limits {
        if let Some(t) = l.time_limit_s {
            if !(t > 0.0 && t.is_finite()) {
                return Err(IngestError::Manifest("time_limit_s must be positive".into()));
            }
            sc.limits.time_limit = Some(std::time::Duration::from_secs_f64(t));
        }
        if let Some(g) = l.mip_gap {
            if !(0.0..1.0).contains(&g) {
                return Err(IngestError::Manifest("mip_gap must lie in [0, 1)".into()));
            }
            sc.limits.mip_gap = g;
        }
    }

    let prices = match &m.prices {
        Some(p) => {
            let (t, d) = read_prices(&resolve(p))?;
            diagnostics.extend(d);
            Some(t)
        }
        None => None,
    };
    let price_column = |col: &str| -> Result<Vec<Vec<Option<f64>>>, IngestError> {
        match &prices {
            Some(t) if t.columns.contains_key(col) => resample_prices(t, col, &days, grid),
            _ => Err(IngestError::Manifest(format!("prices file with a {col} column is required"))),
        }
    };

    if let Some(p) = &m.pdp {
        let events = read_events(&resolve(&p.events))?;
        let mut policy = PdpPolicy::with_defaults(p.capacity_reserve_kw, events.iter().map(|e| e.date).collect());
        if let Some(first) = events.first() {
            policy.event_window = first.window()?;
            if events.iter().any(|e| e.window().ok() != Some(policy.event_window)) {
                return Err(IngestError::Manifest("PDP events must share one time window".into()));
            }
        }
        if let Some(r) = p.event_rate {
            policy.event_rate = r;
        }
        if let Some(r) = p.credit_peak {
            policy.credit_peak = r;
        }
        if let Some(r) = p.credit_partpeak {
            policy.credit_partpeak = r;
        }
        policy.validate()?;
        sc.pdp = Some(policy);
        sc.pdp_opt_out = p.opt_out;
    }

    let mut regulation_baseline = RegulationBaseline::Free;
    if let Some(r) = &m.regulation {
        let mut market = RegulationMarket::new(price_column("reg_up_usd_per_kw")?, price_column("reg_down_usd_per_kw")?);
        market.rho_up = r.rho_up.unwrap_or(market.rho_up);
        market.rho_down = r.rho_down.unwrap_or(market.rho_down);
        market.min_bid_up = r.min_bid_up_kw.unwrap_or(market.min_bid_up);
        market.min_bid_down = r.min_bid_down_kw.unwrap_or(market.min_bid_down);
        if let Some(c) = r.commitment_minutes {
            market.commitment_len = minutes_to_steps(c, grid);
        }
        market.validate().map_err(|e| IngestError::Manifest(e.to_string()))?;
        regulation_baseline = r.baseline;
        sc.regulation = Some(market);
    }

    let history = || -> Result<Vec<crate::markets::HistoryDay>, IngestError> {
        let mut all: Vec<VehicleSession> = sc.sessions.clone();
        if let Some(h) = &m.history_sessions {
            let (records, d) = read_sessions(&resolve(h))?;
            let (hs, _) = to_sessions(&records, grid, charger);
            if !d.is_empty() {
                log::warn!("{} diagnostics in history sessions", d.len());
            }
            all.extend(hs.into_iter().filter(|s| s.day < days[0]));
        }
        let first = all.iter().map(|s| s.day).min().unwrap_or(days[0]).min(days[0]);
        Ok(uncontrolled_history(&all, first, *days.last().expect("days"), grid))
    };

    let mut cached: Option<Vec<Vec<f64>>> = None;
    let mut history_once = |warnings: &mut Vec<String>| -> Result<Vec<Vec<f64>>, IngestError> {
        if cached.is_none() {
            cached = Some(history_baseline(&history()?, &days, m.baseline_history_days, warnings)?);
        }
        Ok(cached.clone().expect("just computed"))
    };

    let mut pdr_baseline = MarketBaseline::History;
    if let Some(p) = &m.pdr {
        pdr_baseline = p.baseline;
        let baseline = match p.baseline {
            MarketBaseline::History => history_once(&mut warnings)?,
            MarketBaseline::Schedule => Vec::new(),
        };
        let market = PdrMarket {
            price: price_column("pdr_usd_per_kwh")?,
            min_sell: p.min_sell_kw.unwrap_or(PdrMarket::DEFAULT_MIN_SELL),
            min_consecutive: minutes_to_steps(p.min_block_minutes.unwrap_or(60), grid),
            baseline,
        };
        market.validate().map_err(|e| IngestError::Manifest(e.to_string()))?;
        sc.pdr = Some(market);
    }

    let mut dbp_baseline = MarketBaseline::History;
    if let Some(p) = &m.dbp {
        dbp_baseline = p.baseline;
        let events = to_dbp_events(&read_events(&resolve(&p.events))?, grid)?;
        let baseline = match p.baseline {
            MarketBaseline::History => history_once(&mut warnings)?,
            MarketBaseline::Schedule => Vec::new(),
        };
        let program = DbpProgram {
            credit: p.credit.unwrap_or(DbpProgram::DEFAULT_CREDIT),
            events,
            min_reduction: p.min_reduction_kw.unwrap_or(DbpProgram::DEFAULT_MIN_REDUCTION),
            min_duration: minutes_to_steps(p.min_duration_minutes.unwrap_or(120), grid),
            baseline,
        };
        program.validate(grid).map_err(|e| IngestError::Manifest(e.to_string()))?;
        sc.dbp = Some(program);
    }

    sc.validate()?;
    Ok(LoadedScenario {
        scenario: sc,
        pdr_baseline,
        dbp_baseline,
        regulation_baseline,
        diagnostics,
        warnings,
    })
}

// --------------------------------------------------------------- artifacts

pub const SCHEDULE_HEADER: [&str; 12] = [
    "date",
    "step",
    "time",
    "baseload_kw",
    "ev_power_kw",
    "ev_on",
    "site_load_kw",
    "baseline_kw",
    "bid_up_kw",
    "bid_down_kw",
    "sell_kw",
    "reduction_kw",
];

/// One row of `schedule.csv`; market columns are empty when not applicable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub date: NaiveDate,
    pub step: usize,
    pub time: String,
    pub baseload_kw: f64,
    pub ev_power_kw: f64,
    pub ev_on: bool,
    pub site_load_kw: f64,
    pub baseline_kw: Option<f64>,
    pub bid_up_kw: Option<f64>,
    pub bid_down_kw: Option<f64>,
    pub sell_kw: Option<f64>,
    pub reduction_kw: Option<f64>,
}

pub fn schedule_rows(r: &MonthResult) -> Vec<ScheduleRow> {
    let grid = StepGrid::new(r.dt_minutes).unwrap_or_default();
    let pick = |s: &Option<Vec<Vec<f64>>>, d: usize, t: usize| s.as_ref().map(|v| v[d][t]);
    let mut out = Vec::new();
    for (d, date) in r.days.iter().enumerate() {
        for t in 0..r.schedules[d].p.len() {
            let p = r.schedules[d].p[t];
            out.push(ScheduleRow {
                date: *date,
                step: t,
                time: fmt_hhmm(grid.step_start(t)),
                baseload_kw: r.baseload[d][t],
                ev_power_kw: p,
                ev_on: r.schedules[d].on[t],
                site_load_kw: r.baseload[d][t] + p,
                baseline_kw: pick(&r.baseline, d, t),
                bid_up_kw: pick(&r.bid_up, d, t),
                bid_down_kw: pick(&r.bid_down, d, t),
                sell_kw: pick(&r.sell, d, t),
                reduction_kw: pick(&r.reduction, d, t),
            });
        }
    }
    out
}

pub fn write_schedule<W: Write>(rows: &[ScheduleRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(SCHEDULE_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_schedule<R: Read>(reader: R, source: &str) -> Result<(Vec<ScheduleRow>, Vec<Diagnostic>), IngestError> {
    let mut rdr = csv_reader(reader);
    expect_header(&headers(&mut rdr, source)?, &SCHEDULE_HEADER, source)?;
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for (i, rec) in rdr.deserialize::<ScheduleRow>().enumerate() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) => diags.push(diag(source, i + 2, e.to_string())),
        }
    }
    Ok((rows, diags))
}

pub const BILL_HEADER: [&str; 2] = ["component", "usd"];

/// `bill.csv` lines: every bill component, market revenues and the total.
pub fn bill_rows(r: &MonthResult) -> Vec<(String, Decimal)> {
    let b: &BillResult = &r.bill;
    let f = |x: f64| crate::tariff::dec(x);
    let mut rows = vec![
        ("energy_charge".to_string(), b.c_ec),
        ("demand_charge".to_string(), b.c_dc),
        ("pdp_credit_peak".to_string(), b.pdp_credit_peak),
        ("pdp_credit_partpeak".to_string(), b.pdp_credit_partpeak),
        ("pdp_event_charge".to_string(), b.c_pdp),
        ("bill_total".to_string(), b.total()),
        ("regulation_revenue".to_string(), f(r.r_as)),
        ("pdr_revenue".to_string(), f(r.r_pdr)),
        ("dbp_revenue".to_string(), f(r.r_dbp)),
        ("net_cost".to_string(), f(r.settled_total)),
    ];
    for p in &b.peaks {
        rows.push((format!("demand_{}", p.period), p.charge));
    }
    rows
}

pub fn write_bill<W: Write>(rows: &[(String, Decimal)], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BILL_HEADER)?;
    for (k, v) in rows {
        w.write_record([k.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_bill<R: Read>(reader: R, source: &str) -> Result<(Vec<(String, Decimal)>, Vec<Diagnostic>), IngestError> {
    let mut rdr = csv_reader(reader);
    expect_header(&headers(&mut rdr, source)?, &BILL_HEADER, source)?;
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                diags.push(diag(source, i + 2, e.to_string()));
                continue;
            }
        };
        let line = line_of(&rec, i + 2);
        if rec.len() != 2 || rec[0].is_empty() {
            diags.push(diag(source, line, "expected component,usd"));
            continue;
        }
        match rec[1].parse::<Decimal>() {
            Ok(v) => rows.push((rec[0].to_string(), v)),
            Err(_) => diags.push(diag(source, line, format!("amount `{}` is not a decimal", &rec[1]))),
        }
    }
    Ok((rows, diags))
}

pub fn parse_month_result(text: &str, source: &str) -> Result<MonthResult, IngestError> {
    serde_json::from_str(text).map_err(|e| IngestError::Json {
        path: source.to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------- fixtures

fn create(path: &Path) -> Result<File, IngestError> {
    File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), IngestError> {
    std::fs::write(path, text).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<String, IngestError> {
    serde_json::to_string_pretty(v).map_err(|e| IngestError::Manifest(e.to_string()))
}

fn strip_nulls(v: &mut serde_json::Value) {
    if let serde_json::Value::Object(map) = v {
        map.retain(|_, x| !x.is_null());
        map.values_mut().for_each(strip_nulls);
    }
}

fn session_records(sessions: &[VehicleSession], grid: StepGrid) -> Vec<RawSessionRecord> {
    let at = |day: NaiveDate, t: usize| day.and_time(NaiveTime::MIN) + Duration::minutes(t as i64 * grid.dt_minutes() as i64);
    sessions
        .iter()
        .map(|s| RawSessionRecord {
            vehicle_id: s.vehicle_id.clone(),
            arrival: at(s.day, s.t_arrive),
            departure: at(s.day, s.t_depart),
            energy_kwh: s.e_req,
            max_power_kw: s.spec.p_max,
        })
        .collect()
}

/// Writes synthetic data as a manifest plus input files in `dir` and
/// returns the manifest path. Loading it reproduces `data.scenario`.
pub fn write_fixture(data: &crate::synth::SynthData, charger: ChargerSpec, dir: &Path) -> Result<PathBuf, IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let grid = data.grid;
    let first = *data.days.first().ok_or_else(|| IngestError::Manifest("fixture has no days".into()))?;
    let full = month_days(first.year(), first.month());
    let n_days = (data.days.len() < full.len()).then_some(data.days.len());

    let path = dir.join("sessions.csv");
    write_sessions(&session_records(&data.sessions, grid), create(&path)?).map_err(|e| csv_err(&path, e))?;
    let path = dir.join("history_sessions.csv");
    write_sessions(&session_records(&data.history_sessions, grid), create(&path)?).map_err(|e| csv_err(&path, e))?;

    let wrap = |v: &[Vec<f64>]| -> Vec<Vec<Option<f64>>> { v.iter().map(|r| r.iter().map(|&x| Some(x)).collect()).collect() };
    let path = dir.join("baseload.csv");
    write_timeseries(create(&path)?, &BASELOAD_COLUMNS, &data.days, grid, &[wrap(&data.baseload)])
        .map_err(|e| csv_err(&path, e))?;
    let path = dir.join("prices.csv");
    write_timeseries(
        create(&path)?,
        &PRICE_COLUMNS,
        &data.days,
        grid,
        &[wrap(&data.reg_up), wrap(&data.reg_down), wrap(&data.pdr_price)],
    )
    .map_err(|e| csv_err(&path, e))?;

    let window = crate::tariff::default_event_window();
    let pdp_events: Vec<EventRecord> = data
        .pdp_event_days
        .iter()
        .map(|&date| EventRecord {
            date,
            start_local: fmt_hhmm(window.start),
            end_local: fmt_hhmm(window.end),
        })
        .collect();
    let dbp_events: Vec<EventRecord> = data
        .dbp_events
        .iter()
        .map(|e| EventRecord {
            date: e.date,
            start_local: fmt_hhmm(grid.step_start(e.start)),
            end_local: fmt_hhmm(grid.step_start(e.end - 1) + grid.dt_minutes()),
        })
        .collect();
    write_text(&dir.join("pdp_events.json"), &to_json(&pdp_events)?)?;
    write_text(&dir.join("dbp_events.json"), &to_json(&dbp_events)?)?;

    let manifest = Manifest {
        year: first.year(),
        month: first.month(),
        n_days,
        dt_minutes: grid.dt_minutes(),
        sessions: "sessions.csv".into(),
        history_sessions: Some("history_sessions.csv".into()),
        baseload: "baseload.csv".into(),
        tariff: None,
        prices: Some("prices.csv".into()),
        charger: Some(charger),
        baseline_history_days: data.baseline_days,
        pdp: Some(PdpManifest {
            events: "pdp_events.json".into(),
            capacity_reserve_kw: data.capacity_reserve_kw,
            event_rate: None,
            credit_peak: None,
            credit_partpeak: None,
            opt_out: false,
        }),
        regulation: Some(RegulationManifest {
            rho_up: None,
            rho_down: None,
            min_bid_up_kw: None,
            min_bid_down_kw: None,
            commitment_minutes: None,
            baseline: RegulationBaseline::Free,
        }),
        pdr: Some(PdrManifest {
            min_sell_kw: None,
            min_block_minutes: None,
            baseline: MarketBaseline::History,
        }),
        dbp: Some(DbpManifest {
            events: "dbp_events.json".into(),
            credit: None,
            min_reduction_kw: None,
            min_duration_minutes: None,
            baseline: MarketBaseline::History,
        }),
        limits: None,
    };
    // Absent options read back as defaults; leave them out.
    let mut value = serde_json::to_value(&manifest).map_err(|e| IngestError::Manifest(e.to_string()))?;
    strip_nulls(&mut value);
    let path = dir.join("manifest.json");
    write_text(&path, &to_json(&value)?)?;
    Ok(path)
}
