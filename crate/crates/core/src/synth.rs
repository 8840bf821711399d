//! Seeded synthetic fleet month: sessions, history, baseload, prices and events.
//!
//! Stands in for the proprietary garage data. Arrivals are uniform in a
//! morning window, dwell times uniform, energy requests lognormal.

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::fleet::{ChargerSpec, VehicleSession};
use crate::grid::{is_weekend, StepGrid};
use crate::markets::{DbpEvent, DbpProgram, PdrMarket, RegulationMarket};
use crate::fleet::uncontrolled_profile;
use crate::problems::{build, history_baseline, uncontrolled_history, ProblemError, ProblemId, Scenario};
use crate::tariff::{PdpPolicy, TariffSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub year: i32,
    pub month: u32,
    /// Use only the first days of the month.
    pub n_days: Option<usize>,
    pub dt_minutes: u32,
    pub vehicles_weekday: usize,
    pub vehicles_weekend: usize,
    /// Arrival window, hours after midnight.
    pub arrival_start_h: f64,
    pub arrival_end_h: f64,
    pub dwell_min_h: f64,
    pub dwell_max_h: f64,
    /// Median energy request (kWh) and lognormal shape.
    pub energy_median_kwh: f64,
    pub energy_sigma: f64,
    pub charger: ChargerSpec,
    /// Building load floor and daytime bump (kW).
    pub baseload_night_kw: f64,
    pub baseload_day_kw: f64,
    pub pdp_event_days: usize,
    pub capacity_reserve_kw: f64,
    pub dbp_event_days: usize,
    /// Mean regulation capacity prices ($/kW per hour).
    pub reg_up_mean: f64,
    pub reg_down_mean: f64,
    /// Mean PDR price ($/kWh).
    pub pdr_mean: f64,
    pub history_days: usize,
    pub baseline_days: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            year: 2016,
            month: 7,
            n_days: None,
            dt_minutes: 15,
            vehicles_weekday: 12,
            vehicles_weekend: 4,
            arrival_start_h: 7.0,
            arrival_end_h: 10.0,
            dwell_min_h: 4.0,
            dwell_max_h: 9.0,
            energy_median_kwh: 10.0,
            energy_sigma: 0.5,
            charger: ChargerSpec::default(),
            baseload_night_kw: 20.0,
            baseload_day_kw: 45.0,
            pdp_event_days: 2,
            capacity_reserve_kw: 40.0,
            dbp_event_days: 2,
            reg_up_mean: 0.012,
            reg_down_mean: 0.010,
            pdr_mean: 0.04,
            history_days: 14,
            baseline_days: 10,
        }
    }
}

/// Raw synthetic inputs, in the same shape ingestion produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub grid: StepGrid,
    pub days: Vec<NaiveDate>,
    pub sessions: Vec<VehicleSession>,
    /// Sessions of the days before the period, for history baselines.
    pub history_sessions: Vec<VehicleSession>,
    pub baseload: Vec<Vec<f64>>,
    pub reg_up: Vec<Vec<f64>>,
    pub reg_down: Vec<Vec<f64>>,
    pub pdr_price: Vec<Vec<f64>>,
    pub pdp_event_days: Vec<NaiveDate>,
    pub capacity_reserve_kw: f64,
    pub dbp_events: Vec<DbpEvent>,
    pub baseline_days: usize,
}

fn period_days(cfg: &SynthConfig) -> Result<Vec<NaiveDate>, ProblemError> {
    let all = crate::grid::month_days(cfg.year, cfg.month);
    if all.is_empty() {
        return Err(ProblemError::Invalid(format!("no such month {}-{}", cfg.year, cfg.month)));
    }
    let n = cfg.n_days.unwrap_or(all.len()).min(all.len());
    Ok(all[..n].to_vec())
}

fn sessions_for_day(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    grid: StepGrid,
    day: NaiveDate,
    tag: &str,
) -> Vec<VehicleSession> {
    let n = if is_weekend(day) { cfg.vehicles_weekend } else { cfg.vehicles_weekday };
    let steps = grid.steps_per_day();
    let per_h = 60.0 / grid.dt_minutes() as f64;
    let energy = LogNormal::new(cfg.energy_median_kwh.ln(), cfg.energy_sigma).expect("valid lognormal");
    (0..n)
        .map(|k| {
            let arrive_h = rng.gen_range(cfg.arrival_start_h..=cfg.arrival_end_h);
            let dwell_h = rng.gen_range(cfg.dwell_min_h..=cfg.dwell_max_h);
            let t_arrive = ((arrive_h * per_h).ceil() as usize).min(steps - 1);
            let t_depart = (((arrive_h + dwell_h) * per_h).floor() as usize).clamp(t_arrive + 1, steps);
            let e: f64 = energy.sample(rng);
            let s = VehicleSession {
                vehicle_id: format!("{tag}{k:02}"),
                day,
                t_arrive,
                t_depart,
                e_req: (e * 100.0).round() / 100.0,
                spec: cfg.charger,
            };
            s.raised_to_min_step(grid).0.clipped(grid).0
        })
        .collect()
}

fn baseload_day(rng: &mut ChaCha8Rng, cfg: &SynthConfig, grid: StepGrid, day: NaiveDate) -> Vec<f64> {
    let n = grid.steps_per_day();
    let scale = if is_weekend(day) { 0.5 } else { 1.0 };
    (0..n)
        .map(|t| {
            let h = grid.step_start(t) as f64 / 60.0;
            let bump = if (7.0..19.0).contains(&h) {
                (std::f64::consts::PI * (h - 7.0) / 12.0).sin()
            } else {
                0.0
            };
            let noise = rng.gen_range(-2.0..2.0);
            let v = cfg.baseload_night_kw + scale * (cfg.baseload_day_kw - cfg.baseload_night_kw) * bump + noise;
            (v.max(0.0) * 100.0).round() / 100.0
        })
        .collect()
}

/// Hourly prices with an afternoon shape, replicated onto the grid.
fn price_day(rng: &mut ChaCha8Rng, grid: StepGrid, mean: f64, peak_hour: f64) -> Vec<f64> {
    let hourly: Vec<f64> = (0..24)
        .map(|h| {
            let shape = 0.6 + 0.8 * (-((h as f64 - peak_hour) / 4.0).powi(2)).exp();
            let v = mean * shape * rng.gen_range(0.7..1.3);
            (v * 1e5).round() / 1e5
        })
        .collect();
    (0..grid.steps_per_day())
        .map(|t| hourly[(grid.step_start(t) / 60) as usize])
        .collect()
}

fn pick_weekdays(rng: &mut ChaCha8Rng, days: &[NaiveDate], k: usize) -> Vec<NaiveDate> {
    let mut pool: Vec<NaiveDate> = days.iter().copied().filter(|d| !is_weekend(*d)).collect();
    let mut out = Vec::new();
    while out.len() < k && !pool.is_empty() {
        let i = rng.gen_range(0..pool.len());
        out.push(pool.remove(i));
    }
    out.sort();
    out
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData, ProblemError> {
    let grid = StepGrid::new(cfg.dt_minutes)?;
    let days = period_days(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history_sessions = Vec::new();
    for back in (1..=cfg.history_days as i64).rev() {
        let day = days[0] - Duration::days(back);
        history_sessions.extend(sessions_for_day(&mut rng, cfg, grid, day, &format!("h{}-", day.ordinal())));
    }
    let mut sessions = Vec::new();
    let mut baseload = Vec::new();
    let mut reg_up = Vec::new();
    let mut reg_down = Vec::new();
    let mut pdr_price = Vec::new();
    for &day in &days {
        sessions.extend(sessions_for_day(&mut rng, cfg, grid, day, "ev"));
        baseload.push(baseload_day(&mut rng, cfg, grid, day));
        reg_up.push(price_day(&mut rng, grid, cfg.reg_up_mean, 17.0));
        reg_down.push(price_day(&mut rng, grid, cfg.reg_down_mean, 4.0));
        pdr_price.push(price_day(&mut rng, grid, cfg.pdr_mean, 16.0));
    }
    let pdp_event_days = pick_weekdays(&mut rng, &days, cfg.pdp_event_days);
    let dbp_events = pick_weekdays(&mut rng, &days, cfg.dbp_event_days)
        .into_iter()
        .map(|date| DbpEvent {
            date,
            start: steps_for(grid, 12 * 60),
            end: steps_for(grid, 16 * 60),
        })
        .collect();
    Ok(SynthData {
        grid,
        days,
        sessions,
        history_sessions,
        baseload,
        reg_up,
        reg_down,
        pdr_price,
        pdp_event_days,
        capacity_reserve_kw: cfg.capacity_reserve_kw,
        dbp_events,
        baseline_days: cfg.baseline_days,
    })
}

/// Steps needed to cover `minutes`, rounded up.
fn steps_for(grid: StepGrid, minutes: u32) -> usize {
    minutes.div_ceil(grid.dt_minutes()) as usize
}

fn some(series: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    series.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect()
}

impl SynthData {
    /// Scenario with every product configured at its defaults and history baselines.
    pub fn scenario(&self, tariff: TariffSchedule) -> Result<Scenario, ProblemError> {
        let mut sc = Scenario::empty(self.grid, self.days.clone(), tariff);
        sc.sessions = self.sessions.clone();
        sc.baseload = self.baseload.clone();
        sc.pdp = Some(PdpPolicy::with_defaults(self.capacity_reserve_kw, self.pdp_event_days.clone()));
        sc.regulation = Some(RegulationMarket::new(some(&self.reg_up), some(&self.reg_down)));

        let mut all = self.history_sessions.clone();
        all.extend(self.sessions.iter().cloned());
        let first = all.iter().map(|s| s.day).min().unwrap_or(self.days[0]).min(self.days[0]);
        let last = *self.days.last().expect("nonempty period");
        let history = uncontrolled_history(&all, first, last, self.grid);
        let mut warnings = Vec::new();
        let baseline = history_baseline(&history, &self.days, self.baseline_days, &mut warnings)?;
        for w in warnings {
            log::warn!("{w}");
        }
        sc.pdr = Some(PdrMarket {
            price: some(&self.pdr_price),
            min_sell: PdrMarket::DEFAULT_MIN_SELL,
            min_consecutive: steps_for(self.grid, 60),
            baseline: baseline.clone(),
        });
        sc.dbp = Some(DbpProgram {
            credit: DbpProgram::DEFAULT_CREDIT,
            events: self.dbp_events.clone(),
            min_reduction: DbpProgram::DEFAULT_MIN_REDUCTION,
            min_duration: steps_for(self.grid, 120),
            baseline,
        });
        Ok(sc)
    }
}

/// Largest number of free binaries a micro-instance may have.
pub const MICRO_MAX_BINARIES: usize = 20;

/// Small one-day instance of `id` for exhaustive cross-checks: 2-hour steps,
/// one or two vehicles, random baseload and market data, at most
/// [`MICRO_MAX_BINARIES`] free binaries. Draws are repeated until the built
/// model is small enough.
pub fn micro_instance(seed: u64, id: ProblemId) -> Result<Scenario, ProblemError> {
    let grid = StepGrid::new(120)?;
    let n = grid.steps_per_day();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((id as u64 + 1) << 56));
    // Longer windows for the lighter models.
    let max_len = match id {
        ProblemId::P1 => 8,
        ProblemId::P2 => 6,
        ProblemId::P3 => 3,
        ProblemId::P4 | ProblemId::P5 => 4,
    };
    for _ in 0..1000 {
        let summer = rng.gen_bool(0.5);
        let day = if summer {
            NaiveDate::from_ymd_opt(2016, 7, 5 + rng.gen_range(0..4)).expect("valid date")
        } else {
            NaiveDate::from_ymd_opt(2016, 1, 5 + rng.gen_range(0..4)).expect("valid date")
        };
        let vehicles = rng.gen_range(1..=2);
        let charger = ChargerSpec::default();
        let sessions: Vec<VehicleSession> = (0..vehicles)
            .map(|k| {
                let len = rng.gen_range(1..=max_len);
                let a = rng.gen_range(2..=n - len);
                let cap = len as f64 * charger.effective_max() * grid.dt_hours();
                let floor = charger.p_min * grid.dt_hours();
                let e = (rng.gen_range(0.1..1.0) * cap * 100.0).round() / 100.0;
                let e = e.max(floor);
                VehicleSession {
                    vehicle_id: format!("m{k}"),
                    day,
                    t_arrive: a,
                    t_depart: a + len,
                    e_req: e,
                    spec: charger,
                }
            })
            .collect();
        let mut sc = Scenario::empty(grid, vec![day], TariffSchedule::e19());
        sc.baseload = vec![(0..n).map(|_| (rng.gen_range(0.0..20.0f64) * 10.0).round() / 10.0).collect()];
        sc.limits = evdr_milp::Limits::exact();
        let price = |rng: &mut ChaCha8Rng, hi: f64| -> Vec<Vec<Option<f64>>> {
            vec![(0..n).map(|_| Some((rng.gen_range(0.0..hi) * 1e4).round() / 1e4)).collect()]
        };
        let baseline = vec![uncontrolled_profile(&sessions, grid)];
        sc.sessions = sessions;
        match id {
            ProblemId::P1 => {}
            ProblemId::P2 => {
                let mut p = PdpPolicy::with_defaults(rng.gen_range(0.0..30.0f64).round(), vec![day]);
                p.event_window = crate::tariff::TimeWindow::new(12 * 60, 18 * 60)?;
                sc.pdp = Some(p);
            }
            ProblemId::P3 => {
                let mut m = RegulationMarket::new(price(&mut rng, 0.5), price(&mut rng, 0.5));
                m.min_bid_up = rng.gen_range(0.5..4.0f64).round();
                m.min_bid_down = rng.gen_range(0.5..4.0f64).round();
                sc.regulation = Some(m);
            }
            ProblemId::P4 => {
                sc.pdr = Some(PdrMarket {
                    price: price(&mut rng, 1.0),
                    min_sell: rng.gen_range(0.5..4.0f64).round(),
                    min_consecutive: rng.gen_range(1..=2),
                    baseline,
                });
            }
            ProblemId::P5 => {
                sc.dbp = Some(DbpProgram {
                    credit: (rng.gen_range(0.1..2.0f64) * 100.0).round() / 100.0,
                    events: vec![DbpEvent { date: day, start: 6, end: 9 }],
                    min_reduction: rng.gen_range(0.5..4.0f64).round(),
                    min_duration: rng.gen_range(1..=2),
                    baseline,
                });
            }
        }
        if build(&sc, id)?.model.num_free_binaries() <= MICRO_MAX_BINARIES {
            return Ok(sc);
        }
    }
    Err(ProblemError::Invalid(format!("no {id} micro-instance within the binary budget")))
}
