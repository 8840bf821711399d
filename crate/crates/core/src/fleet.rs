//! Charging sessions, flexibility envelopes and the aggregate virtual battery.
//!
//! Envelope arrays are day-length and index `t` holds the cumulative energy
//! delivered by the end of step `t`. Powers are effective (battery-side)
//! values, so a charger rated `p_max` contributes `p_max · eta_c`.

use std::cmp::Ordering;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use evdr_milp::{Cmp, LinExpr, Limits, MilpError, MipModel, ObjSense, SolverBackend, Var};

use crate::grid::StepGrid;
use crate::EPS_FEAS;

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("invalid charger: {0}")]
    InvalidCharger(String),
    #[error("invalid session {vehicle_id}: {reason}")]
    InvalidSession { vehicle_id: String, reason: String },
    #[error("session {vehicle_id} requests {e_req} kWh but at most {max} kWh is deliverable")]
    InfeasibleSession {
        vehicle_id: String,
        e_req: f64,
        max: f64,
    },
    #[error("step grid mismatch: expected {expected} steps, found {found}")]
    GridMismatch { expected: usize, found: usize },
    #[error("flexibility index needs at least one day")]
    EmptyInput,
    #[error("solver: {0}")]
    Solver(String),
    #[error("disaggregation failed: {0}")]
    DisaggregationFailure(Box<DisaggregationFailure>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargerSpec {
    /// Minimum effective power while active (kW).
    pub p_min: f64,
    pub p_max: f64,
    pub eta_c: f64,
}

impl ChargerSpec {
    pub fn new(p_min: f64, p_max: f64, eta_c: f64) -> Result<Self, FleetError> {
        let spec = Self { p_min, p_max, eta_c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        if !(self.p_min > 0.0 && self.p_min <= self.p_max && self.p_max.is_finite()) {
            return Err(FleetError::InvalidCharger(format!(
                "need 0 < p_min <= p_max, got {} and {}",
                self.p_min, self.p_max
            )));
        }
        if !(self.eta_c > 0.0 && self.eta_c <= 1.0) {
            return Err(FleetError::InvalidCharger(format!(
                "eta_c must lie in (0, 1], got {}",
                self.eta_c
            )));
        }
        Ok(())
    }

    /// Largest effective power (kW).
    pub fn effective_max(&self) -> f64 {
        self.p_max * self.eta_c
    }
}

impl Default for ChargerSpec {
    /// 1.5 kW floor of the demonstration chargers, 6.6 kW level-2 cap.
    fn default() -> Self {
        Self {
            p_min: 1.5,
            p_max: 6.6,
            eta_c: 1.0,
        }
    }
}

/// One plug-in event within a single day; the vehicle is available during
/// steps `t_arrive..t_depart`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSession {
    pub vehicle_id: String,
    pub day: NaiveDate,
    pub t_arrive: usize,
    pub t_depart: usize,
    pub e_req: f64,
    pub spec: ChargerSpec,
}

impl VehicleSession {
    pub fn max_deliverable(&self, grid: StepGrid) -> f64 {
        self.t_depart.saturating_sub(self.t_arrive) as f64 * grid.dt_hours() * self.spec.effective_max()
    }

    pub fn is_plugged(&self, t: usize) -> bool {
        self.t_arrive <= t && t < self.t_depart
    }

    /// Structural checks, excluding the deliverable-energy bound.
    pub fn validate(&self, grid: StepGrid) -> Result<(), FleetError> {
        let bad = |reason: String| FleetError::InvalidSession {
            vehicle_id: self.vehicle_id.clone(),
            reason,
        };
        self.spec.validate()?;
        if self.t_arrive >= self.t_depart {
            return Err(bad(format!(
                "arrival step {} not before departure step {}",
                self.t_arrive, self.t_depart
            )));
        }
        if self.t_depart > grid.steps_per_day() {
            return Err(bad(format!("departure step {} beyond the day", self.t_depart)));
        }
        if !(self.e_req >= 0.0 && self.e_req.is_finite()) {
            return Err(bad(format!("energy request {} is not a nonnegative number", self.e_req)));
        }
        Ok(())
    }

    /// Copy with the request reduced to what the window can deliver.
    /// Returns whether clipping happened.
    pub fn clipped(&self, grid: StepGrid) -> (VehicleSession, bool) {
        let max = self.max_deliverable(grid);
        let mut s = self.clone();
        if s.e_req > max {
            s.e_req = max;
            (s, true)
        } else {
            (s, false)
        }
    }

    /// Smallest positive energy one step at minimum power delivers (kWh).
    pub fn min_step_energy(&self, grid: StepGrid) -> f64 {
        self.spec.p_min * grid.dt_hours()
    }

    /// Copy with a positive request below one minimum-power step raised to
    /// that step, the least energy an active charger can deliver. Returns
    /// whether the request changed.
    pub fn raised_to_min_step(&self, grid: StepGrid) -> (VehicleSession, bool) {
        let floor = self.min_step_energy(grid);
        let mut s = self.clone();
        if s.e_req > 0.0 && s.e_req < floor {
            s.e_req = floor;
            (s, true)
        } else {
            (s, false)
        }
    }

    /// Connected window scaled by `ratio` about its midpoint, widened to
    /// whole steps and clamped to the day. The request is unchanged.
    pub fn stretched(&self, ratio: f64, grid: StepGrid) -> VehicleSession {
        let mid = (self.t_arrive + self.t_depart) as f64 / 2.0;
        let half = ratio.max(0.0) * (self.t_depart - self.t_arrive) as f64 / 2.0;
        let a = (mid - half).floor().max(0.0) as usize;
        let d = ((mid + half).ceil() as usize).min(grid.steps_per_day());
        let mut s = self.clone();
        if d > a {
            s.t_arrive = a;
            s.t_depart = d;
        }
        s
    }

    /// Energy per full-power step (kWh).
    fn step_energy(&self, grid: StepGrid) -> f64 {
        self.spec.effective_max() * grid.dt_hours()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleEnvelope {
    pub e_plus: Vec<f64>,
    pub e_minus: Vec<f64>,
}

pub fn compute_vehicle_envelope(
    session: &VehicleSession,
    grid: StepGrid,
) -> Result<VehicleEnvelope, FleetError> {
    session.validate(grid)?;
    let max = session.max_deliverable(grid);
    if session.e_req > max * (1.0 + 1e-12) + EPS_FEAS * 1e-3 {
        return Err(FleetError::InfeasibleSession {
            vehicle_id: session.vehicle_id.clone(),
            e_req: session.e_req,
            max,
        });
    }
    let n = grid.steps_per_day();
    let q = session.step_energy(grid);
    let (a, d, e) = (session.t_arrive, session.t_depart, session.e_req);
    let mut e_plus = vec![0.0; n];
    let mut e_minus = vec![0.0; n];
    for t in 0..n {
        if t >= d {
            e_plus[t] = e;
            e_minus[t] = e;
        } else if t >= a {
            e_plus[t] = ((t - a + 1) as f64 * q).min(e);
            e_minus[t] = (e - (d - 1 - t) as f64 * q).max(0.0);
        }
    }
    Ok(VehicleEnvelope { e_plus, e_minus })
}

/// The fleet of one day seen as a single battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateEnvelope {
    pub e_plus: Vec<f64>,
    pub e_minus: Vec<f64>,
    /// Sum of plugged effective maxima (kW).
    pub p_max: Vec<f64>,
    /// Smallest minimum power among plugged vehicles; 0 when none is plugged.
    pub p_min: Vec<f64>,
    pub n_plugged: Vec<usize>,
}

impl AggregateEnvelope {
    pub fn zeros(n: usize) -> Self {
        Self {
            e_plus: vec![0.0; n],
            e_minus: vec![0.0; n],
            p_max: vec![0.0; n],
            p_min: vec![0.0; n],
            n_plugged: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.e_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_plus.is_empty()
    }

    /// Whether an active (nonzero) power is possible at `t`.
    pub fn can_run(&self, t: usize) -> bool {
        self.n_plugged[t] > 0 && self.p_max[t] >= self.p_min[t] && self.p_max[t] > 0.0
    }

    /// Total energy the day must deliver.
    pub fn total_energy(&self) -> f64 {
        self.e_plus.last().copied().unwrap_or(0.0)
    }
}

/// Pointwise sum over all sessions of one day.
///
/// Sessions that have left keep contributing their delivered request, so the
/// bounds stay cumulative over the whole day.
pub fn aggregate(
    envelopes: &[VehicleEnvelope],
    sessions: &[VehicleSession],
    grid: StepGrid,
) -> Result<AggregateEnvelope, FleetError> {
    let n = grid.steps_per_day();
    if envelopes.len() != sessions.len() {
        return Err(FleetError::GridMismatch {
            expected: sessions.len(),
            found: envelopes.len(),
        });
    }
    let mut agg = AggregateEnvelope::zeros(n);
    for (env, s) in envelopes.iter().zip(sessions) {
        for len in [env.e_plus.len(), env.e_minus.len()] {
            if len != n {
                return Err(FleetError::GridMismatch { expected: n, found: len });
            }
        }
        for t in 0..n {
            agg.e_plus[t] += env.e_plus[t];
            agg.e_minus[t] += env.e_minus[t];
            if s.is_plugged(t) {
                agg.p_max[t] += s.spec.effective_max();
                agg.p_min[t] = if agg.n_plugged[t] == 0 {
                    s.spec.p_min
                } else {
                    agg.p_min[t].min(s.spec.p_min)
                };
                agg.n_plugged[t] += 1;
            }
        }
    }
    Ok(agg)
}

/// Envelope of one day's sessions, clipping infeasible requests first.
pub fn day_envelope(sessions: &[VehicleSession], grid: StepGrid) -> Result<AggregateEnvelope, FleetError> {
    let clipped: Vec<VehicleSession> = sessions.iter().map(|s| s.clipped(grid).0).collect();
    let envs = clipped
        .iter()
        .map(|s| compute_vehicle_envelope(s, grid))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(&envs, &clipped, grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateProfile {
    pub p: Vec<f64>,
    pub on: Vec<bool>,
}

impl AggregateProfile {
    /// Marks every positive step as active.
    pub fn from_power(p: Vec<f64>) -> Self {
        let on = p.iter().map(|&x| x > EPS_FEAS).collect();
        Self { p, on }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    BelowLowerEnergy,
    AboveUpperEnergy,
    NegativePower,
    ActiveBelowMinimum,
    AboveMaximum,
    InactiveNonzero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub first_violation: Option<(usize, ViolationKind)>,
}

/// Checks energy bounds and semicontinuity step by step.
pub fn check_feasible(profile: &AggregateProfile, env: &AggregateEnvelope, grid: StepGrid) -> Feasibility {
    let n = env.len();
    let fail = |t, k| Feasibility {
        feasible: false,
        first_violation: Some((t, k)),
    };
    if profile.p.len() != n || profile.on.len() != n {
        return fail(0, ViolationKind::AboveMaximum);
    }
    let dt = grid.dt_hours();
    let mut cum = 0.0;
    for t in 0..n {
        let p = profile.p[t];
        if p < -EPS_FEAS || p.is_nan() {
            return fail(t, ViolationKind::NegativePower);
        }
        if profile.on[t] {
            if p < env.p_min[t] - EPS_FEAS {
                return fail(t, ViolationKind::ActiveBelowMinimum);
            }
            if p > env.p_max[t] + EPS_FEAS {
                return fail(t, ViolationKind::AboveMaximum);
            }
        } else if p.abs() > EPS_FEAS {
            return fail(t, ViolationKind::InactiveNonzero);
        }
        cum += p * dt;
        if cum < env.e_minus[t] - EPS_FEAS {
            return fail(t, ViolationKind::BelowLowerEnergy);
        }
        if cum > env.e_plus[t] + EPS_FEAS {
            return fail(t, ViolationKind::AboveUpperEnergy);
        }
    }
    Feasibility {
        feasible: true,
        first_violation: None,
    }
}

/// Charge-on-arrival reference: every vehicle at full power until done.
pub fn uncontrolled_profile(sessions: &[VehicleSession], grid: StepGrid) -> Vec<f64> {
    let n = grid.steps_per_day();
    let dt = grid.dt_hours();
    let mut p = vec![0.0; n];
    for s in sessions {
        let s = s.clipped(grid).0;
        let mut left = s.e_req;
        for slot in p.iter_mut().take(s.t_depart.min(n)).skip(s.t_arrive) {
            if left <= 0.0 {
                break;
            }
            let e = (s.spec.effective_max() * dt).min(left);
            *slot += e / dt;
            left -= e;
        }
    }
    p
}

/// Mean envelope gap over all days and steps (kWh).
pub fn flexibility_index(env_by_day: &[AggregateEnvelope]) -> Result<f64, FleetError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for env in env_by_day {
        for (hi, lo) in env.e_plus.iter().zip(&env.e_minus) {
            sum += hi - lo;
            count += 1;
        }
    }
    if env_by_day.is_empty() || count == 0 {
        return Err(FleetError::EmptyInput);
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSchedule {
    pub vehicle_id: String,
    /// Effective power per step of the day (kW).
    pub power: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisaggregationFailure {
    /// `(step, aggregate − allocated)` wherever the split is not exact.
    pub residual: Vec<(usize, f64)>,
    /// Per-vehicle constraint breaches found by the verifier.
    pub vehicle_errors: Vec<String>,
    pub schedules: Vec<VehicleSchedule>,
}

impl std::fmt::Display for DisaggregationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} steps with residual, {} vehicle constraint breaches",
            self.residual.len(),
            self.vehicle_errors.len()
        )?;
        if let Some((t, r)) = self.residual.first() {
            write!(f, " (first residual {r:.6} kW at step {t})")?;
        }
        if let Some(e) = self.vehicle_errors.first() {
            write!(f, " (first breach: {e})")?;
        }
        Ok(())
    }
}

/// Checks one vehicle schedule against its session: plug window, power range,
/// and delivery of exactly the request by departure.
pub fn verify_vehicle_schedule(
    session: &VehicleSession,
    power: &[f64],
    grid: StepGrid,
) -> Result<(), String> {
    let id = &session.vehicle_id;
    let dt = grid.dt_hours();
    let pmax = session.spec.effective_max();
    let mut delivered = 0.0;
    for (t, &p) in power.iter().enumerate() {
        if p.abs() <= EPS_FEAS {
            continue;
        }
        if !session.is_plugged(t) {
            return Err(format!("{id}: {p} kW at step {t} outside the plug window"));
        }
        if p < session.spec.p_min - EPS_FEAS || p > pmax + EPS_FEAS {
            return Err(format!("{id}: {p} kW at step {t} outside [{}, {pmax}]", session.spec.p_min));
        }
        delivered += p * dt;
    }
    let target = session.clipped(grid).0.e_req;
    if (delivered - target).abs() > EPS_FEAS * (1.0 + power.len() as f64) {
        return Err(format!("{id}: delivered {delivered} kWh, requested {target} kWh"));
    }
    Ok(())
}

/// Splits an aggregate day profile into per-vehicle schedules.
///
/// Each step first serves the power that vehicles must draw to still meet
/// their deadline, then fills the remainder earliest-deadline-first (ties by
/// smaller laxity, then vehicle id). A leftover too small to start another
/// vehicle is handled by lowering already-running vehicles so that one more
/// can start at its minimum. Every result is re-verified.
pub fn disaggregate(
    profile: &AggregateProfile,
    sessions: &[VehicleSession],
    grid: StepGrid,
) -> Result<Vec<VehicleSchedule>, FleetError> {
    let n = grid.steps_per_day();
    if profile.p.len() != n {
        return Err(FleetError::GridMismatch {
            expected: n,
            found: profile.p.len(),
        });
    }
    let dt = grid.dt_hours();
    let sess: Vec<VehicleSession> = sessions.iter().map(|s| s.clipped(grid).0).collect();
    let mut remaining: Vec<f64> = sess.iter().map(|s| s.e_req).collect();
    let mut power = vec![vec![0.0; n]; sess.len()];
    let mut residual = Vec::new();
    let tiny = EPS_FEAS * 1e-3;

    for t in 0..n {
        let target = if profile.p[t] > EPS_FEAS { profile.p[t] } else { 0.0 };
        let mut active: Vec<usize> = (0..sess.len())
            .filter(|&k| sess[k].is_plugged(t) && remaining[k] > tiny)
            .collect();
        let laxity = |k: usize| {
            let s = &sess[k];
            (s.t_depart - t) as f64 * s.spec.effective_max() * dt - remaining[k]
        };
        active.sort_by(|&a, &b| {
            sess[a]
                .t_depart
                .cmp(&sess[b].t_depart)
                .then(laxity(a).partial_cmp(&laxity(b)).unwrap_or(Ordering::Equal))
                .then_with(|| sess[a].vehicle_id.cmp(&sess[b].vehicle_id))
        });

        let cap = |k: usize| sess[k].spec.effective_max().min(remaining[k] / dt);
        let mut alloc = vec![0.0; sess.len()];
        // Mandatory draw to keep each deadline reachable.
        let mut floor = vec![0.0; sess.len()];
        for &k in &active {
            let s = &sess[k];
            let later = (s.t_depart - 1 - t) as f64 * s.spec.effective_max() * dt;
            let must = (remaining[k] - later) / dt;
            if must > tiny {
                floor[k] = must.max(s.spec.p_min).min(cap(k));
                alloc[k] = floor[k];
            }
        }
        let mut rem = target - alloc.iter().sum::<f64>();

        for &k in &active {
            if rem <= tiny {
                break;
            }
            let room = cap(k) - alloc[k];
            if room <= tiny {
                continue;
            }
            let mut add = room.min(rem);
            if alloc[k] == 0.0 && add < sess[k].spec.p_min {
                continue;
            }
            add = avoid_short_tail(&sess[k], remaining[k], alloc[k], add, dt);
            if add <= tiny {
                continue;
            }
            alloc[k] += add;
            rem -= add;
        }

        if rem > tiny {
            // Start one more vehicle at its minimum, funded by lowering others.
            for &k in &active {
                if alloc[k] > 0.0 || cap(k) < sess[k].spec.p_min {
                    continue;
                }
                let start = sess[k].spec.p_min.max(rem).min(cap(k));
                let mut need = start - rem;
                let mut cuts = Vec::new();
                for &j in active.iter().rev() {
                    if need <= tiny {
                        break;
                    }
                    if j == k || alloc[j] == 0.0 {
                        continue;
                    }
                    let give = (alloc[j] - floor[j].max(sess[j].spec.p_min)).max(0.0).min(need);
                    if give > tiny {
                        cuts.push((j, give));
                        need -= give;
                    }
                }
                if need <= tiny {
                    for (j, give) in cuts {
                        alloc[j] -= give;
                    }
                    alloc[k] = start;
                    break;
                }
            }
        }

        let placed: f64 = alloc.iter().sum();
        if (target - placed).abs() > EPS_FEAS {
            residual.push((t, target - placed));
        }
        for &k in &active {
            power[k][t] = alloc[k];
            remaining[k] = (remaining[k] - alloc[k] * dt).max(0.0);
        }
    }

    let schedules: Vec<VehicleSchedule> = sess
        .iter()
        .zip(power)
        .map(|(s, p)| VehicleSchedule {
            vehicle_id: s.vehicle_id.clone(),
            power: p,
        })
        .collect();
    let vehicle_errors: Vec<String> = sess
        .iter()
        .zip(&schedules)
        .filter_map(|(s, v)| verify_vehicle_schedule(s, &v.power, grid).err())
        .collect();
    if residual.is_empty() && vehicle_errors.is_empty() {
        Ok(schedules)
    } else {
        Err(FleetError::DisaggregationFailure(Box::new(DisaggregationFailure {
            residual,
            vehicle_errors,
            schedules,
        })))
    }
}

/// Exact split by a feasibility MILP: per-vehicle semicontinuous power,
/// per-step sums equal to the profile and every request delivered. Used when
/// the greedy rule of [`disaggregate`] cannot place the profile.
pub fn disaggregate_exact(
    profile: &AggregateProfile,
    sessions: &[VehicleSession],
    grid: StepGrid,
    backend: &dyn SolverBackend,
) -> Result<Vec<VehicleSchedule>, FleetError> {
    let n = grid.steps_per_day();
    if profile.p.len() != n {
        return Err(FleetError::GridMismatch {
            expected: n,
            found: profile.p.len(),
        });
    }
    let dt = grid.dt_hours();
    let sess: Vec<VehicleSession> = sessions.iter().map(|s| s.clipped(grid).0).collect();
    let milp = |e: MilpError| FleetError::Solver(e.to_string());
    let mut m = MipModel::new();
    let mut vars: Vec<Vec<Option<Var>>> = vec![vec![None; n]; sess.len()];
    let mut by_step: Vec<LinExpr> = vec![LinExpr::new(); n];
    for (k, s) in sess.iter().enumerate() {
        let pmax = s.spec.effective_max();
        let mut energy = LinExpr::new();
        for t in s.t_arrive..s.t_depart {
            let p = m.add_continuous(format!("p{k}_{t}"), 0.0, pmax).map_err(milp)?;
            let b = m.add_binary(format!("b{k}_{t}")).map_err(milp)?;
            m.add_constraint(
                format!("lo{k}_{t}"),
                &LinExpr::term(p, 1.0).with_term(b, -s.spec.p_min),
                Cmp::Ge,
                0.0,
            )
            .map_err(milp)?;
            m.add_constraint(format!("hi{k}_{t}"), &LinExpr::term(p, 1.0).with_term(b, -pmax), Cmp::Le, 0.0)
                .map_err(milp)?;
            energy.add_term(p, dt);
            by_step[t].add_term(p, 1.0);
            vars[k][t] = Some(p);
        }
        m.add_constraint(format!("e{k}"), &energy, Cmp::Eq, s.e_req).map_err(milp)?;
    }
    let mut residual = Vec::new();
    for (t, expr) in by_step.iter().enumerate() {
        let target = if profile.p[t] > EPS_FEAS { profile.p[t] } else { 0.0 };
        if expr.is_constant() {
            if target > 0.0 {
                residual.push((t, target));
            }
            continue;
        }
        m.add_constraint(format!("sum{t}"), expr, Cmp::Eq, target).map_err(milp)?;
    }
    let failure = |residual: Vec<(usize, f64)>, vehicle_errors: Vec<String>, schedules: Vec<VehicleSchedule>| {
        FleetError::DisaggregationFailure(Box::new(DisaggregationFailure {
            residual,
            vehicle_errors,
            schedules,
        }))
    };
    if !residual.is_empty() {
        return Err(failure(residual, Vec::new(), Vec::new()));
    }
    m.set_objective(ObjSense::Minimize, LinExpr::new()).map_err(milp)?;
    let sol = evdr_milp::solve(&m, backend, &Limits::default()).map_err(milp)?;
    if !sol.has_point() {
        return Err(failure(Vec::new(), vec![format!("no exact split exists ({:?})", sol.status)], Vec::new()));
    }
    let schedules: Vec<VehicleSchedule> = sess
        .iter()
        .zip(&vars)
        .map(|(s, row)| VehicleSchedule {
            vehicle_id: s.vehicle_id.clone(),
            power: row
                .iter()
                .map(|v| v.map_or(0.0, |v| sol.value(v)))
                .map(|x| if x.abs() < 1e-9 { 0.0 } else { x })
                .collect(),
        })
        .collect();
    let residual: Vec<(usize, f64)> = (0..n)
        .filter_map(|t| {
            let target = if profile.p[t] > EPS_FEAS { profile.p[t] } else { 0.0 };
            let r = target - schedules.iter().map(|v| v.power[t]).sum::<f64>();
            (r.abs() > EPS_FEAS).then_some((t, r))
        })
        .collect();
    let vehicle_errors: Vec<String> = sess
        .iter()
        .zip(&schedules)
        .filter_map(|(s, v)| verify_vehicle_schedule(s, &v.power, grid).err())
        .collect();
    if residual.is_empty() && vehicle_errors.is_empty() {
        Ok(schedules)
    } else {
        Err(failure(residual, vehicle_errors, schedules))
    }
}

/// Trims `add` so the vehicle is not left with less than one minimum-power
/// step of energy, which it could not draw later.
fn avoid_short_tail(s: &VehicleSession, remaining: f64, current: f64, add: f64, dt: f64) -> f64 {
    let after = remaining - (current + add) * dt;
    let min_step = s.spec.p_min * dt;
    if after <= EPS_FEAS * 1e-3 || after >= min_step {
        return add;
    }
    let trimmed = (remaining - min_step) / dt - current;
    if trimmed <= 0.0 {
        return add;
    }
    if current + trimmed < s.spec.p_min && current == 0.0 {
        return 0.0;
    }
    trimmed
}
