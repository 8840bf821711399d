//! Model builders for the five monthly problems.

use evdr_milp::encode::{
    add_epigraph_max, add_indicator_eq, add_max_equality, add_min_consecutive, add_semicontinuous,
    add_semicontinuous_expr,
};
use evdr_milp::{BigMConfig, Cmp, LinExpr, MipModel, ObjSense, Var};
use rust_decimal::prelude::ToPrimitive;

use super::{Prepared, ProblemError, ProblemId, Scenario};
use crate::fleet::AggregateEnvelope;
use crate::tariff::{PART_PEAK, PEAK};
use crate::EPS_FEAS;

/// Per-day, per-step handles. `None` marks steps where the quantity is absent.
pub type VarGrid = Vec<Vec<Option<Var>>>;

/// Auxiliary `y = max(terms)` encoded with selectors; re-picked during polishing.
#[derive(Clone, Debug)]
pub(crate) struct MaxGroup {
    pub terms: Vec<LinExpr>,
    pub selectors: Vec<Var>,
}

/// Objective split into its billing components (all in $; revenues positive).
#[derive(Clone, Debug, Default)]
pub struct ObjectiveParts {
    pub energy: LinExpr,
    pub demand: LinExpr,
    pub pdp_credit_peak: LinExpr,
    pub pdp_credit_partpeak: LinExpr,
    pub pdp_charge: LinExpr,
    pub revenue: LinExpr,
}

impl ObjectiveParts {
    /// Cost to minimize.
    pub fn total(&self) -> LinExpr {
        self.energy.clone() + self.demand.clone() - self.pdp_credit_peak.clone()
            - self.pdp_credit_partpeak.clone()
            + self.pdp_charge.clone()
            - self.revenue.clone()
    }
}

#[derive(Clone, Debug)]
pub struct BuiltProblem {
    pub id: ProblemId,
    pub model: MipModel,
    pub parts: ObjectiveParts,
    /// Actual aggregate EV power.
    pub power: Vec<Vec<Var>>,
    pub on: Vec<Vec<Var>>,
    /// Regulation baseline (P3).
    pub baseline: Option<Vec<Vec<Var>>>,
    pub bid_up: Option<VarGrid>,
    pub bid_down: Option<VarGrid>,
    /// Virtual sell (P4).
    pub sell: Option<VarGrid>,
    /// Load reduction inside DBP events (P5).
    pub reduction: Option<VarGrid>,
    pub(crate) groups: Vec<MaxGroup>,
}

struct FleetBlock {
    power: Vec<Vec<Var>>,
    on: Vec<Vec<Var>>,
}

fn price_at(series: &[Vec<Option<f64>>], d: usize, t: usize) -> Option<f64> {
    series.get(d).and_then(|r| r.get(t)).copied().flatten()
}

fn to_f64(x: rust_decimal::Decimal) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Cumulative-energy envelope rows for a power series of one day.
fn add_energy_track(
    m: &mut MipModel,
    name: &str,
    power: &[Var],
    env: &AggregateEnvelope,
    dt: f64,
) -> Result<(), ProblemError> {
    let mut prev: Option<Var> = None;
    for (t, &p) in power.iter().enumerate() {
        let e = m.add_continuous(format!("{name}_e{t}"), env.e_minus[t], env.e_plus[t].max(env.e_minus[t]))?;
        let mut row = LinExpr::from(e).with_term(p, -dt);
        if let Some(prev) = prev {
            row.add_term(prev, -1.0);
        }
        m.add_constraint(format!("{name}_acc{t}"), &row, Cmp::Eq, 0.0)?;
        prev = Some(e);
    }
    Ok(())
}

/// Semicontinuous power gated by an on/off binary; both fixed at zero where
/// the fleet cannot run.
fn add_gated_power(
    m: &mut MipModel,
    name: &str,
    env: &AggregateEnvelope,
    t: usize,
) -> Result<(Var, Var), ProblemError> {
    let run = env.can_run(t);
    let hi = if run { env.p_max[t] } else { 0.0 };
    let p = m.add_continuous(format!("{name}_p{t}"), 0.0, hi)?;
    let b = m.add_binary(format!("{name}_on{t}"))?;
    if run {
        add_semicontinuous(m, &format!("{name}_sc{t}"), p, b, env.p_min[t], env.p_max[t])?;
    } else {
        m.fix(b, 0.0)?;
    }
    Ok((p, b))
}

fn add_fleet(m: &mut MipModel, prep: &Prepared, dt: f64) -> Result<FleetBlock, ProblemError> {
    let mut power = Vec::with_capacity(prep.env.len());
    let mut on = Vec::with_capacity(prep.env.len());
    for (d, env) in prep.env.iter().enumerate() {
        let name = format!("d{d}");
        let mut pd = Vec::with_capacity(env.len());
        let mut od = Vec::with_capacity(env.len());
        for t in 0..env.len() {
            let (p, b) = add_gated_power(m, &name, env, t)?;
            pd.push(p);
            od.push(b);
        }
        add_energy_track(m, &name, &pd, env, dt)?;
        power.push(pd);
        on.push(od);
    }
    Ok(FleetBlock { power, on })
}

/// Site load `L + P` of every step.
fn load_exprs(sc: &Scenario, power: &[Vec<Var>]) -> Vec<Vec<LinExpr>> {
    power
        .iter()
        .enumerate()
        .map(|(d, row)| {
            row.iter()
                .enumerate()
                .map(|(t, &p)| LinExpr::term(p, 1.0).with_constant(sc.baseload[d][t]))
                .collect()
        })
        .collect()
}

/// Energy and demand charges of the tariff on `load`.
fn add_tariff(
    m: &mut MipModel,
    prep: &Prepared,
    load: &[Vec<LinExpr>],
    dt: f64,
    parts: &mut ObjectiveParts,
) -> Result<(), ProblemError> {
    let cal = &prep.cal;
    for (d, row) in load.iter().enumerate() {
        for (t, l) in row.iter().enumerate() {
            parts.energy.add_scaled(l, cal.energy_rate_f64(d, t) * dt);
        }
    }
    for (i, period) in cal.demand.iter().enumerate() {
        let rate = to_f64(period.rate);
        let terms: Vec<LinExpr> = period.steps().map(|(d, t)| load[d][t].clone()).collect();
        if terms.is_empty() || rate == 0.0 {
            continue;
        }
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for term in &terms {
            let (a, b) = m.expr_bounds(term);
            lo = lo.max(a);
            hi = hi.max(b);
        }
        let y = m.add_continuous(format!("peak_{i}_{}", period.id), lo, hi)?;
        add_epigraph_max(m, &format!("dc{i}"), &terms, y)?;
        parts.demand.add_term(y, rate);
    }
    Ok(())
}

/// The customer's full Problem 1 block: fleet, load and tariff terms.
struct Base {
    model: MipModel,
    fleet: FleetBlock,
    load: Vec<Vec<LinExpr>>,
    parts: ObjectiveParts,
}

fn base(sc: &Scenario, prep: &Prepared) -> Result<Base, ProblemError> {
    let dt = sc.grid.dt_hours();
    let mut model = MipModel::new();
    let fleet = add_fleet(&mut model, prep, dt)?;
    let load = load_exprs(sc, &fleet.power);
    let mut parts = ObjectiveParts::default();
    add_tariff(&mut model, prep, &load, dt, &mut parts)?;
    Ok(Base { model, fleet, load, parts })
}

fn finish(
    id: ProblemId,
    mut b: Base,
    extra: impl FnOnce(&mut BuiltProblem),
    groups: Vec<MaxGroup>,
) -> Result<BuiltProblem, ProblemError> {
    b.model.set_objective(ObjSense::Minimize, b.parts.total())?;
    let mut out = BuiltProblem {
        id,
        model: b.model,
        parts: b.parts,
        power: b.fleet.power,
        on: b.fleet.on,
        baseline: None,
        bid_up: None,
        bid_down: None,
        sell: None,
        reduction: None,
        groups,
    };
    extra(&mut out);
    Ok(out)
}

pub fn build_p1(sc: &Scenario) -> Result<BuiltProblem, ProblemError> {
    let prep = sc.prepare()?;
    let b = base(sc, &prep)?;
    finish(ProblemId::P1, b, |_| {}, Vec::new())
}

pub fn build_p2(sc: &Scenario) -> Result<BuiltProblem, ProblemError> {
    let pdp = sc.pdp.as_ref().ok_or(ProblemError::MissingProduct("PDP policy"))?;
    let prep = sc.prepare()?;
    let mut b = base(sc, &prep)?;
    let dt = sc.grid.dt_hours();
    let cr = pdp.capacity_reserve;
    let mut groups = Vec::new();

    for (period, rate, slot) in [
        (PEAK, to_f64(pdp.credit_peak), 0usize),
        (PART_PEAK, to_f64(pdp.credit_partpeak), 1),
    ] {
        let steps = pdp.credit_steps(&prep.cal, period);
        let mut terms = vec![LinExpr::constant(0.0)];
        let mut hi = 0.0f64;
        for &(d, t) in &steps {
            let excess = b.load[d][t].clone().with_constant(-cr);
            let (_, ub) = b.model.expr_bounds(&excess);
            // Steps that can never exceed the reserve are dominated by the zero term.
            if ub > 0.0 {
                hi = hi.max(ub);
                terms.push(excess);
            }
        }
        if rate == 0.0 || terms.len() == 1 {
            continue;
        }
        let r = b.model.add_continuous(format!("pdp_credit_{period}"), 0.0, hi)?;
        let selectors = add_max_equality(&mut b.model, &format!("pdp_{period}"), &terms, r)?;
        groups.push(MaxGroup { terms, selectors });
        let target = if slot == 0 {
            &mut b.parts.pdp_credit_peak
        } else {
            &mut b.parts.pdp_credit_partpeak
        };
        target.add_term(r, rate);
    }

    let event_rate = to_f64(pdp.event_rate);
    if event_rate != 0.0 {
        for (d, t) in pdp.event_steps(&prep.cal) {
            let excess = b.load[d][t].clone().with_constant(-cr);
            let (lo, hi) = b.model.expr_bounds(&excess);
            if hi <= 0.0 {
                continue;
            }
            if lo >= 0.0 && excess.is_constant() {
                b.parts.pdp_charge.add_constant(event_rate * dt * excess.constant);
                continue;
            }
            let x = b.model.add_continuous(format!("pdp_x_d{d}_t{t}"), lo.max(0.0), hi)?;
            add_epigraph_max(&mut b.model, &format!("pdp_x_d{d}_t{t}"), &[excess], x)?;
            b.parts.pdp_charge.add_term(x, event_rate * dt);
        }
    }
    finish(ProblemId::P2, b, |_| {}, groups)
}

pub fn build_p3(sc: &Scenario) -> Result<BuiltProblem, ProblemError> {
    let reg = sc
        .regulation
        .as_ref()
        .ok_or(ProblemError::MissingProduct("regulation market"))?;
    let prep = sc.prepare()?;
    let dt = sc.grid.dt_hours();
    let n = sc.grid.steps_per_day();
    let fixed = sc.regulation_baseline.as_ref();
    if let Some(f) = fixed {
        sc.check_series("regulation baseline", f)?;
    }

    let mut model = MipModel::new();
    let mut power = Vec::new();
    let mut on = Vec::new();
    let mut baseline = Vec::new();
    let mut ups: VarGrid = Vec::new();
    let mut downs: VarGrid = Vec::new();
    let mut revenue = LinExpr::new();

    for (d, env) in prep.env.iter().enumerate() {
        let name = format!("d{d}");
        let mut pd = Vec::with_capacity(n);
        let mut od = Vec::with_capacity(n);
        let mut bd = Vec::with_capacity(n);
        let mut ud = Vec::with_capacity(n);
        let mut dd = Vec::with_capacity(n);
        for t in 0..n {
            let run = env.can_run(t);
            let (p, bp) = add_gated_power(&mut model, &name, env, t)?;
            let (bv, bb) = add_gated_power(&mut model, &format!("{name}_base"), env, t)?;
            if let Some(f) = fixed {
                let v = f[d][t];
                let active = v > EPS_FEAS;
                if active && (!run || v < env.p_min[t] - EPS_FEAS || v > env.p_max[t] + EPS_FEAS) {
                    return Err(ProblemError::BaselineMismatch { day: d, step: t, value: v });
                }
                let v = if active { v.clamp(env.p_min[t], env.p_max[t]) } else { 0.0 };
                model.fix(bv, v)?;
                model.fix(bb, if active { 1.0 } else { 0.0 })?;
            }
            let pu = price_at(&reg.price_up, d, t);
            let pdn = price_at(&reg.price_down, d, t);
            let cap = if run { env.p_max[t] } else { 0.0 };
            let ru = model.add_continuous(format!("{name}_ru{t}"), 0.0, cap)?;
            let rd = model.add_continuous(format!("{name}_rd{t}"), 0.0, cap)?;
            let b_ru = model.add_binary(format!("{name}_bru{t}"))?;
            let b_rd = model.add_binary(format!("{name}_brd{t}"))?;
            let bid_ok_up = run && pu.is_some() && reg.min_bid_up <= cap;
            let bid_ok_down = run && pdn.is_some() && reg.min_bid_down <= cap;
            if bid_ok_up {
                add_semicontinuous(&mut model, &format!("{name}_scru{t}"), ru, b_ru, reg.min_bid_up, cap)?;
                revenue.add_term(ru, pu.unwrap_or(0.0) * dt);
            } else {
                model.fix(ru, 0.0)?;
                model.fix(b_ru, 0.0)?;
            }
            if bid_ok_down {
                add_semicontinuous(&mut model, &format!("{name}_scrd{t}"), rd, b_rd, reg.min_bid_down, cap)?;
                revenue.add_term(rd, pdn.unwrap_or(0.0) * dt);
            } else {
                model.fix(rd, 0.0)?;
                model.fix(b_rd, 0.0)?;
            }
            // P = B + ρ_up·up + ρ_down·down
            let def = LinExpr::from(p)
                .with_term(bv, -1.0)
                .with_term(ru, -reg.rho_up)
                .with_term(rd, -reg.rho_down);
            model.add_constraint(format!("{name}_util{t}"), &def, Cmp::Eq, 0.0)?;
            // The full-signal extremes B + down and B − up stay semicontinuous.
            let b_bd = model.add_binary(format!("{name}_bbd{t}"))?;
            let b_bu = model.add_binary(format!("{name}_bbu{t}"))?;
            if run {
                let lo = env.p_min[t];
                let full_down = LinExpr::from(bv).with_term(rd, 1.0);
                add_semicontinuous_expr(&mut model, &format!("{name}_fd{t}"), &full_down, b_bd, lo, cap)?;
                let full_up = LinExpr::from(bv).with_term(ru, -1.0);
                add_semicontinuous_expr(&mut model, &format!("{name}_fu{t}"), &full_up, b_bu, lo, cap)?;
            } else {
                model.fix(b_bd, 0.0)?;
                model.fix(b_bu, 0.0)?;
            }
            pd.push(p);
            od.push(bp);
            bd.push(bv);
            ud.push(Some(ru));
            dd.push(Some(rd));
            let _ = bb;
        }
        add_energy_track(&mut model, &name, &pd, env, dt)?;
        add_energy_track(&mut model, &format!("{name}_base"), &bd, env, dt)?;

        // Bids stay constant inside each commitment block.
        let len = reg.commitment_len.max(1);
        if len > 1 {
            for start in (0..n).step_by(len) {
                let end = (start + len).min(n);
                for bids in [&ud, &dd] {
                    let first = bids[start].expect("bid var");
                    for (k, cell) in bids.iter().enumerate().take(end).skip(start + 1) {
                        let v = cell.expect("bid var");
                        let e = LinExpr::from(v).with_term(first, -1.0);
                        model.add_constraint(format!("{name}_blk{k}_{}", first.index()), &e, Cmp::Eq, 0.0)?;
                    }
                }
            }
        }
        power.push(pd);
        on.push(od);
        baseline.push(bd);
        ups.push(ud);
        downs.push(dd);
    }

    let load = load_exprs(sc, &power);
    let mut parts = ObjectiveParts::default();
    add_tariff(&mut model, &prep, &load, dt, &mut parts)?;
    parts.revenue = revenue;
    let b = Base {
        model,
        fleet: FleetBlock { power, on },
        load,
        parts,
    };
    finish(
        ProblemId::P3,
        b,
        |out| {
            out.baseline = Some(baseline);
            out.bid_up = Some(ups);
            out.bid_down = Some(downs);
        },
        Vec::new(),
    )
}

/// Indicator-tied reduction below a known baseline: `b = 1` forces
/// `P = B − r` with `r ∈ [r_min, B]`, `b = 0` forces `r = 0`.
fn add_reduction(
    m: &mut MipModel,
    name: &str,
    power: Var,
    baseline: f64,
    r_min: f64,
) -> Result<(Var, Var), ProblemError> {
    let r = m.add_continuous(format!("{name}_r"), 0.0, baseline.max(0.0))?;
    let b = m.add_binary(format!("{name}_b"))?;
    if baseline < r_min || baseline <= 0.0 {
        m.fix(r, 0.0)?;
        m.fix(b, 0.0)?;
        return Ok((r, b));
    }
    add_semicontinuous(m, &format!("{name}_sc"), r, b, r_min, baseline)?;
    let tie = LinExpr::from(power).with_term(r, 1.0).with_constant(-baseline);
    let cfg = BigMConfig::derive(m, &tie, name)?;
    add_indicator_eq(m, &format!("{name}_tie"), b, &tie, cfg)?;
    Ok((r, b))
}

/// Applies a minimum run length to every maximal stretch of free participation
/// binaries; stretches shorter than `n_c` cannot participate at all.
fn add_blocks(m: &mut MipModel, name: &str, b: &[Var], n_c: usize) -> Result<(), ProblemError> {
    if n_c <= 1 {
        return Ok(());
    }
    let free = |m: &MipModel, v: Var| m.var_def(v).ub > 0.5;
    let mut t = 0;
    while t < b.len() {
        if !free(m, b[t]) {
            t += 1;
            continue;
        }
        let start = t;
        while t < b.len() && free(m, b[t]) {
            t += 1;
        }
        let seg = &b[start..t];
        if seg.len() < n_c {
            for &v in seg {
                m.fix(v, 0.0)?;
            }
        } else {
            add_min_consecutive(m, &format!("{name}_s{start}"), seg, n_c)?;
        }
    }
    Ok(())
}

pub fn build_p4(sc: &Scenario) -> Result<BuiltProblem, ProblemError> {
    let pdr = sc.pdr.as_ref().ok_or(ProblemError::MissingProduct("PDR market"))?;
    if pdr.baseline.is_empty() {
        return Err(ProblemError::BaselineMissing("PDR market has no baseline".into()));
    }
    sc.check_series("PDR baseline", &pdr.baseline)?;
    let prep = sc.prepare()?;
    let mut b = base(sc, &prep)?;
    let dt = sc.grid.dt_hours();
    let mut sell: VarGrid = Vec::new();
    for d in 0..sc.days.len() {
        let mut row = Vec::with_capacity(b.fleet.power[d].len());
        let mut gates = Vec::new();
        for t in 0..b.fleet.power[d].len() {
            let name = format!("pdr_d{d}_t{t}");
            let price = price_at(&pdr.price, d, t);
            let base_kw = pdr.baseline[d][t];
            match price {
                Some(pi) => {
                    let (r, g) = add_reduction(&mut b.model, &name, b.fleet.power[d][t], base_kw, pdr.min_sell)?;
                    b.parts.revenue.add_term(r, pi * dt);
                    row.push(Some(r));
                    gates.push(g);
                }
                None => {
                    row.push(None);
                    let g = b.model.add_binary(format!("{name}_b"))?;
                    b.model.fix(g, 0.0)?;
                    gates.push(g);
                }
            }
        }
        add_blocks(&mut b.model, &format!("pdr_d{d}"), &gates, pdr.min_consecutive)?;
        sell.push(row);
    }
    finish(ProblemId::P4, b, |out| out.sell = Some(sell), Vec::new())
}

pub fn build_p5(sc: &Scenario) -> Result<BuiltProblem, ProblemError> {
    let dbp = sc.dbp.as_ref().ok_or(ProblemError::MissingProduct("DBP program"))?;
    dbp.validate(sc.grid)?;
    let has_events = sc.days.iter().any(|day| dbp.events.iter().any(|e| e.date == *day));
    if has_events {
        if dbp.baseline.is_empty() {
            return Err(ProblemError::BaselineMissing("DBP program has no baseline".into()));
        }
        sc.check_series("DBP baseline", &dbp.baseline)?;
    }
    let prep = sc.prepare()?;
    let mut b = base(sc, &prep)?;
    let dt = sc.grid.dt_hours();
    let n = sc.grid.steps_per_day();
    let mut reduction: VarGrid = vec![vec![None; n]; sc.days.len()];
    for (d, day) in sc.days.iter().enumerate() {
        for (k, e) in dbp.events.iter().filter(|e| e.date == *day).enumerate() {
            let mut gates = Vec::new();
            for t in e.start..e.end {
                if reduction[d][t].is_some() {
                    continue;
                }
                let name = format!("dbp_d{d}_e{k}_t{t}");
                let (r, g) = add_reduction(&mut b.model, &name, b.fleet.power[d][t], dbp.baseline[d][t], dbp.min_reduction)?;
                b.parts.revenue.add_term(r, dbp.credit * dt);
                reduction[d][t] = Some(r);
                gates.push(g);
            }
            add_blocks(&mut b.model, &format!("dbp_d{d}_e{k}"), &gates, dbp.min_duration)?;
        }
    }
    finish(ProblemId::P5, b, |out| out.reduction = Some(reduction), Vec::new())
}

pub fn build(sc: &Scenario, id: ProblemId) -> Result<BuiltProblem, ProblemError> {
    match id {
        ProblemId::P1 => build_p1(sc),
        ProblemId::P2 => build_p2(sc),
        ProblemId::P3 => build_p3(sc),
        ProblemId::P4 => build_p4(sc),
        ProblemId::P5 => build_p5(sc),
    }
}
