//! Envelope, feasibility and disaggregation properties against direct oracles.

use chrono::NaiveDate;
use evdr_core::fleet::{
    aggregate, check_feasible, compute_vehicle_envelope, day_envelope, disaggregate, disaggregate_exact, flexibility_index,
    uncontrolled_profile, verify_vehicle_schedule, AggregateEnvelope, AggregateProfile, ChargerSpec, VehicleSession,
};
use evdr_core::grid::StepGrid;
use evdr_core::EPS_FEAS;
use evdr_milp::HighsSolver;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 6, 6).unwrap()
}

fn session(id: &str, a: usize, d: usize, e: f64, spec: ChargerSpec) -> VehicleSession {
    VehicleSession {
        vehicle_id: id.into(),
        day: day(),
        t_arrive: a,
        t_depart: d,
        e_req: e,
        spec,
    }
}

fn arb_sessions(n_steps: usize) -> impl Strategy<Value = Vec<VehicleSession>> {
    let one = (0..n_steps - 1, 1..n_steps, 0.0..1.0f64, 1.0..3.0f64, 3.3..11.0f64, 0.85..1.0f64).prop_map(
        move |(a, len, frac, p_min, p_max, eta)| {
            let d = (a + len).min(n_steps);
            let spec = ChargerSpec::new(p_min, p_max, eta).unwrap();
            let cap = (d - a) as f64 * p_max * eta * 0.25;
            session("v", a, d, (frac * cap * 100.0).round() / 100.0, spec)
        },
    );
    prop::collection::vec(one, 0..6).prop_map(|mut v| {
        for (k, s) in v.iter_mut().enumerate() {
            s.vehicle_id = format!("v{k}");
        }
        v
    })
}

/// Cumulative energy of charging at full power from arrival (upper) or as
/// late as possible (lower), simulated step by step.
fn extreme_patterns(s: &VehicleSession, n: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let q = s.spec.p_max * s.spec.eta_c * dt;
    let mut asap = vec![0.0; n];
    let mut left = s.e_req;
    let mut cum = 0.0;
    for (t, slot) in asap.iter_mut().enumerate() {
        if s.is_plugged(t) && left > 0.0 {
            let e = q.min(left);
            cum += e;
            left -= e;
        }
        *slot = cum;
    }
    let mut per_step = vec![0.0; n];
    let mut left = s.e_req;
    for t in (s.t_arrive..s.t_depart).rev() {
        let e = q.min(left);
        per_step[t] = e;
        left -= e;
    }
    let mut alap = vec![0.0; n];
    let mut cum = 0.0;
    for t in 0..n {
        cum += per_step[t];
        alap[t] = cum;
    }
    (asap, alap)
}

/// Per-vehicle schedule that respects semicontinuity: `k` equal steps at
/// or above p_min, starting `offset` steps after arrival.
fn feasible_power(s: &VehicleSession, n: usize, dt: f64, offset: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    if s.e_req <= 0.0 {
        return p;
    }
    let len = s.t_depart - s.t_arrive;
    let pmax = s.spec.p_max * s.spec.eta_c;
    let min_k = ((s.e_req / (pmax * dt) - 1e-12).ceil().max(1.0) as usize).min(len);
    let max_k = ((s.e_req / (s.spec.p_min * dt)).floor() as usize).clamp(min_k, len);
    let k = min_k + offset % (max_k - min_k + 1);
    let start = s.t_arrive + offset % (len - k + 1);
    for t in start..start + k {
        p[t] = s.e_req / (k as f64 * dt);
    }
    p
}

fn feasible_sessions() -> impl Strategy<Value = Vec<VehicleSession>> {
    arb_sessions(96).prop_map(|v| {
        v.into_iter()
            .map(|s| {
                let floor = s.spec.p_min * 0.25;
                let mut s = s;
                if s.e_req > 0.0 && s.e_req < floor {
                    s.e_req = floor.min(s.max_deliverable(StepGrid::new(15).unwrap()));
                }
                s
            })
            .collect()
    })
}

/// Direct check of the aggregate inequalities.
fn oracle_feasible(p: &[f64], on: &[bool], env: &AggregateEnvelope, dt: f64) -> bool {
    let mut cum = 0.0;
    for t in 0..p.len() {
        let ok_power = if on[t] {
            p[t] >= env.p_min[t] - EPS_FEAS && p[t] <= env.p_max[t] + EPS_FEAS
        } else {
            p[t].abs() <= EPS_FEAS
        };
        cum += p[t] * dt;
        let ok_energy = cum >= env.e_minus[t] - EPS_FEAS && cum <= env.e_plus[t] + EPS_FEAS;
        if !(ok_power && ok_energy && p[t] >= -EPS_FEAS) {
            return false;
        }
    }
    true
}

#[test]
fn spec_envelope_example() {
    let g = StepGrid::new(15).unwrap();
    let s = session("a", 0, 4, 1.65, ChargerSpec::new(1.5, 6.6, 1.0).unwrap());
    let env = compute_vehicle_envelope(&s, g).unwrap();
    assert_eq!(&env.e_plus[..4], &[1.65; 4]);
    assert_eq!(&env.e_minus[..4], &[0.0, 0.0, 0.0, 1.65]);
}

#[test]
fn empty_and_single_aggregates() {
    let g = StepGrid::new(15).unwrap();
    let empty = aggregate(&[], &[], g).unwrap();
    assert_eq!(empty, AggregateEnvelope::zeros(96));
    let s = session("a", 30, 40, 5.0, ChargerSpec::default());
    let env = compute_vehicle_envelope(&s, g).unwrap();
    let agg = aggregate(std::slice::from_ref(&env), std::slice::from_ref(&s), g).unwrap();
    assert_eq!((agg.e_plus.clone(), agg.e_minus.clone()), (env.e_plus, env.e_minus));
    for t in 0..96 {
        let expected = if (30..40).contains(&t) { 6.6 } else { 0.0 };
        assert_eq!(agg.p_max[t], expected);
    }
}

#[test]
fn single_vehicle_disaggregation_is_the_profile() {
    let g = StepGrid::new(15).unwrap();
    let s = session("a", 30, 40, 5.0, ChargerSpec::default());
    let profile = AggregateProfile::from_power(feasible_power(&s, 96, 0.25, 2));
    let out = disaggregate(&profile, std::slice::from_ref(&s), g).unwrap();
    for (a, b) in out[0].power.iter().zip(&profile.p) {
        assert!((a - b).abs() <= EPS_FEAS);
    }
}

#[test]
fn identical_vehicles_split_evenly_at_full_power() {
    let g = StepGrid::new(15).unwrap();
    let spec = ChargerSpec::default();
    let s = vec![session("a", 40, 44, 6.6, spec), session("b", 40, 44, 6.6, spec)];
    let mut p = vec![0.0; 96];
    p[40..44].fill(13.2);
    let out = disaggregate(&AggregateProfile::from_power(p), &s, g).unwrap();
    for v in &out {
        assert!(v.power[40..44].iter().all(|&x| (x - 6.6).abs() <= EPS_FEAS));
    }
}

#[test]
fn flexibility_index_examples() {
    let mut env = AggregateEnvelope::zeros(4);
    assert_eq!(flexibility_index(&[env.clone()]).unwrap(), 0.0);
    env.e_plus = vec![3.0; 4];
    assert_eq!(flexibility_index(&[env.clone()]).unwrap(), 3.0);
    let mut other = AggregateEnvelope::zeros(4);
    other.e_plus = vec![1.0, 2.0, 3.0, 4.0];
    // Flat average of [3,3,3,3,1,2,3,4].
    assert!((flexibility_index(&[env, other]).unwrap() - 22.0 / 8.0).abs() < 1e-12);
    assert!(flexibility_index(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn envelopes_match_extreme_patterns(sessions in arb_sessions(96)) {
        let g = StepGrid::new(15).unwrap();
        let agg = day_envelope(&sessions, g).unwrap();
        let mut up = vec![0.0; 96];
        let mut lo = vec![0.0; 96];
        for s in &sessions {
            let (a, b) = extreme_patterns(s, 96, 0.25);
            for t in 0..96 {
                up[t] += a[t];
                lo[t] += b[t];
            }
        }
        for t in 0..96 {
            prop_assert!((agg.e_plus[t] - up[t]).abs() < 1e-9);
            prop_assert!((agg.e_minus[t] - lo[t]).abs() < 1e-9);
            prop_assert!(agg.e_minus[t] <= agg.e_plus[t] + 1e-12);
            if t > 0 {
                prop_assert!(agg.e_plus[t] >= agg.e_plus[t - 1] - 1e-12);
                prop_assert!(agg.e_minus[t] >= agg.e_minus[t - 1] - 1e-12);
            }
        }
        for s in &sessions {
            let env = compute_vehicle_envelope(s, g).unwrap();
            let at = s.t_depart - 1;
            prop_assert!((env.e_plus[at] - env.e_minus[at]).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregation_is_additive(a in arb_sessions(96), b in arb_sessions(96)) {
        let g = StepGrid::new(15).unwrap();
        let mut both = a.clone();
        both.extend(b.iter().cloned());
        let ea = day_envelope(&a, g).unwrap();
        let eb = day_envelope(&b, g).unwrap();
        let e = day_envelope(&both, g).unwrap();
        for t in 0..96 {
            prop_assert!((e.e_plus[t] - ea.e_plus[t] - eb.e_plus[t]).abs() < 1e-9);
            prop_assert!((e.e_minus[t] - ea.e_minus[t] - eb.e_minus[t]).abs() < 1e-9);
            prop_assert!((e.p_max[t] - ea.p_max[t] - eb.p_max[t]).abs() < 1e-9);
            prop_assert_eq!(e.n_plugged[t], ea.n_plugged[t] + eb.n_plugged[t]);
        }
    }

    #[test]
    fn random_profiles_classified_like_the_oracle(sessions in arb_sessions(24), seed in any::<u64>()) {
        let g = StepGrid::new(60).unwrap();
        let env = day_envelope(&sessions, g).unwrap();
        let base = uncontrolled_profile(&sessions, g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let p: Vec<f64> = (0..24)
                .map(|t| match rng.gen_range(0..4) {
                    0 => base[t],
                    1 => 0.0,
                    2 => env.p_max[t] * rng.gen_range(0.0..1.2),
                    _ => env.p_min[t] * rng.gen_range(0.4..1.1),
                })
                .collect();
            let on: Vec<bool> = p.iter().map(|&x| if rng.gen_bool(0.05) { x <= EPS_FEAS } else { x > EPS_FEAS }).collect();
            let verdict = check_feasible(&AggregateProfile { p: p.clone(), on: on.clone() }, &env, g);
            prop_assert_eq!(verdict.feasible, oracle_feasible(&p, &on, &env, 1.0));
        }
    }

    #[test]
    fn disaggregation_round_trips(sessions in feasible_sessions(), offset in 0..50usize) {
        let g = StepGrid::new(15).unwrap();
        let mut p = vec![0.0; 96];
        for (k, s) in sessions.iter().enumerate() {
            let own = feasible_power(s, 96, 0.25, offset + k);
            prop_assume!(verify_vehicle_schedule(s, &own, g).is_ok());
            for (t, x) in own.into_iter().enumerate() {
                p[t] += x;
            }
        }
        let profile = AggregateProfile::from_power(p);
        let env = day_envelope(&sessions, g).unwrap();
        prop_assert!(check_feasible(&profile, &env, g).feasible);
        let out = match disaggregate(&profile, &sessions, g) {
            Ok(v) => v,
            Err(_) => disaggregate_exact(&profile, &sessions, g, &HighsSolver::default()).unwrap(),
        };
        for t in 0..96 {
            let sum: f64 = out.iter().map(|v| v.power[t]).sum();
            prop_assert!((sum - profile.p[t]).abs() <= EPS_FEAS);
        }
        for (s, v) in sessions.iter().zip(&out) {
            prop_assert_eq!(&s.vehicle_id, &v.vehicle_id);
            prop_assert!(verify_vehicle_schedule(s, &v.power, g).is_ok());
        }
    }

    #[test]
    fn flexibility_index_permutation_and_scaling(sessions in arb_sessions(96), k in 0.1..10.0f64) {
        let g = StepGrid::new(15).unwrap();
        let a = day_envelope(&sessions, g).unwrap();
        let b = day_envelope(&sessions[..sessions.len() / 2], g).unwrap();
        let f = flexibility_index(&[a.clone(), b.clone()]).unwrap();
        prop_assert!((f - flexibility_index(&[b.clone(), a.clone()]).unwrap()).abs() < 1e-9);
        let scale = |e: &AggregateEnvelope| {
            let mut e = e.clone();
            for x in e.e_plus.iter_mut().chain(e.e_minus.iter_mut()) {
                *x *= k;
            }
            e
        };
        prop_assert!((flexibility_index(&[scale(&a), scale(&b)]).unwrap() - k * f).abs() < 1e-9 * (1.0 + f));
    }
}
