use evdr_milp::encode::add_min_consecutive;
use evdr_milp::{
    solve, verify, Cmp, EnumerationSolver, HighsSolver, LinExpr, Limits, MipModel, ObjSense,
    Status,
};
use proptest::prelude::*;

fn runs_ok(pattern: &[bool], n_c: usize) -> bool {
    pattern
        .split(|&on| !on)
        .all(|run| run.is_empty() || run.len() >= n_c)
}

#[test]
fn min_consecutive_matches_exhaustive_oracle() {
    let solver = EnumerationSolver::default();
    for h in 1..=8usize {
        for n_c in 1..=4usize.min(h) {
            for mask in 0u32..(1 << h) {
                let pattern: Vec<bool> = (0..h).map(|t| mask & (1 << t) != 0).collect();
                let mut m = MipModel::new();
                let b: Vec<_> = (0..h).map(|t| m.add_binary(format!("b{t}")).unwrap()).collect();
                for (t, &on) in pattern.iter().enumerate() {
                    m.fix(b[t], if on { 1.0 } else { 0.0 }).unwrap();
                }
                add_min_consecutive(&mut m, "mc", &b, n_c).unwrap();
                let sol = solve(&m, &solver, &Limits::exact()).unwrap();
                let feasible = sol.status == Status::Optimal;
                assert_eq!(
                    feasible,
                    runs_ok(&pattern, n_c),
                    "h={h} n_c={n_c} pattern={pattern:?}"
                );
            }
        }
    }
}

#[test]
fn highs_and_enumeration_agree_on_knapsack() {
    let w = [5.0, 7.0, 3.0, 9.0, 4.0, 6.0, 2.0, 8.0];
    let v = [6.0, 9.0, 3.5, 11.0, 4.0, 7.5, 1.0, 9.5];
    let mut m = MipModel::new();
    let mut cap = LinExpr::new();
    let mut obj = LinExpr::new();
    for i in 0..w.len() {
        let b = m.add_binary(format!("b{i}")).unwrap();
        cap.add_term(b, w[i]);
        obj.add_term(b, v[i]);
    }
    // A continuous filler with its own capacity share.
    let f = m.add_continuous("fill", 0.0, 3.0).unwrap();
    cap.add_term(f, 1.0);
    obj.add_term(f, 0.9);
    m.add_constraint("cap", &cap, Cmp::Le, 20.0).unwrap();
    m.set_objective(ObjSense::Maximize, obj).unwrap();
    let a = solve(&m, &HighsSolver::default(), &Limits::exact()).unwrap();
    let b = solve(&m, &EnumerationSolver::default(), &Limits::exact()).unwrap();
    assert_eq!(a.status, Status::Optimal);
    assert_eq!(b.status, Status::Optimal);
    assert!((a.objective - b.objective).abs() < 1e-6, "{} vs {}", a.objective, b.objective);
}

#[derive(Debug, Clone)]
struct RandomMilp {
    n_bin: usize,
    cont_ub: Vec<f64>,
    rows: Vec<(Vec<i32>, u8, i32)>,
    obj: Vec<i32>,
    maximize: bool,
}

fn random_milp() -> impl Strategy<Value = RandomMilp> {
    (0usize..6, prop::collection::vec(1.0f64..10.0, 1..4), any::<bool>()).prop_flat_map(
        |(n_bin, cont_ub, maximize)| {
            let n = n_bin + cont_ub.len();
            let row = (prop::collection::vec(-5i32..=5, n), 0u8..3, -10i32..=15);
            (
                Just(n_bin),
                Just(cont_ub),
                prop::collection::vec(row, 1..5),
                prop::collection::vec(-6i32..=6, n),
                Just(maximize),
            )
                .prop_map(|(n_bin, cont_ub, rows, obj, maximize)| RandomMilp {
                    n_bin,
                    cont_ub,
                    rows,
                    obj,
                    maximize,
                })
        },
    )
}

fn build(r: &RandomMilp) -> MipModel {
    let mut m = MipModel::new();
    let mut vars = Vec::new();
    for i in 0..r.n_bin {
        vars.push(m.add_binary(format!("b{i}")).unwrap());
    }
    for (i, &ub) in r.cont_ub.iter().enumerate() {
        vars.push(m.add_continuous(format!("x{i}"), 0.0, ub).unwrap());
    }
    for (k, (coefs, cmp, rhs)) in r.rows.iter().enumerate() {
        let mut e = LinExpr::new();
        for (&v, &c) in vars.iter().zip(coefs) {
            e.add_term(v, c as f64);
        }
        let cmp = [Cmp::Le, Cmp::Ge, Cmp::Eq][*cmp as usize];
        m.add_constraint(format!("r{k}"), &e, cmp, *rhs as f64).unwrap();
    }
    let mut obj = LinExpr::constant(1.25);
    for (&v, &c) in vars.iter().zip(&r.obj) {
        obj.add_term(v, c as f64);
    }
    let sense = if r.maximize { ObjSense::Maximize } else { ObjSense::Minimize };
    m.set_objective(sense, obj).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn backends_agree_on_random_milps(r in random_milp()) {
        let m = build(&r);
        let a = solve(&m, &HighsSolver::default(), &Limits::exact()).unwrap();
        let b = solve(&m, &EnumerationSolver::default(), &Limits::exact()).unwrap();
        prop_assert_eq!(a.status, b.status);
        if a.status == Status::Optimal {
            let scale = 1.0 + a.objective.abs();
            prop_assert!((a.objective - b.objective).abs() <= 1e-6 * scale,
                "highs {} reference {}", a.objective, b.objective);
            prop_assert!(verify::max_violation(&m, &b.values) < 1e-6);
            prop_assert!(verify::max_violation(&m, &a.values) < 1e-5);
        }
    }
}
