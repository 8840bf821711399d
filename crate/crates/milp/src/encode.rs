//! Reusable constraint encoders.
//!
//! Every big-M used here is derived from variable bounds of the expression it
//! relaxes, so the model never carries an arbitrary global constant.

use crate::model::{Cmp, LinExpr, MipModel, Var};
use crate::MilpError;

/// Bounds `M_s ≤ 0 ≤ M_b` for an indicator relaxation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BigMConfig {
    pub m_small: f64,
    pub m_big: f64,
}

impl BigMConfig {
    pub fn new(m_small: f64, m_big: f64) -> Result<Self, MilpError> {
        if !(m_small <= 0.0 && 0.0 <= m_big) || !m_small.is_finite() || !m_big.is_finite() {
            return Err(MilpError::InvalidBounds {
                what: "big-M".into(),
                lo: m_small,
                hi: m_big,
            });
        }
        Ok(Self { m_small, m_big })
    }

    /// Tightest valid pair for `expr` given the model's current bounds.
    pub fn derive(model: &MipModel, expr: &LinExpr, what: &str) -> Result<Self, MilpError> {
        let (lo, hi) = model.expr_bounds(expr);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(MilpError::UnboundedExpr(what.to_string()));
        }
        Self::new(lo.min(0.0), hi.max(0.0))
    }
}

/// `x ∈ {0} ∪ [lo, hi]`, gated by `b`.
pub fn add_semicontinuous(
    model: &mut MipModel,
    name: &str,
    x: Var,
    b: Var,
    lo: f64,
    hi: f64,
) -> Result<(), MilpError> {
    add_semicontinuous_expr(model, name, &LinExpr::from(x), b, lo, hi)
}

/// `b·lo ≤ expr ≤ b·hi`.
pub fn add_semicontinuous_expr(
    model: &mut MipModel,
    name: &str,
    expr: &LinExpr,
    b: Var,
    lo: f64,
    hi: f64,
) -> Result<(), MilpError> {
    if lo.is_nan() || hi.is_nan() || lo < 0.0 || lo > hi || !hi.is_finite() {
        return Err(MilpError::InvalidBounds {
            what: name.to_string(),
            lo,
            hi,
        });
    }
    let lower = expr.clone().with_term(b, -lo);
    model.add_constraint(format!("{name}_lo"), &lower, Cmp::Ge, 0.0)?;
    let upper = expr.clone().with_term(b, -hi);
    model.add_constraint(format!("{name}_hi"), &upper, Cmp::Le, 0.0)?;
    Ok(())
}

/// `y ≥ term` for every term: `y` equals the maximum when pushed down by the objective.
pub fn add_epigraph_max(
    model: &mut MipModel,
    name: &str,
    terms: &[LinExpr],
    y: Var,
) -> Result<(), MilpError> {
    if terms.is_empty() {
        return Err(MilpError::EmptyTerms);
    }
    for (k, term) in terms.iter().enumerate() {
        let e = LinExpr::from(y) - term.clone();
        model.add_constraint(format!("{name}_epi{k}"), &e, Cmp::Ge, 0.0)?;
    }
    Ok(())
}

/// `y ≤ max(terms)`, using one selector binary per term.
///
/// Safe under objective pressure pushing `y` up, where a plain epigraph is not.
/// Returns the selector binaries.
pub fn add_hypograph_max(
    model: &mut MipModel,
    name: &str,
    terms: &[LinExpr],
    y: Var,
) -> Result<Vec<Var>, MilpError> {
    if terms.is_empty() {
        return Err(MilpError::EmptyTerms);
    }
    let y_hi = model.var_def(y).ub;
    let mut selectors = Vec::with_capacity(terms.len());
    let mut pick_one = LinExpr::new();
    for (k, term) in terms.iter().enumerate() {
        let s = model.add_binary(format!("{name}_sel{k}"))?;
        let (term_lo, _) = model.expr_bounds(term);
        let m = y_hi - term_lo;
        if !m.is_finite() {
            return Err(MilpError::UnboundedExpr(format!("{name}_sel{k}")));
        }
        let m = m.max(0.0);
        // y - term + M·s ≤ M
        let e = (LinExpr::from(y) - term.clone()).with_term(s, m);
        model.add_constraint(format!("{name}_hyp{k}"), &e, Cmp::Le, m)?;
        pick_one.add_term(s, 1.0);
        selectors.push(s);
    }
    model.add_constraint(format!("{name}_pick"), &pick_one, Cmp::Eq, 1.0)?;
    Ok(selectors)
}

/// `y = max(terms)` regardless of objective direction. Returns the selector binaries.
pub fn add_max_equality(
    model: &mut MipModel,
    name: &str,
    terms: &[LinExpr],
    y: Var,
) -> Result<Vec<Var>, MilpError> {
    add_epigraph_max(model, name, terms, y)?;
    add_hypograph_max(model, name, terms, y)
}

/// `M_s·(1−b) ≤ expr ≤ M_b·(1−b)`: `b = 1` forces `expr = 0`.
pub fn add_indicator_eq(
    model: &mut MipModel,
    name: &str,
    b: Var,
    expr: &LinExpr,
    cfg: BigMConfig,
) -> Result<(), MilpError> {
    // expr + M_s·b ≥ M_s
    let lower = expr.clone().with_term(b, cfg.m_small);
    model.add_constraint(format!("{name}_ind_lo"), &lower, Cmp::Ge, cfg.m_small)?;
    // expr + M_b·b ≤ M_b
    let upper = expr.clone().with_term(b, cfg.m_big);
    model.add_constraint(format!("{name}_ind_hi"), &upper, Cmp::Le, cfg.m_big)?;
    Ok(())
}

/// Every maximal run of ones in `b` lasts at least `n_c` steps and fits in the horizon.
///
/// Adds one start indicator `b_c(t)` per step (1 iff a run starts at `t`) and the
/// run-length rows `Σ_{τ=t}^{min(t+n_c−1, H−1)} b(τ) − n_c ≥ −n_c·(1 − b_c(t))`.
/// Near the horizon end the window is truncated, which forbids a start there.
/// Returns the start indicators.
pub fn add_min_consecutive(
    model: &mut MipModel,
    name: &str,
    b: &[Var],
    n_c: usize,
) -> Result<Vec<Var>, MilpError> {
    let horizon = b.len();
    if n_c == 0 || n_c > horizon {
        return Err(MilpError::InvalidWindow { n_c, horizon });
    }
    let mut starts = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let bc = model.add_binary(format!("{name}_start{t}"))?;
        if t == 0 {
            let e = LinExpr::from(bc).with_term(b[0], -1.0);
            model.add_constraint(format!("{name}_first"), &e, Cmp::Eq, 0.0)?;
        } else {
            let not_prev = LinExpr::from(bc).with_term(b[t - 1], 1.0);
            model.add_constraint(format!("{name}_np{t}"), &not_prev, Cmp::Le, 1.0)?;
            let on_now = LinExpr::from(bc).with_term(b[t], -1.0);
            model.add_constraint(format!("{name}_on{t}"), &on_now, Cmp::Le, 0.0)?;
            let rise = LinExpr::from(bc)
                .with_term(b[t], -1.0)
                .with_term(b[t - 1], 1.0);
            model.add_constraint(format!("{name}_rise{t}"), &rise, Cmp::Ge, 0.0)?;
        }
        starts.push(bc);
    }
    let m_big = n_c as f64;
    for t in 0..horizon {
        let end = (t + n_c - 1).min(horizon - 1);
        let mut run = LinExpr::new();
        for &bt in &b[t..=end] {
            run.add_term(bt, 1.0);
        }
        // Σ b − n_c + M_b − M_b·b_c ≥ 0
        let e = run.with_term(starts[t], -m_big);
        model.add_constraint(format!("{name}_len{t}"), &e, Cmp::Ge, n_c as f64 - m_big)?;
    }
    Ok(starts)
}
