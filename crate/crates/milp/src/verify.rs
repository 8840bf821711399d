//! Independent feasibility checks for candidate points.

use crate::model::MipModel;
use crate::EPS_FEAS;

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub what: String,
    pub amount: f64,
}

/// Every bound, integrality or row violation above `tol`.
pub fn violations(model: &MipModel, values: &[f64], tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    if values.len() != model.num_vars() {
        out.push(Violation {
            what: format!("expected {} values, got {}", model.num_vars(), values.len()),
            amount: f64::INFINITY,
        });
        return out;
    }
    for (def, &x) in model.vars().iter().zip(values) {
        let amount = (def.lb - x).max(x - def.ub).max(0.0);
        if amount > tol || x.is_nan() {
            out.push(Violation {
                what: format!("bound of {}", def.name),
                amount: if x.is_nan() { f64::INFINITY } else { amount },
            });
        }
        if def.is_binary() {
            let frac = (x - x.round()).abs();
            if frac > tol {
                out.push(Violation {
                    what: format!("integrality of {}", def.name),
                    amount: frac,
                });
            }
        }
    }
    for c in model.constraints() {
        let amount = c.violation(values);
        if amount > tol || amount.is_nan() {
            out.push(Violation {
                what: c.name.clone(),
                amount,
            });
        }
    }
    out
}

/// Largest violation of any kind (0 for a feasible point).
pub fn max_violation(model: &MipModel, values: &[f64]) -> f64 {
    violations(model, values, 0.0)
        .iter()
        .map(|v| v.amount)
        .fold(0.0, f64::max)
}

pub fn is_feasible(model: &MipModel, values: &[f64]) -> bool {
    violations(model, values, EPS_FEAS).is_empty()
}
