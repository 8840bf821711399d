//! Linear model representation shared by every backend.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::MilpError;

/// Handle to a registered variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarDef {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

impl VarDef {
    pub fn is_binary(&self) -> bool {
        self.kind == VarKind::Binary
    }

    pub fn is_fixed(&self) -> bool {
        self.lb == self.ub
    }
}

/// Affine expression `Σ coef·var + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(var: Var, coef: f64) -> Self {
        Self {
            terms: vec![(var, coef)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, var: Var, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((var, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// Adds `scale · other` in place.
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        if scale != 0.0 {
            self.terms
                .extend(other.terms.iter().map(|&(v, c)| (v, c * scale)));
            self.constant += other.constant * scale;
        }
        self
    }

    pub fn with_term(mut self, var: Var, coef: f64) -> Self {
        self.add_term(var, coef);
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Merges duplicate variables and drops zero coefficients.
    pub fn compact(&self) -> LinExpr {
        let mut merged: Vec<(Var, f64)> = Vec::with_capacity(self.terms.len());
        let mut slot: HashMap<Var, usize> = HashMap::new();
        for &(v, c) in &self.terms {
            match slot.get(&v) {
                Some(&i) => merged[i].1 += c,
                None => {
                    slot.insert(v, merged.len());
                    merged.push((v, c));
                }
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        LinExpr {
            terms: merged,
            constant: self.constant,
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|&(v, c)| c * values[v.0])
                .sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl AddAssign for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.add_scaled(&rhs, 1.0);
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, rhs: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= rhs;
        }
        self.constant *= rhs;
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Le => "<=",
            Cmp::Eq => "=",
            Cmp::Ge => ">=",
        })
    }
}

/// `Σ coef·var  cmp  rhs`. Constants of the source expression are folded into `rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(Var, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.cmp {
            Cmp::Le => (a - self.rhs).max(0.0),
            Cmp::Ge => (self.rhs - a).max(0.0),
            Cmp::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ObjSense {
    #[default]
    Minimize,
    Maximize,
}

/// A mixed-integer linear program with continuous and binary variables.
#[derive(Clone, Debug, Default)]
pub struct MipModel {
    vars: Vec<VarDef>,
    names: HashMap<String, Var>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    sense: ObjSense,
}

impl MipModel {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, def: VarDef) -> Result<Var, MilpError> {
        if def.lb.is_nan() || def.ub.is_nan() || def.lb > def.ub {
            return Err(MilpError::InvalidBounds {
                what: def.name,
                lo: def.lb,
                hi: def.ub,
            });
        }
        if self.names.contains_key(&def.name) {
            return Err(MilpError::DuplicateName(def.name));
        }
        let v = Var(self.vars.len());
        self.names.insert(def.name.clone(), v);
        self.vars.push(def);
        Ok(v)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> Result<Var, MilpError> {
        self.register(VarDef {
            name: name.into(),
            kind: VarKind::Continuous,
            lb,
            ub,
        })
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<Var, MilpError> {
        self.register(VarDef {
            name: name.into(),
            kind: VarKind::Binary,
            lb: 0.0,
            ub: 1.0,
        })
    }

    /// Adds `expr cmp rhs`; the expression's constant moves to the right-hand side.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        expr: &LinExpr,
        cmp: Cmp,
        rhs: f64,
    ) -> Result<(), MilpError> {
        let name = name.into();
        for &(v, c) in &expr.terms {
            if v.0 >= self.vars.len() {
                return Err(MilpError::UnknownVar(v.0));
            }
            if !c.is_finite() {
                return Err(MilpError::NonFinite(name));
            }
        }
        if !rhs.is_finite() || !expr.constant.is_finite() {
            return Err(MilpError::NonFinite(name));
        }
        let compact = expr.compact();
        self.constraints.push(Constraint {
            name,
            terms: compact.terms,
            cmp,
            rhs: rhs - compact.constant,
        });
        Ok(())
    }

    pub fn set_objective(&mut self, sense: ObjSense, expr: LinExpr) -> Result<(), MilpError> {
        for &(v, _) in &expr.terms {
            if v.0 >= self.vars.len() {
                return Err(MilpError::UnknownVar(v.0));
            }
        }
        self.sense = sense;
        self.objective = expr.compact();
        Ok(())
    }

    /// Tightens a variable to a single value.
    pub fn fix(&mut self, v: Var, value: f64) -> Result<(), MilpError> {
        self.set_bounds(v, value, value)
    }

    pub fn set_bounds(&mut self, v: Var, lb: f64, ub: f64) -> Result<(), MilpError> {
        let def = self.vars.get_mut(v.0).ok_or(MilpError::UnknownVar(v.0))?;
        if lb.is_nan() || ub.is_nan() || lb > ub {
            return Err(MilpError::InvalidBounds {
                what: def.name.clone(),
                lo: lb,
                hi: ub,
            });
        }
        def.lb = lb;
        def.ub = ub;
        Ok(())
    }

    pub fn var_by_name(&self, name: &str) -> Option<Var> {
        self.names.get(name).copied()
    }

    pub fn var_def(&self, v: Var) -> &VarDef {
        &self.vars[v.0]
    }

    pub fn vars(&self) -> &[VarDef] {
        &self.vars
    }

    pub fn var_handles(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.vars.len()).map(Var)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn sense(&self) -> ObjSense {
        self.sense
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|d| d.is_binary()).count()
    }

    /// Binaries whose domain is still `{0, 1}`.
    pub fn num_free_binaries(&self) -> usize {
        self.vars
            .iter()
            .filter(|d| d.is_binary() && d.lb < d.ub)
            .count()
    }

    /// Interval of values `expr` can take given variable bounds only.
    pub fn expr_bounds(&self, expr: &LinExpr) -> (f64, f64) {
        let mut lo = expr.constant;
        let mut hi = expr.constant;
        for &(v, c) in &expr.terms {
            let d = &self.vars[v.0];
            if c > 0.0 {
                lo += c * d.lb;
                hi += c * d.ub;
            } else if c < 0.0 {
                lo += c * d.ub;
                hi += c * d.lb;
            }
        }
        // inf - inf cannot occur: each side only accumulates same-signed infinities.
        (lo, hi)
    }
}
