//! Dense two-phase primal simplex for small bounded LPs.
//!
//! Only used by the enumeration backend, so it favours simplicity over speed:
//! a full tableau, Dantzig pricing that falls back to Bland's rule once the
//! iteration count suggests cycling.

use crate::model::Cmp;

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;

/// `minimize cost·x  s.t.  rows, lb ≤ x ≤ ub`.
#[derive(Clone, Debug, Default)]
pub struct LpProblem {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub cost: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Clone, Debug)]
pub struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// How an original variable maps onto nonnegative tableau columns.
#[derive(Clone, Copy)]
enum Map {
    Shift { col: usize, offset: f64 },
    Mirror { col: usize, offset: f64 },
    Split { pos: usize, neg: usize },
}

pub fn solve_lp(p: &LpProblem) -> LpOutcome {
    let n = p.cost.len();
    for j in 0..n {
        if p.lb[j] > p.ub[j] {
            return LpOutcome::Infeasible;
        }
    }

    // Column mapping and bound rows.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lb, ub) = (p.lb[j], p.ub[j]);
        if lb.is_finite() {
            maps.push(Map::Shift { col: ncols, offset: lb });
            if ub.is_finite() {
                bound_rows.push((ncols, ub - lb));
            }
            ncols += 1;
        } else if ub.is_finite() {
            maps.push(Map::Mirror { col: ncols, offset: ub });
            ncols += 1;
        } else {
            maps.push(Map::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            ncols += 2;
        }
    }

    // Rows in terms of structural columns: (dense coefs, cmp, rhs).
    let mut rows: Vec<(Vec<f64>, Cmp, f64)> = Vec::with_capacity(p.rows.len() + bound_rows.len());
    for r in &p.rows {
        let mut a = vec![0.0; ncols];
        let mut rhs = r.rhs;
        for &(j, c) in &r.terms {
            match maps[j] {
                Map::Shift { col, offset } => {
                    a[col] += c;
                    rhs -= c * offset;
                }
                Map::Mirror { col, offset } => {
                    a[col] -= c;
                    rhs -= c * offset;
                }
                Map::Split { pos, neg } => {
                    a[pos] += c;
                    a[neg] -= c;
                }
            }
        }
        rows.push((a, r.cmp, rhs));
    }
    for &(col, width) in &bound_rows {
        let mut a = vec![0.0; ncols];
        a[col] = 1.0;
        rows.push((a, Cmp::Le, width));
    }
    let mut cost = vec![0.0; ncols];
    for j in 0..n {
        let c = p.cost[j];
        match maps[j] {
            Map::Shift { col, .. } => cost[col] += c,
            Map::Mirror { col, .. } => cost[col] -= c,
            Map::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }

    // Normalise to nonnegative right-hand sides.
    for (a, cmp, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            for v in a.iter_mut() {
                *v = -*v;
            }
            *rhs = -*rhs;
            *cmp = match *cmp {
                Cmp::Le => Cmp::Ge,
                Cmp::Ge => Cmp::Le,
                Cmp::Eq => Cmp::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Cmp::Le).count();
    let total = ncols + n_slack + n_art;
    let width = total + 1;
    let art_start = ncols + n_slack;

    let mut tab = vec![0.0; m * width];
    let mut basis = vec![0usize; m];
    let mut next_slack = ncols;
    let mut next_art = art_start;
    for (i, (a, cmp, rhs)) in rows.iter().enumerate() {
        let row = &mut tab[i * width..(i + 1) * width];
        row[..ncols].copy_from_slice(a);
        row[total] = *rhs;
        match cmp {
            Cmp::Le => {
                row[next_slack] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            Cmp::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
            Cmp::Eq => {
                row[next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
        }
    }

    let mut tableau = Tableau {
        tab,
        basis,
        m,
        width,
        total,
        active: vec![true; m],
    };

    // Phase 1: minimise the sum of artificials.
    if n_art > 0 {
        let mut c1 = vec![0.0; total];
        for c in c1.iter_mut().skip(art_start) {
            *c = 1.0;
        }
        match tableau.optimise(&c1, total) {
            PhaseResult::Optimal => {}
            PhaseResult::Unbounded => return LpOutcome::Infeasible,
            PhaseResult::IterationLimit => return LpOutcome::IterationLimit,
        }
        let infeas: f64 = (0..m)
            .filter(|&i| tableau.active[i] && tableau.basis[i] >= art_start)
            .map(|i| tableau.rhs(i))
            .sum();
        let scale = 1.0 + rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeas > 1e-7 * scale {
            return LpOutcome::Infeasible;
        }
        // Drive remaining artificials out of the basis.
        for i in 0..m {
            if !tableau.active[i] || tableau.basis[i] < art_start {
                continue;
            }
            let entering = (0..art_start).find(|&j| tableau.at(i, j).abs() > 1e-7);
            match entering {
                Some(j) => tableau.pivot(i, j),
                None => tableau.active[i] = false,
            }
        }
    }

    // Phase 2 over structural + slack columns only.
    let mut c2 = vec![0.0; total];
    c2[..ncols].copy_from_slice(&cost);
    match tableau.optimise(&c2, art_start) {
        PhaseResult::Optimal => {}
        PhaseResult::Unbounded => return LpOutcome::Unbounded,
        PhaseResult::IterationLimit => return LpOutcome::IterationLimit,
    }

    let mut y = vec![0.0; total];
    for i in 0..m {
        if tableau.active[i] {
            y[tableau.basis[i]] = tableau.rhs(i);
        }
    }
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = match maps[j] {
            Map::Shift { col, offset } => offset + y[col],
            Map::Mirror { col, offset } => offset - y[col],
            Map::Split { pos, neg } => y[pos] - y[neg],
        };
        // Snap onto bounds that numerical drift may have crossed.
        x[j] = x[j].clamp(p.lb[j], p.ub[j]);
    }
    let objective = p.cost.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    LpOutcome::Optimal { x, objective }
}

enum PhaseResult {
    Optimal,
    Unbounded,
    IterationLimit,
}

struct Tableau {
    tab: Vec<f64>,
    basis: Vec<usize>,
    m: usize,
    width: usize,
    total: usize,
    active: Vec<bool>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.tab[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.tab[i * self.width + self.total]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let piv = self.tab[r * w + c];
        for v in &mut self.tab[r * w..(r + 1) * w] {
            *v /= piv;
        }
        let (before, rest) = self.tab.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for (k, row) in before
            .chunks_mut(w)
            .chain(after.chunks_mut(w))
            .enumerate()
        {
            let i = if k < r { k } else { k + 1 };
            if !self.active[i] {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimises `cost` allowing only columns `< allowed` to enter.
    fn optimise(&mut self, cost: &[f64], allowed: usize) -> PhaseResult {
        let max_iter = 50 * (self.m + self.total) + 1000;
        let bland_after = 5 * (self.m + self.total) + 50;
        let mut in_basis = vec![false; self.total];
        for i in 0..self.m {
            if self.active[i] {
                in_basis[self.basis[i]] = true;
            }
        }
        for iter in 0..max_iter {
            let use_bland = iter >= bland_after;
            // Reduced costs d_j = c_j − c_B·B⁻¹A_j.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..allowed {
                if in_basis[j] {
                    continue;
                }
                let mut d = cost[j];
                for i in 0..self.m {
                    if self.active[i] {
                        let a = self.at(i, j);
                        if a != 0.0 {
                            d -= cost[self.basis[i]] * a;
                        }
                    }
                }
                if d < -OPT_TOL {
                    if use_bland {
                        entering = Some((j, d));
                        break;
                    }
                    if entering.map_or(true, |(_, best)| d < best) {
                        entering = Some((j, d));
                    }
                }
            }
            let Some((col, _)) = entering else {
                return PhaseResult::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if !self.active[i] {
                    continue;
                }
                let a = self.at(i, col);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return PhaseResult::Unbounded;
            };
            in_basis[self.basis[row]] = false;
            in_basis[col] = true;
            self.pivot(row, col);
        }
        PhaseResult::IterationLimit
    }
}
