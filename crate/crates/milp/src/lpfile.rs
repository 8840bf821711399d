//! CPLEX LP format writer, readable by HiGHS and most MILP solvers.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::model::{Cmp, MipModel, ObjSense, Var};

const TERMS_PER_LINE: usize = 8;

/// Column names as written to the file, unique and LP-safe.
pub fn column_names(model: &MipModel) -> Vec<String> {
    unique_names(model.vars().iter().map(|d| d.name.as_str()), "x")
}

fn row_names(model: &MipModel) -> Vec<String> {
    unique_names(model.constraints().iter().map(|c| c.name.as_str()), "r")
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>, prefix: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    names
        .enumerate()
        .map(|(i, n)| {
            let mut s: String = n
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
                .collect();
            if s.is_empty() || !s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
                s = format!("{prefix}_{s}");
            }
            // `e`/`E` followed by digits can be read as an exponent.
            if s.starts_with(['e', 'E']) {
                s = format!("{prefix}_{s}");
            }
            if !seen.insert(s.clone()) {
                s = format!("{s}__{i}");
                seen.insert(s.clone());
            }
            s
        })
        .collect()
}

fn write_terms(out: &mut String, terms: &[(Var, f64)], names: &[String]) {
    for (k, &(v, c)) in terms.iter().enumerate() {
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", c.abs(), names[v.index()]);
    }
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

pub fn to_lp_string(model: &MipModel) -> String {
    let cols = column_names(model);
    let rows = row_names(model);
    let mut out = String::new();
    out.push_str(match model.sense() {
        ObjSense::Minimize => "Minimize\n",
        ObjSense::Maximize => "Maximize\n",
    });
    let obj = model.objective();
    let _ = writeln!(out, "\\ objective constant {}", obj.constant);
    out.push_str(" obj:");
    if obj.terms.is_empty() {
        if let Some(first) = cols.first() {
            let _ = write!(out, " 0 {first}");
        }
    } else {
        write_terms(&mut out, &obj.terms, &cols);
    }
    out.push_str("\nSubject To\n");
    for (c, name) in model.constraints().iter().zip(&rows) {
        let _ = write!(out, " {name}:");
        if c.terms.is_empty() {
            let _ = write!(out, " 0 {}", cols[0]);
        } else {
            write_terms(&mut out, &c.terms, &cols);
        }
        let op = match c.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", c.rhs);
    }
    out.push_str("Bounds\n");
    for (d, name) in model.vars().iter().zip(&cols) {
        if d.lb == f64::NEG_INFINITY && d.ub == f64::INFINITY {
            let _ = writeln!(out, " {name} free");
        } else {
            let _ = writeln!(out, " {} <= {name} <= {}", fmt_bound(d.lb), fmt_bound(d.ub));
        }
    }
    let ints: Vec<&String> = model
        .vars()
        .iter()
        .zip(&cols)
        .filter(|(d, _)| d.is_binary())
        .map(|(_, n)| n)
        .collect();
    if !ints.is_empty() {
        out.push_str("General\n");
        for chunk in ints.chunks(TERMS_PER_LINE) {
            out.push(' ');
            out.push_str(&chunk.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "));
            out.push('\n');
        }
    }
    out.push_str("End\n");
    out
}

pub fn write_lp(model: &MipModel, path: &Path) -> io::Result<()> {
    std::fs::write(path, to_lp_string(model))
}
