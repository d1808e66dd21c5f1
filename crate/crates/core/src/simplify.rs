//! Local normalization of expressions.
//!
//! Constants are folded, sums and products flattened, numeric coefficients of
//! structurally equal terms combined, and operands sorted by the structural
//! order on [`Expr`]. No expansion, factoring or common-subexpression
//! elimination happens here.

use std::collections::BTreeMap;

use crate::ir::{Comparison, Expr};

/// Returns the normal form of `e`. Idempotent.
pub fn simplify(e: &Expr) -> Expr {
    e.map_bottom_up(&mut normalize_node)
}

/// Normalizes one node whose children are already normal.
fn normalize_node(e: Expr) -> Expr {
    match e {
        Expr::Add(xs) => make_add(xs),
        Expr::Mul(xs) => make_mul(xs),
        Expr::Pow(b, k) => make_pow(*b, k),
        Expr::Min(a, b) => match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::c(x.min(y)),
            _ if a == b => *a,
            _ => Expr::Min(a, b),
        },
        Expr::Max(a, b) => match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::c(x.max(y)),
            _ if a == b => *a,
            _ => Expr::Max(a, b),
        },
        Expr::Select {
            cond,
            then,
            otherwise,
        } => {
            // Conditions are kept as `lhs - rhs <rel> 0`.
            let Comparison { lhs, rel, rhs } = *cond;
            let diff = make_add(vec![lhs, make_mul(vec![Expr::c(-1.0), rhs])]);
            if let Some(v) = diff.as_const() {
                return if rel.holds(v, 0.0) { *then } else { *otherwise };
            }
            if then == otherwise {
                return *then;
            }
            Expr::Select {
                cond: Box::new(Comparison {
                    lhs: diff,
                    rel,
                    rhs: Expr::c(0.0),
                }),
                then,
                otherwise,
            }
        }
        other => other,
    }
}

fn make_pow(base: Expr, k: i32) -> Expr {
    match (base, k) {
        (_, 0) => Expr::c(1.0),
        (b, 1) => b,
        (Expr::Const(c), k) => Expr::c(c.into_inner().powi(k)),
        (Expr::Pow(b, j), k) => make_pow(*b, j * k),
        (b, k) => Expr::Pow(Box::new(b), k),
    }
}

pub(crate) fn make_mul(xs: Vec<Expr>) -> Expr {
    let mut coeff = 1.0;
    let mut powers: BTreeMap<Expr, i32> = BTreeMap::new();
    let mut stack = xs;
    while let Some(x) = stack.pop() {
        match x {
            Expr::Const(c) => coeff *= c.into_inner(),
            Expr::Mul(inner) => stack.extend(inner),
            Expr::Pow(b, k) => *powers.entry(*b).or_insert(0) += k,
            other => *powers.entry(other).or_insert(0) += 1,
        }
    }
    if coeff == 0.0 {
        return Expr::c(0.0);
    }
    let mut factors = Vec::with_capacity(powers.len() + 1);
    for (base, k) in powers {
        match make_pow(base, k) {
            Expr::Const(c) => coeff *= c.into_inner(),
            f => factors.push(f),
        }
    }
    if factors.is_empty() {
        return Expr::c(coeff);
    }
    if coeff == 1.0 && factors.len() == 1 {
        return factors.pop().unwrap();
    }
    if coeff != 1.0 {
        factors.insert(0, Expr::c(coeff));
    }
    Expr::Mul(factors)
}

/// Splits a normal term into its numeric coefficient and the remainder.
fn split_coefficient(term: Expr) -> (f64, Expr) {
    match term {
        Expr::Mul(mut fs) => match fs.first().and_then(Expr::as_const) {
            Some(c) => {
                fs.remove(0);
                let mono = if fs.len() == 1 {
                    fs.pop().unwrap()
                } else {
                    Expr::Mul(fs)
                };
                (c, mono)
            }
            None => (1.0, Expr::Mul(fs)),
        },
        other => (1.0, other),
    }
}

fn with_coefficient(c: f64, mono: Expr) -> Expr {
    if c == 1.0 {
        return mono;
    }
    match mono {
        Expr::Mul(mut fs) => {
            fs.insert(0, Expr::c(c));
            Expr::Mul(fs)
        }
        m => Expr::Mul(vec![Expr::c(c), m]),
    }
}

pub(crate) fn make_add(xs: Vec<Expr>) -> Expr {
    let mut constant = 0.0;
    let mut terms: BTreeMap<Expr, f64> = BTreeMap::new();
    let mut stack = xs;
    stack.reverse();
    while let Some(x) = stack.pop() {
        match x {
            Expr::Const(c) => constant += c.into_inner(),
            Expr::Add(inner) => stack.extend(inner.into_iter().rev()),
            other => {
                let (c, mono) = split_coefficient(other);
                *terms.entry(mono).or_insert(0.0) += c;
            }
        }
    }
    let mut out: Vec<Expr> = terms
        .into_iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|(mono, c)| with_coefficient(c, mono))
        .collect();
    if constant != 0.0 || out.is_empty() {
        out.push(Expr::c(constant + 0.0));
    }
    if out.len() == 1 {
        out.pop().unwrap()
    } else {
        Expr::Add(out)
    }
}
