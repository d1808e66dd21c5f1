#![allow(dead_code)]

use std::collections::BTreeMap;

use stencilgrad_core::frontend::{parse_expr, parse_spec, Scope};
use stencilgrad_core::ir::{ArrayDecl, ArrayRole, Expr, Problem};
use stencilgrad_core::simplify::simplify;

pub const COUNTERS: [&str; 3] = ["i", "j", "k"];

/// A linear stencil `r = sum_k (k+1) * u[c + o_k]` with bounds `[2, n-3]`
/// and shape `n` per dimension, so every offset in `[-2, 2]` stays in range.
pub fn problem_from_offsets(name: &str, offsets: &[Vec<i64>]) -> Problem {
    let depth = offsets[0].len();
    let counters = &COUNTERS[..depth];
    let terms: Vec<String> = offsets
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let idx: String = counters
                .iter()
                .zip(o)
                .map(|(c, d)| match d.signum() {
                    0 => format!("[{c}]"),
                    1 => format!("[{c}+{d}]"),
                    _ => format!("[{c}-{}]", -d),
                })
                .collect();
            format!("{}*u{idx}", k + 1)
        })
        .collect();
    let lhs: String = counters.iter().map(|c| format!("[{c}]")).collect();
    let bounds: serde_json::Map<String, serde_json::Value> = counters
        .iter()
        .map(|c| (c.to_string(), serde_json::json!(["2", "n - 3"])))
        .collect();
    let shape = vec!["n"; depth];
    let spec = serde_json::json!({
        "name": name,
        "counters": counters,
        "bounds": bounds,
        "sizes": ["n"],
        "arrays": [
            { "name": "r", "rank": depth, "shape": shape, "role": "output", "active": true, "adjoint": "rb" },
            { "name": "u", "rank": depth, "shape": shape, "role": "input", "active": true, "adjoint": "ub" }
        ],
        "lhs": format!("r{lhs}"),
        "mode": "=",
        "rhs": terms.join(" + "),
    });
    parse_spec(&spec.to_string()).unwrap_or_else(|r| panic!("{name}: {r}"))
}

/// Every offset vector with entries in `[-w, w]`.
pub fn dense(depth: usize, w: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..depth {
        out = out
            .into_iter()
            .flat_map(|p| {
                (-w..=w).map(move |d| {
                    let mut q = p.clone();
                    q.push(d);
                    q
                })
            })
            .collect();
    }
    out
}

/// Center plus `+-1` along each axis.
pub fn star(depth: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![0; depth]];
    for d in 0..depth {
        for s in [-1, 1] {
            let mut o = vec![0; depth];
            o[d] = s;
            out.push(o);
        }
    }
    out
}

/// Nest count by brute force. Walks every coordinate of dimension `dim`
/// over the hull, computes which statements are valid there, and cuts a new
/// run each time that set changes; each run recurses into the next
/// dimension with its own statements. Primal range is `[s, e]` on every axis.
pub fn enumerate_nest_count(offsets: &[Vec<i64>], s: i64, e: i64) -> usize {
    let all: Vec<usize> = (0..offsets.len()).collect();
    count_runs(offsets, &all, 0, s, e)
}

fn count_runs(offsets: &[Vec<i64>], live: &[usize], dim: usize, s: i64, e: i64) -> usize {
    if dim == offsets[0].len() {
        return 1;
    }
    let lo = live.iter().map(|&k| s + offsets[k][dim]).min().unwrap();
    let hi = live.iter().map(|&k| e + offsets[k][dim]).max().unwrap();
    let mut total = 0;
    let mut prev: Option<Vec<usize>> = None;
    for x in lo..=hi {
        let here: Vec<usize> = live
            .iter()
            .copied()
            .filter(|&k| s + offsets[k][dim] <= x && x <= e + offsets[k][dim])
            .collect();
        if prev.as_ref() != Some(&here) {
            if !here.is_empty() {
                total += count_runs(offsets, &here, dim + 1, s, e);
            }
            prev = Some(here);
        }
    }
    total
}

/// Normal form with the operands of min and max put in structural order,
/// so `fmax(0, x)` and `max(x, 0)` compare equal.
pub fn canonical(e: &Expr) -> Expr {
    let mut cur = e.clone();
    loop {
        let sorted = cur.map_bottom_up(&mut |x| match x {
            Expr::Min(a, b) if b < a => Expr::Min(b, a),
            Expr::Max(a, b) if b < a => Expr::Max(b, a),
            other => other,
        });
        let next = simplify(&sorted);
        if next == cur {
            return next;
        }
        cur = next;
    }
}

/// Parses `text` against the problem's declarations extended with every
/// adjoint array and the given extra scalars.
pub fn expr_in(problem: &Problem, text: &str, extra_scalars: &[&str]) -> Expr {
    let mut decls = problem.decls.clone();
    for (primal, adj) in &problem.activity.active {
        let d = problem.decls.array(primal).unwrap();
        decls.arrays.push(ArrayDecl {
            name: adj.clone(),
            rank: d.rank,
            shape: d.shape.clone(),
            role: ArrayRole::Input,
        });
    }
    decls
        .scalars
        .extend(extra_scalars.iter().map(|s| s.to_string()));
    let scope = Scope {
        counters: &problem.nest.counters,
        decls: &decls,
    };
    parse_expr(text, &scope, "test").unwrap_or_else(|d| panic!("{text}: {d}"))
}

pub fn sizes(n: i64) -> BTreeMap<String, i64> {
    BTreeMap::from([("n".to_string(), n)])
}

/// Drops all whitespace, for token-level comparison of C text.
pub fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}
