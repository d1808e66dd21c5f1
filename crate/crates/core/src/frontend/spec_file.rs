//! JSON stencil description files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::expr::{parse_affine, parse_expr, parse_lhs, Scope};
use crate::ir::{
    validate, ActivitySpec, ArrayDecl, ArrayRole, Bounds, Counter, Declarations, DiagnosticCode,
    FunctionDecl, Mode, Problem, Statement, StencilLoopNest, ValidationReport,
};
use crate::print::{bracket_read, to_grammar};
use crate::simplify::simplify;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    pub name: String,
    pub rank: usize,
    pub shape: Vec<String>,
    pub role: ArrayRole,
    #[serde(default)]
    pub active: bool,
    /// Defaults to `<name>_b` for active arrays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub name: String,
    pub params: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilSpecFile {
    pub name: String,
    pub counters: Vec<String>,
    /// Inclusive `[lower, upper]` per counter.
    pub bounds: BTreeMap<String, (String, String)>,
    #[serde(default)]
    pub sizes: Vec<String>,
    #[serde(default)]
    pub scalars: Vec<String>,
    pub arrays: Vec<ArraySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<FunctionSpec>,
    pub lhs: String,
    pub mode: Mode,
    pub rhs: String,
}

impl StencilSpecFile {
    pub fn from_json(text: &str) -> Result<Self, ValidationReport> {
        serde_json::from_str(text).map_err(|e| {
            let mut r = ValidationReport::default();
            r.push(
                DiagnosticCode::Syntax,
                e.to_string(),
                format!("line {}, column {}", e.line(), e.column()),
            );
            r
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec files always serialize");
        s.push('\n');
        s
    }

    /// Lowers to IR and validates; every problem found is reported.
    pub fn to_problem(&self) -> Result<Problem, ValidationReport> {
        let mut report = ValidationReport::default();
        let counters: Vec<Counter> = self
            .counters
            .iter()
            .map(|c| Counter::new(c.clone()))
            .collect();

        let mut bounds = Vec::new();
        for c in &self.counters {
            match self.bounds.get(c) {
                None => report.push(
                    DiagnosticCode::Syntax,
                    format!("no bounds for counter `{c}`"),
                    "bounds",
                ),
                Some((lo, hi)) => {
                    let lo = parse_affine(lo, &format!("bounds.{c}[0]"));
                    let hi = parse_affine(hi, &format!("bounds.{c}[1]"));
                    match (lo, hi) {
                        (Ok(l), Ok(h)) => bounds.push(Bounds::new(l, h)),
                        (l, h) => {
                            report.diagnostics.extend(l.err());
                            report.diagnostics.extend(h.err());
                        }
                    }
                }
            }
        }
        for k in self.bounds.keys() {
            if !self.counters.contains(k) {
                report.push(
                    DiagnosticCode::UnknownSymbol,
                    format!("bounds given for unknown counter `{k}`"),
                    "bounds",
                );
            }
        }

        let mut arrays = Vec::new();
        let mut activity = ActivitySpec::default();
        for a in &self.arrays {
            let mut shape = Vec::new();
            for (d, s) in a.shape.iter().enumerate() {
                match parse_affine(s, &format!("arrays.{}.shape[{d}]", a.name)) {
                    Ok(x) => shape.push(x),
                    Err(e) => report.diagnostics.push(e),
                }
            }
            if a.active {
                let adj = a.adjoint.clone().unwrap_or_else(|| format!("{}_b", a.name));
                activity.active.insert(a.name.clone(), adj);
            } else if a.adjoint.is_some() {
                report.push(
                    DiagnosticCode::ActivityConflict,
                    format!("inactive array `{}` names an adjoint", a.name),
                    format!("arrays.{}", a.name),
                );
            }
            arrays.push(ArrayDecl {
                name: a.name.clone(),
                rank: a.rank,
                shape,
                role: a.role,
            });
        }
        let decls = Declarations {
            sizes: self.sizes.clone(),
            scalars: self.scalars.clone(),
            arrays,
            functions: self
                .functions
                .iter()
                .map(|f| FunctionDecl {
                    name: f.name.clone(),
                    params: f.params.clone(),
                })
                .collect(),
        };

        let scope = Scope {
            counters: &counters,
            decls: &decls,
        };
        let lhs = parse_lhs(&self.lhs, &scope, "lhs").map_err(|d| report.diagnostics.push(d));
        let rhs = parse_expr(&self.rhs, &scope, "rhs").map_err(|d| report.diagnostics.push(d));
        let (Ok(lhs), Ok(rhs)) = (lhs, rhs) else {
            return Err(report);
        };
        if !report.is_ok() {
            return Err(report);
        }
        let nest = StencilLoopNest {
            counters,
            bounds,
            body: vec![Statement {
                lhs,
                mode: self.mode,
                rhs: simplify(&rhs),
            }],
        };
        report.extend(validate(&nest, &activity, &decls));
        if !report.is_ok() {
            return Err(report);
        }
        Ok(Problem {
            name: self.name.clone(),
            nest,
            activity,
            decls,
        })
    }

    pub fn from_problem(p: &Problem) -> StencilSpecFile {
        let stmt = p.statement();
        StencilSpecFile {
            name: p.name.clone(),
            counters: p.nest.counters.iter().map(|c| c.0.clone()).collect(),
            bounds: p
                .nest
                .counters
                .iter()
                .zip(&p.nest.bounds)
                .map(|(c, b)| (c.0.clone(), (b.lower.to_string(), b.upper.to_string())))
                .collect(),
            sizes: p.decls.sizes.clone(),
            scalars: p.decls.scalars.clone(),
            arrays: p
                .decls
                .arrays
                .iter()
                .map(|a| ArraySpec {
                    name: a.name.clone(),
                    rank: a.rank,
                    shape: a.shape.iter().map(ToString::to_string).collect(),
                    role: a.role,
                    active: p.activity.is_active(&a.name),
                    adjoint: p.activity.adjoint(&a.name).map(str::to_string),
                })
                .collect(),
            functions: p
                .decls
                .functions
                .iter()
                .map(|f| FunctionSpec {
                    name: f.name.clone(),
                    params: f.params.clone(),
                })
                .collect(),
            lhs: bracket_read(&crate::ir::ArrayRead {
                array: stmt.lhs.array.clone(),
                indices: stmt
                    .lhs
                    .counters
                    .iter()
                    .map(|c| crate::ir::IndexExpr::new(c.clone(), 0))
                    .collect(),
            }),
            mode: stmt.mode,
            rhs: to_grammar(&stmt.rhs),
        }
    }
}

/// Parses and validates a JSON stencil description.
pub fn parse_spec(text: &str) -> Result<Problem, ValidationReport> {
    StencilSpecFile::from_json(text)?.to_problem()
}

/// Serializes a problem back to the JSON description format.
pub fn print_spec(p: &Problem) -> String {
    StencilSpecFile::from_problem(p).to_json()
}
