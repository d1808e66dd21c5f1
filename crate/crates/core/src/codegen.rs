//! C99 + OpenMP emission for the primal nest and the adjoint program.
//!
//! Arrays are passed as flat pointers and indexed row-major with the
//! declared extents, e.g. `u[(i)*n*n + (j)*n + (k + 1)]`. Generated
//! functions return `int`: 0 on success, 1 when the adjoint's
//! minimum-extent guard fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::adjoint::{derive_adjoint_terms, AdjointProgram};
use crate::error::{Error, Result};
use crate::ir::{
    AffineExpr, ArrayRead, Bounds, Counter, Expr, IndexExpr, Problem, Statement, StencilLoopNest,
};
use crate::print::{index_text, Dialect, Printer};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmitOptions {
    /// Defaults to the problem name, with `_b` appended for the adjoint.
    pub function_name: Option<String>,
    pub parallel: bool,
    pub unroll_degenerate: bool,
    pub merge: bool,
    pub restrict: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions {
            function_name: None,
            parallel: true,
            unroll_degenerate: false,
            merge: false,
            restrict: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Size,
    Scalar,
    Array { written: bool },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

/// Parameter list of a generated function, in call order: sizes, scalars,
/// then arrays (each primal array directly followed by its adjoint).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub name: String,
    pub params: Vec<Param>,
}

impl Signature {
    pub fn render(&self, restrict: bool) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Size => format!("int {}", p.name),
                ParamKind::Scalar => format!("double {}", p.name),
                ParamKind::Array { written } => format!(
                    "{}double *{}{}",
                    if written { "" } else { "const " },
                    if restrict { "restrict " } else { "" },
                    p.name
                ),
            })
            .collect();
        format!("int {}({})", self.name, params.join(", "))
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Param> {
        self.params
            .iter()
            .filter(|p| matches!(p.kind, ParamKind::Array { .. }))
    }
}

fn check_identifier(name: &str) -> Result<()> {
    let mut chars = name.chars();
    let ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::Emit(format!("`{name}` is not a C identifier")))
    }
}

fn signature(
    problem: &Problem,
    name: String,
    read: &BTreeSet<String>,
    written: &BTreeSet<String>,
) -> Result<Signature> {
    check_identifier(&name)?;
    let mut params: Vec<Param> = problem
        .decls
        .sizes
        .iter()
        .map(|s| Param {
            name: s.clone(),
            kind: ParamKind::Size,
        })
        .chain(problem.decls.scalars.iter().map(|s| Param {
            name: s.clone(),
            kind: ParamKind::Scalar,
        }))
        .collect();
    for a in &problem.decls.arrays {
        let adj = problem.activity.adjoint(&a.name).map(str::to_string);
        for n in std::iter::once(a.name.clone()).chain(adj) {
            if read.contains(&n) || written.contains(&n) {
                params.push(Param {
                    kind: ParamKind::Array {
                        written: written.contains(&n),
                    },
                    name: n,
                });
            }
        }
    }
    Ok(Signature { name, params })
}

fn touched<'a>(stmts: impl Iterator<Item = &'a Statement>) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut read = BTreeSet::new();
    let mut written = BTreeSet::new();
    for s in stmts {
        written.insert(s.lhs.array.clone());
        for r in s.rhs.reads() {
            read.insert(r.array.clone());
        }
    }
    (read, written)
}

pub fn primal_signature(problem: &Problem, opts: &EmitOptions) -> Result<Signature> {
    let (read, written) = touched(problem.nest.body.iter());
    let name = opts
        .function_name
        .clone()
        .unwrap_or_else(|| problem.name.clone());
    signature(problem, name, &read, &written)
}

pub fn adjoint_signature(
    problem: &Problem,
    program: &AdjointProgram,
    opts: &EmitOptions,
) -> Result<Signature> {
    let (read, written) = touched(program.nests.iter().flat_map(|n| &n.nest.body));
    let name = opts
        .function_name
        .clone()
        .unwrap_or_else(|| format!("{}_b", problem.name));
    signature(problem, name, &read, &written)
}

struct Emitter<'a> {
    problem: &'a Problem,
    /// Declared extents per array name, adjoints included.
    shapes: BTreeMap<String, &'a [AffineExpr]>,
    out: String,
}

fn shape_factor(e: &AffineExpr) -> String {
    let s = e.to_string();
    if s.contains(' ') {
        format!("({s})")
    } else {
        s
    }
}

impl<'a> Emitter<'a> {
    fn new(problem: &'a Problem) -> Self {
        let mut shapes = BTreeMap::new();
        for a in &problem.decls.arrays {
            shapes.insert(a.name.clone(), a.shape.as_slice());
            if let Some(adj) = problem.activity.adjoint(&a.name) {
                shapes.insert(adj.to_string(), a.shape.as_slice());
            }
        }
        Emitter {
            problem,
            shapes,
            out: String::new(),
        }
    }

    fn access(&self, array: &str, idx: &[String]) -> String {
        let shape = self.shapes.get(array).copied().unwrap_or(&[]);
        if idx.len() == 1 {
            return format!("{array}[{}]", idx[0]);
        }
        let terms: Vec<String> = idx
            .iter()
            .enumerate()
            .map(|(d, i)| {
                let mut t = format!("({i})");
                for f in shape.iter().skip(d + 1) {
                    t.push('*');
                    t.push_str(&shape_factor(f));
                }
                t
            })
            .collect();
        format!("{array}[{}]", terms.join(" + "))
    }

    fn index(idx: &IndexExpr, subst: &BTreeMap<Counter, AffineExpr>) -> String {
        match subst.get(&idx.counter) {
            Some(v) => v.offset(idx.offset).to_string(),
            None => index_text(idx.counter.name(), idx.offset),
        }
    }

    fn rhs(&self, e: &Expr, subst: &BTreeMap<Counter, AffineExpr>) -> Result<String> {
        for f in called_functions(e) {
            if self.problem.decls.function(&f).is_none() {
                return Err(Error::Emit(format!(
                    "no prototype for opaque function `{f}`"
                )));
            }
        }
        let read = |r: &ArrayRead| {
            let idx: Vec<String> = r.indices.iter().map(|i| Self::index(i, subst)).collect();
            self.access(&r.array, &idx)
        };
        let printer = Printer {
            dialect: Dialect::C,
            read: &read,
            functions: &self.problem.decls.functions,
        };
        Ok(printer.expr(e))
    }

    fn statement(&self, s: &Statement, subst: &BTreeMap<Counter, AffineExpr>) -> Result<String> {
        let lhs_idx: Vec<String> = s
            .lhs
            .counters
            .iter()
            .map(|c| Self::index(&IndexExpr::new(c.clone(), 0), subst))
            .collect();
        Ok(format!(
            "{} {} {};",
            self.access(&s.lhs.array, &lhs_idx),
            s.mode.symbol(),
            self.rhs(&s.rhs, subst)?
        ))
    }

    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn nest(&mut self, nest: &StencilLoopNest, parallel: bool) -> Result<()> {
        if parallel && !nest.bounds.iter().all(Bounds::is_degenerate) {
            let names: Vec<&str> = nest.counters.iter().map(Counter::name).collect();
            self.line(
                1,
                &format!("#pragma omp parallel for private({})", names.join(",")),
            );
        }
        for (d, (c, b)) in nest.counters.iter().zip(&nest.bounds).enumerate() {
            self.line(
                1 + d,
                &format!("for ( {c}={}; {c}<={}; {c}++ ) {{", b.lower, b.upper),
            );
        }
        let depth = nest.depth();
        for s in &nest.body {
            let text = self.statement(s, &BTreeMap::new())?;
            self.line(1 + depth, &text);
        }
        for d in (0..depth).rev() {
            self.line(1 + d, "}");
        }
        Ok(())
    }

    fn prelude(&mut self, derivs: bool) {
        self.out.push_str("#include <math.h>\n\n");
        let mut any = false;
        for f in &self.problem.decls.functions {
            let params: Vec<String> = f.params.iter().map(|p| format!("double {p}")).collect();
            let params = params.join(", ");
            let _ = writeln!(self.out, "double {}({params});", f.name);
            if derivs {
                for p in &f.params {
                    let _ = writeln!(self.out, "double {}_d_{p}({params});", f.name);
                }
            }
            any = true;
        }
        if any {
            self.out.push('\n');
        }
    }

    fn counter_decl(&mut self, counters: &[Counter]) {
        let names: Vec<&str> = counters.iter().map(Counter::name).collect();
        self.line(1, &format!("int {};", names.join(", ")));
    }
}

fn called_functions(e: &Expr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    e.visit(&mut |x| match x {
        Expr::Call(c) => {
            out.insert(c.function.clone());
        }
        Expr::Deriv(d) => {
            out.insert(d.function.clone());
        }
        _ => {}
    });
    out
}

/// C source for the primal loop nest.
pub fn emit_primal(problem: &Problem, opts: &EmitOptions) -> Result<String> {
    let sig = primal_signature(problem, opts)?;
    let mut e = Emitter::new(problem);
    e.prelude(false);
    e.out.push_str(&sig.render(opts.restrict));
    e.out.push_str(" {\n");
    e.counter_decl(&problem.nest.counters);
    e.nest(&problem.nest, opts.parallel)?;
    e.line(1, "return 0;");
    e.out.push_str("}\n");
    Ok(e.out)
}

/// C source for an adjoint program. Degenerate nests are emitted first as
/// bare statements when `unroll_degenerate` is set; every nest writes a
/// disjoint set of elements, so hoisting them does not change results.
pub fn emit_adjoint(
    problem: &Problem,
    program: &AdjointProgram,
    opts: &EmitOptions,
) -> Result<String> {
    let program = if opts.merge {
        program.merged()
    } else {
        program.clone()
    };
    let sig = adjoint_signature(problem, &program, opts)?;
    let mut e = Emitter::new(problem);
    e.prelude(true);
    e.out.push_str(&sig.render(opts.restrict));
    e.out.push_str(" {\n");

    let (bare, loops): (Vec<_>, Vec<_>) = program
        .nests
        .iter()
        .partition(|n| opts.unroll_degenerate && n.is_degenerate());
    if !loops.is_empty() {
        e.counter_decl(&program.counters);
    }
    for ((c, b), need) in program
        .counters
        .iter()
        .zip(&program.primal_bounds)
        .zip(&program.min_extent)
    {
        let extent = b.upper.minus(&b.lower);
        match extent.as_constant() {
            Some(x) if x >= *need => {}
            _ => e.line(
                1,
                &format!("if ({extent} < {need}) return 1; /* extent of {c} */"),
            ),
        }
    }
    for n in &bare {
        let subst: BTreeMap<Counter, AffineExpr> = n
            .nest
            .counters
            .iter()
            .cloned()
            .zip(n.nest.bounds.iter().map(|b| b.lower.clone()))
            .collect();
        for s in &n.nest.body {
            let text = e.statement(s, &subst)?;
            e.line(1, &text);
        }
    }
    for n in &loops {
        e.nest(&n.nest, opts.parallel)?;
    }
    e.line(1, "return 0;");
    e.out.push_str("}\n");
    Ok(e.out)
}

pub fn scatter_signature(problem: &Problem, opts: &EmitOptions) -> Result<Signature> {
    let terms = derive_adjoint_terms(&problem.nest, &problem.activity)?;
    let mut read = BTreeSet::new();
    let mut written = BTreeSet::new();
    for t in &terms {
        read.insert(t.seed.array.clone());
        written.insert(t.adjoint.clone());
        for r in t.partial.reads() {
            read.insert(r.array.clone());
        }
    }
    let name = opts
        .function_name
        .clone()
        .unwrap_or_else(|| format!("{}_b_scatter", problem.name));
    signature(problem, name, &read, &written)
}

/// Conventional scatter adjoint over the primal space with every increment
/// marked `omp atomic`; used only for benchmarking.
pub fn emit_scatter_atomic(problem: &Problem, opts: &EmitOptions) -> Result<String> {
    let nest = &problem.nest;
    let terms = derive_adjoint_terms(nest, &problem.activity)?;
    let sig = scatter_signature(problem, opts)?;
    let mut e = Emitter::new(problem);
    e.prelude(true);
    e.out.push_str(&sig.render(opts.restrict));
    e.out.push_str(" {\n");
    e.counter_decl(&nest.counters);
    if opts.parallel {
        let names: Vec<&str> = nest.counters.iter().map(Counter::name).collect();
        e.line(
            1,
            &format!("#pragma omp parallel for private({})", names.join(",")),
        );
    }
    for (d, (c, b)) in nest.counters.iter().zip(&nest.bounds).enumerate() {
        e.line(
            1 + d,
            &format!("for ( {c}={}; {c}<={}; {c}++ ) {{", b.lower, b.upper),
        );
    }
    let depth = nest.depth();
    let none = BTreeMap::new();
    for t in &terms {
        let seed = Expr::read(
            t.seed.array.clone(),
            t.seed
                .counters
                .iter()
                .map(|c| IndexExpr::new(c.clone(), 0))
                .collect(),
        );
        let rhs = e.rhs(&Expr::Mul(vec![t.partial.clone(), seed]), &none)?;
        let idx: Vec<String> = t
            .input
            .indices
            .iter()
            .map(|i| Emitter::index(i, &none))
            .collect();
        let target = e.access(&t.adjoint, &idx);
        if opts.parallel {
            e.line(1 + depth, "#pragma omp atomic");
        }
        e.line(1 + depth, &format!("{target} += {rhs};"));
    }
    for d in (0..depth).rev() {
        e.line(1 + d, "}");
    }
    e.line(1, "return 0;");
    e.out.push_str("}\n");
    Ok(e.out)
}

/// Header with the function prototype.
pub fn emit_header(sig: &Signature, opts: &EmitOptions) -> String {
    let guard = format!("{}_H", sig.name.to_ascii_uppercase());
    format!(
        "#ifndef {guard}\n#define {guard}\n\n{};\n\n#endif\n",
        sig.render(opts.restrict)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::assemble_adjoint;
    use crate::frontend::bundled_problem;

    #[test]
    fn lap1d_primal_text() {
        let p = bundled_problem("lap1d");
        let c = emit_primal(&p, &EmitOptions::default()).unwrap();
        assert!(c.contains("int lap1d(int n, double *restrict r, const double *restrict c, const double *restrict u)"), "{c}");
        assert!(
            c.contains("#pragma omp parallel for private(i)\n  for ( i=1; i<=n - 1; i++ ) {"),
            "{c}"
        );
        assert!(
            c.contains("r[i] = c[i]*(2.0*u[i - 1] - 3.0*u[i] + 4.0*u[i + 1]);"),
            "{c}"
        );
    }

    #[test]
    fn no_parallel_drops_only_pragmas() {
        let p = bundled_problem("wave3d");
        let with = emit_primal(&p, &EmitOptions::default()).unwrap();
        let without = emit_primal(
            &p,
            &EmitOptions {
                parallel: false,
                ..Default::default()
            },
        )
        .unwrap();
        let stripped: String = with
            .lines()
            .filter(|l| !l.contains("#pragma"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(stripped, without);
    }

    #[test]
    fn flat_indexing() {
        let p = bundled_problem("wave3d");
        let c = emit_primal(&p, &EmitOptions::default()).unwrap();
        assert!(c.contains("u[(i)*n*n + (j)*n + (k)] += "), "{c}");
        assert!(c.contains("u_1[(i - 1)*n*n + (j)*n + (k)]"), "{c}");
    }

    #[test]
    fn lap1d_unrolled_merged() {
        let p = bundled_problem("lap1d");
        let prog = assemble_adjoint(&p).unwrap();
        let opts = EmitOptions {
            unroll_degenerate: true,
            merge: true,
            ..Default::default()
        };
        let c = emit_adjoint(&p, &prog, &opts).unwrap();
        assert!(c.contains("if (n - 2 < 2) return 1;"), "{c}");
        assert!(c.contains("  ub[0] += 2.0*c[1]*rb[1];\n"), "{c}");
        assert!(c.contains("  ub[n] += 4.0*c[n - 1]*rb[n - 1];\n"), "{c}");
        assert!(c.contains("for ( i=2; i<=n - 2; i++ ) {"), "{c}");
        assert_eq!(c.matches("for (").count(), 1);
        assert_eq!(c.matches("+=").count(), 5);
    }

    #[test]
    fn bad_name_rejected() {
        let p = bundled_problem("lap1d");
        let opts = EmitOptions {
            function_name: Some("1x".into()),
            ..Default::default()
        };
        assert!(matches!(emit_primal(&p, &opts), Err(Error::Emit(_))));
    }
}
