//! Expression and loop-nest intermediate representation.
//!
//! A stencil problem is a perfect loop nest over unit-stride counters with
//! inclusive affine bounds and a single statement in the innermost loop. The
//! statement writes one output array at the bare counters and reads input
//! arrays at constant integer offsets of those counters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A loop counter.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Counter(pub String);

impl Counter {
    pub fn new(name: impl Into<String>) -> Self {
        Counter(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Counter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Counter {
    fn from(s: &str) -> Self {
        Counter(s.to_string())
    }
}

/// `c0 + sum(ck * symk)` over integer-valued size symbols.
///
/// Zero coefficients are never stored, so derived equality is equality of
/// the normalized form.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AffineExpr {
    coefficients: BTreeMap<String, i64>,
    constant: i64,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr {
            coefficients: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn symbol(name: impl Into<String>) -> Self {
        Self::term(name, 1)
    }

    pub fn term(name: impl Into<String>, coeff: i64) -> Self {
        let mut a = AffineExpr::default();
        a.add_term(name.into(), coeff);
        a
    }

    fn add_term(&mut self, name: String, coeff: i64) {
        let entry = self.coefficients.entry(name.clone()).or_insert(0);
        *entry += coeff;
        if *entry == 0 {
            self.coefficients.remove(&name);
        }
    }

    pub fn coefficients(&self) -> &BTreeMap<String, i64> {
        &self.coefficients
    }

    pub fn constant_term(&self) -> i64 {
        self.constant
    }

    /// The value when no symbol is involved.
    pub fn as_constant(&self) -> Option<i64> {
        self.coefficients.is_empty().then_some(self.constant)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.coefficients.keys().map(String::as_str)
    }

    pub fn offset(&self, delta: i64) -> Self {
        let mut a = self.clone();
        a.constant += delta;
        a
    }

    pub fn plus(&self, other: &AffineExpr) -> Self {
        let mut a = self.clone();
        for (s, c) in &other.coefficients {
            a.add_term(s.clone(), *c);
        }
        a.constant += other.constant;
        a
    }

    pub fn minus(&self, other: &AffineExpr) -> Self {
        self.plus(&other.scaled(-1))
    }

    pub fn scaled(&self, k: i64) -> Self {
        if k == 0 {
            return AffineExpr::default();
        }
        AffineExpr {
            coefficients: self
                .coefficients
                .iter()
                .map(|(s, c)| (s.clone(), c * k))
                .collect(),
            constant: self.constant * k,
        }
    }

    /// Converts an arithmetic expression over size symbols and integer
    /// literals. Returns `None` if the expression is not affine.
    pub fn from_expr(e: &Expr) -> Option<AffineExpr> {
        match e {
            Expr::Const(c) => {
                let v = c.into_inner();
                (v.fract() == 0.0 && v.abs() < 1e15).then(|| AffineExpr::constant(v as i64))
            }
            Expr::Scalar(s) => Some(AffineExpr::symbol(s.clone())),
            Expr::Add(terms) => terms.iter().try_fold(AffineExpr::default(), |acc, t| {
                Some(acc.plus(&Self::from_expr(t)?))
            }),
            Expr::Mul(factors) => {
                let mut acc = AffineExpr::constant(1);
                for f in factors {
                    let g = Self::from_expr(f)?;
                    acc = match (acc.as_constant(), g.as_constant()) {
                        (Some(k), _) => g.scaled(k),
                        (_, Some(k)) => acc.scaled(k),
                        _ => return None,
                    };
                }
                Some(acc)
            }
            _ => None,
        }
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (sym, &c) in &self.coefficients {
            let mag = c.unsigned_abs();
            if first {
                if c < 0 {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if c < 0 { " - " } else { " + " })?;
            }
            if mag != 1 {
                write!(f, "{mag}*")?;
            }
            f.write_str(sym)?;
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant != 0 {
            let sign = if self.constant < 0 { "-" } else { "+" };
            write!(f, " {sign} {}", self.constant.unsigned_abs())
        } else {
            Ok(())
        }
    }
}

/// Exact value of `a` under integer bindings of its size symbols.
pub fn eval_affine(a: &AffineExpr, bindings: &BTreeMap<String, i64>) -> Result<i64> {
    a.coefficients.iter().try_fold(a.constant, |acc, (s, c)| {
        bindings
            .get(s)
            .map(|v| acc + c * v)
            .ok_or_else(|| Error::UnboundSymbol(s.clone()))
    })
}

/// `counter + offset` with a compile-time constant offset.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexExpr {
    pub counter: Counter,
    pub offset: i64,
}

impl IndexExpr {
    pub fn new(counter: impl Into<Counter>, offset: i64) -> Self {
        IndexExpr {
            counter: counter.into(),
            offset,
        }
    }
}

impl From<String> for Counter {
    fn from(s: String) -> Self {
        Counter(s)
    }
}

/// One integer per loop counter, ordered outer to inner.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OffsetVector(pub Vec<i64>);

impl OffsetVector {
    pub fn zeros(depth: usize) -> Self {
        OffsetVector(vec![0; depth])
    }

    pub fn negated(&self) -> Self {
        OffsetVector(self.0.iter().map(|o| -o).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for OffsetVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (k, o) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{o}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArrayRead {
    pub array: String,
    pub indices: Vec<IndexExpr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Relation {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Relation::Ge => a >= b,
            Relation::Gt => a > b,
            Relation::Le => a <= b,
            Relation::Lt => a < b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Ge => ">=",
            Relation::Gt => ">",
            Relation::Le => "<=",
            Relation::Lt => "<",
        }
    }
}

/// Condition of a [`Expr::Select`]. Comparisons exist only inside selects.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Comparison {
    pub lhs: Expr,
    pub rel: Relation,
    pub rhs: Expr,
}

/// Call to a function whose body is unknown to the compiler.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpaqueCall {
    pub function: String,
    pub args: BTreeMap<String, Expr>,
}

/// Partial derivative of an opaque function with respect to one of its
/// named arguments, evaluated at `args`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpaqueDeriv {
    pub function: String,
    pub wrt: String,
    pub args: BTreeMap<String, Expr>,
}

impl OpaqueDeriv {
    /// Name of the external routine implementing this derivative.
    pub fn routine_name(&self) -> String {
        format!("{}_d_{}", self.function, self.wrt)
    }
}

/// Expression tree.
///
/// Variant order matters: the derived `Ord` is the total order used to sort
/// factors and terms during simplification (constants sort first).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Const(OrderedFloat<f64>),
    Scalar(String),
    Read(ArrayRead),
    Pow(Box<Expr>, i32),
    Mul(Vec<Expr>),
    Add(Vec<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Select {
        cond: Box<Comparison>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
    Call(OpaqueCall),
    Deriv(OpaqueDeriv),
}

impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(OrderedFloat(v))
    }

    pub fn scalar(name: impl Into<String>) -> Expr {
        Expr::Scalar(name.into())
    }

    pub fn read(array: impl Into<String>, indices: Vec<IndexExpr>) -> Expr {
        Expr::Read(ArrayRead {
            array: array.into(),
            indices,
        })
    }

    pub fn min(a: Expr, b: Expr) -> Expr {
        Expr::Min(Box::new(a), Box::new(b))
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        Expr::Max(Box::new(a), Box::new(b))
    }

    pub fn pow(b: Expr, k: i32) -> Expr {
        Expr::Pow(Box::new(b), k)
    }

    pub fn select(lhs: Expr, rel: Relation, rhs: Expr, then: Expr, otherwise: Expr) -> Expr {
        Expr::Select {
            cond: Box::new(Comparison { lhs, rel, rhs }),
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }

    pub fn negated(e: Expr) -> Expr {
        Expr::Mul(vec![Expr::c(-1.0), e])
    }

    pub fn minus(a: Expr, b: Expr) -> Expr {
        Expr::Add(vec![a, Expr::negated(b)])
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(c.into_inner()),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Calls `f` on every direct child expression, including comparison
    /// operands and opaque-call arguments.
    pub fn for_each_child<'a>(&'a self, mut f: impl FnMut(&'a Expr)) {
        match self {
            Expr::Const(_) | Expr::Scalar(_) | Expr::Read(_) => {}
            Expr::Pow(b, _) => f(b),
            Expr::Mul(xs) | Expr::Add(xs) => xs.iter().for_each(f),
            Expr::Min(a, b) | Expr::Max(a, b) => {
                f(a);
                f(b);
            }
            Expr::Select {
                cond,
                then,
                otherwise,
            } => {
                f(&cond.lhs);
                f(&cond.rhs);
                f(then);
                f(otherwise);
            }
            Expr::Call(c) => c.args.values().for_each(f),
            Expr::Deriv(d) => d.args.values().for_each(f),
        }
    }

    /// Pre-order traversal over this node and all descendants.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        self.for_each_child(|c| c.visit(f));
    }

    /// Rebuilds the tree bottom-up through `f`, which sees each node after
    /// its children have been rebuilt.
    pub fn map_bottom_up(&self, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
        let rebuilt = match self {
            Expr::Const(_) | Expr::Scalar(_) | Expr::Read(_) => self.clone(),
            Expr::Pow(b, k) => Expr::Pow(Box::new(b.map_bottom_up(f)), *k),
            Expr::Mul(xs) => Expr::Mul(xs.iter().map(|x| x.map_bottom_up(f)).collect()),
            Expr::Add(xs) => Expr::Add(xs.iter().map(|x| x.map_bottom_up(f)).collect()),
            Expr::Min(a, b) => Expr::min(a.map_bottom_up(f), b.map_bottom_up(f)),
            Expr::Max(a, b) => Expr::max(a.map_bottom_up(f), b.map_bottom_up(f)),
            Expr::Select {
                cond,
                then,
                otherwise,
            } => Expr::Select {
                cond: Box::new(Comparison {
                    lhs: cond.lhs.map_bottom_up(f),
                    rel: cond.rel,
                    rhs: cond.rhs.map_bottom_up(f),
                }),
                then: Box::new(then.map_bottom_up(f)),
                otherwise: Box::new(otherwise.map_bottom_up(f)),
            },
            Expr::Call(c) => Expr::Call(OpaqueCall {
                function: c.function.clone(),
                args: map_args(&c.args, f),
            }),
            Expr::Deriv(d) => Expr::Deriv(OpaqueDeriv {
                function: d.function.clone(),
                wrt: d.wrt.clone(),
                args: map_args(&d.args, f),
            }),
        };
        f(rebuilt)
    }

    /// All array reads in pre-order.
    pub fn reads(&self) -> Vec<&ArrayRead> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Read(r) = e {
                out.push(r);
            }
        });
        out
    }

    pub fn reads_array(&self, pred: impl Fn(&str) -> bool) -> bool {
        self.reads().iter().any(|r| pred(&r.array))
    }

    pub fn contains_min_max(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Min(..) | Expr::Max(..)));
        found
    }

    pub fn contains_opaque(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Call(_) | Expr::Deriv(_)));
        found
    }

    /// Evaluates the expression with reads and scalars supplied by `ctx`.
    pub fn eval(&self, ctx: &dyn EvalContext) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => c.into_inner(),
            Expr::Scalar(s) => ctx.scalar(s)?,
            Expr::Read(r) => ctx.read(r)?,
            Expr::Pow(b, k) => b.eval(ctx)?.powi(*k),
            Expr::Mul(xs) => xs
                .iter()
                .try_fold(1.0, |acc, x| Ok::<_, Error>(acc * x.eval(ctx)?))?,
            Expr::Add(xs) => xs
                .iter()
                .try_fold(0.0, |acc, x| Ok::<_, Error>(acc + x.eval(ctx)?))?,
            Expr::Min(a, b) => a.eval(ctx)?.min(b.eval(ctx)?),
            Expr::Max(a, b) => a.eval(ctx)?.max(b.eval(ctx)?),
            Expr::Select {
                cond,
                then,
                otherwise,
            } => {
                if cond.rel.holds(cond.lhs.eval(ctx)?, cond.rhs.eval(ctx)?) {
                    then.eval(ctx)?
                } else {
                    otherwise.eval(ctx)?
                }
            }
            Expr::Call(c) => return Err(Error::OpaqueNotInterpretable(c.function.clone())),
            Expr::Deriv(d) => return Err(Error::OpaqueNotInterpretable(d.routine_name())),
        })
    }
}

fn map_args(
    args: &BTreeMap<String, Expr>,
    f: &mut impl FnMut(Expr) -> Expr,
) -> BTreeMap<String, Expr> {
    args.iter()
        .map(|(k, v)| (k.clone(), v.map_bottom_up(f)))
        .collect()
}

/// Source of leaf values for [`Expr::eval`].
pub trait EvalContext {
    fn read(&self, r: &ArrayRead) -> Result<f64>;
    fn scalar(&self, name: &str) -> Result<f64>;
}

/// Returns `e` with every index `(c, p)` replaced by `(c, p + shift[c])`.
pub fn substitute_counters(e: &Expr, counters: &[Counter], shift: &OffsetVector) -> Result<Expr> {
    let position: BTreeMap<&Counter, usize> =
        counters.iter().enumerate().map(|(k, c)| (c, k)).collect();
    let mut unknown = None;
    let out = e.map_bottom_up(&mut |node| match node {
        Expr::Read(mut r) => {
            for idx in &mut r.indices {
                match position.get(&idx.counter) {
                    Some(&k) => idx.offset += shift.0[k],
                    None => unknown = Some(idx.counter.clone()),
                }
            }
            Expr::Read(r)
        }
        other => other,
    });
    match unknown {
        Some(c) => Err(Error::UnknownCounter(c.0)),
        None => Ok(out),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "=")]
    Assign,
    #[serde(rename = "+=")]
    Increment,
}

impl Mode {
    pub fn symbol(self) -> &'static str {
        match self {
            Mode::Assign => "=",
            Mode::Increment => "+=",
        }
    }
}

/// Array element addressed by bare counters.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LhsRef {
    pub array: String,
    pub counters: Vec<Counter>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Statement {
    pub lhs: LhsRef,
    pub mode: Mode,
    pub rhs: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bounds {
    pub lower: AffineExpr,
    pub upper: AffineExpr,
}

impl Bounds {
    pub fn new(lower: AffineExpr, upper: AffineExpr) -> Self {
        Bounds { lower, upper }
    }

    /// Lower and upper coincide symbolically.
    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }

    pub fn shifted(&self, delta: i64) -> Bounds {
        Bounds::new(self.lower.offset(delta), self.upper.offset(delta))
    }
}

/// Perfect loop nest: all statements live in the innermost loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StencilLoopNest {
    pub counters: Vec<Counter>,
    pub bounds: Vec<Bounds>,
    pub body: Vec<Statement>,
}

impl StencilLoopNest {
    pub fn depth(&self) -> usize {
        self.counters.len()
    }

    pub fn counter_position(&self, c: &Counter) -> Option<usize> {
        self.counters.iter().position(|x| x == c)
    }
}

/// Active arrays and the names of their adjoint counterparts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActivitySpec {
    pub active: BTreeMap<String, String>,
}

impl ActivitySpec {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        ActivitySpec {
            active: pairs
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect(),
        }
    }

    pub fn is_active(&self, array: &str) -> bool {
        self.active.contains_key(array)
    }

    pub fn adjoint(&self, array: &str) -> Option<&str> {
        self.active.get(array).map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayRole {
    Input,
    Output,
    Coefficient,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    pub rank: usize,
    /// Extent per dimension; arrays are stored row-major.
    pub shape: Vec<AffineExpr>,
    pub role: ArrayRole,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionDecl {
    pub name: String,
    pub params: Vec<String>,
}

/// Symbols, arrays and opaque functions a problem may reference.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Declarations {
    pub sizes: Vec<String>,
    pub scalars: Vec<String>,
    pub arrays: Vec<ArrayDecl>,
    pub functions: Vec<FunctionDecl>,
}

impl Declarations {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// A validated stencil together with its activity and declarations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Problem {
    pub name: String,
    pub nest: StencilLoopNest,
    pub activity: ActivitySpec,
    pub decls: Declarations,
}

impl Problem {
    pub fn statement(&self) -> &Statement {
        &self.nest.body[0]
    }

    pub fn output_array(&self) -> &str {
        &self.statement().lhs.array
    }

    /// Adjoint of the output array (the seed).
    pub fn seed_array(&self) -> &str {
        self.activity
            .adjoint(self.output_array())
            .expect("validated problem has an active output")
    }

    /// Active arrays read by the statement, in declaration order.
    pub fn active_inputs(&self) -> Vec<&str> {
        let read: BTreeSet<&str> = self
            .statement()
            .rhs
            .reads()
            .into_iter()
            .map(|r| r.array.as_str())
            .collect();
        self.decls
            .arrays
            .iter()
            .map(|a| a.name.as_str())
            .filter(|a| read.contains(a) && self.activity.is_active(a))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiagnosticCode {
    Syntax,
    ReadWriteOverlap,
    LhsNotCounterPermutation,
    NonConstantOffset,
    RepeatedCounter,
    NonAffineBound,
    RankMismatch,
    InactiveOutput,
    UnknownSymbol,
    SymbolRoleConflict,
    UnsupportedDivision,
    IncompleteActiveIndex,
    InconsistentIndexOrder,
    StatementCount,
    UndeclaredFunction,
    ActivityConflict,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::Syntax => "syntax",
            DiagnosticCode::ReadWriteOverlap => "read/write overlap",
            DiagnosticCode::LhsNotCounterPermutation => "lhs not a counter permutation",
            DiagnosticCode::NonConstantOffset => "non-constant offset",
            DiagnosticCode::RepeatedCounter => "repeated counter",
            DiagnosticCode::NonAffineBound => "non-affine bound",
            DiagnosticCode::RankMismatch => "rank mismatch",
            DiagnosticCode::InactiveOutput => "inactive output",
            DiagnosticCode::UnknownSymbol => "unknown symbol",
            DiagnosticCode::SymbolRoleConflict => "symbol role conflict",
            DiagnosticCode::UnsupportedDivision => "unsupported division",
            DiagnosticCode::IncompleteActiveIndex => "incomplete active index",
            DiagnosticCode::InconsistentIndexOrder => "inconsistent index order",
            DiagnosticCode::StatementCount => "statement count",
            DiagnosticCode::UndeclaredFunction => "undeclared function",
            DiagnosticCode::ActivityConflict => "activity conflict",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub message: String,
    /// The offending construct or the input field it came from.
    pub context: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} [{}]", self.code, self.message, self.context)
    }
}

/// Ordered diagnostics; empty iff the problem is accepted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.is_empty()
    }

    pub fn push(
        &mut self,
        code: DiagnosticCode,
        message: impl Into<String>,
        context: impl Into<String>,
    ) {
        self.diagnostics.push(Diagnostic {
            code,
            message: message.into(),
            context: context.into(),
        });
    }

    pub fn has(&self, code: DiagnosticCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.diagnostics.extend(other.diagnostics);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.diagnostics {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Checks every input restriction the adjoint transformation relies on.
pub fn validate(
    nest: &StencilLoopNest,
    activity: &ActivitySpec,
    decls: &Declarations,
) -> ValidationReport {
    use DiagnosticCode as D;
    let mut report = ValidationReport::default();

    let sizes: BTreeSet<&str> = decls.sizes.iter().map(String::as_str).collect();
    let scalars: BTreeSet<&str> = decls.scalars.iter().map(String::as_str).collect();
    for s in sizes.intersection(&scalars) {
        report.push(
            D::SymbolRoleConflict,
            format!("`{s}` declared as both size and scalar"),
            *s,
        );
    }
    let mut names = BTreeSet::new();
    for c in &nest.counters {
        if !names.insert(c.name()) {
            report.push(
                D::RepeatedCounter,
                format!("counter `{c}` declared twice"),
                c.name(),
            );
        }
        if sizes.contains(c.name()) || scalars.contains(c.name()) || decls.array(c.name()).is_some()
        {
            report.push(
                D::SymbolRoleConflict,
                format!("counter `{c}` clashes with a declared symbol"),
                c.name(),
            );
        }
    }

    if nest.bounds.len() != nest.counters.len() {
        report.push(
            D::Syntax,
            "bounds count differs from counter count",
            "bounds",
        );
    }
    for (c, b) in nest.counters.iter().zip(&nest.bounds) {
        for s in b.lower.symbols().chain(b.upper.symbols()) {
            if !sizes.contains(s) {
                let code = if scalars.contains(s) {
                    D::SymbolRoleConflict
                } else {
                    D::UnknownSymbol
                };
                report.push(
                    code,
                    format!("bound uses `{s}`, which is not a size symbol"),
                    c.name(),
                );
            }
        }
    }

    let mut adjoint_names = BTreeSet::new();
    for (primal, adj) in &activity.active {
        match decls.array(primal) {
            None => report.push(
                D::UnknownSymbol,
                format!("active array `{primal}` is not declared"),
                primal,
            ),
            Some(a) if a.role == ArrayRole::Coefficient => report.push(
                D::ActivityConflict,
                format!("coefficient array `{primal}` cannot be active"),
                primal,
            ),
            _ => {}
        }
        if decls.array(adj).is_some() || !adjoint_names.insert(adj.as_str()) {
            report.push(
                D::ActivityConflict,
                format!("adjoint name `{adj}` collides with another array"),
                adj,
            );
        }
    }
    for a in &decls.arrays {
        if a.shape.len() != a.rank {
            report.push(
                D::RankMismatch,
                format!(
                    "array `{}` has {} extents for rank {}",
                    a.name,
                    a.shape.len(),
                    a.rank
                ),
                &a.name,
            );
        }
    }

    if nest.body.len() != 1 {
        report.push(
            D::StatementCount,
            format!("expected exactly one statement, found {}", nest.body.len()),
            "body",
        );
    }
    let Some(stmt) = nest.body.first() else {
        return report;
    };

    let lhs = &stmt.lhs;
    match decls.array(&lhs.array) {
        None => report.push(
            D::UnknownSymbol,
            format!("array `{}` is not declared", lhs.array),
            &lhs.array,
        ),
        Some(a) => {
            if a.role != ArrayRole::Output {
                report.push(
                    D::ReadWriteOverlap,
                    format!("`{}` is written but not declared as output", a.name),
                    &a.name,
                );
            }
            if a.rank != lhs.counters.len() {
                report.push(
                    D::RankMismatch,
                    format!(
                        "`{}` has rank {} but is written with {} indices",
                        a.name,
                        a.rank,
                        lhs.counters.len()
                    ),
                    &a.name,
                );
            }
        }
    }
    let lhs_set: BTreeSet<&Counter> = lhs.counters.iter().collect();
    if lhs_set.len() != lhs.counters.len()
        || lhs.counters.len() != nest.counters.len()
        || lhs.counters.iter().any(|c| !nest.counters.contains(c))
    {
        report.push(
            D::LhsNotCounterPermutation,
            "output must be indexed by a permutation of all loop counters",
            &lhs.array,
        );
    }
    if !activity.is_active(&lhs.array) {
        report.push(
            D::InactiveOutput,
            format!("output array `{}` is not active", lhs.array),
            &lhs.array,
        );
    }
    for a in &decls.arrays {
        if a.role == ArrayRole::Output && a.name != lhs.array {
            report.push(
                D::ReadWriteOverlap,
                format!("second output array `{}`", a.name),
                &a.name,
            );
        }
    }

    let mut layouts: BTreeMap<&str, Vec<&Counter>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    stmt.rhs.visit(&mut |e| match e {
        Expr::Read(r) => {
            let ctx = r.array.as_str();
            let Some(decl) = decls.array(&r.array) else {
                if seen.insert(("array", r.array.clone())) {
                    report.push(
                        D::UnknownSymbol,
                        format!("array `{}` is not declared", r.array),
                        ctx,
                    );
                }
                return;
            };
            if (r.array == lhs.array || decl.role == ArrayRole::Output)
                && seen.insert(("overlap", r.array.clone()))
            {
                report.push(
                    D::ReadWriteOverlap,
                    format!("output array `{}` is also read", r.array),
                    ctx,
                );
            }
            if decl.rank != r.indices.len() {
                report.push(
                    D::RankMismatch,
                    format!(
                        "`{}` has rank {} but is read with {} indices",
                        r.array,
                        decl.rank,
                        r.indices.len()
                    ),
                    ctx,
                );
            }
            let mut used = BTreeSet::new();
            for idx in &r.indices {
                if !nest.counters.contains(&idx.counter) {
                    report.push(
                        D::UnknownSymbol,
                        format!("unknown counter `{}`", idx.counter),
                        ctx,
                    );
                }
                if !used.insert(&idx.counter) {
                    report.push(
                        D::RepeatedCounter,
                        format!(
                            "counter `{}` repeated in read of `{}`",
                            idx.counter, r.array
                        ),
                        ctx,
                    );
                }
            }
            if activity.is_active(&r.array) {
                if used.len() != nest.counters.len() {
                    report.push(
                        D::IncompleteActiveIndex,
                        format!(
                            "active array `{}` must be indexed by every loop counter",
                            r.array
                        ),
                        ctx,
                    );
                }
                let order: Vec<&Counter> = r.indices.iter().map(|i| &i.counter).collect();
                match layouts.get(r.array.as_str()) {
                    Some(prev) if *prev != order => {
                        if seen.insert(("layout", r.array.clone())) {
                            report.push(
                                D::InconsistentIndexOrder,
                                format!(
                                    "active array `{}` is read with differing counter orders",
                                    r.array
                                ),
                                ctx,
                            );
                        }
                    }
                    Some(_) => {}
                    None => {
                        layouts.insert(r.array.as_str(), order);
                    }
                }
            }
        }
        Expr::Scalar(s) => {
            if !scalars.contains(s.as_str()) {
                let code = if sizes.contains(s.as_str()) {
                    D::SymbolRoleConflict
                } else {
                    D::UnknownSymbol
                };
                if seen.insert(("scalar", s.clone())) {
                    report.push(
                        code,
                        format!("`{s}` is not a coefficient scalar"),
                        s.as_str(),
                    );
                }
            }
        }
        Expr::Pow(b, k) if *k < 0 => {
            if b.reads_array(|a| activity.is_active(a)) {
                report.push(
                    D::UnsupportedDivision,
                    "division by an active expression",
                    "pow",
                );
            }
        }
        Expr::Call(OpaqueCall { function, args })
        | Expr::Deriv(OpaqueDeriv { function, args, .. }) => match decls.function(function) {
            None => report.push(
                D::UndeclaredFunction,
                format!("function `{function}` is not declared"),
                function.as_str(),
            ),
            Some(fd) => {
                let declared: BTreeSet<&str> = fd.params.iter().map(String::as_str).collect();
                let given: BTreeSet<&str> = args.keys().map(String::as_str).collect();
                if declared != given {
                    report.push(
                        D::UndeclaredFunction,
                        format!("call to `{function}` does not match its declared parameters"),
                        function.as_str(),
                    );
                }
            }
        },
        _ => {}
    });
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(c: &str, o: i64) -> IndexExpr {
        IndexExpr::new(c, o)
    }

    fn n_minus(k: i64) -> AffineExpr {
        AffineExpr::symbol("n").offset(-k)
    }

    #[test]
    fn eval_affine_examples() {
        let b: BTreeMap<String, i64> = [("n".to_string(), 1000)].into();
        assert_eq!(eval_affine(&n_minus(2), &b).unwrap(), 998);
        assert_eq!(
            eval_affine(&AffineExpr::constant(1), &BTreeMap::new()).unwrap(),
            1
        );
        let b5: BTreeMap<String, i64> = [("n".to_string(), 5)].into();
        assert_eq!(eval_affine(&n_minus(3), &b5).unwrap(), 2);
    }

    #[test]
    fn eval_affine_unbound() {
        assert!(matches!(
            eval_affine(&n_minus(1), &BTreeMap::new()),
            Err(Error::UnboundSymbol(s)) if s == "n"
        ));
    }

    #[test]
    fn affine_normalizes_zero_coefficients() {
        let a = AffineExpr::symbol("n")
            .plus(&AffineExpr::term("n", -1))
            .offset(3);
        assert_eq!(a, AffineExpr::constant(3));
        assert_eq!(n_minus(2).to_string(), "n - 2");
        assert_eq!(AffineExpr::constant(-4).to_string(), "-4");
        assert_eq!(AffineExpr::term("n", 2).offset(1).to_string(), "2*n + 1");
    }

    #[test]
    fn affine_from_expr_rejects_products_of_symbols() {
        let nn = Expr::Mul(vec![Expr::scalar("n"), Expr::scalar("n")]);
        assert!(AffineExpr::from_expr(&nn).is_none());
        let two_n = Expr::Mul(vec![Expr::c(2.0), Expr::scalar("n")]);
        assert_eq!(
            AffineExpr::from_expr(&two_n),
            Some(AffineExpr::term("n", 2))
        );
    }

    #[test]
    fn substitute_shifts_reads() {
        let e = Expr::Mul(vec![
            Expr::c(2.0),
            Expr::read("c", vec![idx("i", 0)]),
            Expr::read("rb", vec![idx("i", 0)]),
        ]);
        let shifted = substitute_counters(&e, &["i".into()], &OffsetVector(vec![1])).unwrap();
        assert_eq!(
            shifted,
            Expr::Mul(vec![
                Expr::c(2.0),
                Expr::read("c", vec![idx("i", 1)]),
                Expr::read("rb", vec![idx("i", 1)]),
            ])
        );
        let same = substitute_counters(&e, &["i".into()], &OffsetVector(vec![0])).unwrap();
        assert_eq!(same, e);
    }

    #[test]
    fn substitute_shifts_opaque_arguments() {
        let args: BTreeMap<String, Expr> = [
            (
                "a".to_string(),
                Expr::read("u", vec![idx("i", -1), idx("j", 0)]),
            ),
            (
                "b".to_string(),
                Expr::read("u", vec![idx("i", 0), idx("j", -1)]),
            ),
        ]
        .into();
        let e = Expr::Deriv(OpaqueDeriv {
            function: "f".into(),
            wrt: "a".into(),
            args,
        });
        let out =
            substitute_counters(&e, &["i".into(), "j".into()], &OffsetVector(vec![1, 0])).unwrap();
        let Expr::Deriv(d) = out else { panic!() };
        assert_eq!(d.args["a"], Expr::read("u", vec![idx("i", 0), idx("j", 0)]));
        assert_eq!(
            d.args["b"],
            Expr::read("u", vec![idx("i", 1), idx("j", -1)])
        );
    }

    #[test]
    fn substitute_unknown_counter() {
        let e = Expr::read("u", vec![idx("q", 0)]);
        assert!(matches!(
            substitute_counters(&e, &["i".into()], &OffsetVector(vec![1])),
            Err(Error::UnknownCounter(c)) if c == "q"
        ));
    }

    fn lap_problem(rhs: Expr, upper: AffineExpr) -> (StencilLoopNest, ActivitySpec, Declarations) {
        let arr = |name: &str, role| ArrayDecl {
            name: name.into(),
            rank: 1,
            shape: vec![AffineExpr::symbol("n").offset(1)],
            role,
        };
        let nest = StencilLoopNest {
            counters: vec!["i".into()],
            bounds: vec![Bounds::new(AffineExpr::constant(1), upper)],
            body: vec![Statement {
                lhs: LhsRef {
                    array: "r".into(),
                    counters: vec!["i".into()],
                },
                mode: Mode::Assign,
                rhs,
            }],
        };
        let decls = Declarations {
            sizes: vec!["n".into()],
            scalars: vec![],
            arrays: vec![
                arr("u", ArrayRole::Input),
                arr("c", ArrayRole::Coefficient),
                arr("r", ArrayRole::Output),
            ],
            functions: vec![],
        };
        (nest, ActivitySpec::new([("u", "ub"), ("r", "rb")]), decls)
    }

    #[test]
    fn validate_reports_overlap() {
        let rhs = Expr::read("r", vec![idx("i", 1)]);
        let (nest, act, decls) = lap_problem(rhs, n_minus(1));
        let report = validate(&nest, &act, &decls);
        assert!(report.has(DiagnosticCode::ReadWriteOverlap), "{report}");
    }

    #[test]
    fn validate_reports_unknown_bound_symbol() {
        let rhs = Expr::read("u", vec![idx("i", 1)]);
        let (nest, act, decls) = lap_problem(rhs, AffineExpr::symbol("m"));
        assert!(validate(&nest, &act, &decls).has(DiagnosticCode::UnknownSymbol));
    }

    #[test]
    fn validate_reports_inactive_output_and_rank() {
        let rhs = Expr::read("u", vec![idx("i", 1), idx("i", 0)]);
        let (nest, _, decls) = lap_problem(rhs, n_minus(1));
        let report = validate(&nest, &ActivitySpec::new([("u", "ub")]), &decls);
        assert!(report.has(DiagnosticCode::InactiveOutput));
        assert!(report.has(DiagnosticCode::RankMismatch));
        assert!(report.has(DiagnosticCode::RepeatedCounter));
    }

    #[test]
    fn validate_rejects_active_division() {
        let rhs = Expr::pow(Expr::read("u", vec![idx("i", 0)]), -1);
        let (nest, act, decls) = lap_problem(rhs, n_minus(1));
        assert!(validate(&nest, &act, &decls).has(DiagnosticCode::UnsupportedDivision));
    }

    #[test]
    fn validate_accepts_lap1d() {
        let rhs = Expr::Mul(vec![
            Expr::read("c", vec![idx("i", 0)]),
            Expr::read("u", vec![idx("i", 1)]),
        ]);
        let (nest, act, decls) = lap_problem(rhs, n_minus(1));
        let report = validate(&nest, &act, &decls);
        assert!(report.is_ok(), "{report}");
    }
}
