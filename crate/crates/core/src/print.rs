//! Infix rendering of expressions, shared by the description-file printer and the C
//! emitter.

use crate::ir::{ArrayRead, Expr, FunctionDecl};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dialect {
    /// The input expression language (`min`, `max`, `pow`, named-argument
    /// calls).
    Grammar,
    /// C99 with `<math.h>`.
    C,
}

const ADD: u8 = 1;
const MUL: u8 = 2;
const ATOM: u8 = 3;

pub struct Printer<'a> {
    pub dialect: Dialect,
    /// Renders an array element access.
    pub read: &'a dyn Fn(&ArrayRead) -> String,
    pub functions: &'a [FunctionDecl],
}

/// Shortest round-tripping decimal form of `v`, always with a decimal point.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        return "NAN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 {
            "INFINITY".into()
        } else {
            "-INFINITY".into()
        };
    }
    let s = format!("{:?}", v);
    if s.contains('.') {
        s
    } else if let Some(e) = s.find('e') {
        format!("{}.0{}", &s[..e], &s[e..])
    } else {
        format!("{s}.0")
    }
}

/// `name[i - 1][j]` style, as accepted by the expression parser.
pub fn bracket_read(r: &ArrayRead) -> String {
    let mut s = r.array.clone();
    for idx in &r.indices {
        s.push('[');
        s.push_str(&index_text(idx.counter.name(), idx.offset));
        s.push(']');
    }
    s
}

pub fn index_text(base: &str, offset: i64) -> String {
    match offset.cmp(&0) {
        std::cmp::Ordering::Equal => base.to_string(),
        std::cmp::Ordering::Greater => format!("{base} + {offset}"),
        std::cmp::Ordering::Less => format!("{base} - {}", -offset),
    }
}

/// Leading numeric sign of a normal-form term, split off for ` - ` rendering.
fn negated(e: &Expr) -> Option<Expr> {
    match e {
        Expr::Const(c) if c.into_inner() < 0.0 => Some(Expr::c(-c.into_inner())),
        Expr::Mul(fs) => match fs.first().and_then(Expr::as_const) {
            Some(c) if c < 0.0 => {
                let mut rest = fs.clone();
                if c == -1.0 {
                    rest.remove(0);
                } else {
                    rest[0] = Expr::c(-c);
                }
                Some(if rest.len() == 1 {
                    rest.pop().unwrap()
                } else {
                    Expr::Mul(rest)
                })
            }
            _ => None,
        },
        _ => None,
    }
}

impl Printer<'_> {
    pub fn grammar(read: &dyn Fn(&ArrayRead) -> String) -> Printer<'_> {
        Printer {
            dialect: Dialect::Grammar,
            read,
            functions: &[],
        }
    }

    pub fn expr(&self, e: &Expr) -> String {
        self.render(e).0
    }

    fn wrap(&self, e: &Expr, min_prec: u8) -> String {
        let (s, p) = self.render(e);
        if p < min_prec {
            format!("({s})")
        } else {
            s
        }
    }

    fn render(&self, e: &Expr) -> (String, u8) {
        match e {
            Expr::Const(c) => {
                let v = c.into_inner();
                (format_real(v), if v < 0.0 { MUL } else { ATOM })
            }
            Expr::Scalar(s) => (s.clone(), ATOM),
            Expr::Read(r) => ((self.read)(r), ATOM),
            Expr::Pow(b, k) => (format!("pow({}, {k})", self.expr(b)), ATOM),
            Expr::Mul(fs) => {
                if let Some(pos) = negated(e) {
                    return (format!("-{}", self.wrap(&pos, MUL)), MUL);
                }
                let parts: Vec<String> = fs
                    .iter()
                    .enumerate()
                    .map(|(k, f)| self.wrap(f, if k == 0 { MUL } else { ATOM }))
                    .collect();
                (parts.join("*"), MUL)
            }
            Expr::Add(ts) => {
                let mut s = String::new();
                for (k, t) in ts.iter().enumerate() {
                    match negated(t) {
                        Some(pos) => {
                            s.push_str(if k == 0 { "-" } else { " - " });
                            s.push_str(&self.wrap(&pos, MUL));
                        }
                        None => {
                            if k > 0 {
                                s.push_str(" + ");
                            }
                            s.push_str(&self.wrap(t, MUL));
                        }
                    }
                }
                (s, ADD)
            }
            Expr::Min(a, b) | Expr::Max(a, b) => {
                let name = match (e, self.dialect) {
                    (Expr::Min(..), Dialect::Grammar) => "min",
                    (Expr::Max(..), Dialect::Grammar) => "max",
                    (Expr::Min(..), Dialect::C) => "fmin",
                    _ => "fmax",
                };
                (format!("{name}({}, {})", self.expr(a), self.expr(b)), ATOM)
            }
            Expr::Select {
                cond,
                then,
                otherwise,
            } => {
                let rhs = if cond.rhs.is_zero() {
                    "0".to_string()
                } else {
                    self.wrap(&cond.rhs, MUL)
                };
                (
                    format!(
                        "(({}{}{})?{}:{})",
                        self.wrap(&cond.lhs, MUL),
                        cond.rel.symbol(),
                        rhs,
                        self.wrap(then, ATOM),
                        self.wrap(otherwise, ATOM)
                    ),
                    ATOM,
                )
            }
            Expr::Call(c) => {
                let text = match self.dialect {
                    Dialect::Grammar => format!("{}({})", c.function, self.named_args(&c.args)),
                    Dialect::C => format!(
                        "{}({})",
                        c.function,
                        self.positional_args(&c.function, &c.args)
                    ),
                };
                (text, ATOM)
            }
            Expr::Deriv(d) => {
                let text = match self.dialect {
                    Dialect::Grammar => format!(
                        "derivative({}, {})({})",
                        d.function,
                        d.wrt,
                        self.named_args(&d.args)
                    ),
                    Dialect::C => format!(
                        "{}({})",
                        d.routine_name(),
                        self.positional_args(&d.function, &d.args)
                    ),
                };
                (text, ATOM)
            }
        }
    }

    fn named_args(&self, args: &std::collections::BTreeMap<String, Expr>) -> String {
        args.iter()
            .map(|(k, v)| format!("{k}={}", self.expr(v)))
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn positional_args(
        &self,
        function: &str,
        args: &std::collections::BTreeMap<String, Expr>,
    ) -> String {
        let order: Vec<&str> = match self.functions.iter().find(|f| f.name == function) {
            Some(f) => f.params.iter().map(String::as_str).collect(),
            None => args.keys().map(String::as_str).collect(),
        };
        order
            .iter()
            .filter_map(|p| args.get(*p))
            .map(|v| self.expr(v))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Renders `e` in the input expression language.
pub fn to_grammar(e: &Expr) -> String {
    Printer::grammar(&bracket_read).expr(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::IndexExpr;

    #[test]
    fn reals_keep_a_decimal_point() {
        assert_eq!(format_real(2.0), "2.0");
        assert_eq!(format_real(-6.0), "-6.0");
        assert_eq!(format_real(0.1), "0.1");
        assert_eq!(format_real(1e-20), "1.0e-20");
        assert_eq!(format_real(1.5e300), "1.5e300");
        for v in [0.1, 1.0 / 3.0, 1e-20, 123456789.125, -2.5e-7] {
            assert_eq!(format_real(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn signs_render_as_subtraction() {
        let u = |o| Expr::read("u", vec![IndexExpr::new("i", o)]);
        let e = Expr::Add(vec![
            Expr::Mul(vec![Expr::c(-6.0), Expr::scalar("D")]),
            Expr::Mul(vec![Expr::c(-1.0), u(1)]),
            Expr::c(2.0),
        ]);
        assert_eq!(to_grammar(&e), "-6.0*D - u[i + 1] + 2.0");
        let m = Expr::Mul(vec![Expr::c(-1.0), Expr::Add(vec![u(0), u(-1)])]);
        assert_eq!(to_grammar(&m), "-(u[i] + u[i - 1])");
    }
}
