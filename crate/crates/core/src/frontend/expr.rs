//! Tokenizer and precedence-climbing parser for the infix expression
//! language.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | '(' expr ')' | ident
//!          | ident ('[' index ']')+
//!          | ident '(' args ')'
//! index   := counter | counter ('+' | '-') integer
//! ```
//!
//! `min`, `max` and `pow` are builtins; any other call must name a declared
//! opaque function, with arguments either named (`f(a=..., b=...)`) or in
//! declaration order.

use std::collections::BTreeMap;

use crate::ir::{
    AffineExpr, Counter, Declarations, Diagnostic, DiagnosticCode, Expr, IndexExpr, LhsRef,
    OpaqueCall,
};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, (usize, String)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch.is_ascii_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit()
            || (ch == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
        {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let v = lit
                .parse::<f64>()
                .map_err(|_| (start, format!("malformed number `{lit}`")))?;
            out.push(Token {
                tok: Tok::Num(v),
                pos: start,
            });
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/()[],=".contains(ch) {
            out.push(Token {
                tok: Tok::Sym(ch),
                pos: i,
            });
            i += 1;
        } else {
            return Err((i, format!("unexpected character `{ch}`")));
        }
    }
    out.push(Token {
        tok: Tok::End,
        pos: text.len(),
    });
    Ok(out)
}

/// What identifiers may refer to while parsing.
pub struct Scope<'a> {
    pub counters: &'a [Counter],
    pub decls: &'a Declarations,
}

struct Parser<'a> {
    toks: Vec<Token>,
    at: usize,
    scope: &'a Scope<'a>,
    field: &'a str,
    /// Counters are legal only while parsing an index.
    in_index: bool,
}

type PResult<T> = Result<T, Diagnostic>;

impl<'a> Parser<'a> {
    fn new(text: &str, scope: &'a Scope<'a>, field: &'a str) -> PResult<Self> {
        let toks = tokenize(text).map_err(|(pos, msg)| Diagnostic {
            code: DiagnosticCode::Syntax,
            message: msg,
            context: format!("{field}, column {}", pos + 1),
        })?;
        Ok(Parser {
            toks,
            at: 0,
            scope,
            field,
            in_index: false,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].tok.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn diag(&self, code: DiagnosticCode, pos: usize, msg: impl Into<String>) -> Diagnostic {
        Diagnostic {
            code,
            message: msg.into(),
            context: format!("{}, column {}", self.field, pos + 1),
        }
    }

    fn expect(&mut self, c: char) -> PResult<()> {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.diag(
                DiagnosticCode::Syntax,
                self.pos(),
                format!("expected `{c}`, found {}", describe(self.peek())),
            ))
        }
    }

    fn finish(&mut self) -> PResult<()> {
        if *self.peek() == Tok::End {
            Ok(())
        } else {
            Err(self.diag(
                DiagnosticCode::Syntax,
                self.pos(),
                format!("unexpected {}", describe(self.peek())),
            ))
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Tok::Sym('+') => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Sym('-') => {
                    self.bump();
                    terms.push(Expr::negated(self.term()?));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::Add(terms)
        })
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek() {
                Tok::Sym('*') => {
                    self.bump();
                    factors.push(self.unary()?);
                }
                Tok::Sym('/') => {
                    let pos = self.pos();
                    self.bump();
                    let denom = crate::simplify::simplify(&self.unary()?);
                    match denom {
                        Expr::Const(_) | Expr::Scalar(_) => factors.push(Expr::pow(denom, -1)),
                        _ => {
                            return Err(self.diag(
                                DiagnosticCode::UnsupportedDivision,
                                pos,
                                "only constants and scalar symbols may appear as divisors",
                            ))
                        }
                    }
                }
                _ => break,
            }
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Expr::Mul(factors)
        })
    }

    fn unary(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Sym('-') {
            self.bump();
            return Ok(match self.unary()? {
                Expr::Const(c) => Expr::c(-c.into_inner()),
                e => Expr::negated(e),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::c(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => match self.peek() {
                Tok::Sym('[') => self.array_read(name),
                Tok::Sym('(') => self.call(name, pos),
                _ => {
                    if !self.in_index && self.scope.counters.iter().any(|c| c.0 == name) {
                        return Err(self.diag(
                            DiagnosticCode::Syntax,
                            pos,
                            format!("counter `{name}` may only appear inside an index"),
                        ));
                    }
                    Ok(Expr::Scalar(name))
                }
            },
            t => Err(self.diag(
                DiagnosticCode::Syntax,
                pos,
                format!("unexpected {}", describe(&t)),
            )),
        }
    }

    fn array_read(&mut self, name: String) -> PResult<Expr> {
        let mut indices = Vec::new();
        while *self.peek() == Tok::Sym('[') {
            self.bump();
            let pos = self.pos();
            let outer = std::mem::replace(&mut self.in_index, true);
            let idx = self.expr();
            self.in_index = outer;
            let idx = idx?;
            self.expect(']')?;
            indices.push(self.index(&idx, pos)?);
        }
        Ok(Expr::read(name, indices))
    }

    fn index(&self, idx: &Expr, pos: usize) -> PResult<IndexExpr> {
        let bad = || {
            self.diag(
                DiagnosticCode::NonConstantOffset,
                pos,
                "index must be a loop counter plus a constant integer",
            )
        };
        let aff = AffineExpr::from_expr(idx).ok_or_else(bad)?;
        let mut syms = aff.coefficients().iter();
        match (syms.next(), syms.next()) {
            (Some((c, 1)), None) => {
                if !self.scope.counters.iter().any(|k| k.0 == *c) {
                    return Err(self.diag(
                        DiagnosticCode::UnknownSymbol,
                        pos,
                        format!("`{c}` is not a loop counter"),
                    ));
                }
                Ok(IndexExpr::new(c.clone(), aff.constant_term()))
            }
            _ => Err(bad()),
        }
    }

    fn call(&mut self, name: String, pos: usize) -> PResult<Expr> {
        self.expect('(')?;
        let mut positional = Vec::new();
        let mut named = BTreeMap::new();
        if *self.peek() != Tok::Sym(')') {
            loop {
                let is_named = matches!(self.peek(), Tok::Ident(_))
                    && self.toks.get(self.at + 1).map(|t| &t.tok) == Some(&Tok::Sym('='));
                if is_named {
                    let Tok::Ident(arg) = self.bump() else {
                        unreachable!()
                    };
                    self.bump();
                    named.insert(arg, self.expr()?);
                } else {
                    positional.push(self.expr()?);
                }
                if *self.peek() == Tok::Sym(',') {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(')')?;
        let arity = |n: usize, args: &mut Vec<Expr>| -> PResult<()> {
            if args.len() == n && named.is_empty() {
                Ok(())
            } else {
                Err(self.diag(
                    DiagnosticCode::Syntax,
                    pos,
                    format!("`{name}` takes {n} positional arguments"),
                ))
            }
        };
        match name.as_str() {
            "min" | "max" => {
                arity(2, &mut positional)?;
                let b = positional.pop().unwrap();
                let a = positional.pop().unwrap();
                Ok(if name == "min" {
                    Expr::min(a, b)
                } else {
                    Expr::max(a, b)
                })
            }
            "pow" => {
                arity(2, &mut positional)?;
                let k = crate::simplify::simplify(&positional[1]);
                match k.as_const() {
                    Some(v) if v.fract() == 0.0 && v.abs() <= f64::from(i32::MAX) => {
                        Ok(Expr::pow(positional.swap_remove(0), v as i32))
                    }
                    _ => Err(self.diag(
                        DiagnosticCode::Syntax,
                        pos,
                        "pow exponent must be an integer literal",
                    )),
                }
            }
            _ => {
                let Some(decl) = self.scope.decls.function(&name) else {
                    return Err(self.diag(
                        DiagnosticCode::UndeclaredFunction,
                        pos,
                        format!("function `{name}` is not declared"),
                    ));
                };
                if !positional.is_empty() {
                    if !named.is_empty() || positional.len() != decl.params.len() {
                        return Err(self.diag(
                            DiagnosticCode::Syntax,
                            pos,
                            format!("`{name}` takes {} arguments", decl.params.len()),
                        ));
                    }
                    named = decl.params.iter().cloned().zip(positional).collect();
                }
                Ok(Expr::Call(OpaqueCall {
                    function: name,
                    args: named,
                }))
            }
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Sym(c) => format!("`{c}`"),
        Tok::End => "end of input".into(),
    }
}

/// Parses an expression. The result is not yet normalized.
pub fn parse_expr(text: &str, scope: &Scope<'_>, field: &str) -> Result<Expr, Diagnostic> {
    let mut p = Parser::new(text, scope, field)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Parses an affine expression over size symbols.
pub fn parse_affine(text: &str, field: &str) -> Result<AffineExpr, Diagnostic> {
    let decls = Declarations::default();
    let scope = Scope {
        counters: &[],
        decls: &decls,
    };
    let e = parse_expr(text, &scope, field)?;
    AffineExpr::from_expr(&e).ok_or_else(|| Diagnostic {
        code: DiagnosticCode::NonAffineBound,
        message: format!("`{text}` is not affine in the size symbols"),
        context: field.to_string(),
    })
}

/// Parses an output reference such as `u[i][j][k]`.
pub fn parse_lhs(text: &str, scope: &Scope<'_>, field: &str) -> Result<LhsRef, Diagnostic> {
    match parse_expr(text, scope, field)? {
        Expr::Read(r) => {
            if r.indices.iter().any(|i| i.offset != 0) {
                return Err(Diagnostic {
                    code: DiagnosticCode::LhsNotCounterPermutation,
                    message: "output indices must be bare loop counters".into(),
                    context: field.to_string(),
                });
            }
            Ok(LhsRef {
                array: r.array,
                counters: r.indices.into_iter().map(|i| i.counter).collect(),
            })
        }
        _ => Err(Diagnostic {
            code: DiagnosticCode::Syntax,
            message: "output must be a single array element".into(),
            context: field.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::FunctionDecl;
    use crate::simplify::simplify;

    fn scope_with<'a>(counters: &'a [Counter], decls: &'a Declarations) -> Scope<'a> {
        Scope { counters, decls }
    }

    fn parse(text: &str) -> Result<Expr, Diagnostic> {
        let counters: Vec<Counter> = vec!["i".into(), "j".into()];
        let decls = Declarations {
            functions: vec![FunctionDecl {
                name: "f".into(),
                params: vec!["a".into(), "b".into()],
            }],
            ..Default::default()
        };
        parse_expr(text, &scope_with(&counters, &decls), "rhs")
    }

    #[test]
    fn precedence_and_associativity() {
        let e = simplify(&parse("a - b - c*d/2").unwrap());
        let expected = simplify(&Expr::Add(vec![
            Expr::scalar("a"),
            Expr::negated(Expr::scalar("b")),
            Expr::Mul(vec![Expr::c(-0.5), Expr::scalar("c"), Expr::scalar("d")]),
        ]));
        assert_eq!(e, expected);
    }

    #[test]
    fn reads_with_offsets() {
        let e = parse("u[i - 1][j+2]").unwrap();
        assert_eq!(
            e,
            Expr::read("u", vec![IndexExpr::new("i", -1), IndexExpr::new("j", 2)])
        );
    }

    #[test]
    fn rejects_scaled_counter() {
        let d = parse("u[i*2]").unwrap_err();
        assert_eq!(d.code, DiagnosticCode::NonConstantOffset);
    }

    #[test]
    fn rejects_division_by_array() {
        let d = parse("1/u[i]").unwrap_err();
        assert_eq!(d.code, DiagnosticCode::UnsupportedDivision);
    }

    #[test]
    fn builtins_and_opaque_calls() {
        assert_eq!(
            parse("max(u[i][j], 0)").unwrap(),
            Expr::max(
                Expr::read("u", vec![IndexExpr::new("i", 0), IndexExpr::new("j", 0)]),
                Expr::c(0.0)
            )
        );
        assert_eq!(
            parse("pow(x, -2)").unwrap(),
            Expr::pow(Expr::scalar("x"), -2)
        );
        let named = parse("f(a=u[i-1][j], b=u[i][j-1])").unwrap();
        let positional = parse("f(u[i-1][j], u[i][j-1])").unwrap();
        assert_eq!(named, positional);
        assert_eq!(
            parse("g(1)").unwrap_err().code,
            DiagnosticCode::UndeclaredFunction
        );
    }

    #[test]
    fn syntax_errors_carry_columns() {
        let d = parse("u[i] + * 2").unwrap_err();
        assert_eq!(d.code, DiagnosticCode::Syntax);
        assert!(d.context.contains("column 8"), "{}", d.context);
        assert!(parse("(a").is_err());
        assert!(parse("a $ b").is_err());
    }

    #[test]
    fn affine_bounds() {
        assert_eq!(
            parse_affine("n-2", "b").unwrap(),
            AffineExpr::symbol("n").offset(-2)
        );
        assert_eq!(
            parse_affine("n*n", "b").unwrap_err().code,
            DiagnosticCode::NonAffineBound
        );
    }
}
