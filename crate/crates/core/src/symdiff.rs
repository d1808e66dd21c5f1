//! Partial derivatives of a loop body with respect to its active reads.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ir::{
    ActivitySpec, ArrayRead, Counter, Expr, IndexExpr, OffsetVector, OpaqueDeriv, Relation,
};
use crate::simplify::{make_add, make_mul, simplify};

/// One distinct read of an active array, identified by its offset vector.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActiveRead {
    pub array: String,
    pub offset: OffsetVector,
    /// The read as written, in the array's own dimension order.
    pub indices: Vec<IndexExpr>,
}

impl ActiveRead {
    pub fn from_read(r: &ArrayRead, counters: &[Counter]) -> ActiveRead {
        let mut offset = OffsetVector::zeros(counters.len());
        for idx in &r.indices {
            if let Some(k) = counters.iter().position(|c| *c == idx.counter) {
                offset.0[k] = idx.offset;
            }
        }
        ActiveRead {
            array: r.array.clone(),
            offset,
            indices: r.indices.clone(),
        }
    }

    fn matches(&self, r: &ArrayRead) -> bool {
        r.array == self.array && r.indices == self.indices
    }

    pub fn as_expr(&self) -> Expr {
        Expr::read(self.array.clone(), self.indices.clone())
    }
}

/// Distinct active reads of `rhs`, sorted by array name then offset vector.
pub fn active_reads(rhs: &Expr, activity: &ActivitySpec, counters: &[Counter]) -> Vec<ActiveRead> {
    let mut out: Vec<ActiveRead> = rhs
        .reads()
        .into_iter()
        .filter(|r| activity.is_active(&r.array))
        .map(|r| ActiveRead::from_read(r, counters))
        .collect();
    out.sort();
    out.dedup();
    out
}

/// `d rhs / d target`, summed over every occurrence of the target read, in
/// normal form.
///
/// Max and min credit exactly one branch at ties: `max(a, b)` differentiates
/// as `a >= b ? a' : b'` and `min(a, b)` as `b >= a ? a' : b'`. Select
/// conditions are treated as locally constant.
pub fn differentiate(rhs: &Expr, target: &ActiveRead) -> Result<Expr> {
    Ok(simplify(&derive(rhs, target)?))
}

fn depends_on(e: &Expr, target: &ActiveRead) -> bool {
    e.reads().into_iter().any(|r| target.matches(r))
}

fn derive(e: &Expr, t: &ActiveRead) -> Result<Expr> {
    if !depends_on(e, t) {
        return Ok(Expr::c(0.0));
    }
    Ok(match e {
        Expr::Const(_) | Expr::Scalar(_) => Expr::c(0.0),
        Expr::Read(r) => Expr::c(if t.matches(r) { 1.0 } else { 0.0 }),
        Expr::Add(xs) => make_add(xs.iter().map(|x| derive(x, t)).collect::<Result<_>>()?),
        Expr::Mul(xs) => {
            let mut terms = Vec::new();
            for (k, x) in xs.iter().enumerate() {
                let dx = derive(x, t)?;
                if dx.is_zero() {
                    continue;
                }
                let mut factors = xs.clone();
                factors[k] = dx;
                terms.push(make_mul(factors));
            }
            make_add(terms)
        }
        Expr::Pow(b, k) => {
            if *k < 0 {
                return Err(Error::Unsupported(format!(
                    "division by an expression that reads {}",
                    t.array
                )));
            }
            make_mul(vec![
                Expr::c(f64::from(*k)),
                Expr::pow((**b).clone(), k - 1),
                derive(b, t)?,
            ])
        }
        Expr::Max(a, b) => Expr::select(
            (**a).clone(),
            Relation::Ge,
            (**b).clone(),
            derive(a, t)?,
            derive(b, t)?,
        ),
        Expr::Min(a, b) => Expr::select(
            (**b).clone(),
            Relation::Ge,
            (**a).clone(),
            derive(a, t)?,
            derive(b, t)?,
        ),
        Expr::Select {
            cond,
            then,
            otherwise,
        } => Expr::Select {
            cond: cond.clone(),
            then: Box::new(derive(then, t)?),
            otherwise: Box::new(derive(otherwise, t)?),
        },
        Expr::Call(call) => {
            let mut terms = Vec::new();
            for (name, arg) in &call.args {
                let da = derive(arg, t)?;
                if da.is_zero() {
                    continue;
                }
                let partial = Expr::Deriv(OpaqueDeriv {
                    function: call.function.clone(),
                    wrt: name.clone(),
                    args: call.args.clone(),
                });
                terms.push(make_mul(vec![partial, da]));
            }
            make_add(terms)
        }
        Expr::Deriv(d) => {
            return Err(Error::Unsupported(format!(
                "second derivative of opaque function `{}`",
                d.function
            )))
        }
    })
}

/// Partials of `rhs` for every active read, keyed by the read.
pub fn all_partials(
    rhs: &Expr,
    activity: &ActivitySpec,
    counters: &[Counter],
) -> Result<BTreeMap<ActiveRead, Expr>> {
    active_reads(rhs, activity, counters)
        .into_iter()
        .map(|t| Ok((t.clone(), differentiate(rhs, &t)?)))
        .collect()
}
