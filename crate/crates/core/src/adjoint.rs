//! Scatter-to-gather adjoint construction.
//!
//! Each partial derivative of the body becomes an increment of the adjoint of
//! the input it was taken against. Shifting every such increment by the
//! negated read offset makes all of them write at the bare counters; the
//! statement for offset `o` is then valid on `[s + o, e + o]` per dimension.
//! The union of those spaces is split hierarchically (outer dimension first)
//! into boxes with pairwise disjoint iteration spaces, each executing exactly
//! the statements valid there.

use std::fmt;

use crate::error::{Error, Result};
use crate::ir::{
    eval_affine, substitute_counters, ActivitySpec, Bounds, Counter, Expr, LhsRef, Mode,
    OffsetVector, Problem, Statement, StencilLoopNest,
};
use crate::simplify::{make_add, simplify};
use crate::symdiff::{active_reads, differentiate, ActiveRead};

/// One partial of the body together with the read it was taken against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjointTerm {
    pub input: ActiveRead,
    /// Unshifted partial, in primal counters.
    pub partial: Expr,
    /// Adjoint of the primal output.
    pub seed: LhsRef,
    /// Adjoint of `input.array`.
    pub adjoint: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftedStatement {
    pub statement: Statement,
    pub offset: OffsetVector,
    /// Inclusive space on which the shifted statement reads valid seed
    /// entries: `[s + o, e + o]` per dimension.
    pub valid: Vec<Bounds>,
    pub source: ActiveRead,
}

/// Which of the `2k - 1` segments of one dimension a nest occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Segment {
    Lower(usize),
    Middle,
    Upper(usize),
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Lower(j) => write!(f, "lower{j}"),
            Segment::Middle => f.write_str("middle"),
            Segment::Upper(j) => write!(f, "upper{j}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjointNest {
    pub nest: StencilLoopNest,
    /// Active read behind each body statement.
    pub sources: Vec<ActiveRead>,
    pub segments: Vec<Segment>,
}

impl AdjointNest {
    pub fn is_core(&self) -> bool {
        self.segments.iter().all(|s| *s == Segment::Middle)
    }

    /// Every dimension has a single iteration.
    pub fn is_degenerate(&self) -> bool {
        self.nest.bounds.iter().all(Bounds::is_degenerate)
    }
}

/// Gather-only loop nests with pairwise disjoint write spaces, executed in
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjointProgram {
    pub counters: Vec<Counter>,
    pub primal_bounds: Vec<Bounds>,
    pub nests: Vec<AdjointNest>,
    pub core: usize,
    /// Per dimension, `max o - min o`: the primal extent `e - s` must be at
    /// least this for the segments to be ordered.
    pub min_extent: Vec<i64>,
}

impl AdjointProgram {
    pub fn core_nest(&self) -> &AdjointNest {
        &self.nests[self.core]
    }

    /// Checks the minimum-extent precondition under concrete sizes.
    pub fn check_extent(&self, sizes: &std::collections::BTreeMap<String, i64>) -> Result<()> {
        for ((c, b), need) in self
            .counters
            .iter()
            .zip(&self.primal_bounds)
            .zip(&self.min_extent)
        {
            let extent = eval_affine(&b.upper, sizes)? - eval_affine(&b.lower, sizes)?;
            if extent < *need {
                return Err(Error::ExtentTooSmall {
                    counter: c.0.clone(),
                    extent,
                    required: *need,
                });
            }
        }
        Ok(())
    }

    /// Combines statements of a nest that write the same array into one
    /// increment whose rhs is the normalized sum.
    pub fn merged(&self) -> AdjointProgram {
        let mut out = self.clone();
        for n in &mut out.nests {
            let mut body: Vec<Statement> = Vec::new();
            let mut sources: Vec<ActiveRead> = Vec::new();
            for (stmt, src) in n.nest.body.iter().zip(&n.sources) {
                match body.iter_mut().position(|s| s.lhs == stmt.lhs) {
                    Some(k) => {
                        body[k].rhs = make_add(vec![body[k].rhs.clone(), stmt.rhs.clone()]);
                    }
                    None => {
                        body.push(stmt.clone());
                        sources.push(src.clone());
                    }
                }
            }
            for s in &mut body {
                s.rhs = simplify(&s.rhs);
            }
            n.nest.body = body;
            n.sources = sources;
        }
        out
    }
}

pub fn derive_adjoint_terms(
    nest: &StencilLoopNest,
    activity: &ActivitySpec,
) -> Result<Vec<AdjointTerm>> {
    let stmt = &nest.body[0];
    let seed_name = activity
        .adjoint(&stmt.lhs.array)
        .ok_or_else(|| Error::Unsupported(format!("output `{}` is not active", stmt.lhs.array)))?;
    let seed = LhsRef {
        array: seed_name.to_string(),
        counters: stmt.lhs.counters.clone(),
    };
    active_reads(&stmt.rhs, activity, &nest.counters)
        .into_iter()
        .map(|input| {
            let partial = differentiate(&stmt.rhs, &input)?;
            let adjoint = activity
                .adjoint(&input.array)
                .unwrap_or_default()
                .to_string();
            Ok(AdjointTerm {
                input,
                partial,
                seed: seed.clone(),
                adjoint,
            })
        })
        .collect()
}

/// Rewrites `adj(u)[c + o] += S(c) * seed[c]` into the gather form
/// `adj(u)[c] += S(c - o) * seed[c - o]`.
pub fn shift_term(
    term: &AdjointTerm,
    counters: &[Counter],
    primal_bounds: &[Bounds],
) -> Result<ShiftedStatement> {
    let o = &term.input.offset;
    let back = o.negated();
    let seed_read = Expr::read(
        term.seed.array.clone(),
        term.seed
            .counters
            .iter()
            .map(|c| crate::ir::IndexExpr::new(c.clone(), 0))
            .collect(),
    );
    let product = Expr::Mul(vec![term.partial.clone(), seed_read]);
    let rhs = simplify(&substitute_counters(&product, counters, &back)?);
    let lhs = LhsRef {
        array: term.adjoint.clone(),
        counters: term
            .input
            .indices
            .iter()
            .map(|i| i.counter.clone())
            .collect(),
    };
    let valid = primal_bounds
        .iter()
        .zip(&o.0)
        .map(|(b, &d)| b.shifted(d))
        .collect();
    Ok(ShiftedStatement {
        statement: Statement {
            lhs,
            mode: Mode::Increment,
            rhs,
        },
        offset: o.clone(),
        valid,
        source: term.input.clone(),
    })
}

/// Intersection of all shifted valid spaces: `[s + max o, e + min o]`.
///
/// A three-point stencil on `[1, n-1]` gives `[2, n-2]`; the 3D star on
/// `[1, n-2]` gives `[2, n-3]`. The upper end adds the minimum offset.
pub fn core_bounds(offsets: &[OffsetVector], primal_bounds: &[Bounds]) -> Vec<Bounds> {
    primal_bounds
        .iter()
        .enumerate()
        .map(|(d, b)| {
            let hi = offsets.iter().map(|o| o.0[d]).max().unwrap_or(0);
            let lo = offsets.iter().map(|o| o.0[d]).min().unwrap_or(0);
            Bounds::new(b.lower.offset(hi), b.upper.offset(lo))
        })
        .collect()
}

fn distinct_offsets(stmts: &[&ShiftedStatement], dim: usize) -> Vec<i64> {
    let mut o: Vec<i64> = stmts.iter().map(|s| s.offset.0[dim]).collect();
    o.sort_unstable();
    o.dedup();
    o
}

/// Hierarchical region splitting.
///
/// For dimension `d` with sorted distinct offsets `o_1 < ... < o_k` among the
/// current statements this emits, in order, the lower segments
/// `[s + o_j, s + o_{j+1} - 1]` (statements with offset `<= o_j`), the middle
/// segment `[s + o_k, e + o_1]` (all statements) and the upper segments
/// `[e + o_j + 1, e + o_{j+1}]` (statements with offset `> o_j`), then
/// recurses into the next dimension with the surviving statements.
pub fn split_regions(
    stmts: &[ShiftedStatement],
    counters: &[Counter],
    primal_bounds: &[Bounds],
) -> AdjointProgram {
    let all: Vec<&ShiftedStatement> = stmts.iter().collect();
    let mut nests = Vec::new();
    split_dim(
        &all,
        0,
        counters,
        primal_bounds,
        &mut Vec::new(),
        &mut nests,
    );
    let core = nests
        .iter()
        .position(AdjointNest::is_core)
        .expect("middle segments always exist");
    let min_extent = (0..counters.len())
        .map(|d| {
            let o = distinct_offsets(&all, d);
            o.last().unwrap_or(&0) - o.first().unwrap_or(&0)
        })
        .collect();
    AdjointProgram {
        counters: counters.to_vec(),
        primal_bounds: primal_bounds.to_vec(),
        nests,
        core,
        min_extent,
    }
}

fn split_dim(
    stmts: &[&ShiftedStatement],
    dim: usize,
    counters: &[Counter],
    primal: &[Bounds],
    prefix: &mut Vec<(Bounds, Segment)>,
    out: &mut Vec<AdjointNest>,
) {
    if dim == counters.len() {
        let (bounds, segments) = prefix.iter().cloned().unzip();
        out.push(AdjointNest {
            nest: StencilLoopNest {
                counters: counters.to_vec(),
                bounds,
                body: stmts.iter().map(|s| s.statement.clone()).collect(),
            },
            sources: stmts.iter().map(|s| s.source.clone()).collect(),
            segments,
        });
        return;
    }
    let offs = distinct_offsets(stmts, dim);
    let k = offs.len();
    let (s, e) = (&primal[dim].lower, &primal[dim].upper);
    let mut recurse = |bounds: Bounds,
                       seg: Segment,
                       subset: Vec<&ShiftedStatement>,
                       prefix: &mut Vec<(Bounds, Segment)>| {
        prefix.push((bounds, seg));
        split_dim(&subset, dim + 1, counters, primal, prefix, out);
        prefix.pop();
    };
    for j in 0..k - 1 {
        let seg = Bounds::new(s.offset(offs[j]), s.offset(offs[j + 1] - 1));
        let subset = stmts
            .iter()
            .copied()
            .filter(|st| st.offset.0[dim] <= offs[j])
            .collect();
        recurse(seg, Segment::Lower(j), subset, prefix);
    }
    let middle = Bounds::new(s.offset(offs[k - 1]), e.offset(offs[0]));
    recurse(middle, Segment::Middle, stmts.to_vec(), prefix);
    for j in 0..k - 1 {
        let seg = Bounds::new(e.offset(offs[j] + 1), e.offset(offs[j + 1]));
        let subset = stmts
            .iter()
            .copied()
            .filter(|st| st.offset.0[dim] > offs[j])
            .collect();
        recurse(seg, Segment::Upper(j), subset, prefix);
    }
}

/// Full pipeline: partials, shifting, splitting. The statement order inside
/// every nest follows the active-read order, which fixes the floating-point
/// accumulation order of each adjoint element.
pub fn assemble_adjoint(problem: &Problem) -> Result<AdjointProgram> {
    let nest = &problem.nest;
    let terms = derive_adjoint_terms(nest, &problem.activity)?;
    if terms.is_empty() {
        return Err(Error::Unsupported("the body reads no active array".into()));
    }
    let shifted = terms
        .iter()
        .map(|t| shift_term(t, &nest.counters, &nest.bounds))
        .collect::<Result<Vec<_>>>()?;
    Ok(split_regions(&shifted, &nest.counters, &nest.bounds))
}

/// Every write space as a box of concrete inclusive intervals.
pub fn concrete_boxes(
    program: &AdjointProgram,
    sizes: &std::collections::BTreeMap<String, i64>,
) -> Result<Vec<Vec<(i64, i64)>>> {
    program
        .nests
        .iter()
        .map(|n| {
            n.nest
                .bounds
                .iter()
                .map(|b| Ok((eval_affine(&b.lower, sizes)?, eval_affine(&b.upper, sizes)?)))
                .collect()
        })
        .collect()
}
