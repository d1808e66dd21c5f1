//! Reference interpreter for loop nests and adjoint programs.
//!
//! Execution is sequential: counters advance lexicographically (outer
//! slowest) over inclusive bounds, statements run in body order, and
//! arithmetic follows IEEE-754 doubles with `fmin`/`fmax` semantics for
//! min/max. Every operation works on a copy of its input [`Env`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{derive_adjoint_terms, AdjointProgram};
use crate::error::{Error, Result};
use crate::ir::{
    eval_affine, ArrayRole, Counter, Expr, IndexExpr, Mode, Problem, Relation, StencilLoopNest,
};

/// Row-major array of doubles.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseGrid {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        DenseGrid {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(shape, vec![data.len()]));
        }
        Ok(DenseGrid { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn flat_index(&self, index: &[i64]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0usize;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i < 0 || i as usize >= n {
                return None;
            }
            flat = flat * n + i as usize;
        }
        Some(flat)
    }

    pub fn get(&self, index: &[i64]) -> Option<f64> {
        self.flat_index(index).map(|k| self.data[k])
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn dot(&self, other: &DenseGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Bit pattern of the contents, for exact equality checks.
    pub fn bits(&self) -> Vec<u64> {
        self.data.iter().map(|x| x.to_bits()).collect()
    }
}

/// Concrete bindings for a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Env {
    pub sizes: BTreeMap<String, i64>,
    pub scalars: BTreeMap<String, f64>,
    pub grids: BTreeMap<String, DenseGrid>,
    pub seed: u64,
}

/// Value ranges used by [`Env::random`].
pub mod ranges {
    pub const SCALAR: (f64, f64) = (0.1, 1.0);
    pub const INPUT: (f64, f64) = (-1.0, 1.0);
    pub const COEFFICIENT: (f64, f64) = (0.5, 1.5);
}

impl Env {
    pub fn grid(&self, name: &str) -> Result<&DenseGrid> {
        self.grids
            .get(name)
            .ok_or_else(|| Error::MissingGrid(name.to_string()))
    }

    pub fn grid_mut(&mut self, name: &str) -> Result<&mut DenseGrid> {
        self.grids
            .get_mut(name)
            .ok_or_else(|| Error::MissingGrid(name.to_string()))
    }

    /// Allocates every primal and adjoint array of `problem` with its declared
    /// shape and fills it from a ChaCha8 generator seeded with `seed`.
    ///
    /// Scalars are uniform in [`ranges::SCALAR`], coefficient arrays in
    /// [`ranges::COEFFICIENT`], everything else (including adjoint arrays) in
    /// [`ranges::INPUT`].
    pub fn random(problem: &Problem, sizes: &BTreeMap<String, i64>, seed: u64) -> Result<Env> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Env {
            sizes: sizes.clone(),
            seed,
            ..Default::default()
        };
        for s in &problem.decls.scalars {
            env.scalars.insert(
                s.clone(),
                rng.random_range(ranges::SCALAR.0..ranges::SCALAR.1),
            );
        }
        for a in &problem.decls.arrays {
            let shape = a
                .shape
                .iter()
                .map(|e| eval_affine(e, sizes).map(|v| v.max(0) as usize))
                .collect::<Result<Vec<_>>>()?;
            let range = match a.role {
                ArrayRole::Coefficient => ranges::COEFFICIENT,
                _ => ranges::INPUT,
            };
            let mut g = DenseGrid::zeros(shape.clone());
            g.data
                .iter_mut()
                .for_each(|x| *x = rng.random_range(range.0..range.1));
            env.grids.insert(a.name.clone(), g);
            if let Some(adj) = problem.activity.adjoint(&a.name) {
                let mut g = DenseGrid::zeros(shape);
                g.data
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(ranges::INPUT.0..ranges::INPUT.1));
                env.grids.insert(adj.to_string(), g);
            }
        }
        Ok(env)
    }
}

/// Expression with names resolved to grid slots and counter positions.
#[derive(Clone, Debug)]
enum Node {
    Const(f64),
    Read {
        slot: usize,
        dims: Vec<(usize, i64)>,
    },
    Add(Vec<Node>),
    Mul(Vec<Node>),
    Pow(Box<Node>, i32),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
    Select(Box<Node>, Relation, Box<Node>, Box<Node>, Box<Node>),
}

struct KernelStmt {
    slot: usize,
    dims: Vec<(usize, i64)>,
    mode: Mode,
    rhs: Node,
}

/// A compiled loop body over a fixed set of grids.
struct Kernel {
    names: Vec<String>,
    stmts: Vec<KernelStmt>,
}

struct Compiler<'a> {
    counters: &'a [Counter],
    env: &'a Env,
    names: Vec<String>,
}

impl Compiler<'_> {
    fn slot(&mut self, array: &str) -> Result<usize> {
        self.env.grid(array)?;
        Ok(match self.names.iter().position(|n| n == array) {
            Some(k) => k,
            None => {
                self.names.push(array.to_string());
                self.names.len() - 1
            }
        })
    }

    fn dims(&self, indices: &[IndexExpr]) -> Result<Vec<(usize, i64)>> {
        indices
            .iter()
            .map(|i| {
                self.counters
                    .iter()
                    .position(|c| *c == i.counter)
                    .map(|p| (p, i.offset))
                    .ok_or_else(|| Error::UnknownCounter(i.counter.0.clone()))
            })
            .collect()
    }

    fn node(&mut self, e: &Expr) -> Result<Node> {
        Ok(match e {
            Expr::Const(c) => Node::Const(c.into_inner()),
            Expr::Scalar(s) => Node::Const(
                *self
                    .env
                    .scalars
                    .get(s)
                    .ok_or_else(|| Error::UnboundSymbol(s.clone()))?,
            ),
            Expr::Read(r) => Node::Read {
                slot: self.slot(&r.array)?,
                dims: self.dims(&r.indices)?,
            },
            Expr::Add(xs) => Node::Add(xs.iter().map(|x| self.node(x)).collect::<Result<_>>()?),
            Expr::Mul(xs) => Node::Mul(xs.iter().map(|x| self.node(x)).collect::<Result<_>>()?),
            Expr::Pow(b, k) => Node::Pow(Box::new(self.node(b)?), *k),
            Expr::Min(a, b) => Node::Min(Box::new(self.node(a)?), Box::new(self.node(b)?)),
            Expr::Max(a, b) => Node::Max(Box::new(self.node(a)?), Box::new(self.node(b)?)),
            Expr::Select {
                cond,
                then,
                otherwise,
            } => Node::Select(
                Box::new(self.node(&cond.lhs)?),
                cond.rel,
                Box::new(self.node(&cond.rhs)?),
                Box::new(self.node(then)?),
                Box::new(self.node(otherwise)?),
            ),
            Expr::Call(c) => return Err(Error::OpaqueNotInterpretable(c.function.clone())),
            Expr::Deriv(d) => return Err(Error::OpaqueNotInterpretable(d.routine_name())),
        })
    }
}

fn locate(grid: &DenseGrid, dims: &[(usize, i64)], point: &[i64], name: &str) -> Result<usize> {
    let mut flat = 0usize;
    for (&(pos, off), &n) in dims.iter().zip(&grid.shape) {
        let i = point[pos] + off;
        if i < 0 || i as usize >= n {
            return Err(Error::OutOfBounds {
                array: name.to_string(),
                index: dims.iter().map(|&(p, o)| point[p] + o).collect(),
                shape: grid.shape.clone(),
                iteration: point.to_vec(),
            });
        }
        flat = flat * n + i as usize;
    }
    Ok(flat)
}

impl Kernel {
    fn eval(&self, n: &Node, grids: &[DenseGrid], point: &[i64]) -> Result<f64> {
        Ok(match n {
            Node::Const(v) => *v,
            Node::Read { slot, dims } => {
                let g = &grids[*slot];
                g.data[locate(g, dims, point, &self.names[*slot])?]
            }
            Node::Add(xs) => {
                let mut acc = 0.0;
                for x in xs {
                    acc += self.eval(x, grids, point)?;
                }
                acc
            }
            Node::Mul(xs) => {
                let mut acc = 1.0;
                for x in xs {
                    acc *= self.eval(x, grids, point)?;
                }
                acc
            }
            Node::Pow(b, k) => self.eval(b, grids, point)?.powi(*k),
            Node::Min(a, b) => self.eval(a, grids, point)?.min(self.eval(b, grids, point)?),
            Node::Max(a, b) => self.eval(a, grids, point)?.max(self.eval(b, grids, point)?),
            Node::Select(l, rel, r, t, e) => {
                if rel.holds(self.eval(l, grids, point)?, self.eval(r, grids, point)?) {
                    self.eval(t, grids, point)?
                } else {
                    self.eval(e, grids, point)?
                }
            }
        })
    }

    fn execute(&self, bounds: &[(i64, i64)], env: &mut Env) -> Result<()> {
        if bounds.iter().any(|(lo, hi)| lo > hi) {
            return Ok(());
        }
        let mut grids: Vec<DenseGrid> = self
            .names
            .iter()
            .map(|n| env.grids.remove(n).expect("slots are resolved against env"))
            .collect();
        let result = self.sweep(bounds, &mut grids);
        for (n, g) in self.names.iter().zip(grids) {
            env.grids.insert(n.clone(), g);
        }
        result
    }

    fn sweep(&self, bounds: &[(i64, i64)], grids: &mut [DenseGrid]) -> Result<()> {
        let mut point: Vec<i64> = bounds.iter().map(|b| b.0).collect();
        loop {
            for s in &self.stmts {
                let v = self.eval(&s.rhs, grids, &point)?;
                let g = &mut grids[s.slot];
                let k = locate(g, &s.dims, &point, &self.names[s.slot])?;
                match s.mode {
                    Mode::Assign => g.data[k] = v,
                    Mode::Increment => g.data[k] += v,
                }
            }
            // Odometer step, innermost counter fastest.
            let mut d = point.len();
            loop {
                if d == 0 {
                    return Ok(());
                }
                d -= 1;
                if point[d] < bounds[d].1 {
                    point[d] += 1;
                    break;
                }
                point[d] = bounds[d].0;
            }
        }
    }
}

fn concrete_bounds(
    nest: &StencilLoopNest,
    sizes: &BTreeMap<String, i64>,
) -> Result<Vec<(i64, i64)>> {
    nest.bounds
        .iter()
        .map(|b| Ok((eval_affine(&b.lower, sizes)?, eval_affine(&b.upper, sizes)?)))
        .collect()
}

fn compile_nest(nest: &StencilLoopNest, env: &Env) -> Result<Kernel> {
    let mut c = Compiler {
        counters: &nest.counters,
        env,
        names: Vec::new(),
    };
    let mut stmts = Vec::new();
    for s in &nest.body {
        let rhs = c.node(&s.rhs)?;
        let indices: Vec<IndexExpr> = s
            .lhs
            .counters
            .iter()
            .map(|k| IndexExpr::new(k.clone(), 0))
            .collect();
        stmts.push(KernelStmt {
            slot: c.slot(&s.lhs.array)?,
            dims: c.dims(&indices)?,
            mode: s.mode,
            rhs,
        });
    }
    Ok(Kernel {
        names: c.names,
        stmts,
    })
}

/// Executes one loop nest and returns the updated environment.
pub fn run_nest(nest: &StencilLoopNest, env: &Env) -> Result<Env> {
    let mut out = env.clone();
    run_nest_in_place(nest, &mut out)?;
    Ok(out)
}

fn run_nest_in_place(nest: &StencilLoopNest, env: &mut Env) -> Result<()> {
    let kernel = compile_nest(nest, env)?;
    let bounds = concrete_bounds(nest, &env.sizes)?;
    kernel.execute(&bounds, env)
}

/// Executes all nests of an adjoint program in order.
pub fn run_program(program: &AdjointProgram, env: &Env) -> Result<Env> {
    program.check_extent(&env.sizes)?;
    let mut out = env.clone();
    for n in &program.nests {
        run_nest_in_place(&n.nest, &mut out)?;
    }
    Ok(out)
}

/// Sequential scatter adjoint: for every primal iteration `p`, in ascending
/// order, and every partial `S` taken against the read at offset `o`,
/// `adj[p + o] += S(p) * seed[p]`.
pub fn run_scatter_adjoint(problem: &Problem, env: &Env) -> Result<Env> {
    let nest = &problem.nest;
    let terms = derive_adjoint_terms(nest, &problem.activity)?;
    let mut out = env.clone();
    let mut c = Compiler {
        counters: &nest.counters,
        env,
        names: Vec::new(),
    };
    let mut stmts = Vec::new();
    for t in &terms {
        let seed = Expr::read(
            t.seed.array.clone(),
            t.seed
                .counters
                .iter()
                .map(|k| IndexExpr::new(k.clone(), 0))
                .collect(),
        );
        stmts.push(KernelStmt {
            slot: c.slot(&t.adjoint)?,
            dims: c.dims(&t.input.indices)?,
            mode: Mode::Increment,
            rhs: c.node(&Expr::Mul(vec![t.partial.clone(), seed]))?,
        });
    }
    let kernel = Kernel {
        names: c.names,
        stmts,
    };
    let bounds = concrete_bounds(nest, &env.sizes)?;
    kernel.execute(&bounds, &mut out)?;
    Ok(out)
}

/// Smallest `|a - b|` over every min/max node of the primal body and every
/// iteration point; `None` when the body has no min/max.
pub fn min_max_gap(problem: &Problem, env: &Env) -> Result<Option<f64>> {
    let nest = &problem.nest;
    let mut pairs = Vec::new();
    problem.statement().rhs.visit(&mut |e| {
        if let Expr::Min(a, b) | Expr::Max(a, b) = e {
            pairs.push(Expr::Add(vec![(**a).clone(), Expr::negated((**b).clone())]));
        }
    });
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut c = Compiler {
        counters: &nest.counters,
        env,
        names: Vec::new(),
    };
    let nodes = pairs
        .iter()
        .map(|p| c.node(p))
        .collect::<Result<Vec<_>>>()?;
    let kernel = Kernel {
        names: c.names,
        stmts: Vec::new(),
    };
    let grids: Vec<DenseGrid> = kernel.names.iter().map(|n| env.grids[n].clone()).collect();
    let bounds = concrete_bounds(nest, &env.sizes)?;
    let mut gap = f64::INFINITY;
    if bounds.iter().any(|(lo, hi)| lo > hi) {
        return Ok(Some(gap));
    }
    let mut point: Vec<i64> = bounds.iter().map(|b| b.0).collect();
    'outer: loop {
        for n in &nodes {
            gap = gap.min(kernel.eval(n, &grids, &point)?.abs());
        }
        let mut d = point.len();
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            if point[d] < bounds[d].1 {
                point[d] += 1;
                break;
            }
            point[d] = bounds[d].0;
        }
    }
    Ok(Some(gap))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridComparison {
    /// `max |a - b| / (1 + |b|)`.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn compare_grids(a: &DenseGrid, b: &DenseGrid, tol: f64) -> Result<GridComparison> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(a.shape.clone(), b.shape.clone()));
    }
    let err = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max);
    Ok(GridComparison {
        max_rel_error: err,
        tolerance: tol,
        pass: err <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::bundled_problem;

    fn lap_env(n: i64, u: &[f64], c: &[f64]) -> Env {
        let mut env = Env {
            sizes: [("n".to_string(), n)].into(),
            ..Default::default()
        };
        let len = (n + 1) as usize;
        for name in ["r", "ub", "rb"] {
            env.grids.insert(name.into(), DenseGrid::zeros(vec![len]));
        }
        env.grids.insert(
            "u".into(),
            DenseGrid::from_data(vec![len], u.to_vec()).unwrap(),
        );
        env.grids.insert(
            "c".into(),
            DenseGrid::from_data(vec![len], c.to_vec()).unwrap(),
        );
        env
    }

    #[test]
    fn lap1d_primal_by_hand() {
        // n = 4: arrays hold indices 0..=4, i runs 1..=3.
        let p = bundled_problem("lap1d");
        let env = lap_env(4, &[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0; 5]);
        let out = run_nest(&p.nest, &env).unwrap();
        // r[i] = 2u[i-1] - 3u[i] + 4u[i+1]
        assert_eq!(out.grid("r").unwrap().data(), &[0.0, 8.0, 11.0, 14.0, 0.0]);
        assert_eq!(
            env.grid("r").unwrap().data(),
            &[0.0; 5],
            "input env untouched"
        );
    }

    #[test]
    fn zero_iteration_nest_is_identity() {
        let mut p = bundled_problem("lap1d");
        p.nest.bounds[0].lower = crate::ir::AffineExpr::constant(3);
        p.nest.bounds[0].upper = crate::ir::AffineExpr::constant(2);
        let env = lap_env(4, &[1.0; 5], &[1.0; 5]);
        assert_eq!(run_nest(&p.nest, &env).unwrap(), env);
    }

    #[test]
    fn out_of_bounds_names_array_and_iteration() {
        let p = bundled_problem("lap1d");
        let mut env = lap_env(4, &[1.0; 5], &[1.0; 5]);
        env.grids.insert("u".into(), DenseGrid::zeros(vec![4]));
        match run_nest(&p.nest, &env) {
            Err(Error::OutOfBounds {
                array,
                index,
                iteration,
                ..
            }) => {
                assert_eq!(array, "u");
                assert_eq!(index, vec![4]);
                assert_eq!(iteration, vec![3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scatter_one_hot_seed_extracts_row() {
        let p = bundled_problem("lap1d");
        let c = [0.5, 1.5, 2.5, 3.5, 4.5];
        let mut env = lap_env(4, &[0.0; 5], &c);
        env.grid_mut("rb").unwrap().data_mut()[2] = 1.0;
        let out = run_scatter_adjoint(&p, &env).unwrap();
        assert_eq!(
            out.grid("ub").unwrap().data(),
            &[0.0, 2.0 * c[2], -3.0 * c[2], 4.0 * c[2], 0.0]
        );
    }

    #[test]
    fn scatter_zero_seed_leaves_adjoint() {
        let p = bundled_problem("burgers1d");
        let sizes = [("n".to_string(), 32)].into();
        let mut env = Env::random(&p, &sizes, 3).unwrap();
        env.grid_mut("u_b").unwrap().fill(0.0);
        let out = run_scatter_adjoint(&p, &env).unwrap();
        assert_eq!(out.grid("u_1_b").unwrap(), env.grid("u_1_b").unwrap());
    }

    #[test]
    fn wave3d_constant_field() {
        let p = bundled_problem("wave3d");
        let sizes = [("n".to_string(), 6)].into();
        let mut env = Env::random(&p, &sizes, 0).unwrap();
        env.grid_mut("u_1").unwrap().fill(0.75);
        env.grid_mut("u_2").unwrap().fill(0.0);
        env.grid_mut("u").unwrap().fill(0.0);
        let out = run_nest(&p.nest, &env).unwrap();
        let u = out.grid("u").unwrap();
        for i in 1..=4 {
            for j in 1..=4 {
                for k in 1..=4 {
                    assert_eq!(u.get(&[i, j, k]).unwrap(), 1.5);
                }
            }
        }
        assert_eq!(u.get(&[0, 2, 2]).unwrap(), 0.0);
    }

    #[test]
    fn compare_grids_metric() {
        let a = DenseGrid::from_data(vec![2], vec![1.0, 2.0]).unwrap();
        let same = compare_grids(&a, &a, 0.0).unwrap();
        assert_eq!(same.max_rel_error, 0.0);
        assert!(same.pass);
        let b = DenseGrid::from_data(vec![2], vec![1.0 + 1e-15, 2.0]).unwrap();
        assert!(compare_grids(&b, &a, 1e-12).unwrap().pass);
        let c = DenseGrid::zeros(vec![3]);
        assert!(matches!(
            compare_grids(&a, &c, 1.0),
            Err(Error::ShapeMismatch(..))
        ));
    }
}
