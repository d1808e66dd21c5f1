//! Checks of a generated adjoint program: oracle equivalence, finite
//! differences, determinism, and structural invariants of the split.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adjoint::{assemble_adjoint, concrete_boxes, derive_adjoint_terms, AdjointProgram};
use crate::error::{Error, Result};
use crate::frontend::parse_spec;
use crate::ir::{eval_affine, Mode, Problem};
use crate::print::format_real;
use crate::report::{Check, Report};
use crate::runtime::{
    compare_grids, min_max_gap, run_nest, run_program, run_scatter_adjoint, DenseGrid, Env,
};
use crate::symdiff::ActiveRead;

pub const ORACLE_TOL: f64 = 1e-12;
pub const FD_TOL_LINEAR: f64 = 1e-9;
pub const FD_TOL: f64 = 1e-4;
/// Base points closer than this to a min/max kink are redrawn.
pub const TIE_GAP: f64 = 1e-3;
const MAX_REDRAWS: usize = 100;

/// Gather program against the sequential scatter oracle, over every active
/// input adjoint.
pub fn oracle_equivalence(problem: &Problem, program: &AdjointProgram, env: &Env) -> Result<Check> {
    let gather = run_program(program, env)?;
    let scatter = run_scatter_adjoint(problem, env)?;
    let mut err: f64 = 0.0;
    for a in problem.active_inputs() {
        let adj = problem.activity.adjoint(a).expect("active");
        err = err
            .max(compare_grids(gather.grid(adj)?, scatter.grid(adj)?, ORACLE_TOL)?.max_rel_error);
    }
    Ok(Check::at_most("oracle-equivalence", err, ORACLE_TOL))
}

fn differing(a: &Env, b: &Env) -> usize {
    let mut count = 0;
    for (name, g) in &a.grids {
        match b.grids.get(name) {
            Some(h) if h.shape() == g.shape() => {
                count += g
                    .bits()
                    .iter()
                    .zip(h.bits())
                    .filter(|(x, y)| **x != *y)
                    .count();
            }
            _ => count += g.data().len(),
        }
    }
    count
}

/// Assembles twice and runs twice; the metric counts structural differences
/// plus bitwise differing grid elements.
pub fn determinism(problem: &Problem, env: &Env) -> Result<Check> {
    let p1 = assemble_adjoint(problem)?;
    let p2 = assemble_adjoint(problem)?;
    let a = run_program(&p1, env)?;
    let b = run_program(&p2, env)?;
    let diff = usize::from(p1 != p2) + differing(&a, &b);
    Ok(Check::at_most("determinism", diff as f64, 0.0))
}

/// Every grid other than the input adjoints is left bitwise untouched.
pub fn seed_isolation(problem: &Problem, program: &AdjointProgram, env: &Env) -> Result<Check> {
    let out = run_program(program, env)?;
    let written: Vec<&str> = problem
        .active_inputs()
        .into_iter()
        .filter_map(|a| problem.activity.adjoint(a))
        .collect();
    let mut before = env.clone();
    let mut after = out;
    for w in written {
        before.grids.remove(w);
        after.grids.remove(w);
    }
    Ok(Check::at_most(
        "seed-isolation",
        differing(&before, &after) as f64,
        0.0,
    ))
}

/// True when no partial depends on an active value, i.e. the body is linear
/// in its active inputs.
pub fn is_linear(problem: &Problem) -> Result<bool> {
    let terms = derive_adjoint_terms(&problem.nest, &problem.activity)?;
    Ok(terms.iter().all(|t| {
        !t.partial.contains_opaque() && !t.partial.reads_array(|a| problem.activity.is_active(a))
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DotProductReport {
    pub max_rel_error: f64,
    pub threshold: f64,
    pub linear: bool,
    pub trials: usize,
    /// Base points redrawn because of a min/max tie.
    pub redraws: usize,
    pub pass: bool,
}

impl DotProductReport {
    pub fn check(&self) -> Check {
        Check::at_most("dot-product", self.max_rel_error, self.threshold)
    }
}

fn gaussian_like(g: &DenseGrid, rng: &mut ChaCha8Rng) -> DenseGrid {
    let data = (0..g.data().len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DenseGrid::from_data(g.shape().to_vec(), data).expect("same length")
}

fn primal_output(problem: &Problem, env: &Env) -> Result<DenseGrid> {
    let mut e = env.clone();
    e.grid_mut(problem.output_array())?.fill(0.0);
    Ok(run_nest(&problem.nest, &e)?
        .grid(problem.output_array())?
        .clone())
}

fn fd_step(problem: &Problem, env: &Env) -> Result<f64> {
    let mut m: f64 = 0.0;
    for a in problem.active_inputs() {
        m = m.max(env.grid(a)?.max_abs());
    }
    Ok(1e-5 * (1.0 + m))
}

/// `<J v, w>` by central differences against `<v, J^T w>` from the program.
///
/// Probes are standard normal, drawn from a ChaCha8 generator seeded with
/// `env.seed`. The primal output is zeroed before every evaluation, so the
/// test measures the body itself for both `=` and `+=` statements.
pub fn dot_product_test(
    problem: &Problem,
    program: &AdjointProgram,
    env: &Env,
    trials: usize,
) -> Result<DotProductReport> {
    let linear = is_linear(problem)?;
    let threshold = if linear { FD_TOL_LINEAR } else { FD_TOL };
    let inputs = problem.active_inputs();
    let output = problem.output_array();
    let seed = problem.seed_array();
    let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
    let mut worst: f64 = 0.0;
    let mut redraws = 0;

    for _ in 0..trials.max(1) {
        let mut base = env.clone();
        if !linear {
            for attempt in 0..=MAX_REDRAWS {
                match min_max_gap(problem, &base)? {
                    Some(gap) if gap < TIE_GAP => {
                        if attempt == MAX_REDRAWS {
                            return Err(Error::Unsupported(
                                "no base point away from min/max ties".into(),
                            ));
                        }
                        for a in &inputs {
                            base.grid_mut(a)?
                                .data_mut()
                                .iter_mut()
                                .for_each(|x| *x = rng.random_range(-1.0..1.0));
                        }
                        redraws += 1;
                    }
                    _ => break,
                }
            }
        }

        let mut v = BTreeMap::new();
        for a in &inputs {
            v.insert(a.to_string(), gaussian_like(base.grid(a)?, &mut rng));
        }
        let w = gaussian_like(base.grid(output)?, &mut rng);
        let h = fd_step(problem, &base)?;

        let mut plus = base.clone();
        let mut minus = base.clone();
        for (a, dir) in &v {
            let p = plus.grid_mut(a)?.data_mut();
            p.iter_mut().zip(dir.data()).for_each(|(x, d)| *x += h * d);
            let m = minus.grid_mut(a)?.data_mut();
            m.iter_mut().zip(dir.data()).for_each(|(x, d)| *x -= h * d);
        }
        let fp = primal_output(problem, &plus)?;
        let fm = primal_output(problem, &minus)?;
        let lhs: f64 = fp
            .data()
            .iter()
            .zip(fm.data())
            .zip(w.data())
            .map(|((p, m), w)| (p - m) / (2.0 * h) * w)
            .sum();

        let mut adj = base.clone();
        *adj.grid_mut(seed)? = w;
        for a in &inputs {
            adj.grid_mut(problem.activity.adjoint(a).expect("active"))?
                .fill(0.0);
        }
        let adj = run_program(program, &adj)?;
        let mut rhs = 0.0;
        for (a, dir) in &v {
            rhs += dir.dot(adj.grid(problem.activity.adjoint(a).expect("active"))?);
        }
        worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
    }
    Ok(DotProductReport {
        max_rel_error: worst,
        threshold,
        linear,
        trials: trials.max(1),
        redraws,
        pass: worst <= threshold,
    })
}

/// Full-matrix transpose check for small linear instances: `J^T` assembled
/// column by column from one-hot seeds through the program, `J` row by row
/// from one-hot central differences of the primal.
pub fn one_hot_completeness(
    problem: &Problem,
    program: &AdjointProgram,
    env: &Env,
) -> Result<Check> {
    const LIMIT: usize = 200;
    let inputs = problem.active_inputs();
    let mut total = 0;
    for a in &inputs {
        total += env.grid(a)?.data().len();
    }
    if total > LIMIT {
        return Err(Error::Unsupported(format!(
            "{total} active input elements, limit is {LIMIT}"
        )));
    }
    let output = problem.output_array();
    let seed = problem.seed_array();
    let h = fd_step(problem, env)?;
    let out_len = env.grid(output)?.data().len();

    // jac[m][(a, j)] from differences.
    let mut fd: Vec<Vec<f64>> = vec![Vec::new(); out_len];
    for a in &inputs {
        for j in 0..env.grid(a)?.data().len() {
            let mut plus = env.clone();
            plus.grid_mut(a)?.data_mut()[j] += h;
            let mut minus = env.clone();
            minus.grid_mut(a)?.data_mut()[j] -= h;
            let fp = primal_output(problem, &plus)?;
            let fm = primal_output(problem, &minus)?;
            for (m, row) in fd.iter_mut().enumerate() {
                row.push((fp.data()[m] - fm.data()[m]) / (2.0 * h));
            }
        }
    }

    let mut base = env.clone();
    base.grid_mut(seed)?.fill(0.0);
    for a in &inputs {
        base.grid_mut(problem.activity.adjoint(a).expect("active"))?
            .fill(0.0);
    }
    let mut err: f64 = 0.0;
    for (m, row) in fd.iter().enumerate() {
        let mut e = base.clone();
        e.grid_mut(seed)?.data_mut()[m] = 1.0;
        let out = run_program(program, &e)?;
        let mut col = Vec::with_capacity(total);
        for a in &inputs {
            col.extend_from_slice(
                out.grid(problem.activity.adjoint(a).expect("active"))?
                    .data(),
            );
        }
        for (x, y) in col.iter().zip(row) {
            err = err.max((x - y).abs() / (1.0 + y.abs()));
        }
    }
    Ok(Check::at_most("one-hot-completeness", err, FD_TOL_LINEAR))
}

type IntBox = Vec<(i64, i64)>;

fn contains(b: &IntBox, p: &[i64]) -> bool {
    b.iter().zip(p).all(|(&(lo, hi), &x)| lo <= x && x <= hi)
}

fn is_empty(b: &IntBox) -> bool {
    b.iter().any(|(lo, hi)| lo > hi)
}

fn intersects(a: &IntBox, b: &IntBox) -> bool {
    !is_empty(a) && !is_empty(b) && a.iter().zip(b).all(|(x, y)| x.0 <= y.1 && y.0 <= x.1)
}

fn for_each_point(b: &IntBox, mut f: impl FnMut(&[i64])) {
    if is_empty(b) {
        return;
    }
    let mut p: Vec<i64> = b.iter().map(|x| x.0).collect();
    loop {
        f(&p);
        let mut d = p.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if p[d] < b[d].1 {
                p[d] += 1;
                break;
            }
            p[d] = b[d].0;
        }
    }
}

/// Structural invariants of a split under concrete sizes: pairwise
/// disjointness, pointwise coverage (each point executes exactly the
/// statements valid there), gather form, and the `(2k - 1)^d` count bound.
pub fn region_checks(
    problem: &Problem,
    program: &AdjointProgram,
    sizes: &BTreeMap<String, i64>,
) -> Result<Vec<Check>> {
    let boxes = concrete_boxes(program, sizes)?;
    let primal: IntBox = program
        .primal_bounds
        .iter()
        .map(|b| Ok((eval_affine(&b.lower, sizes)?, eval_affine(&b.upper, sizes)?)))
        .collect::<Result<_>>()?;

    let mut overlaps = 0;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            overlaps += usize::from(intersects(&boxes[i], &boxes[j]));
        }
    }

    let mut sources: Vec<&ActiveRead> = program.nests.iter().flat_map(|n| &n.sources).collect();
    sources.sort();
    sources.dedup();
    let valid: Vec<IntBox> = sources
        .iter()
        .map(|s| {
            primal
                .iter()
                .zip(&s.offset.0)
                .map(|(&(lo, hi), &o)| (lo + o, hi + o))
                .collect()
        })
        .collect();
    let mut hull: IntBox = vec![(i64::MAX, i64::MIN); primal.len()];
    for b in valid.iter().chain(&boxes).filter(|b| !is_empty(b)) {
        for (h, &(lo, hi)) in hull.iter_mut().zip(b) {
            h.0 = h.0.min(lo);
            h.1 = h.1.max(hi);
        }
    }
    let mut uncovered = 0;
    for_each_point(&hull, |p| {
        let want: Vec<&ActiveRead> = sources
            .iter()
            .zip(&valid)
            .filter(|(_, b)| contains(b, p))
            .map(|(s, _)| *s)
            .collect();
        let mut got: Vec<&ActiveRead> = program
            .nests
            .iter()
            .zip(&boxes)
            .filter(|(_, b)| contains(b, p))
            .flat_map(|(n, _)| &n.sources)
            .collect();
        got.sort();
        uncovered += usize::from(want != got);
    });

    let adjoints: Vec<&str> = problem
        .activity
        .active
        .values()
        .map(String::as_str)
        .collect();
    let mut non_gather = 0;
    for n in &program.nests {
        for s in &n.nest.body {
            let mut lhs = s.lhs.counters.clone();
            lhs.sort();
            let mut all = program.counters.clone();
            all.sort();
            let ok =
                s.mode == Mode::Increment && lhs == all && adjoints.contains(&s.lhs.array.as_str());
            non_gather += usize::from(!ok);
        }
    }

    let k = (0..program.counters.len())
        .map(|d| {
            let mut o: Vec<i64> = sources.iter().map(|s| s.offset.0[d]).collect();
            o.sort_unstable();
            o.dedup();
            o.len() as u32
        })
        .max()
        .unwrap_or(1);
    let bound = (2 * k - 1).pow(program.counters.len() as u32);

    Ok(vec![
        Check::at_most("disjointness", overlaps as f64, 0.0),
        Check::at_most("coverage", uncovered as f64, 0.0),
        Check::at_most("gather-form", non_gather as f64, 0.0),
        Check::at_most("nest-count-bound", program.nests.len() as f64, bound as f64),
    ])
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub sizes: BTreeMap<String, i64>,
    pub seed: u64,
    pub trials: usize,
    pub fd: bool,
}

/// Default binding for every size symbol when none is given.
pub const DEFAULT_SIZE: i64 = 16;

impl VerifyOptions {
    pub fn for_problem(problem: &Problem) -> VerifyOptions {
        VerifyOptions {
            sizes: problem
                .decls
                .sizes
                .iter()
                .map(|s| (s.clone(), DEFAULT_SIZE))
                .collect(),
            seed: 0,
            trials: 5,
            fd: false,
        }
    }
}

/// All checks used by the `verify` command, on a random environment drawn
/// from `opts.seed`.
pub fn verify_problem(problem: &Problem, opts: &VerifyOptions) -> Result<Report> {
    let program = assemble_adjoint(problem)?;
    program.check_extent(&opts.sizes)?;
    let env = Env::random(problem, &opts.sizes, opts.seed)?;
    let mut report = Report::new(problem.name.clone());
    report.push(oracle_equivalence(problem, &program, &env)?);
    report.push(determinism(problem, &env)?);
    report.push(seed_isolation(problem, &program, &env)?);
    for c in region_checks(problem, &program, &opts.sizes)? {
        report.push(c);
    }
    if opts.fd {
        report.push(dot_product_test(problem, &program, &env, opts.trials)?.check());
    }
    Ok(report)
}

/// A random valid stencil and a size binding satisfying its extent
/// precondition: depth 1 to 3, active offsets in `[-2, 2]`, polynomial
/// and min/max terms, `n` in `[8, 32]` (`[8, 16]` in 3D).
pub fn random_stencil(seed: u64) -> (Problem, BTreeMap<String, i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3usize);
    let counters = &["i", "j", "k"][..depth];
    let n = if depth == 3 {
        rng.random_range(8..=16)
    } else {
        rng.random_range(8..=32)
    };
    let two_inputs = rng.random_bool(0.5);
    let with_coeff = rng.random_bool(0.5);
    let inputs: &[&str] = if two_inputs { &["u", "v"] } else { &["u"] };

    let read = |rng: &mut ChaCha8Rng, array: &str, spread: i64| {
        let mut s = array.to_string();
        for c in counters {
            let o = rng.random_range(-spread..=spread);
            s.push_str(&format!("[{}]", crate::print::index_text(c, o)));
        }
        s
    };
    let literal = |rng: &mut ChaCha8Rng| format_real((rng.random_range(-40..=40) as f64) / 8.0);

    let mut terms = Vec::new();
    for _ in 0..rng.random_range(2..=5) {
        let a = inputs[rng.random_range(0..inputs.len())];
        let term = match rng.random_range(0..6) {
            0 => format!("{}*{}", literal(&mut rng), read(&mut rng, a, 2)),
            1 => format!(
                "{}*{}*{}",
                literal(&mut rng),
                read(&mut rng, a, 2),
                read(&mut rng, inputs[0], 2)
            ),
            2 => format!("a*pow({}, 2)", read(&mut rng, a, 2)),
            3 => format!("max({}, 0)*{}", read(&mut rng, a, 2), read(&mut rng, a, 2)),
            4 => format!(
                "min({}, {})",
                read(&mut rng, a, 2),
                read(&mut rng, inputs[0], 2)
            ),
            _ => format!(
                "{}*({} - {})",
                literal(&mut rng),
                read(&mut rng, a, 2),
                read(&mut rng, a, 2)
            ),
        };
        terms.push(if with_coeff && rng.random_bool(0.4) {
            format!("{}*({term})", read(&mut rng, "c", 1))
        } else {
            term
        });
    }
    // Reads reach `[lo - 2, n - hi + 2]`, inside the `n + 1` extent; the
    // primal extent `n - hi - lo` stays at least the offset spread of 4.
    let mut lo = rng.random_range(2..=3);
    let mut hi = rng.random_range(2..=3);
    if n - lo - hi < 4 {
        (lo, hi) = (2, 2);
    }
    let shape: Vec<String> = counters.iter().map(|_| "n + 1".to_string()).collect();
    let mut arrays = vec![serde_json::json!({
        "name": "r", "rank": depth, "shape": shape, "role": "output", "active": true
    })];
    for a in inputs {
        arrays.push(serde_json::json!({
            "name": a, "rank": depth, "shape": shape, "role": "input", "active": true
        }));
    }
    if with_coeff {
        arrays.push(serde_json::json!({
            "name": "c", "rank": depth, "shape": shape, "role": "coefficient"
        }));
    }
    let bounds: serde_json::Map<String, serde_json::Value> = counters
        .iter()
        .map(|c| {
            (
                c.to_string(),
                serde_json::json!([lo.to_string(), format!("n - {hi}")]),
            )
        })
        .collect();
    let lhs = format!(
        "r{}",
        counters
            .iter()
            .map(|c| format!("[{c}]"))
            .collect::<String>()
    );
    let mode = if rng.random_bool(0.5) { "=" } else { "+=" };
    let spec = serde_json::json!({
        "name": format!("fuzz{seed}"),
        "counters": counters,
        "bounds": bounds,
        "sizes": ["n"],
        "scalars": ["a"],
        "arrays": arrays,
        "lhs": lhs,
        "mode": mode,
        "rhs": terms.join(" + "),
    });
    let problem = parse_spec(&spec.to_string())
        .unwrap_or_else(|r| panic!("generated stencil rejected: {r}\n{spec}"));
    (problem, [("n".to_string(), n)].into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::bundled_problem;

    #[test]
    fn lap1d_passes_everything() {
        let p = bundled_problem("lap1d");
        let mut opts = VerifyOptions::for_problem(&p);
        opts.fd = true;
        let r = verify_problem(&p, &opts).unwrap();
        assert!(r.all_pass(), "{r}");
        assert_eq!(r.checks.len(), 8);
    }

    #[test]
    fn one_hot_lap1d() {
        let p = bundled_problem("lap1d");
        let prog = assemble_adjoint(&p).unwrap();
        let env = Env::random(&p, &[("n".to_string(), 12)].into(), 5).unwrap();
        let c = one_hot_completeness(&p, &prog, &env).unwrap();
        assert!(c.pass, "{c}");
    }

    #[test]
    fn broken_program_is_caught() {
        let p = bundled_problem("lap1d");
        let mut prog = assemble_adjoint(&p).unwrap();
        let env = Env::random(&p, &[("n".to_string(), 12)].into(), 5).unwrap();
        prog.nests.remove(0);
        assert!(!oracle_equivalence(&p, &prog, &env).unwrap().pass);
        let checks = region_checks(&p, &prog, &env.sizes).unwrap();
        assert!(!checks[1].pass, "coverage must fail");
    }

    #[test]
    fn linearity() {
        assert!(is_linear(&bundled_problem("lap1d")).unwrap());
        assert!(is_linear(&bundled_problem("wave3d")).unwrap());
        assert!(!is_linear(&bundled_problem("burgers1d")).unwrap());
    }

    #[test]
    fn fuzz_generator_is_deterministic() {
        for s in 0..20 {
            let (a, na) = random_stencil(s);
            let (b, nb) = random_stencil(s);
            assert_eq!(a, b);
            assert_eq!(na, nb);
        }
    }
}
