//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criterion 9 needs STENCILGRAD_CC and is skipped without it.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{
    canonical, dense, enumerate_nest_count, expr_in, problem_from_offsets, sizes, squash, star,
};
use stencilgrad_core::adjoint::assemble_adjoint;
use stencilgrad_core::cc::{compare_with_interpreter, compiler_from_env};
use stencilgrad_core::codegen::{emit_adjoint, EmitOptions};
use stencilgrad_core::frontend::bundled_problem;
use stencilgrad_core::ir::{Expr, Problem, Relation};
use stencilgrad_core::runtime::{run_program, Env};
use stencilgrad_core::verify::{
    dot_product_test, oracle_equivalence, random_stencil, region_checks,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn core_set(p: &Problem) -> Vec<(String, Expr)> {
    let prog = assemble_adjoint(p).unwrap();
    let mut v: Vec<_> = prog
        .core_nest()
        .nest
        .body
        .iter()
        .map(|s| (s.lhs.array.clone(), canonical(&s.rhs)))
        .collect();
    v.sort();
    v
}

fn want_set(p: &Problem, rows: &[(&str, &str)], fix: &dyn Fn(Expr) -> Expr) -> Vec<(String, Expr)> {
    let mut v: Vec<_> = rows
        .iter()
        .map(|(l, r)| {
            (
                l.to_string(),
                canonical(&fix(expr_in(p, r, &["SELP", "SELN"]))),
            )
        })
        .collect();
    v.sort();
    v
}

fn c1() -> Result<String, String> {
    let p = bundled_problem("lap1d");
    let prog = assemble_adjoint(&p).map_err(|e| e.to_string())?;
    let b = &prog.core_nest().nest.bounds[0];
    ensure(
        b.lower.to_string() == "2" && b.upper.to_string() == "n - 2",
        format!("core bounds [{}, {}]", b.lower, b.upper),
    )?;
    let boundary: Vec<_> = prog.nests.iter().filter(|n| !n.is_core()).collect();
    ensure(
        boundary.len() == 4 && boundary.iter().all(|n| n.is_degenerate()),
        "expected four degenerate boundary nests",
    )?;
    let opts = EmitOptions {
        merge: true,
        unroll_degenerate: true,
        ..Default::default()
    };
    let c = squash(&emit_adjoint(&p, &prog, &opts).map_err(|e| e.to_string())?);
    let line = "ub[i] += 4.0 * c[i-1] * rb[i-1] - 3.0*c[i] * rb[i] + 2.0 * c[i+1] * rb[i+1];";
    ensure(c.contains(&squash(line)), "merged core statement differs")?;
    Ok("core [2, n-2], 4 degenerate boundary nests, merged body token-matches".into())
}

fn c2() -> Result<String, String> {
    let count = |p: &Problem| {
        assemble_adjoint(p)
            .map(|a| a.nests.len())
            .map_err(|e| e.to_string())
    };
    let got = [
        count(&bundled_problem("lap1d"))?,
        count(&problem_from_offsets("dense2", &dense(2, 1)))?,
        count(&problem_from_offsets("dense3", &dense(3, 1)))?,
        count(&bundled_problem("wave3d"))?,
        count(&problem_from_offsets("star2", &star(2)))?,
    ];
    let oracle = enumerate_nest_count(&star(2), 2, 20);
    ensure(
        got == [5, 25, 125, 53, 17] && oracle == 17,
        format!("counts {got:?}, oracle {oracle}"),
    )?;
    Ok("lap1d 5, 3x3 25, 3x3x3 125, wave3d 53, 5-point star 17".into())
}

fn c3() -> Result<String, String> {
    let p = bundled_problem("wave3d");
    let prog = assemble_adjoint(&p).map_err(|e| e.to_string())?;
    for b in &prog.core_nest().nest.bounds {
        ensure(
            b.lower.to_string() == "2" && b.upper.to_string() == "n - 3",
            format!("core bound [{}, {}]", b.lower, b.upper),
        )?;
    }
    let rows = [
        ("u_1_b", "D*c[i][j][k+1]*u_b[i][j][k+1]"),
        ("u_1_b", "D*c[i][j+1][k]*u_b[i][j+1][k]"),
        ("u_1_b", "D*c[i+1][j][k]*u_b[i+1][j][k]"),
        ("u_1_b", "(-6*D*c[i][j][k] + 2.0)*u_b[i][j][k]"),
        ("u_2_b", "-u_b[i][j][k]"),
        ("u_1_b", "D*c[i-1][j][k]*u_b[i-1][j][k]"),
        ("u_1_b", "D*c[i][j-1][k]*u_b[i][j-1][k]"),
        ("u_1_b", "D*c[i][j][k-1]*u_b[i][j][k-1]"),
    ];
    let got = core_set(&p);
    ensure(got.len() == 8, format!("{} core statements", got.len()))?;
    ensure(got == want_set(&p, &rows, &|e| e), "core statements differ")?;
    Ok("core [2, n-3]^3, 8 statements structurally equal".into())
}

fn c4() -> Result<String, String> {
    let p = bundled_problem("burgers1d");
    let u = expr_in(&p, "u_1[i]", &[]);
    let sel = |l: Expr| Expr::select(l, Relation::Ge, Expr::c(0.0), Expr::c(1.0), Expr::c(0.0));
    let (selp, seln) = (sel(u.clone()), sel(Expr::negated(u)));
    let fix = |e: Expr| {
        e.map_bottom_up(&mut |x| match &x {
            Expr::Scalar(s) if s == "SELP" => selp.clone(),
            Expr::Scalar(s) if s == "SELN" => seln.clone(),
            _ => x,
        })
    };
    let rows = [
        ("u_1_b", "(C*max(0, u_1[i+1]) + D)*u_b[i+1]"),
        (
            "u_1_b",
            "(-C*((-u_1[i] + u_1[i+1])*SELN + (u_1[i] - u_1[i-1])*SELP + max(0, u_1[i]) - min(0, u_1[i])) - 2.0*D + 1)*u_b[i]",
        ),
        ("u_1_b", "(-C*min(0, u_1[i-1]) + D)*u_b[i-1]"),
    ];
    ensure(
        core_set(&p) == want_set(&p, &rows, &fix),
        "core statements differ",
    )?;
    let prog = assemble_adjoint(&p).map_err(|e| e.to_string())?;
    let c = emit_adjoint(&p, &prog, &EmitOptions::default()).map_err(|e| e.to_string())?;
    ensure(
        c.contains("((u_1[i]>=0)?1.0:0.0)") && c.contains("((-u_1[i]>=0)?1.0:0.0)"),
        "ternary selectors missing",
    )?;
    Ok("3 core statements structurally equal, both selectors present".into())
}

fn oracle_run(name: &str, n: i64) -> Result<(f64, Env), String> {
    let p = bundled_problem(name);
    let prog = assemble_adjoint(&p).map_err(|e| e.to_string())?;
    let env = Env::random(&p, &sizes(n), 7).map_err(|e| e.to_string())?;
    let c = oracle_equivalence(&p, &prog, &env).map_err(|e| e.to_string())?;
    ensure(c.pass, format!("{name}: {c}"))?;
    let out = run_program(&prog, &env).map_err(|e| e.to_string())?;
    Ok((c.metric, out))
}

fn c5() -> Result<String, String> {
    let (w, _) = oracle_run("wave3d", 16)?;
    let (b, _) = oracle_run("burgers1d", 256)?;
    Ok(format!(
        "wave3d n=16 {w:.2e}, burgers1d n=256 {b:.2e} (<= 1e-12)"
    ))
}

fn c6() -> Result<String, String> {
    let mut parts = Vec::new();
    for (name, n, tol) in [("wave3d", 16, 1e-9), ("burgers1d", 256, 1e-4)] {
        let p = bundled_problem(name);
        let prog = assemble_adjoint(&p).map_err(|e| e.to_string())?;
        let env = Env::random(&p, &sizes(n), 7).map_err(|e| e.to_string())?;
        let r = dot_product_test(&p, &prog, &env, 5).map_err(|e| e.to_string())?;
        ensure(r.pass && r.threshold == tol, format!("{name}: {r:?}"))?;
        parts.push(format!("{name} {:.2e} <= {tol:e}", r.max_rel_error));
    }
    Ok(parts.join(", "))
}

fn c7() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    let mut depths = [0usize; 3];
    for seed in 0..64 {
        let (p, sz) = random_stencil(seed);
        depths[p.nest.depth() - 1] += 1;
        let prog = assemble_adjoint(&p).map_err(|e| format!("seed {seed}: {e}"))?;
        for c in region_checks(&p, &prog, &sz).map_err(|e| e.to_string())? {
            ensure(c.pass, format!("seed {seed}: {c}"))?;
        }
        let env = Env::random(&p, &sz, seed).map_err(|e| e.to_string())?;
        let c = oracle_equivalence(&p, &prog, &env).map_err(|e| e.to_string())?;
        ensure(c.pass, format!("seed {seed}: {c}"))?;
        worst = worst.max(c.metric);
    }
    Ok(format!(
        "64 stencils (depth 1/2/3: {depths:?}), worst oracle error {worst:.2e}"
    ))
}

fn c8() -> Result<String, String> {
    for (name, n) in [("wave3d", 16), ("burgers1d", 256)] {
        let (_, a) = oracle_run(name, n)?;
        let (_, b) = oracle_run(name, n)?;
        for (k, g) in &a.grids {
            ensure(
                g.bits() == b.grids[k].bits(),
                format!("{name}: {k} differs"),
            )?;
        }
    }
    let spec = |n: &str| format!("{}/../core/specs/{n}.json", env!("CARGO_MANIFEST_DIR"));
    for name in ["lap1d", "wave3d", "burgers1d"] {
        for target in ["--primal", "--adjoint"] {
            let gen = || {
                Command::new(env!("CARGO_BIN_EXE_stencilgrad"))
                    .args(["gen", &spec(name), target])
                    .output()
                    .map(|o| o.stdout)
                    .map_err(|e| e.to_string())
            };
            ensure(gen()? == gen()?, format!("gen {name} {target} differs"))?;
        }
    }
    Ok("adjoint grids bitwise equal, gen output byte-identical".into())
}

fn c9() -> Result<Option<String>, String> {
    let Some(cc) = compiler_from_env() else {
        return Ok(None);
    };
    let mut worst: f64 = 0.0;
    for (name, n) in [("wave3d", 64), ("burgers1d", 4096)] {
        let checks = compare_with_interpreter(&cc, &bundled_problem(name), &sizes(n), 7, &[1, 4])
            .map_err(|e| format!("{name}: {e}"))?;
        for c in checks {
            ensure(c.pass, c.to_string())?;
            worst = worst.max(c.metric);
        }
    }
    Ok(Some(format!(
        "{cc}: warning-free, 1 and 4 threads, worst error {worst:.2e}"
    )))
}

fn main() {
    type Criterion = (
        u32,
        Duration,
        Box<dyn Fn() -> Result<Option<String>, String>>,
    );
    let some =
        |f: fn() -> Result<String, String>| -> Box<dyn Fn() -> Result<Option<String>, String>> {
            Box::new(move || f().map(Some))
        };
    let criteria: Vec<Criterion> = vec![
        (1, Duration::from_secs(1), some(c1)),
        (2, Duration::from_secs(1), some(c2)),
        (3, Duration::from_secs(1), some(c3)),
        (4, Duration::from_secs(1), some(c4)),
        (5, Duration::from_secs(10), some(c5)),
        (6, Duration::from_secs(30), some(c6)),
        (7, Duration::from_secs(120), some(c7)),
        (8, Duration::from_secs(60), some(c8)),
        (9, Duration::from_secs(300), Box::new(c9)),
    ];
    let mut failed = 0;
    for (n, budget, f) in criteria {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f));
        let dt = t.elapsed();
        let outcome = match r {
            Ok(Ok(Some(msg))) if dt <= budget => Outcome::Pass(msg),
            Ok(Ok(Some(msg))) => Outcome::Fail(format!("{msg}; took {dt:?}, budget {budget:?}")),
            Ok(Ok(None)) => Outcome::Skip("STENCILGRAD_CC is not set".into()),
            Ok(Err(e)) => Outcome::Fail(e),
            Err(_) => Outcome::Fail("panicked".into()),
        };
        match outcome {
            Outcome::Pass(m) => println!("PASS criterion {n}: {m} ({:.3}s)", dt.as_secs_f64()),
            Outcome::Skip(m) => println!("SKIP criterion {n}: {m}"),
            Outcome::Fail(m) => {
                failed += 1;
                println!("FAIL criterion {n}: {m}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
