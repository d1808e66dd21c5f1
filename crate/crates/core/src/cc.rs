//! Compiling and running emitted C through an external compiler.
//!
//! The compiler comes from `STENCILGRAD_CC`; when it is unset, callers skip
//! these paths. A generated `main` reads sizes, scalars and arrays from a
//! binary file (little-endian `i64`/`f64`, in signature order), calls the
//! kernel, and writes back the return code followed by every array.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::codegen::{ParamKind, Signature};
use crate::error::{Error, Result};
use crate::ir::{eval_affine, Problem};
use crate::runtime::{DenseGrid, Env};

pub const CC_ENV: &str = "STENCILGRAD_CC";
pub const CFLAGS: &[&str] = &["-std=c99", "-O2", "-fopenmp", "-Wall"];

pub fn compiler_from_env() -> Option<String> {
    std::env::var(CC_ENV).ok().filter(|s| !s.trim().is_empty())
}

/// Declared extents of `array` or of the primal array it is the adjoint of.
fn shape_of<'a>(problem: &'a Problem, array: &str) -> Option<&'a [crate::ir::AffineExpr]> {
    problem
        .decls
        .arrays
        .iter()
        .find(|a| a.name == array || problem.activity.adjoint(&a.name) == Some(array))
        .map(|a| a.shape.as_slice())
}

/// `main` for one kernel. With a third argument `reps` the kernel runs that
/// many times and the elapsed wall time is printed to stdout.
pub fn emit_harness(problem: &Problem, sig: &Signature) -> Result<String> {
    let mut c = String::new();
    c.push_str(
        "#include <stdio.h>\n#include <stdlib.h>\n#include <stdint.h>\n#include <omp.h>\n\n",
    );
    let _ = writeln!(c, "{};\n", sig.render(false));
    c.push_str(
        "static void sg_get(void *p, size_t size, size_t n, FILE *f) {\n  if (fread(p, size, n, f) != n) { fprintf(stderr, \"short read\\n\"); exit(3); }\n}\n\n",
    );
    c.push_str("int main(int argc, char **argv) {\n");
    c.push_str("  if (argc < 3) return 2;\n");
    c.push_str("  FILE *sg_in = fopen(argv[1], \"rb\");\n  if (!sg_in) return 2;\n");
    let mut args = Vec::new();
    for p in &sig.params {
        match p.kind {
            ParamKind::Size => {
                let _ = writeln!(
                    c,
                    "  int64_t sg_v_{0}; sg_get(&sg_v_{0}, 8, 1, sg_in); int {0} = (int)sg_v_{0};",
                    p.name
                );
                args.push(p.name.clone());
            }
            ParamKind::Scalar => {
                let _ = writeln!(c, "  double {0}; sg_get(&{0}, 8, 1, sg_in);", p.name);
                args.push(p.name.clone());
            }
            ParamKind::Array { .. } => {}
        }
    }
    for p in sig.arrays() {
        let shape = shape_of(problem, &p.name)
            .ok_or_else(|| Error::Emit(format!("no shape for `{}`", p.name)))?;
        let len: Vec<String> = shape.iter().map(|e| format!("(size_t)({e})")).collect();
        let _ = writeln!(c, "  size_t sg_len_{0} = {1};", p.name, len.join("*"));
        let _ = writeln!(
            c,
            "  double *{0} = malloc(sg_len_{0} * sizeof(double)); sg_get({0}, 8, sg_len_{0}, sg_in);",
            p.name
        );
        args.push(p.name.clone());
    }
    c.push_str("  fclose(sg_in);\n");
    let call = format!("{}({})", sig.name, args.join(", "));
    c.push_str("  int64_t sg_rc;\n  if (argc > 3) {\n    int sg_reps = atoi(argv[3]);\n");
    let _ = writeln!(c, "    sg_rc = {call};");
    c.push_str("    double sg_t0 = omp_get_wtime();\n");
    let _ = writeln!(
        c,
        "    for (int sg_r = 0; sg_r < sg_reps; sg_r++) sg_rc |= {call};"
    );
    c.push_str(
        "    printf(\"%.9f\\n\", (omp_get_wtime() - sg_t0) / (sg_reps > 0 ? sg_reps : 1));\n",
    );
    let _ = writeln!(c, "  }} else {{\n    sg_rc = {call};\n  }}");
    c.push_str(
        "  FILE *sg_out = fopen(argv[2], \"wb\");\n  if (!sg_out) return 2;\n  fwrite(&sg_rc, 8, 1, sg_out);\n",
    );
    for p in sig.arrays() {
        let _ = writeln!(c, "  fwrite({0}, 8, sg_len_{0}, sg_out);", p.name);
    }
    c.push_str("  fclose(sg_out);\n  return 0;\n}\n");
    Ok(c)
}

/// Compiles `sources` (name, text) into `dir/exe`. Any compiler diagnostic,
/// warnings included, is an error.
pub fn compile(cc: &str, dir: &Path, sources: &[(&str, &str)], exe: &str) -> Result<PathBuf> {
    let mut cmd = Command::new(cc);
    cmd.args(CFLAGS);
    for (name, text) in sources {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        cmd.arg(path);
    }
    let out_path = dir.join(exe);
    cmd.arg("-o").arg(&out_path).arg("-lm");
    let out = cmd.output()?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    if !out.status.success() || !stderr.trim().is_empty() {
        return Err(Error::Compile(stderr.into_owned()));
    }
    Ok(out_path)
}

pub struct RunOutput {
    pub code: i64,
    pub grids: BTreeMap<String, DenseGrid>,
    /// Seconds per repetition, when timed.
    pub seconds: Option<f64>,
}

/// Runs a harness built by [`emit_harness`] on the grids of `env`.
pub fn run(
    exe: &Path,
    problem: &Problem,
    sig: &Signature,
    env: &Env,
    threads: usize,
    reps: Option<usize>,
) -> Result<RunOutput> {
    let dir = exe.parent().unwrap_or(Path::new("."));
    let input = dir.join(format!("{}.in", sig.name));
    let output = dir.join(format!("{}.out", sig.name));
    let mut bytes = Vec::new();
    let mut shapes = Vec::new();
    for p in &sig.params {
        match p.kind {
            ParamKind::Size => {
                let v = *env
                    .sizes
                    .get(&p.name)
                    .ok_or_else(|| Error::UnboundSymbol(p.name.clone()))?;
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            ParamKind::Scalar => {
                let v = *env
                    .scalars
                    .get(&p.name)
                    .ok_or_else(|| Error::UnboundSymbol(p.name.clone()))?;
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            ParamKind::Array { .. } => {}
        }
    }
    for p in sig.arrays() {
        let g = env.grid(&p.name)?;
        let shape = shape_of(problem, &p.name).ok_or_else(|| Error::MissingGrid(p.name.clone()))?;
        let want = shape
            .iter()
            .map(|e| eval_affine(e, &env.sizes).map(|v| v.max(0) as usize))
            .collect::<Result<Vec<_>>>()?;
        if want != g.shape() {
            return Err(Error::ShapeMismatch(g.shape().to_vec(), want));
        }
        for x in g.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        shapes.push((p.name.clone(), want));
    }
    std::fs::write(&input, bytes)?;
    let mut cmd = Command::new(exe);
    cmd.arg(&input)
        .arg(&output)
        .env("OMP_NUM_THREADS", threads.to_string());
    if let Some(r) = reps {
        cmd.arg(r.to_string());
    }
    let out = cmd.output()?;
    if !out.status.success() {
        return Err(Error::Compile(format!(
            "{} exited with {}: {}",
            exe.display(),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    let raw = std::fs::read(&output)?;
    let mut words = raw
        .chunks_exact(8)
        .map(|c| <[u8; 8]>::try_from(c).expect("8 bytes"));
    let mut next = || {
        words
            .next()
            .ok_or_else(|| Error::Compile("truncated harness output".into()))
    };
    let code = i64::from_le_bytes(next()?);
    let mut grids = BTreeMap::new();
    for (name, shape) in shapes {
        let len = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(next()?));
        }
        grids.insert(name, DenseGrid::from_data(shape, data)?);
    }
    let seconds = reps.and_then(|_| String::from_utf8_lossy(&out.stdout).trim().parse().ok());
    Ok(RunOutput {
        code,
        grids,
        seconds,
    })
}

/// Compiles the primal and adjoint of `problem`, runs both on a random
/// environment with each thread count, and compares every written array
/// with the interpreter at [`crate::verify::ORACLE_TOL`].
pub fn compare_with_interpreter(
    cc: &str,
    problem: &Problem,
    sizes: &BTreeMap<String, i64>,
    seed: u64,
    threads: &[usize],
) -> Result<Vec<crate::report::Check>> {
    use crate::adjoint::assemble_adjoint;
    use crate::codegen::{adjoint_signature, emit_adjoint, emit_primal, primal_signature};
    use crate::runtime::{compare_grids, run_nest, run_program};

    let program = assemble_adjoint(problem)?;
    program.check_extent(sizes)?;
    let env = Env::random(problem, sizes, seed)?;
    let opts = crate::codegen::EmitOptions::default();
    let dir = std::env::temp_dir().join(format!(
        "stencilgrad-{}-{}-{seed}",
        problem.name,
        std::process::id()
    ));
    std::fs::create_dir_all(&dir)?;
    let variants = [
        (
            "primal",
            emit_primal(problem, &opts)?,
            primal_signature(problem, &opts)?,
            run_nest(&problem.nest, &env)?,
        ),
        (
            "adjoint",
            emit_adjoint(problem, &program, &opts)?,
            adjoint_signature(problem, &program, &opts)?,
            run_program(&program, &env)?,
        ),
    ];
    let mut checks = Vec::new();
    for (label, code, sig, want) in &variants {
        let harness = emit_harness(problem, sig)?;
        let exe = compile(
            cc,
            &dir,
            &[
                (&format!("{label}.c"), code),
                (&format!("{label}_main.c"), &harness),
            ],
            label,
        )?;
        for &t in threads {
            let out = run(&exe, problem, sig, &env, t, None)?;
            let mut worst: f64 = 0.0;
            let mut ok = out.code == 0;
            for p in sig.arrays() {
                if let ParamKind::Array { written: true } = p.kind {
                    let cmp = compare_grids(&out.grids[&p.name], want.grid(&p.name)?, 0.0)?;
                    worst = worst.max(cmp.max_rel_error);
                }
            }
            ok &= worst <= crate::verify::ORACLE_TOL;
            checks.push(crate::report::Check {
                name: format!("{}-{label}-{t}t", problem.name),
                metric: worst,
                threshold: crate::verify::ORACLE_TOL,
                pass: ok,
            });
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(checks)
}
