use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use stencilgrad_core::adjoint::assemble_adjoint;
use stencilgrad_core::cc;
use stencilgrad_core::codegen::{
    adjoint_signature, emit_adjoint, emit_header, emit_primal, emit_scatter_atomic,
    primal_signature, scatter_signature, EmitOptions,
};
use stencilgrad_core::frontend::{bundled, parse_spec, BUNDLED};
use stencilgrad_core::ir::Problem;
use stencilgrad_core::runtime::Env;
use stencilgrad_core::verify::{verify_problem, VerifyOptions};

/// Reverse-mode differentiation of gather stencil loops into parallel C.
#[derive(Parser)]
#[command(name = "stencilgrad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a stencil description.
    Validate { spec: PathBuf },
    /// Emit C for the primal nest or the adjoint program.
    Gen(GenArgs),
    /// Print the adjoint loop nests.
    Nests { spec: PathBuf },
    /// Check the adjoint against the scatter oracle and, with --fd, finite
    /// differences.
    Verify(VerifyArgs),
    /// Print a bundled stencil description.
    Example { name: String },
    /// Time the gather adjoint against an atomic scatter adjoint (needs
    /// STENCILGRAD_CC).
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    spec: PathBuf,
    #[arg(long, conflicts_with = "adjoint", required_unless_present = "adjoint")]
    primal: bool,
    #[arg(long)]
    adjoint: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write a header with the prototype.
    #[arg(long)]
    header: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    no_parallel: bool,
    #[arg(long)]
    merge: bool,
    #[arg(long)]
    unroll_degenerate: bool,
    #[arg(long)]
    no_restrict: bool,
}

#[derive(Args)]
struct VerifyArgs {
    spec: PathBuf,
    /// Size bindings, e.g. `n=64`; unbound sizes default to 16.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Run the finite-difference dot-product test.
    #[arg(long)]
    fd: bool,
    #[arg(long)]
    report_json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    spec: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit status 1: a check ran and failed.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn load(path: &Path) -> anyhow::Result<Problem> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_spec(&text).map_err(|r| anyhow!("{}: invalid stencil description\n{r}", path.display()))
}

fn parse_sizes(problem: &Problem, given: &[String]) -> anyhow::Result<BTreeMap<String, i64>> {
    let mut sizes = VerifyOptions::for_problem(problem).sizes;
    for s in given {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("size binding `{s}` is not NAME=VALUE"))?;
        let k = k.trim();
        if !problem.decls.sizes.iter().any(|x| x == k) {
            bail!("`{k}` is not a size symbol of {}", problem.name);
        }
        let v: i64 = v.trim().parse().with_context(|| format!("size `{k}`"))?;
        sizes.insert(k.to_string(), v);
    }
    Ok(sizes)
}

fn write_out(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen(a: &GenArgs) -> anyhow::Result<()> {
    let problem = load(&a.spec)?;
    let opts = EmitOptions {
        function_name: a.name.clone(),
        parallel: !a.no_parallel,
        unroll_degenerate: a.unroll_degenerate,
        merge: a.merge,
        restrict: !a.no_restrict,
    };
    let (code, sig) = if a.primal {
        (
            emit_primal(&problem, &opts)?,
            primal_signature(&problem, &opts)?,
        )
    } else {
        let program = assemble_adjoint(&problem)?;
        (
            emit_adjoint(&problem, &program, &opts)?,
            adjoint_signature(&problem, &program, &opts)?,
        )
    };
    write_out(a.output.as_deref(), &code)?;
    if let Some(h) = &a.header {
        write_out(Some(h), &emit_header(&sig, &opts))?;
    }
    Ok(())
}

fn nests(spec: &Path) -> anyhow::Result<()> {
    let problem = load(spec)?;
    let program = assemble_adjoint(&problem)?;
    println!("{} loop nests", program.nests.len());
    let core = program.core_nest();
    let bounds: Vec<String> = core
        .nest
        .counters
        .iter()
        .zip(&core.nest.bounds)
        .map(|(c, b)| format!("{c} in [{}, {}]", b.lower, b.upper))
        .collect();
    println!("core: {}", bounds.join(", "));
    let need: Vec<String> = program
        .counters
        .iter()
        .zip(&program.min_extent)
        .map(|(c, m)| format!("{c} >= {m}"))
        .collect();
    println!("requires upper - lower: {}", need.join(", "));
    for (k, n) in program.nests.iter().enumerate() {
        let segs: Vec<String> = n.segments.iter().map(ToString::to_string).collect();
        let bounds: Vec<String> = n
            .nest
            .counters
            .iter()
            .zip(&n.nest.bounds)
            .map(|(c, b)| format!("{c}=[{}, {}]", b.lower, b.upper))
            .collect();
        let srcs: Vec<String> = n
            .sources
            .iter()
            .map(|s| format!("{}{}", s.array, s.offset))
            .collect();
        println!(
            "{k:>3}{} {} {} {{{}}}",
            if k == program.core { "*" } else { " " },
            segs.join(","),
            bounds.join(" "),
            srcs.join(" ")
        );
    }
    Ok(())
}

fn verify(a: &VerifyArgs) -> anyhow::Result<()> {
    let problem = load(&a.spec)?;
    let opts = VerifyOptions {
        sizes: parse_sizes(&problem, &a.sizes)?,
        seed: a.seed,
        trials: a.trials,
        fd: a.fd,
    };
    let report = verify_problem(&problem, &opts).map_err(|e| CheckFailed(e.to_string()))?;
    print!("{report}");
    if let Some(p) = &a.report_json {
        write_out(Some(p), &report.to_json())?;
    }
    if !report.all_pass() {
        return Err(CheckFailed(format!("{} failed verification", problem.name)).into());
    }
    Ok(())
}

fn example(name: &str) -> anyhow::Result<()> {
    match bundled(name) {
        Some(text) => {
            print!("{text}");
            Ok(())
        }
        None => {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            bail!("no example `{name}`; available: {}", names.join(", "))
        }
    }
}

fn bench(a: &BenchArgs) -> anyhow::Result<()> {
    let problem = load(&a.spec)?;
    let sizes = parse_sizes(&problem, &a.sizes)?;
    let Some(compiler) = cc::compiler_from_env() else {
        eprintln!("{} is not set; skipping bench", cc::CC_ENV);
        return Ok(());
    };
    let program = assemble_adjoint(&problem)?;
    program.check_extent(&sizes)?;
    let env = Env::random(&problem, &sizes, a.seed)?;
    let dir = tempfile::tempdir()?;
    let opts = EmitOptions::default();
    let gather_sig = adjoint_signature(&problem, &program, &opts)?;
    let scatter_code = emit_scatter_atomic(&problem, &opts)?;
    let scatter_sig = scatter_signature(&problem, &opts)?;
    let variants = [
        (
            "gather",
            emit_adjoint(&problem, &program, &opts)?,
            gather_sig,
        ),
        ("scatter-atomic", scatter_code, scatter_sig),
    ];
    println!("variant,threads,seconds");
    for (label, code, sig) in &variants {
        let harness = cc::emit_harness(&problem, sig)?;
        let exe = cc::compile(
            &compiler,
            dir.path(),
            &[
                (&format!("{label}.c"), code),
                (&format!("{label}_main.c"), &harness),
            ],
            label,
        )?;
        for &t in &a.threads {
            let out = cc::run(&exe, &problem, sig, &env, t, Some(a.reps))?;
            println!("{label},{t},{:.9}", out.seconds.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { spec } => load(spec).map(|p| println!("{}: ok", p.name)),
        Command::Gen(a) => gen(a),
        Command::Nests { spec } => nests(spec),
        Command::Verify(a) => verify(a),
        Command::Example { name } => example(name),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
