//! Runs only when STENCILGRAD_CC names a C compiler.

mod common;

use stencilgrad_core::cc::{compare_with_interpreter, compiler_from_env};
use stencilgrad_core::frontend::{bundled_problem, BUNDLED};

fn check(name: &str, n: i64) {
    let Some(cc) = compiler_from_env() else {
        eprintln!("STENCILGRAD_CC unset; skipping {name}");
        return;
    };
    let p = bundled_problem(name);
    for c in compare_with_interpreter(&cc, &p, &common::sizes(n), 11, &[1, 4]).unwrap() {
        assert!(c.pass, "{c}");
    }
}

#[test]
fn wave3d_n64() {
    check("wave3d", 64);
}

#[test]
fn burgers1d_n4096() {
    check("burgers1d", 4096);
}

#[test]
fn every_example_small() {
    for (name, _) in BUNDLED {
        check(name, 9);
    }
}
