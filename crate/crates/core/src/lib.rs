//! Source-to-source reverse-mode differentiation of gather stencil loops.
//!
//! The adjoint of a gather stencil is naturally a scatter, which races when
//! run in parallel. This crate differentiates the loop body symbolically,
//! shifts every adjoint increment so it writes at the bare loop counters, and
//! splits the resulting iteration space into a core loop nest plus disjoint
//! boundary nests, all of which are gathers again. An interpreter and two
//! oracles (a sequential scatter adjoint and a finite-difference dot-product
//! test) check the generated program; a C emitter produces OpenMP code.

pub mod adjoint;
pub mod cc;
pub mod codegen;
pub mod error;
pub mod frontend;
pub mod ir;
pub mod print;
pub mod report;
pub mod runtime;
pub mod simplify;
pub mod symdiff;
pub mod verify;

pub use adjoint::{assemble_adjoint, AdjointProgram};
pub use error::{Error, Result};
pub use frontend::{parse_spec, print_spec};
pub use ir::{Expr, Problem};
