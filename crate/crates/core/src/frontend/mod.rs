//! Stencil description files, the expression language and the bundled
//! examples.

pub mod expr;
pub mod spec_file;

pub use expr::{parse_affine, parse_expr, parse_lhs, Scope};
pub use spec_file::{parse_spec, print_spec, ArraySpec, FunctionSpec, StencilSpecFile};

/// Bundled example descriptions: the three-point 1D Laplacian-like stencil,
/// the 3D wave equation step and the 1D upwinded Burgers step.
pub const BUNDLED: [(&str, &str); 3] = [
    ("lap1d", include_str!("../../specs/lap1d.json")),
    ("wave3d", include_str!("../../specs/wave3d.json")),
    ("burgers1d", include_str!("../../specs/burgers1d.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled example, panicking if it is missing or invalid.
pub fn bundled_problem(name: &str) -> crate::ir::Problem {
    let text = bundled(name).unwrap_or_else(|| panic!("no bundled example `{name}`"));
    parse_spec(text).unwrap_or_else(|r| panic!("bundled `{name}` is invalid:\n{r}"))
}
