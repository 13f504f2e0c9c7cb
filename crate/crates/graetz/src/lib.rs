//! Solver library for the generalized Graetz problem: stationary
//! convection-diffusion in a duct that is invariant along its axis,
//!
//! ```text
//!     c ∂zz T + div(σ ∇T) − h ∂z T = 0   on Ω × I,
//! ```
//!
//! with Dirichlet, Neumann, Robin and periodic lateral boundary conditions
//! on ∂Ω × I and Dirichlet or Neumann inlet/outlet data. The 3D problem is
//! reduced to a generalized eigenproblem in the 2D cross section: the
//! mixed-order operator A acting on states (∂z T, T) is symmetric with
//! compact resolvent in a weighted space, and solutions are exponential
//! series in the eigenbasis. Semi-infinite ducts, finite ducts and periodic
//! heat exchangers are all handled, including the degenerate "balanced"
//! case (no Dirichlet/Robin condition and zero total flow) where A has a
//! one-dimensional kernel.
//!
//! # Crate layout
//!
//! - [`mesh`] — triangulated cross sections: ASCII file I/O, built-in
//!   generators (squares with circular fluid tubes), boundary tagging and
//!   periodic vertex pairing.
//! - [`assembly`] — P1 finite-element matrices for the weighted inner
//!   product and the operator form; Poiseuille velocity fields; the
//!   σ-Laplacian inverse; case classification.
//! - [`spectral`] — the block pencil for A, the shift-invert Lanczos
//!   eigensolver, and the Hilbert-space algebra (inner products, A, A⁻¹).
//! - [`decomp`] — projections P and π±, the operators B± and the
//!   three-branch decomposition of temperature traces onto one-sided
//!   eigenspaces.
//! - [`semi_infinite`] — solutions on Ω × [0, ∞) for Dirichlet and Neumann
//!   inlet data, including the temperature at infinity.
//! - [`finite_domain`] — the coupled linear systems for ducts Ω × [−L, L],
//!   the exponentially small coupling operator M, Neumann-series solves,
//!   and exchanger metrics.
//! - [`viscous`] — change of unknown removing a viscous dissipation source
//!   μ|∇h|².
//! - [`oracle`] — an independent direct 3D solve (P1 in the section,
//!   finite differences along the axis) used for cross-validation.
//! - [`cli`] — scenario configuration files, parametric sweeps and
//!   deterministic CSV/JSON output.
//!
//! # Quick start
//!
//! Runnable examples live in `examples/` (one per capability); see also
//! the `graetz` binary which drives everything from a TOML scenario file:
//!
//! ```bash
//! cargo run --release --example spectrum_robin_sweep
//! cargo run --release --bin graetz -- run scenario.toml --out results/
//! ```

pub mod assembly;
pub mod cli;
pub mod decomp;
pub mod error;
pub mod finite_domain;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod semi_infinite;
pub mod spectral;
pub mod viscous;

pub use error::{Error, Result};
