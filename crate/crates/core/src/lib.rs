//! Numerical laboratory for equivariant entire solutions of `Δu − W_u(u) = 0`
//! with multi-well potentials `W: ℝⁿ → ℝ` symmetric under a finite reflection
//! group.
//!
//! The crate is organised bottom-up:
//!
//! * [`coxeter`]: reflection groups, fundamental region, orbits and the cone `D`.
//! * [`potential`]: built-in and custom potentials, the convex function `Q`,
//!   the polar map and hypothesis checks.
//! * [`grid`]: ball-masked lattices, fields and the Neumann Laplacian.
//! * [`flow`]: the constrained gradient flow and its release.
//! * [`diagnostics`]: positivity, subharmonicity, decay, action and
//!   connection checks on computed fields.
//! * [`comparison`]: radial comparison profiles and the constants `L₀`, `δ`.

pub mod comparison;
pub mod coxeter;
pub mod diagnostics;
pub mod flow;
pub mod grid;
pub mod potential;
pub mod sampling;

mod vecops;

pub use coxeter::{Cone, ConeLabel, OrbitData, ReflectionGroup, Root};



pub use flow::{FlowConfig, Problem, SolveResult};
pub use grid::{Field, Grid};
pub use potential::{Potential, QFunction};
