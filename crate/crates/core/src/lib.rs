//! Nonlocal Neumann operators on the half-space R^N_+ arising as the
//! anomalous diffusion limit of a kinetic equation with heavy-tailed
//! equilibrium and diffuse wall reflection.
//!
//! Modules, bottom up:
//! - [`equilibrium`]: the equilibrium F, derived kernels F0/F1, samplers.
//! - [`geometry`]: graded meshes, scalar fields, the wall extension.
//! - [`operators`]: the flux and limit operators in their equivalent forms,
//!   the ε-scaled kinetic operators, the corrector and the specular operator.
//! - [`variational`]: Galerkin assembly, stationary and evolution solves.
//! - [`kinetic`]: Monte Carlo particles and a discrete-velocity solver.
//! - [`sweep`]: ε-sweeps, rate fits and reports behind the CLI.

pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod kinetic;
pub mod operators;
pub mod quad;
pub mod special;
pub mod spline;
pub mod sweep;
pub mod variational;

pub use error::{Error, Result};
