//! Moving-grid discontinuous Galerkin solver with interface condition
//! enforcement for viscous conservation laws.
//!
//! The discretization enforces the conservation law, the constitutive law,
//! and their interface conditions separately as a least-squares residual,
//! with the grid mapping included among the unknowns. A regularized
//! Levenberg-Marquardt iteration drives the overdetermined system to a
//! stationary point, fitting interfaces and sharp gradients by moving grid
//! points instead of adding dissipation.

pub mod assembly;
pub mod basis;
pub mod geometry_bc;
pub mod jet;
pub mod mesh;
pub mod oracles;
pub mod physics;
pub mod postprocess;
pub mod solver;
