//! Numerical laboratory for drift-diffusion particle ensembles whose
//! probability density evolves by the Schrödinger equation.
//!
//! A particle at `x` moves in a step `dt` by a smooth drift plus a white-noise
//! displacement with per-axis variance `2*D*dt`. With the drift taken as
//! `v = D*grad(rho)/rho + grad(S)/m`, the ensemble density obeys the
//! continuity equation of the wavefunction `psi = sqrt(rho)*exp(i*S/hbar)`
//! under the identification `hbar = 2*m*D`. The crate provides:
//!
//! - grids, fields and second-order finite-difference calculus ([`grid`],
//!   [`field`], [`calculus`]),
//! - deterministic phase unwrapping with loop-consistency checks ([`phase`]),
//! - a Crank-Nicolson reference solver, imaginary-time ground states and
//!   closed-form Gaussian packets ([`schrodinger`]),
//! - the hydrodynamic decomposition `(rho, S, v, j, qpot)` and its residual
//!   diagnostics: continuity, Hamilton-Jacobi, winding numbers, nodal
//!   regions ([`madelung`]),
//! - stochastic particle ensembles, density estimation, the kinetic-energy
//!   estimator and the center-of-mass diffusion experiment ([`ensemble`]),
//! - the deterministic `D = 0` limit via classical characteristics
//!   ([`classical`]),
//! - distribution-comparison metrics and least-squares fits ([`stats`]),
//! - scenario configuration and the solve/decompose/step pipeline
//!   ([`scenario`]), with NDJSON/CSV persistence in [`io`].

pub mod calculus;
pub mod classical;
pub mod ensemble;
pub mod field;
pub mod grid;
pub mod io;
pub mod madelung;
pub mod phase;
pub mod scenario;
pub mod schrodinger;
pub mod stats;

pub use field::{ComplexField, FieldError, ScalarField, VectorField};
pub use grid::{Grid, GridError};
pub use madelung::MadelungFields;
pub use schrodinger::{PhysicalParams, Potential};
