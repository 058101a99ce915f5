//! Mean exit times of overdamped Langevin dynamics from a bounded planar
//! domain, computed four independent ways and cross-checked:
//!
//! 1. the sharp prefactor formula (boundary Laplace integral),
//! 2. Monte Carlo simulation of first-exit times,
//! 3. a finite-difference solve of the generator with Dirichlet data,
//! 4. potential-theoretic capacity bounds built in eikonal boundary
//!    coordinates.
//!
//! The crate is organised around those routes: [`potential`] and [`domain`]
//! supply the model (`f`, `D`), [`eikonal`] builds the tubular boundary
//! coordinates, [`asymptotics`] evaluates the sharp formulas, [`capacity`]
//! the variational bounds, [`sde`] the sampler and [`pde`] the grid solver.

pub mod asymptotics;
pub mod capacity;
pub mod domain;
pub mod eikonal;
pub mod numerics;
pub mod pde;
pub mod potential;
pub mod sde;
pub mod tolerances;
