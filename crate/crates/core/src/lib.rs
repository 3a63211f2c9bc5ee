//! Thermal relaxation of a lattice scalar field coupled to a Brownian
//! thermostat, in both the classical stochastic description and its
//! canonically quantized counterpart.
//!
//! * [`lattice`]: periodic grid, derivative stencils, plane-wave modes.
//! * [`protocol`]: mass schedule `b_t(k)` and couplings `γ_φ`, `γ_Π`.
//! * [`classical_sde`]: Langevin integration with heat and work accounting.
//! * [`classical_thermo`]: Gaussian moment dynamics, entropy, KL divergence.
//! * [`quantum_master`]: per-mode GKSL and sandwiched master equations.
//! * [`quantum_thermo`]: quantum heat, work, entropy production.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical_sde;
pub mod classical_thermo;
pub mod lattice;
mod linalg;
pub mod protocol;
pub mod quantum_master;
pub mod quantum_thermo;

pub use linalg::CMat;
