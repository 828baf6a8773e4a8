//! Numerical kernels for the non-isothermal Maxwell-Stefan system and the
//! multi-species Boltzmann operator it is derived from.
//!
//! The crate is split along the data flow: [`mixture_core`] describes the
//! gas, [`diffusion_coefficients`] turns the collision kernel into the
//! binary coefficients Δ_ij, [`ms_matrix`] holds the Maxwell-Stefan algebra,
//! [`ms_solver`] integrates the perturbed system on a periodic box, and
//! [`collision_kernel`] / [`linearized_operator`] probe the kinetic side.

pub mod collision_kernel;
pub mod diffusion_coefficients;
pub mod error;
pub mod linearized_operator;
pub mod mixture_core;
pub mod ms_matrix;
pub mod ms_solver;
pub mod numerics;
pub mod rng;

pub use error::{DivergenceReason, Error, Result};
