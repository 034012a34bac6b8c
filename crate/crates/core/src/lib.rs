//! Simulation of the scattering map for the nonlinear Schrodinger equation
//! `(i d_t + Laplacian) u = a(x) |u|^p u` on a periodic box, and recovery of
//! the coefficient `a` and the power `p` from Gaussian probe experiments.

// `!(x > y)` is used deliberately so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod quadrature;
pub mod special;
pub mod spectral;
pub mod coefficient;
pub mod gaussian;
pub mod nls;
pub mod inverse;
pub mod harness;
