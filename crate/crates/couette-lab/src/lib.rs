//! Numerical laboratory for the inertial instability of Couette flow under
//! Coriolis forcing.
//!
//! The linearized dynamics of a sheared, rotating flow reduce in Fourier
//! variables to a family of 3x3 matrix problems plus a wavenumber drift.
//! This crate evaluates those matrices exactly, builds the mollified
//! bump-packet pseudo-eigenfunctions that realize the unstable continuous
//! spectrum, propagates Kelvin modes along sheared characteristics, certifies
//! the numerical-range / Routh-Hurwitz inequality chain that bounds the
//! semigroup, and runs a shearing-frame pseudo-spectral solver for the full
//! nonlinear perturbation system, including escape-time scans.
//!
//! Modules map onto the pipeline:
//!
//! * [`symbol`] - flow parameters, Fourier-side matrices, streak eigen-system.
//! * [`certify`] - numerical-range and Routh-Hurwitz certificates, the
//!   symbol-level resolvent check, and a weighted-integral property test.
//! * [`pseudomode`] - mollifier bumps, pseudo-mode fields, residual reports.
//! * [`kelvin`] - exact characteristic transport plus RK4 mode propagation.
//! * [`dns`] - nonlinear pseudo-spectral solver and escape-time experiments.
//! * [`cli`] - batch front end with deterministic reports.

pub mod certify;
pub mod cli;
pub mod dns;
pub mod kelvin;
pub mod pseudomode;
pub mod quadrature;
pub mod report;
pub mod symbol;

pub use symbol::{FlowParams, WaveVector};
