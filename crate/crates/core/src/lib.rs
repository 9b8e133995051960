//! Numerical toolkit for spacelike surfaces in pseudo-Riemannian space forms
//! and their conformal compactification `Q^n_r`.
//!
//! The crate is organised bottom-up:
//!
//! * [`pseudolinalg`] signature-aware linear algebra on `R^m_s`;
//! * [`gridcalc`] periodic `(u, v)` grids, Wirtinger derivatives, quadrature
//!   and RK4 line marching;
//! * [`isometric`] isometric invariants (`ω`, `Ω`, `H`) of a surface in a space form;
//! * [`conformal`] the light-cone model: canonical lift, conformal frame,
//!   conformal Hopf differential `κ`, Schwarzian `s`, Willmore functional;
//! * [`polar`] c-polar transforms, their dual lifts, metrics and moduli;
//! * [`transforms`] spectral and Darboux transforms and the two
//!   permutability diagrams;
//! * [`surfaces`] closed-form example catalog;
//! * [`job`] the JSON-configured pipeline behind the `polarlab` binary.

pub mod conformal;
pub mod error;
pub mod gridcalc;
pub mod isometric;
pub mod job;
pub mod polar;
pub mod pseudolinalg;
pub mod surfaces;
pub mod tolerances;
pub mod transforms;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
