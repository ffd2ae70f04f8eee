//! Analytic core for memory classification of stationary random fields.
//!
//! The library decides whether a subordinated Gaussian field (or a
//! stochastic-volatility field built on one) is short- or long-range
//! dependent by evaluating the Hermite series expansion of its indicator
//! covariances against closed-form lag integrals of the correlation model.
//! Everything here is deterministic numerics: Hermite polynomials and
//! quadrature (`hermite`, `quad`), bivariate Gaussian indicator-covariance
//! kernels (`bigauss`), and the series classifier itself (`memory`).
//!
//! The crate is `no_std` + `alloc`; float math goes through `num-traits`
//! and `libm` so the classifier can run anywhere. Simulation, IO and the
//! CLI live in the companion `xmem` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bigauss;
pub mod hermite;
pub mod memory;
pub mod normal;
pub mod quad;
