//! Hybrid quantum-classical dynamics driven by Bohmian trajectories.
//!
//! A 1D quantum coordinate evolves under a split-operator Fourier propagator
//! while a 1D classical oscillator feels a force evaluated at the position of
//! a single Bohmian trajectory sampled from the initial |psi|^2. Ensembles of
//! such replicas, their observables, and the diagnostics that probe where the
//! scheme departs from exact quantum mechanics (energy conservation,
//! equivariance, composability, density-matrix representation independence)
//! all live here. Everything is deterministic given a master seed: fixed
//! reduction orders, counter-based per-replica RNG streams, no wall-clock
//! anywhere.
//!
//! The crate is `no_std`-compatible (with `alloc`); the `std` feature (on by
//! default) only forwards to dependencies. File formats, CLI, and parallel
//! drivers live in the companion `qcbohm-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod bohmian;
pub mod classical;
pub mod density;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod exact2d;
pub mod fft;
pub mod grid;
pub mod model;
pub mod propagator;
pub mod sampling;
pub mod stats;
pub mod wavefunction;

pub use error::CoreError;

/// `f64` complex number used throughout.
pub type C64 = num_complex::Complex<f64>;

#[allow(unused_imports)]
use num_traits::Float;

/// exp(i theta) on the unit circle.
pub(crate) fn cis(theta: f64) -> C64 {
    C64::new(theta.cos(), theta.sin())
}
