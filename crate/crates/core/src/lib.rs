//! Simulation and analysis of electron–nuclear spin entanglement in an NV
//! centre coupled to a small bath of carbon-13 spins under dynamical
//! decoupling.
//!
//! The crate is organised bottom-up:
//!
//! * [`spincore`] – dense complex linear algebra and spin operators.
//! * [`model`] – physical constants, bath registry, Hamiltonians.
//! * [`dynamics`] – CPMG propagation, coherence and entanglement traces,
//!   plus the full-register oracle.
//! * [`spectrum`] – filter function, spectral overlap integral and
//!   first-harmonic spectrum reconstruction.
//! * [`tomography`] – state metrics, photon-count readout and
//!   maximum-likelihood reconstruction.
//! * [`fit`] – Gaussian decay fits and hyperfine calibration.
//! * [`io`] – text formats (CSV traces, density matrices, counts, fit results).

pub mod dynamics;
pub mod error;
pub mod fit;
pub mod io;
pub mod model;
pub mod spectrum;
pub mod spincore;
pub mod tomography;

pub use error::{Error, Result};
