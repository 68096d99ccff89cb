//! Desk-scale simulator and gate-characterization toolkit for a two-qubit
//! transmon processor whose qubits interact through a flux-tunable coupler.
//!
//! The crate is split along the physical pipeline:
//!
//! - [`device`]: circuit quantization, static spectrum, ZZ and exchange rates.
//! - [`pulse`]: flat-top Gaussian flux waveforms and IIR predistortion.
//! - [`dynamics`]: pulse-level propagation, conditional and dynamic phases,
//!   leakage.
//! - [`characterization`]: Clifford randomized benchmarking, process
//!   tomography, fidelity formulas and readout correction.
//! - [`harness`]: experiment recipes, CZ calibration and artifact output.
//!
//! Energies are stored as frequencies `E/h` in GHz, times in ns and flux in
//! units of the superconducting flux quantum.

pub mod characterization;
pub mod device;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod pulse;

pub use error::{Error, Result};
