//! Simulation and calibration toolkit for an adiabatic controlled-Z gate on a
//! superconducting qubit–tunable-coupler–qubit circuit.
//!
//! The pipeline mirrors a full gate bring-up: diagonalize the three-mode device
//! Hamiltonian, map out the effective longitudinal coupling `chi12` versus
//! coupler frequency, calibrate a half-period-sinusoid flux pulse to a pi
//! conditional phase, benchmark the resulting gate with (interleaved)
//! randomized benchmarking over simulated noise channels, and decompose the
//! gate error into dephasing, relaxation and nonadiabatic contributions.

pub mod budget;
pub mod calibration;
pub mod device;
pub mod dynamics;
pub mod fit;
pub mod rb;
pub mod spectrum;

pub use device::{BareState, CouplingGraph, DeviceParams, FluxMap, Mode, ModeSpec};
pub use dynamics::{NoiseModel, PulseShape, QuantumChannel};

use device::BareState as Bare;

/// Toolkit-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("ambiguous label assignment for {label}: eigenstates {candidates:?} overlap within {tolerance:e}")]
    DegenerateLabel {
        label: Bare,
        candidates: (usize, usize),
        tolerance: f64,
    },
    #[error("out of range: {0}")]
    Range(String),
    #[error("accuracy target missed in {what}: achieved {achieved:e}, required {required:e}")]
    Accuracy {
        what: String,
        achieved: f64,
        required: f64,
    },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
