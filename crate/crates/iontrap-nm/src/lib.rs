//! Simulation and analysis of non-Markovian dephasing dynamics for a
//! laser-driven trapped-ion qubit coupled to one or two quantized motional
//! modes.
//!
//! The physical model is a two-level ion driven at Rabi frequency Ω with
//! detuning δ, coupled to harmonic motion at frequencies νᵢ through the full
//! displacement operator e^{iΣᵢηᵢ(aᵢ+aᵢ†)} — no rotating-wave or Lamb-Dicke
//! truncation — with Markovian qubit dephasing at rate γ. The interesting
//! regime is Ω ~ νᵢ, where information flows back from the motion and the
//! reduced qubit dynamics become measurably non-Markovian.
//!
//! The crate is organized as a small stack:
//!
//! * [`linalg`] — dense complex kernels (matrix exponential, solves, checks).
//! * [`hilbert`] — operators and states on the qubit ⊗ motion space.
//! * [`dynamics`] — master-equation integration, frames, Bloch trajectories.
//! * [`nmeasure`] — trace-distance non-Markovianity and its error chain.
//! * [`noise`] — simulated finite-shot tomography noise.
//! * [`sweep`] — parameter sweeps with parallel execution and resume.
//! * [`config`] / [`cli`] — run configuration, presets, command-line driver.

pub mod dynamics;
pub mod hilbert;
pub mod linalg;
pub mod cli;
pub mod config;
pub mod nmeasure;
pub mod noise;
pub mod sweep;

use thiserror::Error as ThisError;

/// Crate-wide error type.
///
/// Configuration and validation problems are reported separately from
/// runtime/integration failures so the command-line driver can map them to
/// distinct exit codes.
#[derive(Debug, ThisError)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("integration failure: {0}")]
    IntegrationFailure(String),
    #[error("singular matrix encountered in linear solve")]
    SingularMatrix,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
