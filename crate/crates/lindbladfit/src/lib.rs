//! Learning the generator of Markovian open-system dynamics from
//! finite-shot random-Pauli measurement data taken at transient times.
//!
//! The crate covers the full pipeline:
//!
//! * [`spinops`] — Pauli algebra, many-body operator construction, initial
//!   product states, and the physicality projection for density matrices.
//! * [`generators`] — the four Hamiltonian families (Rydberg, superconducting,
//!   Heisenberg XYZ, PXP), three dissipator families (phase, thermal,
//!   combined), softplus rate mapping, and ground-truth sampling with the
//!   noise-to-unitary rescaling.
//! * [`propagator`] — adaptive explicit Runge-Kutta 5(4) integration of the
//!   master equation with exact reverse-mode gradients of scalar losses
//!   through the recorded step sequence.
//! * [`neural`] — an optional shallow-MLP correction term acting on the
//!   Pauli-basis coordinates of the state, trace- and Hermiticity-preserving
//!   by construction.
//! * [`measurement`] — Born distributions in rotated Pauli bases, shot
//!   sampling, and dataset (de)serialization.
//! * [`training`] — negative log-likelihood objective, Adam, the per-shot
//!   batching scheme, and the physics-only / neural-augmented curricula.
//! * [`evaluation`] — parameter-recovery metrics, fidelity and infidelity
//!   curves, success rates over seeds, and loss-landscape scans.

pub mod error;
pub mod evaluation;
pub mod generators;
pub mod linalg;
pub mod measurement;
pub mod neural;
pub mod propagator;
pub mod rng;
pub mod spinops;
pub mod training;

pub use error::{Error, Result};
pub use linalg::CMat;
