//! Modeling toolkit for integrated quantum optical projectors (IQOPs) built
//! from 2x2 directional couplers and phase shifters.
//!
//! The crate covers five areas:
//!
//! * [`unitary`] — exact complex transfer-matrix algebra: coupler and phase
//!   shifter elements, embedding into N guides, circuit composition.
//! * [`states`] — single-photon spatial-mode qudits, the X/Y mutually
//!   unbiased bases, weak-coherent-state conditioning, detection
//!   probabilities, and seeded click sampling.
//! * [`circuits`] — the canonical four-guide splitter and random-basis
//!   projector, two-guide basis projectors, outcome interpretation, and
//!   BB84-style measurement simulation.
//! * [`calibration`] — ingestion of coupler characterization tables, coupling
//!   phase extraction with quadrant unwrapping, the linear and exponential
//!   calibration laws, and inverse geometry design.
//! * [`semiclassical`] — the grating-displacement interference sweep: phase
//!   law, sinusoidal output probabilities, Y-junction loss correction, and
//!   sweep fitting.
//!
//! Guides (spatial modes) are numbered from 1 throughout the public API,
//! matching the usual labeling of waveguides on a chip. Everything is plain
//! `f64`/`Complex64` arithmetic; algebraic identities hold to 1e-12 and all
//! random sampling takes an explicit seed.

pub mod calibration;
pub mod circuits;
pub mod error;
pub mod io;
pub mod semiclassical;
pub mod states;
pub mod unitary;

pub mod cli;

pub use error::{Error, Result};

/// Tolerance for algebraic identities (unitarity, norm preservation).
pub const ALGEBRAIC_TOL: f64 = 1e-12;

/// Tolerance for probability-vector sums fed into samplers; looser than
/// [`ALGEBRAIC_TOL`] because sampled vectors may come from fitted models.
pub const SAMPLING_SUM_TOL: f64 = 1e-9;
