//! Simulation of a controlled-phase gate between two atoms held in distant
//! optical cavities joined by a fiber.
//!
//! Units: κ = 1 and c = 1, so times are in 1/κ and lengths in c/κ.

pub mod channel;
pub mod error;
pub mod experiments;
pub mod export;
pub mod hamiltonian;
pub mod hilbert;
pub mod inout;
pub mod integrator;
pub mod params;
pub mod pulses;
pub mod spectral;

pub use error::{Error, Result};
