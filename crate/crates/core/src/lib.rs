//! Resolved-sideband Raman cooling of atoms in a two-dimensional,
//! far-off-resonance optical lattice.
//!
//! The crate is organised bottom-up:
//!
//! * [`units`]: species constants and the lattice-natural unit system
//!   (energies in Eᵣ, lengths in 1/k, times in ħ/Eᵣ, fields in mG).
//! * [`field`]: the three-beam coplanar lattice field and its spherical
//!   polarization decomposition.
//! * [`potential`]: the multilevel light-shift operator, diabatic surfaces,
//!   well finding and the Lamb-Dicke expansion of the Raman coupling.
//! * [`levels`]: vibrational level schemes for the stretched and partner
//!   sublevels and the sideband resonance condition.
//! * [`dynamics`]: the rate-equation cooling model, steady states, time
//!   evolution and a kinetic Monte Carlo unraveling.
//! * [`diagnostics`]: momentum distributions, time-of-flight signals,
//!   temperature fits, Boltzmann factors and sideband scans.
//! * [`scenario`]: the plain-text scenario format and its resolution into
//!   the objects above.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod fit;
pub mod levels;
pub mod potential;
pub mod scenario;
pub mod units;

pub use error::{Error, Result};

/// Complex double used for fields and operator elements.
pub type C64 = num_complex::Complex64;
/// In-plane position or direction, in units of 1/k.
pub type Vec2 = nalgebra::Vector2<f64>;
