//! Core engine for simulating collective Raman sideband cooling of a
//! spin-polarized Fermi gas in a harmonic or weakly anharmonic trap.
//!
//! The crate is organized bottom-up:
//!
//! * [`trap`] — level/shell ladders, degeneracies, Fermi-surface bookkeeping;
//! * [`fc`] — Franck–Condon amplitudes ⟨l|e^{ikx}|m⟩ stable to n ≳ 500 and
//!   angular quadrature over the fluorescence pattern;
//! * [`rates`] — nonlinear transition-rate matrices with Pauli blocking and
//!   the collectively suppressed linewidth;
//! * [`dynamics`] — pulse-sequence integration of the occupation vector;
//! * [`statmech`] — Fermi–Dirac initialization and thermometry.
//!
//! All quantities are dimensionless: energies in units of ħω, times in
//! units of 1/ω, with ħ = k_B = 1. The lowest trap level sits at zero
//! energy and detunings are quoted relative to the carrier.

pub mod dynamics;
pub mod error;
pub mod fc;
pub mod rates;
pub mod statmech;
pub mod trap;
pub mod util;

pub use error::{Error, Result};
