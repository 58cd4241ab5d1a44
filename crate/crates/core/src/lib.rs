//! Polarization-ququart tomography toolkit.
//!
//! The crate follows a biphoton (signal/idler photon pair in one spatial mode)
//! through two rotatable birefringent plates and a pair of vertical
//! polarizers, and answers two questions about that measurement scheme:
//!
//! * how well conditioned is the protocol for a given pair of plate
//!   thicknesses ([`protocol::completeness`], [`scan::scan_ratio`]), and
//! * how accurately does maximum-likelihood reconstruction recover a pure
//!   state from a finite number of coincidence events
//!   ([`reconstruction::mle_reconstruct`], [`scan::scan_info_loss`]).
//!
//! All modules share the two-photon basis order `HH, HV, VH, VV`
//! (signal polarization first).

pub mod cli;
pub mod error;
pub mod formats;
pub mod optics;
pub mod protocol;
pub mod reconstruction;
pub mod scan;
pub mod simulation;
pub mod states;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Derive an independent 64-bit seed from a parent seed and a stream index.
///
/// SplitMix64 finalizer; used wherever work is split into independently
/// seeded units (trials, grid cells) so results do not depend on scheduling.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
