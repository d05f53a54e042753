//! Command-line front end for the cooling engine: strict TOML configs with
//! dotted-path overrides, immutable scenario presets, deterministic artifact
//! emission, and the `fc-check` / `rates-dump` / `thermo` diagnostics.
//!
//! The binary in `main.rs` is a thin argument-parsing shim over this crate
//! so integration tests can drive every pipeline in-process.

pub mod config;
pub mod error;
pub mod exec;
pub mod output;
pub mod overrides;
pub mod presets;

pub use error::{CliError, CliResult};

/// FNV-1a hash of a string; used to freeze the resolved form of presets in
/// golden tests without carrying the whole text around.
pub fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
