//! Privacy-preserving record linkage over fuzzy matches.
//!
//! Records are grouped into fields, shingled, and condensed into Min-Hash
//! band signatures. Two parties then compare band signatures through a
//! commutative-encryption private set intersection, learning which record
//! pairs share at least one band and nothing about the rest.

pub mod analysis;
pub mod bench;
pub mod config;
pub mod error;
pub mod group;
pub mod lsh;
pub mod model;
pub mod protocol;
pub mod psi;
pub mod synth;
pub mod transport;

pub use error::{Error, ErrorCode, Result};
