//! Communication-efficient secure aggregation with an automatically tuned
//! quantization range.
//!
//! Each user rotates its update with a seeded randomized Hadamard transform,
//! quantizes it over an unbounded range and reduces it mod `k`. Pairwise
//! masks hide individual inputs while the modular sum survives exactly. The
//! server fits a wrapped normal to the dequantized sum and picks the bin
//! size for the next round so that a target fraction `alpha` of entries
//! wrap.

pub mod autotune;
pub mod error;
pub mod fedsim;
pub mod hadamard;
pub mod quantizer;
pub mod rng;
pub mod secagg;
pub mod wrapped_normal;

pub use error::{Error, Result};
