//! Seeded random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha12 stream whose key
//! is derived from one master seed plus a purpose label and a list of
//! indices (round, client, ...). Streams for different purposes never
//! share state, so changing how many draws one consumer makes cannot
//! perturb another, and results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Diagonal,
    Quantization,
    Mask,
    Cohort,
    Shuffle,
    Data,
    Init,
    Aggregator,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Diagonal => 0x6469_6167_6f6e_616c,
            Purpose::Quantization => 0x7175_616e_7469_7a65,
            Purpose::Mask => 0x6d61_736b_7061_6972,
            Purpose::Cohort => 0x636f_686f_7274_7365,
            Purpose::Shuffle => 0x7368_7566_666c_6573,
            Purpose::Data => 0x7379_6e74_6864_6174,
            Purpose::Init => 0x696e_6974_7061_7261,
            Purpose::Aggregator => 0x6167_6772_6567_6174,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from `(master, purpose, indices...)`.
///
/// Each component is absorbed with a SplitMix64 finalizer, so the result is
/// order-sensitive: `[round, client]` and `[client, round]` differ.
pub fn derive_seed(master: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ purpose.tag());
    h = splitmix64(h ^ indices.len() as u64);
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn stream_from_seed(seed: u64) -> StreamRng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, purpose: Purpose, indices: &[u64]) -> StreamRng {
    stream_from_seed(derive_seed(master, purpose, indices))
}
