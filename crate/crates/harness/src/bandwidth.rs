//! Bits-per-entry accounting for the clip baseline, its overflow-free
//! secure sum, and the fixed-modulus autotuned pipeline.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub n_users: u64,
    pub levels: u64,
    pub modulus: u64,
    pub dim: u64,
    /// Bits for one κ-level value sent in the clear.
    pub clear_bits: u32,
    /// Bits for one residue mod `n * κ`.
    pub secagg_bits: u32,
    /// Bits for one residue mod the autotuned pipeline's fixed `k`.
    pub autotune_bits: u32,
    pub secagg_expansion: f64,
    pub autotune_expansion: f64,
    /// Autotuned relative to the overflow-free secure sum.
    pub autotune_vs_secagg: f64,
    pub secagg_vector_bits: u128,
    pub autotune_vector_bits: u128,
}

fn bits(m: u128) -> u32 {
    128 - (m - 1).leading_zeros()
}

/// All arguments must be at least 1; `levels` and `modulus` at least 2.
pub fn bandwidth_report(n_users: u64, levels: u64, modulus: u64, dim: u64) -> BandwidthReport {
    assert!(n_users >= 1 && levels >= 2 && modulus >= 2 && dim >= 1, "bandwidth_report arguments out of range");
    let clear_bits = bits(u128::from(levels));
    let secagg_bits = bits(u128::from(levels) * u128::from(n_users));
    let autotune_bits = bits(u128::from(modulus));
    BandwidthReport {
        n_users,
        levels,
        modulus,
        dim,
        clear_bits,
        secagg_bits,
        autotune_bits,
        secagg_expansion: f64::from(secagg_bits) / f64::from(clear_bits),
        autotune_expansion: f64::from(autotune_bits) / f64::from(clear_bits),
        autotune_vs_secagg: f64::from(autotune_bits) / f64::from(secagg_bits),
        secagg_vector_bits: u128::from(secagg_bits) * u128::from(dim),
        autotune_vector_bits: u128::from(autotune_bits) * u128::from(dim.next_power_of_two()),
    }
}

impl std::fmt::Display for BandwidthReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "users            {}", self.n_users)?;
        writeln!(f, "clear            {} bits/entry (levels {})", self.clear_bits, self.levels)?;
        writeln!(f, "secagg k=n*levels {} bits/entry, {}x", self.secagg_bits, self.secagg_expansion)?;
        writeln!(f, "autotune         {} bits/entry (k {}), {}x", self.autotune_bits, self.modulus, self.autotune_expansion)?;
        writeln!(f, "autotune/secagg  {}", self.autotune_vs_secagg)?;
        write!(f, "vector bits      secagg {} autotune {} (d={})", self.secagg_vector_bits, self.autotune_vector_bits, self.dim)
    }
}
