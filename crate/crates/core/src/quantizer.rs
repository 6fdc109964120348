//! Unbounded stochastic quantization with modular reduction, and the
//! clip-then-quantize baseline.
//!
//! Values are divided by the bin size and rounded to an integer with no
//! range limit; the integer is then reduced mod `k`. Because reduction
//! commutes with summation, a value that overflows an individual user's
//! window only distorts the aggregate if the *sum* leaves the centered
//! window `[-floor(k/2), ceil(k/2))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ROUNDABLE: f64 = (1u64 << 62) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Unbiased: rounds up with probability equal to the fractional part.
    #[default]
    Stochastic,
    /// Round half away from zero.
    Nearest,
}

/// Rounds `r` down with probability `ceil(r) - r`, up otherwise.
pub fn stochastic_round<R: Rng + ?Sized>(r: f64, rng: &mut R) -> Result<i64> {
    check_roundable(r)?;
    let floor = r.floor();
    let frac = r - floor;
    let up = frac > 0.0 && rng.random::<f64>() < frac;
    Ok(floor as i64 + i64::from(up))
}

fn check_roundable(r: f64) -> Result<()> {
    if !r.is_finite() {
        return Err(Error::Value(format!("cannot round non-finite value {r}")));
    }
    if r.abs() >= MAX_ROUNDABLE {
        return Err(Error::Value(format!("value {r} exceeds the 2^62 rounding range")));
    }
    Ok(())
}

fn round_with<R: Rng + ?Sized>(r: f64, rounding: Rounding, rng: &mut R) -> Result<i64> {
    match rounding {
        Rounding::Stochastic => stochastic_round(r, rng),
        Rounding::Nearest => {
            check_roundable(r)?;
            Ok(r.round() as i64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerParams {
    bin_size: f64,
    modulus: u64,
}

impl QuantizerParams {
    pub fn new(bin_size: f64, modulus: u64) -> Result<Self> {
        if !(bin_size.is_finite() && bin_size > 0.0) {
            return Err(Error::Value(format!("bin size must be positive, got {bin_size}")));
        }
        check_modulus(modulus)?;
        Ok(Self { bin_size, modulus })
    }

    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Half the wrap period in value units: `k * b / 2`. Dequantized sums
    /// always lie in `[-half_period, half_period)`.
    pub fn half_period(&self) -> f64 {
        self.modulus as f64 * self.bin_size / 2.0
    }
}

pub(crate) fn check_modulus(modulus: u64) -> Result<()> {
    if !(2..=(1u64 << 62)).contains(&modulus) {
        return Err(Error::Value(format!("modulus must be in [2, 2^62], got {modulus}")));
    }
    Ok(())
}

/// Non-negative residue of `m` mod `k`.
pub fn reduce(m: i64, modulus: u64) -> u64 {
    m.rem_euclid(modulus as i64) as u64
}

/// Representative of `y` (mod `k`) in `[-floor(k/2), ceil(k/2))`.
pub fn centered_lift(y: u64, modulus: u64) -> i64 {
    if y < modulus.div_ceil(2) {
        y as i64
    } else {
        y as i64 - modulus as i64
    }
}

/// Integer bin indices `round(z_i / b)` with no range limit.
pub fn quantize<R: Rng + ?Sized>(
    z: &[f64],
    bin_size: f64,
    rounding: Rounding,
    rng: &mut R,
) -> Result<Vec<i64>> {
    z.iter()
        .map(|&zi| {
            if !zi.is_finite() {
                return Err(Error::Value(format!("non-finite input {zi}")));
            }
            round_with(zi / bin_size, rounding, rng)
        })
        .collect()
}

/// Quantize over an unbounded range, then reduce each index mod `k`.
pub fn quantize_mod<R: Rng + ?Sized>(
    z: &[f64],
    params: &QuantizerParams,
    rounding: Rounding,
    rng: &mut R,
) -> Result<Vec<u64>> {
    Ok(quantize(z, params.bin_size, rounding, rng)?
        .into_iter()
        .map(|m| reduce(m, params.modulus))
        .collect())
}

/// Lift each residue to its centered representative and scale by the bin size.
pub fn dequantize_sum(sum: &[u64], params: &QuantizerParams) -> Result<Vec<f64>> {
    sum.iter()
        .map(|&y| {
            if y >= params.modulus {
                return Err(Error::Value(format!(
                    "residue {y} outside [0, {})",
                    params.modulus
                )));
            }
            Ok(centered_lift(y, params.modulus) as f64 * params.bin_size)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipQuantizerParams {
    clip_range: f64,
    levels: u64,
}

impl ClipQuantizerParams {
    pub fn new(clip_range: f64, levels: u64) -> Result<Self> {
        if !(clip_range.is_finite() && clip_range > 0.0) {
            return Err(Error::Value(format!("clip range must be positive, got {clip_range}")));
        }
        if levels < 2 {
            return Err(Error::Value(format!("need at least 2 levels, got {levels}")));
        }
        Ok(Self { clip_range, levels })
    }

    pub fn clip_range(&self) -> f64 {
        self.clip_range
    }

    pub fn levels(&self) -> u64 {
        self.levels
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.clip_range / (self.levels - 1) as f64
    }
}

/// Clip to `[-t, t]` and stochastically quantize onto `0..levels`, with
/// `-t -> 0` and `+t -> levels - 1`.
pub fn clip_quantize<R: Rng + ?Sized>(
    x: &[f64],
    params: &ClipQuantizerParams,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let t = params.clip_range;
    let width = params.bin_width();
    let top = params.levels - 1;
    x.iter()
        .map(|&xi| {
            if !xi.is_finite() {
                return Err(Error::Value(format!("non-finite input {xi}")));
            }
            let scaled = (xi.clamp(-t, t) + t) / width;
            let q = stochastic_round(scaled, rng)?;
            Ok((q.max(0) as u64).min(top))
        })
        .collect()
}

/// Decodes a sum of `n_users` clip-quantized vectors back to a real sum.
pub fn clip_dequantize_sum(sum: &[u64], n_users: usize, params: &ClipQuantizerParams) -> Vec<f64> {
    let offset = n_users as f64 * params.clip_range;
    sum.iter()
        .map(|&s| s as f64 * params.bin_width() - offset)
        .collect()
}
