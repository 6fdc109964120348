//! Randomized Hadamard rotation `R = HD`.
//!
//! `D` is a diagonal of Rademacher signs drawn from a seeded stream and `H`
//! is the orthonormal Walsh-Hadamard matrix. Inputs whose length is not a
//! power of two are zero-padded; the original length is kept so the inverse
//! can truncate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_from_seed;

/// In-place orthonormal fast Walsh-Hadamard transform.
///
/// Scaled by `1/sqrt(len)`, so the transform is its own inverse.
pub fn fwht(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Dimension(format!(
            "fwht length must be a power of two >= 1, got {n}"
        )));
    }
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(())
}

/// Rademacher signs (`+1.0` / `-1.0`) of length `len`, deterministic in `seed`.
pub fn sample_rademacher(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = stream_from_seed(seed);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let bits: u64 = rng.random();
        let take = (len - out.len()).min(64);
        out.extend((0..take).map(|i| if (bits >> i) & 1 == 1 { 1.0 } else { -1.0 }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationConfig {
    pub seed: u64,
    pub original_dim: usize,
    pub padded_dim: usize,
}

impl RotationConfig {
    pub fn new(seed: u64, original_dim: usize) -> Result<Self> {
        if original_dim == 0 {
            return Err(Error::Dimension("rotation dimension must be positive".into()));
        }
        Ok(Self {
            seed,
            original_dim,
            padded_dim: original_dim.next_power_of_two(),
        })
    }
}

/// A materialized rotation: the config plus its sign diagonal.
#[derive(Debug, Clone)]
pub struct Rotation {
    config: RotationConfig,
    signs: Vec<f64>,
}

impl Rotation {
    pub fn new(config: RotationConfig) -> Self {
        let signs = sample_rademacher(config.seed, config.padded_dim);
        Self { config, signs }
    }

    pub fn config(&self) -> &RotationConfig {
        &self.config
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// `z = H(D x)` with `x` zero-padded to the padded dimension.
    pub fn rotate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.original_dim {
            return Err(Error::Dimension(format!(
                "rotate expects length {}, got {}",
                self.config.original_dim,
                x.len()
            )));
        }
        let mut z = vec![0.0; self.config.padded_dim];
        for ((zi, &xi), &s) in z.iter_mut().zip(x).zip(&self.signs) {
            *zi = s * xi;
        }
        fwht(&mut z)?;
        Ok(z)
    }

    /// `x = D(H z)` truncated to the original dimension.
    pub fn inverse_rotate(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.config.padded_dim {
            return Err(Error::Dimension(format!(
                "inverse_rotate expects length {}, got {}",
                self.config.padded_dim,
                z.len()
            )));
        }
        let mut x = z.to_vec();
        fwht(&mut x)?;
        x.truncate(self.config.original_dim);
        for (xi, &s) in x.iter_mut().zip(&self.signs) {
            *xi *= s;
        }
        Ok(x)
    }
}

pub fn rotate(x: &[f64], config: &RotationConfig) -> Result<Vec<f64>> {
    Rotation::new(*config).rotate(x)
}

pub fn inverse_rotate(z: &[f64], config: &RotationConfig) -> Result<Vec<f64>> {
    Rotation::new(*config).inverse_rotate(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Sylvester construction, normalized.
    fn naive_hadamard(n: usize) -> Vec<Vec<f64>> {
        let scale = 1.0 / (n as f64).sqrt();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let parity = (i & j).count_ones() % 2;
                        if parity == 0 { scale } else { -scale }
                    })
                    .collect()
            })
            .collect()
    }

    fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    fn gaussian_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = stream_from_seed(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn fwht_small_cases() {
        let mut one = [1.0];
        fwht(&mut one).unwrap();
        assert_eq!(one, [1.0]);

        let mut two = [1.0, 1.0];
        fwht(&mut two).unwrap();
        assert!((two[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(two[1].abs() < 1e-15);

        let (a, b) = (0.3, -1.7);
        let mut ab = [a, b];
        fwht(&mut ab).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((ab[0] - (a + b) * r).abs() < 1e-15);
        assert!((ab[1] - (a - b) * r).abs() < 1e-15);
    }

    #[test]
    fn fwht_matches_matrix_oracle() {
        for n in [1usize, 2, 4, 8, 16] {
            let h = naive_hadamard(n);
            let v = gaussian_vec(n as u64, n);
            let expected = matvec(&h, &v);
            let mut got = v.clone();
            fwht(&mut got).unwrap();
            for (g, e) in got.iter().zip(&expected) {
                assert!((g - e).abs() < 1e-12, "n={n}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn fwht_rejects_bad_lengths() {
        assert!(matches!(fwht(&mut []), Err(Error::Dimension(_))));
        assert!(matches!(fwht(&mut [0.0; 3]), Err(Error::Dimension(_))));
        assert!(matches!(fwht(&mut [0.0; 12]), Err(Error::Dimension(_))));
    }

    #[test]
    fn rademacher_is_deterministic_and_signed() {
        let a = sample_rademacher(11, 4);
        assert_eq!(a, sample_rademacher(11, 4));
        let long = sample_rademacher(11, 1000);
        assert!(long.iter().all(|&s| s == 1.0 || s == -1.0));
        assert_eq!(&long[..4], &a[..]);
    }

    #[test]
    fn rademacher_mean_concentrates() {
        let n = 1 << 16;
        let within = (0..1000u64)
            .filter(|&seed| {
                let m = sample_rademacher(seed, n).iter().sum::<f64>() / n as f64;
                m.abs() < 0.02
            })
            .count();
        assert!(within >= 990, "{within}/1000 seeds within 0.02");
    }

    #[test]
    fn rotation_pads_and_matches_oracle() {
        let cfg = RotationConfig::new(5, 3).unwrap();
        assert_eq!(cfg.padded_dim, 4);
        let rot = Rotation::new(cfg);
        let x = [0.5, -2.0, 1.25];
        let mut padded = x.to_vec();
        padded.push(0.0);
        let dx: Vec<f64> = padded.iter().zip(rot.signs()).map(|(a, s)| a * s).collect();
        let expected = matvec(&naive_hadamard(4), &dx);
        let got = rot.rotate(&x).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_matches_oracle() {
        let cfg = RotationConfig::new(9, 8).unwrap();
        let rot = Rotation::new(cfg);
        let z = gaussian_vec(3, 8);
        // (HD)^-1 = D H since both factors are symmetric involutions.
        let hz = matvec(&naive_hadamard(8), &z);
        let expected: Vec<f64> = hz.iter().zip(rot.signs()).map(|(a, s)| a * s).collect();
        let got = rot.inverse_rotate(&z).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let cfg = RotationConfig::new(1, 7).unwrap();
        assert!(rotate(&[0.0; 7], &cfg).unwrap().iter().all(|&v| v == 0.0));
        assert!(inverse_rotate(&[0.0; 8], &cfg).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let rot = Rotation::new(RotationConfig::new(1, 5).unwrap());
        assert!(matches!(rot.rotate(&[1.0; 4]), Err(Error::Dimension(_))));
        assert!(matches!(rot.inverse_rotate(&[1.0; 5]), Err(Error::Dimension(_))));
        assert!(RotationConfig::new(1, 0).is_err());
    }

    #[test]
    fn norm_preserved_across_dims() {
        for d in [1usize, 7, 64, 1000, 4096] {
            for trial in 0..200u64 {
                let x = gaussian_vec(trial * 31 + d as u64, d);
                let rot = Rotation::new(RotationConfig::new(trial, d).unwrap());
                let z = rot.rotate(&x).unwrap();
                let (nx, nz) = (norm(&x), norm(&z));
                assert!(((nz - nx) / nx).abs() < 1e-10, "d={d}");
            }
        }
    }

    proptest! {
        #[test]
        fn roundtrip(seed in any::<u64>(), xs in prop::collection::vec(-1e3f64..1e3, 1..300)) {
            let rot = Rotation::new(RotationConfig::new(seed, xs.len()).unwrap());
            let back = rot.inverse_rotate(&rot.rotate(&xs).unwrap()).unwrap();
            for (a, b) in xs.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn fwht_involution(log_n in 0u32..=14, seed in any::<u64>()) {
            let n = 1usize << log_n;
            let v = gaussian_vec(seed, n);
            let mut w = v.clone();
            fwht(&mut w).unwrap();
            fwht(&mut w).unwrap();
            for (a, b) in v.iter().zip(&w) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
