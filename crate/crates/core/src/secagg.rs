//! Functional model of pairwise-mask secure aggregation.
//!
//! Every unordered pair of users `{u, v}` shares a seed derived from the
//! session seed. For `u < v` the seed expands to a mask uniform on
//! `[0, k)^d`; user `u` adds it and user `v` adds its negation mod `k`.
//! Each masked input is individually uniform, and the masks cancel in the
//! sum. Key agreement, secret sharing and dropout recovery are not modeled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::check_modulus;
use crate::rng::{derive_seed, stream_from_seed, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecAggSession {
    n_users: usize,
    dim: usize,
    modulus: u64,
    session_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub user: usize,
    pub values: Vec<u64>,
}

impl SecAggSession {
    pub fn new(n_users: usize, dim: usize, modulus: u64, session_seed: u64) -> Result<Self> {
        if n_users == 0 {
            return Err(Error::Value("session needs at least one user".into()));
        }
        if dim == 0 {
            return Err(Error::Value("session dimension must be positive".into()));
        }
        check_modulus(modulus)?;
        Ok(Self { n_users, dim, modulus, session_seed })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.n_users {
            return Err(Error::Protocol(format!(
                "user {u} not in session of {} users",
                self.n_users
            )));
        }
        Ok(())
    }

    /// Symmetric pair seed: the same for `(u, v)` and `(v, u)`.
    pub fn pair_seed(&self, u: usize, v: usize) -> u64 {
        let (lo, hi) = if u < v { (u, v) } else { (v, u) };
        derive_seed(self.session_seed, Purpose::Mask, &[lo as u64, hi as u64])
    }

    /// User `u`'s half of the mask pair shared with `v`.
    pub fn derive_mask(&self, u: usize, v: usize) -> Result<Vec<u64>> {
        self.check_user(u)?;
        self.check_user(v)?;
        if u == v {
            return Err(Error::Protocol(format!("user {u} cannot share a mask with itself")));
        }
        let mut mask = vec![0; self.dim];
        fill_uniform(self.pair_seed(u, v), &mut mask, self.modulus);
        if u > v {
            let k = self.modulus;
            mask.iter_mut().for_each(|m| *m = if *m == 0 { 0 } else { k - *m });
        }
        Ok(mask)
    }

    /// `(y + sum_{v != u} mask(u, v)) mod k`.
    pub fn mask_input(&self, u: usize, y: &[u64]) -> Result<MaskedInput> {
        self.check_user(u)?;
        if y.len() != self.dim {
            return Err(Error::Dimension(format!(
                "user {u} input has length {}, session expects {}",
                y.len(),
                self.dim
            )));
        }
        let k = self.modulus;
        if let Some(bad) = y.iter().find(|&&v| v >= k) {
            return Err(Error::Value(format!("input entry {bad} outside [0, {k})")));
        }
        let mut values = y.to_vec();
        let mut mask = vec![0; self.dim];
        for v in (0..self.n_users).filter(|&v| v != u) {
            fill_uniform(self.pair_seed(u, v), &mut mask, k);
            let pairs = values.iter_mut().zip(&mask);
            match (u < v, k.is_power_of_two()) {
                (true, true) => pairs.for_each(|(acc, &m)| *acc = acc.wrapping_add(m) & (k - 1)),
                (false, true) => pairs.for_each(|(acc, &m)| *acc = acc.wrapping_sub(m) & (k - 1)),
                (true, false) => pairs.for_each(|(acc, &m)| *acc = add_mod(*acc, m, k)),
                (false, false) => pairs.for_each(|(acc, &m)| *acc = sub_mod(*acc, m, k)),
            }
        }
        Ok(MaskedInput { user: u, values })
    }

    /// Entrywise sum mod `k` of exactly one masked input per user.
    pub fn aggregate(&self, inputs: &[MaskedInput]) -> Result<Vec<u64>> {
        let mut seen = vec![false; self.n_users];
        for input in inputs {
            self.check_user(input.user)?;
            if std::mem::replace(&mut seen[input.user], true) {
                return Err(Error::Protocol(format!("duplicate input from user {}", input.user)));
            }
            if input.values.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "user {} submitted length {}, session expects {}",
                    input.user,
                    input.values.len(),
                    self.dim
                )));
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Protocol(format!("missing input from user {missing}")));
        }
        Ok(modular_sum(inputs.iter().map(|i| i.values.as_slice()), self.dim, self.modulus))
    }
}

/// Both operands in `[0, k)` with `k <= 2^62`, so the sum cannot overflow.
#[inline]
fn add_mod(a: u64, b: u64, k: u64) -> u64 {
    let s = a + b;
    if s >= k { s - k } else { s }
}

#[inline]
fn sub_mod(a: u64, b: u64, k: u64) -> u64 {
    if a >= b { a - b } else { a + k - b }
}

/// Plain entrywise sum mod `k`.
pub fn modular_sum<'a>(vectors: impl IntoIterator<Item = &'a [u64]>, dim: usize, modulus: u64) -> Vec<u64> {
    let mut acc = vec![0u64; dim];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v) {
            let x = if x >= modulus { x % modulus } else { x };
            *a = add_mod(*a, x, modulus);
        }
    }
    acc
}

/// Fills `out` with values uniform on `[0, k)` expanded from `seed`.
///
/// Power-of-two moduli up to 2^32 slice each 64-bit draw into several
/// entries; other moduli use rejection sampling.
fn fill_uniform(seed: u64, out: &mut [u64], k: u64) {
    let mut rng = stream_from_seed(seed);
    if k.is_power_of_two() && k <= 1 << 32 {
        let bits = k.trailing_zeros();
        let mut words = vec![0u64; out.len().div_ceil(64 / bits as usize)];
        rng.fill(&mut words[..]);
        match bits {
            1 => unpack::<1>(&words, out),
            2 => unpack::<2>(&words, out),
            4 => unpack::<4>(&words, out),
            8 => unpack::<8>(&words, out),
            16 => unpack::<16>(&words, out),
            32 => unpack::<32>(&words, out),
            _ => {
                let per_word = 64 / bits as usize;
                for (chunk, mut word) in out.chunks_mut(per_word).zip(words) {
                    for o in chunk {
                        *o = word & (k - 1);
                        word >>= bits;
                    }
                }
            }
        }
    } else {
        out.iter_mut().for_each(|o| *o = rng.random_range(0..k));
    }
}

/// Splits each word into `64 / BITS` little-endian fields.
fn unpack<const BITS: u32>(words: &[u64], out: &mut [u64]) {
    let per_word = (64 / BITS) as usize;
    let mask = (1u64 << BITS) - 1;
    for (chunk, &word) in out.chunks_mut(per_word).zip(words) {
        for (j, o) in chunk.iter_mut().enumerate() {
            *o = (word >> (j as u32 * BITS)) & mask;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_uniform_matches_bit_slicing_reference() {
        use rand::RngCore;
        for bits in 1..=32u32 {
            let k = 1u64 << bits;
            for len in [1usize, 7, 100] {
                let mut got = vec![0; len];
                fill_uniform(42 + u64::from(bits), &mut got, k);
                let mut rng = stream_from_seed(42 + u64::from(bits));
                let per_word = 64 / bits as usize;
                let mut want = Vec::new();
                while want.len() < len {
                    let w = rng.next_u64();
                    for j in 0..per_word.min(len - want.len()) {
                        want.push((w >> (j as u32 * bits)) & (k - 1));
                    }
                }
                assert_eq!(got, want, "bits {bits} len {len}");
            }
        }
    }
    use crate::rng::stream_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square_p(counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
        1.0 - dist.cdf(stat)
    }

    #[test]
    fn masks_cancel_pairwise() {
        for k in [2u64, 7, 256, 1 << 16, 1_000_003] {
            let s = SecAggSession::new(4, 33, k, 99).unwrap();
            let a = s.derive_mask(0, 1).unwrap();
            let b = s.derive_mask(1, 0).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| (x + y) % k == 0));
            assert!(a.iter().all(|&x| x < k));
            assert_eq!(a, s.derive_mask(0, 1).unwrap());
        }
    }

    #[test]
    fn self_mask_is_a_protocol_error() {
        let s = SecAggSession::new(3, 4, 8, 1).unwrap();
        assert!(matches!(s.derive_mask(1, 1), Err(Error::Protocol(_))));
        assert!(matches!(s.derive_mask(0, 3), Err(Error::Protocol(_))));
    }

    #[test]
    fn mask_entries_are_uniform() {
        let s = SecAggSession::new(8, 1 << 10, 256, 2024).unwrap();
        let mut counts = vec![0u64; 256];
        for u in 0..8 {
            for v in 0..8 {
                if u != v {
                    for m in s.derive_mask(u, v).unwrap() {
                        counts[m as usize] += 1;
                    }
                }
            }
        }
        assert!(chi_square_p(&counts) > 0.01);
    }

    #[test]
    fn single_user_is_unmasked() {
        let s = SecAggSession::new(1, 3, 8, 5).unwrap();
        assert_eq!(s.mask_input(0, &[1, 2, 7]).unwrap().values, vec![1, 2, 7]);
    }

    #[test]
    fn two_user_worked_example() {
        // Search for a session whose single-entry mask_01 is 5, then check the
        // masked values and the aggregate by hand.
        let seed = (0u64..)
            .find(|&s| SecAggSession::new(2, 1, 8, s).unwrap().derive_mask(0, 1).unwrap() == [5])
            .unwrap();
        let s = SecAggSession::new(2, 1, 8, seed).unwrap();
        assert_eq!(s.derive_mask(1, 0).unwrap(), vec![3]);
        let m0 = s.mask_input(0, &[3]).unwrap();
        let m1 = s.mask_input(1, &[6]).unwrap();
        assert_eq!(m0.values, vec![0]);
        assert_eq!(m1.values, vec![1]);
        assert_eq!(s.aggregate(&[m0, m1]).unwrap(), vec![1]);
    }

    #[test]
    fn zero_inputs_aggregate_to_zero() {
        let s = SecAggSession::new(5, 16, 256, 3).unwrap();
        let inputs: Vec<_> = (0..5).map(|u| s.mask_input(u, &[0; 16]).unwrap()).collect();
        assert_eq!(s.aggregate(&inputs).unwrap(), vec![0; 16]);
    }

    #[test]
    fn aggregate_rejects_missing_and_duplicate_users() {
        let s = SecAggSession::new(3, 2, 16, 3).unwrap();
        let m: Vec<_> = (0..3).map(|u| s.mask_input(u, &[1, 2]).unwrap()).collect();
        assert!(matches!(s.aggregate(&m[..2]), Err(Error::Protocol(_))));
        let dup = vec![m[0].clone(), m[1].clone(), m[1].clone()];
        assert!(matches!(s.aggregate(&dup), Err(Error::Protocol(_))));
        let stranger = MaskedInput { user: 7, values: vec![0, 0] };
        assert!(matches!(s.aggregate(&[stranger]), Err(Error::Protocol(_))));
    }

    #[test]
    fn mask_input_validates() {
        let s = SecAggSession::new(2, 2, 16, 3).unwrap();
        assert!(matches!(s.mask_input(0, &[16, 0]), Err(Error::Value(_))));
        assert!(matches!(s.mask_input(0, &[1]), Err(Error::Dimension(_))));
        assert!(SecAggSession::new(0, 2, 16, 0).is_err());
        assert!(SecAggSession::new(2, 2, 1, 0).is_err());
    }

    #[test]
    fn masked_input_marginal_is_uniform() {
        let k = 16u64;
        let mut counts = vec![0u64; k as usize];
        for seed in 0..10_000u64 {
            let s = SecAggSession::new(3, 1, k, seed).unwrap();
            counts[s.mask_input(0, &[5]).unwrap().values[0] as usize] += 1;
        }
        assert!(chi_square_p(&counts) > 0.01);
    }

    #[test]
    fn total_mask_cancels() {
        for (n, k) in [(2usize, 2u64), (9, 256), (17, 1 << 16), (6, 1000)] {
            let s = SecAggSession::new(n, 64, k, n as u64).unwrap();
            let mut total = vec![0u64; 64];
            for u in 0..n {
                for v in (0..n).filter(|&v| v != u) {
                    for (t, m) in total.iter_mut().zip(s.derive_mask(u, v).unwrap()) {
                        *t = (*t + m) % k;
                    }
                }
            }
            assert!(total.iter().all(|&t| t == 0));
        }
    }

    proptest! {
        #[test]
        fn aggregate_is_exact(n in 1usize..12, dim in 1usize..40, log_k in 1u32..20, seed in any::<u64>()) {
            let k = 1u64 << log_k;
            let s = SecAggSession::new(n, dim, k, seed).unwrap();
            let mut rng = stream_from_seed(seed ^ 1);
            let ys: Vec<Vec<u64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0..k)).collect()).collect();
            let masked: Vec<_> = ys.iter().enumerate().map(|(u, y)| s.mask_input(u, y).unwrap()).collect();
            let expected = modular_sum(ys.iter().map(|y| y.as_slice()), dim, k);
            prop_assert_eq!(s.aggregate(&masked).unwrap(), expected);
        }

        #[test]
        fn reducing_before_masking_changes_nothing(n in 1usize..8, seed in any::<u64>()) {
            let k = 251u64;
            let dim = 5;
            let s = SecAggSession::new(n, dim, k, seed).unwrap();
            let mut rng = stream_from_seed(seed);
            let raw: Vec<Vec<i64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-5000..5000)).collect()).collect();
            let reduced: Vec<Vec<u64>> = raw.iter().map(|r| r.iter().map(|&m| m.rem_euclid(k as i64) as u64).collect()).collect();
            let masked: Vec<_> = reduced.iter().enumerate().map(|(u, y)| s.mask_input(u, y).unwrap()).collect();
            let agg = s.aggregate(&masked).unwrap();
            for i in 0..dim {
                let direct: i64 = raw.iter().map(|r| r[i]).sum();
                prop_assert_eq!(agg[i], direct.rem_euclid(k as i64) as u64);
            }
        }
    }
}
