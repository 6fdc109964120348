//! Wrapped-normal statistics on the circle `[-pi, pi)`.
//!
//! The dequantized modular aggregate lives on a circle of circumference
//! `k * b`. Mapping it to `[-pi, pi)` lets the spread of the underlying
//! (unwrapped) normal be recovered from the mean resultant length.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrappedNormalFit {
    /// Squared mean resultant length.
    pub r_bar_sq: f64,
    /// Small-sample corrected resultant, clamped to at most 1.
    pub r_e_sq: f64,
    pub sigma_sq_hat: f64,
    pub sample_count: usize,
}

impl WrappedNormalFit {
    pub fn sigma_hat(&self) -> f64 {
        self.sigma_sq_hat.sqrt()
    }
}

/// Multiplies each entry by `pi / t`. Entries must lie in `[-t, t)`.
pub fn scale_to_circle(v: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Value(format!("circle half-width must be positive, got {t}")));
    }
    let scale = PI / t;
    v.iter()
        .map(|&x| {
            if !(x >= -t && x < t) {
                return Err(Error::Value(format!("entry {x} outside [-{t}, {t})")));
            }
            Ok(x * scale)
        })
        .collect()
}

/// Moment estimate of the wrapped-normal variance with the mean fixed at 0.
///
/// Returns `EstimateUndefined` when the corrected resultant is not
/// positive; a corrected resultant above 1 is clamped, giving `sigma^2 = 0`.
pub fn fit_sigma(samples: &[f64]) -> Result<WrappedNormalFit> {
    let d = samples.len();
    if d < 2 {
        return Err(Error::Value(format!("need at least 2 samples, got {d}")));
    }
    let (mut c, mut s) = (0.0, 0.0);
    for &x in samples {
        if !x.is_finite() {
            return Err(Error::Value(format!("non-finite sample {x}")));
        }
        c += x.cos();
        s += x.sin();
    }
    let n = d as f64;
    let (c, s) = (c / n, s / n);
    let r_bar_sq = (c * c + s * s).min(1.0);
    let r_e_sq = n / (n - 1.0) * (r_bar_sq - 1.0 / n);
    if r_e_sq.is_nan() || r_e_sq <= 0.0 {
        return Err(Error::EstimateUndefined { r_e_sq });
    }
    let r_e_sq = r_e_sq.min(1.0);
    Ok(WrappedNormalFit {
        r_bar_sq,
        r_e_sq,
        sigma_sq_hat: (1.0 / r_e_sq).ln().max(0.0),
        sample_count: d,
    })
}

/// `t` with `P(|Z| > t) = alpha` for `Z ~ N(0, sigma^2)`.
pub fn normal_tail_quantile(sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Value(format!("sigma must be positive, got {sigma}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Value(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(sigma * standard_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// Two-sided tail mass `P(|Z| > t)` for `Z ~ N(0, sigma^2)`.
pub fn normal_tail_probability(sigma: f64, t: f64) -> f64 {
    2.0 * standard_normal().sf(t.abs() / sigma)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Truncated image sum `sum_j N(x - mu + 2 pi j; 0, sigma^2)`.
pub fn wrapped_normal_pdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Value(format!("sigma must be positive, got {sigma}")));
    }
    if !x.is_finite() || !mu.is_finite() {
        return Err(Error::Value("pdf arguments must be finite".into()));
    }
    let terms = (6.0 * sigma / (2.0 * PI)).ceil() as i64 + 2;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let total: f64 = (-terms..=terms)
        .map(|j| {
            let u = x - mu + 2.0 * PI * j as f64;
            (-u * u / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(norm * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    fn wrap(x: f64) -> f64 {
        (x + PI).rem_euclid(2.0 * PI) - PI
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_to_circle(&[0.0], 3.0).unwrap(), vec![0.0]);
        assert!((scale_to_circle(&[1.0], 2.0).unwrap()[0] - PI / 2.0).abs() < 1e-15);
        assert_eq!(scale_to_circle(&[-2.0], 2.0).unwrap(), vec![-PI]);
        assert!(matches!(scale_to_circle(&[2.0], 2.0), Err(Error::Value(_))));
        assert!(matches!(scale_to_circle(&[0.0], 0.0), Err(Error::Value(_))));
    }

    #[test]
    fn zero_samples_fit_exactly() {
        let fit = fit_sigma(&[0.0; 100]).unwrap();
        assert_eq!(fit.r_bar_sq, 1.0);
        assert_eq!(fit.r_e_sq, 1.0);
        assert_eq!(fit.sigma_sq_hat, 0.0);
        assert_eq!(fit.sample_count, 100);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(fit_sigma(&[0.1]), Err(Error::Value(_))));
    }

    #[test]
    fn recovers_sigma_half() {
        let mut rng = stream_from_seed(17);
        let dist = NormalDist::new(0.0, 0.5).unwrap();
        let xs: Vec<f64> = (0..1 << 16).map(|_| wrap(dist.sample(&mut rng))).collect();
        let s = fit_sigma(&xs).unwrap().sigma_hat();
        assert!((0.475..=0.525).contains(&s), "{s}");
    }

    #[test]
    fn uniform_samples_are_undefined_or_huge() {
        let mut rng = stream_from_seed(18);
        let xs: Vec<f64> = (0..1 << 16).map(|_| rng.random_range(-PI..PI)).collect();
        match fit_sigma(&xs) {
            Err(Error::EstimateUndefined { .. }) => {}
            Ok(fit) => assert!(fit.sigma_sq_hat > 4.0, "{fit:?}"),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn opposite_points_are_undefined() {
        assert!(matches!(
            fit_sigma(&[PI / 2.0, -PI / 2.0, 0.0, -PI]),
            Err(Error::EstimateUndefined { .. })
        ));
    }

    #[test]
    fn permutation_invariant() {
        let xs = [0.3, -1.2, 2.0, 0.01, -0.4, 1.1];
        let mut ys = xs;
        ys.reverse();
        ys.swap(0, 3);
        let (a, b) = (fit_sigma(&xs).unwrap(), fit_sigma(&ys).unwrap());
        assert!((a.sigma_sq_hat - b.sigma_sq_hat).abs() < 1e-12);
        assert!((a.r_bar_sq - b.r_bar_sq).abs() < 1e-12);
    }

    #[test]
    fn fit_invariants_hold() {
        let mut rng = stream_from_seed(19);
        for sigma in [0.05, 0.4, 1.3, 2.0] {
            let dist = NormalDist::new(0.0, sigma).unwrap();
            let xs: Vec<f64> = (0..500).map(|_| wrap(dist.sample(&mut rng))).collect();
            if let Ok(fit) = fit_sigma(&xs) {
                assert!((0.0..=1.0).contains(&fit.r_bar_sq));
                let d = xs.len() as f64;
                let expected_re = (d / (d - 1.0) * (fit.r_bar_sq - 1.0 / d)).min(1.0);
                assert!((fit.r_e_sq - expected_re).abs() < 1e-15);
                assert!((fit.sigma_sq_hat - (1.0 / fit.r_e_sq).ln()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tail_quantile_examples() {
        let t1 = normal_tail_quantile(1.0, 0.05).unwrap();
        assert!((t1 - 1.959964).abs() < 1e-4);
        assert_eq!(normal_tail_quantile(2.0, 0.05).unwrap(), 2.0 * t1);
        let tiny = normal_tail_quantile(1.0, 0.9999).unwrap();
        assert!(tiny > 0.0 && tiny < 2e-4);
        assert!(normal_tail_quantile(1.0, 0.0).is_err());
        assert!(normal_tail_quantile(1.0, 1.0).is_err());
        assert!(normal_tail_quantile(0.0, 0.5).is_err());
    }

    #[test]
    fn tail_quantile_is_monotone_in_alpha() {
        let alphas = [1e-6, 1e-3, 0.01, 0.05, 0.1, 0.5];
        let ts: Vec<f64> = alphas.iter().map(|&a| normal_tail_quantile(0.7, a).unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn pdf_limits() {
        let narrow = wrapped_normal_pdf(0.0, 0.0, 0.1).unwrap();
        assert!((narrow - 1.0 / (0.1 * (2.0 * PI).sqrt())).abs() < 1e-9);
        assert!((narrow - 3.9894).abs() < 1e-4);
        for x in [-3.0, -1.0, 0.0, 2.5] {
            let wide = wrapped_normal_pdf(x, 0.0, 10.0).unwrap();
            assert!((wide - 1.0 / (2.0 * PI)).abs() < 1e-9, "{wide}");
        }
        assert!(wrapped_normal_pdf(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pdf_is_periodic_and_symmetric() {
        let a = wrapped_normal_pdf(1.0, 0.3, 1.2).unwrap();
        let b = wrapped_normal_pdf(1.0 - 2.0 * PI, 0.3, 1.2).unwrap();
        assert!((a - b).abs() < 1e-12);
        let l = wrapped_normal_pdf(-0.8, 0.0, 0.9).unwrap();
        let r = wrapped_normal_pdf(0.8, 0.0, 0.9).unwrap();
        assert!((l - r).abs() < 1e-15);
    }
}
