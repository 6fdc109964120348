//! Per-round orchestration of rotated modular secure aggregation with
//! automatic bin-size selection.
//!
//! One call to [`run_round`]:
//!
//! 1. derives the round's rotation from the master seed,
//! 2. rotates every user vector,
//! 3. quantizes each rotated vector with the current bin size and reduces it mod `k`,
//! 4. masks and aggregates the residues,
//! 5. fits a zero-mean wrapped normal to the dequantized sum on the circle,
//! 6. sets the next range `t` from the normal tail quantile at `alpha`,
//! 7. derives the next bin size `2t / (k - 1)`,
//! 8. returns the inverse-rotated sum estimate and the state for the next round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hadamard::{Rotation, RotationConfig};
use crate::quantizer::{check_modulus, dequantize_sum, quantize_mod, QuantizerParams, Rounding};
use crate::rng::{derive_seed, stream, Purpose};
use crate::secagg::SecAggSession;
use crate::wrapped_normal::{
    fit_sigma, normal_tail_probability, normal_tail_quantile, scale_to_circle, WrappedNormalFit,
};

/// Lower bound on the tuned range, so an all-zero round cannot produce a
/// zero bin size.
pub const MIN_RANGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationSeedPolicy {
    /// `derive_seed(master, Diagonal, [round])`.
    #[default]
    FreshPerRound,
    /// Same rotation every round.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutotuneConfig {
    /// Target probability that one entry of the rotated sum wraps.
    pub alpha: f64,
    pub modulus: u64,
    pub initial_t: f64,
    pub master_seed: u64,
    pub rotation_seed_policy: RotationSeedPolicy,
    pub rounding: Rounding,
    /// Optional smoothing of `t` across rounds: `t <- w * t_new + (1 - w) * t_old`.
    pub ema: Option<f64>,
}

impl AutotuneConfig {
    pub fn new(alpha: f64, modulus: u64, initial_t: f64, master_seed: u64) -> Result<Self> {
        let config = Self {
            alpha,
            modulus,
            initial_t,
            master_seed,
            rotation_seed_policy: RotationSeedPolicy::default(),
            rounding: Rounding::default(),
            ema: None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Value(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        check_modulus(self.modulus)?;
        if !(self.initial_t.is_finite() && self.initial_t > 0.0) {
            return Err(Error::Value(format!("initial_t must be positive, got {}", self.initial_t)));
        }
        if let Some(w) = self.ema {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Value(format!("ema weight must be in (0, 1], got {w}")));
            }
        }
        Ok(())
    }

    pub fn rotation_seed(&self, round: u64) -> u64 {
        match self.rotation_seed_policy {
            RotationSeedPolicy::FreshPerRound => derive_seed(self.master_seed, Purpose::Diagonal, &[round]),
            RotationSeedPolicy::Fixed => derive_seed(self.master_seed, Purpose::Diagonal, &[]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutotuneState {
    pub round: u64,
    pub current_t: f64,
    pub current_bin: f64,
    pub last_fit: Option<WrappedNormalFit>,
}

impl AutotuneState {
    pub fn initial(config: &AutotuneConfig) -> Self {
        Self {
            round: 0,
            current_t: config.initial_t,
            current_bin: bin_size_from_range(config.initial_t, config.modulus),
            last_fit: None,
        }
    }
}

/// What happened in one round, for telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: u64,
    pub n_users: usize,
    pub padded_dim: usize,
    /// Range and bin size used for this round's quantization.
    pub t: f64,
    pub bin_size: f64,
    /// Half of the wrap period `k * b`, the circle's half-width in value units.
    pub half_period: f64,
    pub fit: Option<WrappedNormalFit>,
    pub sigma_circle: Option<f64>,
    pub sigma_value: Option<f64>,
    /// Fitted probability that an entry of this round's sum wrapped.
    pub estimated_wrap_fraction: Option<f64>,
    pub next_t: f64,
    pub next_bin: f64,
    /// Largest relative change in a user vector's norm under rotation.
    pub max_norm_deviation: f64,
    pub bits_per_entry: u32,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// Estimate of the sum of the user vectors, in the original coordinates.
    pub estimate: Vec<f64>,
    pub state: AutotuneState,
    pub diagnostics: RoundDiagnostics,
}

/// `alpha * d`: expected number of entries distorted by wrapping.
pub fn expected_distortions(alpha: f64, d: usize) -> f64 {
    alpha * d as f64
}

/// `2t / (k - 1)`, mapping `[-t, t]` onto `k` levels.
pub fn bin_size_from_range(t: f64, modulus: u64) -> f64 {
    2.0 * t / (modulus - 1) as f64
}

/// Bits needed to send one residue mod `k`.
pub fn bits_for_modulus(modulus: u64) -> u32 {
    64 - (modulus - 1).leading_zeros()
}

pub fn run_round(
    state: &AutotuneState,
    config: &AutotuneConfig,
    user_vectors: &[Vec<f64>],
) -> Result<RoundOutput> {
    config.validate()?;
    let n = user_vectors.len();
    if n == 0 {
        return Err(Error::Value("round needs at least one user vector".into()));
    }
    let d = user_vectors[0].len();
    if let Some((u, v)) = user_vectors.iter().enumerate().find(|(_, v)| v.len() != d) {
        return Err(Error::Dimension(format!(
            "user {u} vector has length {}, expected {d}",
            v.len()
        )));
    }

    let round = state.round;
    let k = config.modulus;
    let rotation = Rotation::new(RotationConfig::new(config.rotation_seed(round), d)?);
    let padded = rotation.config().padded_dim;
    let params = QuantizerParams::new(state.current_bin, k)?;
    let session = SecAggSession::new(
        n,
        padded,
        k,
        derive_seed(config.master_seed, Purpose::Mask, &[round]),
    )?;

    let mut max_norm_deviation = 0.0f64;
    let mut masked = Vec::with_capacity(n);
    for (u, x) in user_vectors.iter().enumerate() {
        let z = rotation.rotate(x)?;
        let (nx, nz) = (l2(x), l2(&z));
        if nx > 0.0 {
            max_norm_deviation = max_norm_deviation.max((nz - nx).abs() / nx);
        }
        let mut rng = stream(config.master_seed, Purpose::Quantization, &[round, u as u64]);
        let y = quantize_mod(&z, &params, config.rounding, &mut rng)?;
        masked.push(session.mask_input(u, &y)?);
    }
    let sum = session.aggregate(&masked)?;
    let dequantized = dequantize_sum(&sum, &params)?;
    let estimate = rotation.inverse_rotate(&dequantized)?;

    let half_period = params.half_period();
    let circle = scale_to_circle(&dequantized, half_period)?;
    let mut next = state.clone();
    next.round = round + 1;
    let (mut this_fit, mut sigma_circle, mut sigma_value, mut wrap) = (None, None, None, None);
    let fitted = if circle.len() < 2 {
        Err(Error::EstimateUndefined { r_e_sq: f64::NAN })
    } else {
        fit_sigma(&circle)
    };
    match fitted {
        Ok(fit) => {
            let s_circle = fit.sigma_hat();
            let s_value = s_circle * half_period / std::f64::consts::PI;
            let t_star = if s_value > 0.0 {
                normal_tail_quantile(s_value, config.alpha)?.max(MIN_RANGE)
            } else {
                MIN_RANGE
            };
            let t_new = match config.ema {
                Some(w) => w * t_star + (1.0 - w) * state.current_t,
                None => t_star,
            };
            next.current_t = t_new;
            next.current_bin = bin_size_from_range(t_new, k);
            next.last_fit = Some(fit);
            this_fit = Some(fit);
            sigma_circle = Some(s_circle);
            sigma_value = Some(s_value);
            wrap = Some(if s_value > 0.0 { normal_tail_probability(s_value, half_period) } else { 0.0 });
        }
        // Too dispersed (or too short) to fit: keep the current range.
        Err(Error::EstimateUndefined { .. }) => {}
        Err(e) => return Err(e),
    }

    let diagnostics = RoundDiagnostics {
        round,
        n_users: n,
        padded_dim: padded,
        t: state.current_t,
        bin_size: state.current_bin,
        half_period,
        fit: this_fit,
        sigma_circle,
        sigma_value,
        estimated_wrap_fraction: wrap,
        next_t: next.current_t,
        next_bin: next.current_bin,
        max_norm_deviation,
        bits_per_entry: bits_for_modulus(k),
    };
    Ok(RoundOutput { estimate, state: next, diagnostics })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
