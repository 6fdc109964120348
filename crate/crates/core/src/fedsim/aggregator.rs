//! Aggregators turn a cohort's update vectors into an estimate of their sum.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autotune::{bits_for_modulus, run_round, AutotuneConfig, AutotuneState, RoundDiagnostics};
use crate::error::{Error, Result};
use crate::quantizer::{clip_dequantize_sum, clip_quantize, ClipQuantizerParams};
use crate::rng::{derive_seed, stream, Purpose};
use crate::secagg::SecAggSession;

/// Per-round telemetry common to every aggregator. Fields that do not
/// apply to an aggregator are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregatorDiagnostics {
    pub sigma_circle: Option<f64>,
    pub sigma_value: Option<f64>,
    pub t: Option<f64>,
    pub bin_size: Option<f64>,
    pub estimated_wrap_fraction: Option<f64>,
    pub bits_per_entry: f64,
    pub max_norm_deviation: Option<f64>,
    /// One entry per tuned parameter group (autotuned aggregator only).
    pub groups: Vec<RoundDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct AggregateOutput {
    pub sum_estimate: Vec<f64>,
    pub diagnostics: AggregatorDiagnostics,
}

pub trait Aggregator {
    fn name(&self) -> &str;

    /// Estimate `sum_u updates[u]` for round `round`.
    fn aggregate(&mut self, round: u64, updates: &[Vec<f64>]) -> Result<AggregateOutput>;
}

fn check_updates(updates: &[Vec<f64>]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Value("no updates to aggregate".into()))?;
    let d = first.len();
    if let Some(bad) = updates.iter().find(|u| u.len() != d) {
        return Err(Error::Dimension(format!(
            "update lengths differ: {} vs {d}",
            bad.len()
        )));
    }
    Ok(d)
}

/// Exact floating-point sum, no quantization or masking.
#[derive(Debug, Clone, Default)]
pub struct ClearAggregator;

impl Aggregator for ClearAggregator {
    fn name(&self) -> &str {
        "clear"
    }

    fn aggregate(&mut self, _round: u64, updates: &[Vec<f64>]) -> Result<AggregateOutput> {
        let d = check_updates(updates)?;
        Ok(AggregateOutput {
            sum_estimate: clear_sum(updates, d),
            diagnostics: AggregatorDiagnostics { bits_per_entry: 64.0, ..Default::default() },
        })
    }
}

pub fn clear_sum(updates: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    for u in updates {
        sum.iter_mut().zip(u).for_each(|(s, x)| *s += x);
    }
    sum
}

/// Baseline: clip each update to `[-t, t]`, quantize onto `levels` values,
/// and securely sum with modulus `k = n * levels` so the sum never overflows.
#[derive(Debug, Clone)]
pub struct ClipQuantizeAggregator {
    params: ClipQuantizerParams,
    master_seed: u64,
}

impl ClipQuantizeAggregator {
    pub fn new(clip_range: f64, levels: u64, master_seed: u64) -> Result<Self> {
        Ok(Self { params: ClipQuantizerParams::new(clip_range, levels)?, master_seed })
    }
}

impl Aggregator for ClipQuantizeAggregator {
    fn name(&self) -> &str {
        "clip"
    }

    fn aggregate(&mut self, round: u64, updates: &[Vec<f64>]) -> Result<AggregateOutput> {
        let d = check_updates(updates)?;
        let n = updates.len();
        let modulus = self.params.levels() * n as u64;
        let session = SecAggSession::new(
            n,
            d,
            modulus,
            derive_seed(self.master_seed, Purpose::Mask, &[round]),
        )?;
        let masked = updates
            .iter()
            .enumerate()
            .map(|(u, x)| {
                let mut rng = stream(self.master_seed, Purpose::Quantization, &[round, u as u64]);
                let q = clip_quantize(x, &self.params, &mut rng)?;
                session.mask_input(u, &q)
            })
            .collect::<Result<Vec<_>>>()?;
        let sum = session.aggregate(&masked)?;
        Ok(AggregateOutput {
            sum_estimate: clip_dequantize_sum(&sum, n, &self.params),
            diagnostics: AggregatorDiagnostics {
                t: Some(self.params.clip_range()),
                bin_size: Some(self.params.bin_width()),
                bits_per_entry: f64::from(bits_for_modulus(modulus)),
                ..Default::default()
            },
        })
    }
}

/// Rotated modular secure aggregation with per-round bin-size tuning.
///
/// By default the whole parameter vector is one group. With
/// [`AutotuneAggregator::with_groups`] each contiguous range (for example a
/// model layer) gets its own rotation, bin size and fit.
#[derive(Debug, Clone)]
pub struct AutotuneAggregator {
    groups: Vec<(Range<usize>, AutotuneConfig, AutotuneState)>,
    base: AutotuneConfig,
    grouped: bool,
}

impl AutotuneAggregator {
    pub fn new(config: AutotuneConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { groups: Vec::new(), base: config, grouped: false })
    }

    /// Tune each range independently. Ranges must tile `0..d` in order.
    pub fn with_groups(config: AutotuneConfig, ranges: Vec<Range<usize>>) -> Result<Self> {
        config.validate()?;
        let mut expected_start = 0;
        for r in &ranges {
            if r.start != expected_start || r.is_empty() {
                return Err(Error::Value(format!("group ranges must tile the vector, got {ranges:?}")));
            }
            expected_start = r.end;
        }
        if ranges.is_empty() {
            return Err(Error::Value("need at least one group".into()));
        }
        let groups = ranges
            .into_iter()
            .enumerate()
            .map(|(g, range)| {
                let mut cfg = config.clone();
                cfg.master_seed = derive_seed(config.master_seed, Purpose::Init, &[g as u64]);
                let state = AutotuneState::initial(&cfg);
                (range, cfg, state)
            })
            .collect();
        Ok(Self { groups, base: config, grouped: true })
    }

    pub fn states(&self) -> Vec<&AutotuneState> {
        self.groups.iter().map(|(_, _, s)| s).collect()
    }

    fn ensure_groups(&mut self, d: usize) -> Result<()> {
        if self.groups.is_empty() {
            let state = AutotuneState::initial(&self.base);
            self.groups.push((0..d, self.base.clone(), state));
        }
        let end = self.groups.last().map(|(r, _, _)| r.end).unwrap_or(0);
        if end != d {
            return Err(Error::Dimension(format!(
                "aggregator configured for dimension {end}, got {d}"
            )));
        }
        Ok(())
    }
}

impl Aggregator for AutotuneAggregator {
    fn name(&self) -> &str {
        if self.grouped { "autotune_grouped" } else { "autotune" }
    }

    fn aggregate(&mut self, _round: u64, updates: &[Vec<f64>]) -> Result<AggregateOutput> {
        let d = check_updates(updates)?;
        self.ensure_groups(d)?;
        let mut estimate = vec![0.0; d];
        let mut group_diags = Vec::with_capacity(self.groups.len());
        for (range, cfg, state) in &mut self.groups {
            let slices: Vec<Vec<f64>> = updates.iter().map(|u| u[range.clone()].to_vec()).collect();
            let out = run_round(state, cfg, &slices)?;
            estimate[range.clone()].copy_from_slice(&out.estimate);
            *state = out.state;
            group_diags.push(out.diagnostics);
        }
        Ok(AggregateOutput { sum_estimate: estimate, diagnostics: summarize(group_diags) })
    }
}

/// Collapses group telemetry into one row: scalar fields come from the
/// largest group, wrap probability is padded-dimension weighted, and bits
/// per entry are averaged over transmitted (padded) entries.
fn summarize(groups: Vec<RoundDiagnostics>) -> AggregatorDiagnostics {
    let lead = groups
        .iter()
        .enumerate()
        .max_by_key(|(i, g)| (g.padded_dim, std::cmp::Reverse(*i)))
        .map(|(_, g)| g.clone())
        .expect("at least one group");
    let total: f64 = groups.iter().map(|g| g.padded_dim as f64).sum();
    let wrap = groups
        .iter()
        .map(|g| g.estimated_wrap_fraction.map(|w| w * g.padded_dim as f64))
        .sum::<Option<f64>>()
        .map(|w| w / total);
    let bits = groups.iter().map(|g| f64::from(g.bits_per_entry) * g.padded_dim as f64).sum::<f64>() / total;
    let max_dev = groups.iter().map(|g| g.max_norm_deviation).fold(0.0, f64::max);
    AggregatorDiagnostics {
        sigma_circle: lead.sigma_circle,
        sigma_value: lead.sigma_value,
        t: Some(lead.t),
        bin_size: Some(lead.bin_size),
        estimated_wrap_fraction: wrap,
        bits_per_entry: bits,
        max_norm_deviation: Some(max_dev),
        groups,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn updates() -> Vec<Vec<f64>> {
        (0..6)
            .map(|u| (0..50).map(|i| ((u * 50 + i) as f64 * 0.61).sin() * 0.1).collect())
            .collect()
    }

    #[test]
    fn clear_is_exact_sum() {
        let ups = updates();
        let out = ClearAggregator.aggregate(0, &ups).unwrap();
        for i in 0..50 {
            let s: f64 = ups.iter().map(|u| u[i]).sum();
            assert_eq!(out.sum_estimate[i], s);
        }
    }

    #[test]
    fn clip_baseline_is_close_for_in_range_inputs() {
        let ups = updates();
        let mut agg = ClipQuantizeAggregator::new(0.2, 1 << 12, 3).unwrap();
        let out = agg.aggregate(0, &ups).unwrap();
        let clear = clear_sum(&ups, 50);
        let width = 0.4 / 4095.0;
        for (e, c) in out.sum_estimate.iter().zip(&clear) {
            assert!((e - c).abs() <= 6.0 * width + 1e-12);
        }
        assert_eq!(out.diagnostics.bits_per_entry, 15.0);
    }

    #[test]
    fn autotune_estimate_tracks_clear_sum() {
        let ups = updates();
        let mut agg = AutotuneAggregator::new(AutotuneConfig::new(1e-4, 1 << 12, 5.0, 9).unwrap()).unwrap();
        for round in 0..3 {
            let out = agg.aggregate(round, &ups).unwrap();
            let clear = clear_sum(&ups, 50);
            let err: f64 = out.sum_estimate.iter().zip(&clear).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err < 1e-2, "round {round}: {err}");
        }
        assert_eq!(agg.states()[0].round, 3);
    }

    #[test]
    fn grouped_autotune_tiles_vector() {
        let ups = updates();
        let cfg = AutotuneConfig::new(0.01, 1 << 12, 5.0, 9).unwrap();
        let mut agg = AutotuneAggregator::with_groups(cfg.clone(), vec![0..40, 40..50]).unwrap();
        let out = agg.aggregate(0, &ups).unwrap();
        assert_eq!(out.diagnostics.groups.len(), 2);
        assert_eq!(out.sum_estimate.len(), 50);
        assert!(AutotuneAggregator::with_groups(cfg.clone(), vec![0..10, 20..50]).is_err());
        assert!(AutotuneAggregator::with_groups(cfg, vec![]).is_err());
    }

    #[test]
    fn mismatched_updates_rejected() {
        let bad = vec![vec![0.0; 3], vec![0.0; 4]];
        assert!(matches!(ClearAggregator.aggregate(0, &bad), Err(Error::Dimension(_))));
        assert!(ClearAggregator.aggregate(0, &[]).is_err());
    }
}
