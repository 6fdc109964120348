//! Runs one configured experiment end to end and writes its metrics.

use std::path::PathBuf;

use rotsecagg::fedsim::{Aggregator, AutotuneAggregator, ClearAggregator, ClipQuantizeAggregator, Simulation};
use rotsecagg::rng::{derive_seed, Purpose};

use crate::config::{AggregatorKind, ExperimentConfig};
use crate::error::HarnessError;
use crate::metrics::{MetricsWriter, RoundMetrics};

pub fn build_aggregator(config: &ExperimentConfig, sim: &Simulation) -> Result<Box<dyn Aggregator>, HarnessError> {
    Ok(match config.aggregator {
        AggregatorKind::Clear => Box::new(ClearAggregator),
        AggregatorKind::Clip => Box::new(ClipQuantizeAggregator::new(
            config.clip_range,
            config.clip_levels,
            derive_seed(config.seed, Purpose::Aggregator, &[]),
        )?),
        AggregatorKind::Autotune => {
            let cfg = config.autotune_config()?;
            if config.per_layer {
                let ranges = sim.model().layers().iter().map(|l| l.offset..l.offset + l.len).collect();
                Box::new(AutotuneAggregator::with_groups(cfg, ranges)?)
            } else {
                Box::new(AutotuneAggregator::new(cfg)?)
            }
        }
    })
}

/// Validates `config`, runs it and returns the path of the metrics CSV,
/// `<out_dir>/<name>.csv`. The same config always produces the same bytes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    config.validate()?;
    let sim = Simulation::new(config.fed_config())?;
    let mut aggregator = build_aggregator(config, &sim)?;
    std::fs::create_dir_all(&config.out_dir).map_err(|source| HarnessError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    let path = config.out_dir.join(format!("{}.csv", config.name));
    let mut writer = MetricsWriter::create(&path, config.jsonl)?;
    let mut failure = None;
    sim.run(aggregator.as_mut(), |record| {
        if let Err(e) = writer.write(&RoundMetrics::from(record)) {
            failure = Some(e);
            return Err(rotsecagg::Error::Data("metrics write failed".into()));
        }
        Ok(())
    })
    .map_err(|e| failure.take().unwrap_or(HarnessError::Sim(e)))?;
    writer.finish()
}

/// One run per value of `param`, named `<name>_<param>_<value>`.
pub fn sweep<S: AsRef<str>>(
    config: &ExperimentConfig,
    param: &str,
    values: &[S],
) -> Result<Vec<PathBuf>, HarnessError> {
    let configs = values
        .iter()
        .map(|v| {
            let v = v.as_ref().trim();
            let mut cfg = config.apply_overrides(&[format!("{param}={v}")])?;
            cfg.name = format!("{}_{param}_{v}", config.name);
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    configs.iter().map(run_experiment).collect()
}
