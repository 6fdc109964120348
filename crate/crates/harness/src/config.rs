//! Flat TOML experiment configuration.

use std::path::{Path, PathBuf};

use rotsecagg::autotune::{AutotuneConfig, RotationSeedPolicy};
use rotsecagg::fedsim::{FedConfig, LocalTraining, ModelKind, TaskShape};
use rotsecagg::quantizer::{ClipQuantizerParams, Rounding};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Clear,
    Clip,
    Autotune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Logistic,
    Mlp,
}

/// Every key is optional; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of the metrics file name.
    pub name: String,
    pub seed: u64,
    pub rounds: u64,

    pub clients: usize,
    pub examples_per_client: usize,
    pub eval_examples: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub class_separation: f64,

    pub model: ModelChoice,
    pub hidden: usize,

    pub participation: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub local_epochs: usize,

    pub aggregator: AggregatorKind,
    pub alpha: f64,
    pub modulus: u64,
    pub initial_t: f64,
    pub rounding: Rounding,
    pub rotation_seed_policy: RotationSeedPolicy,
    /// Weight of the new range in an exponential moving average; 0 disables.
    pub ema: f64,
    /// Tune each model layer separately.
    pub per_layer: bool,
    pub clip_range: f64,
    pub clip_levels: u64,

    /// Also compute the clear sum and report the estimate's MSE.
    pub paired: bool,
    /// Write a JSON-lines copy of the metrics next to the CSV.
    pub jsonl: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let task = TaskShape::default();
        let training = LocalTraining::default();
        Self {
            name: "run".into(),
            seed: 0,
            rounds: 200,
            clients: task.n_clients,
            examples_per_client: task.examples_per_client,
            eval_examples: task.eval_examples,
            input_dim: task.input_dim,
            classes: task.n_classes,
            class_separation: task.class_separation,
            model: ModelChoice::Logistic,
            hidden: 32,
            participation: 0.1,
            lr: training.lr,
            batch_size: training.batch_size,
            local_epochs: training.epochs,
            aggregator: AggregatorKind::Autotune,
            alpha: 0.05,
            modulus: 256,
            initial_t: 1.0,
            rounding: Rounding::Stochastic,
            rotation_seed_policy: RotationSeedPolicy::FreshPerRound,
            ema: 0.0,
            per_layer: false,
            clip_range: 0.1,
            clip_levels: 256,
            paired: false,
            jsonl: false,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn field(name: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config { field: name.to_string(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| field("<file>", e.message()))?;
        Self::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    fn from_table(table: toml::Table) -> Result<Self, HarnessError> {
        let defaults = Self::default().to_table()?;
        for (key, value) in &table {
            if !defaults.contains_key(key) {
                return Err(field(key, "unknown key"));
            }
            let mut probe = defaults.clone();
            probe.insert(key.clone(), value.clone());
            if let Err(e) = probe.try_into::<Self>() {
                return Err(field(key, e.message()));
            }
        }
        let mut merged = defaults;
        merged.extend(table);
        merged.try_into::<Self>().map_err(|e| field("<file>", e.message()))
    }

    fn to_table(&self) -> Result<toml::Table, HarnessError> {
        toml::Table::try_from(self).map_err(|e| field("seed", e.to_string()))
    }

    /// Applies `key=value` overrides. Values are parsed as TOML, falling back
    /// to a bare string.
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, HarnessError> {
        let mut table = self.to_table()?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| field(raw, "override must look like key=value"))?;
            let key = key.trim();
            if !table.contains_key(key) {
                return Err(field(key, "unknown key"));
            }
            table.insert(key.to_string(), parse_value(value.trim()));
        }
        Self::from_table(table)
    }

    /// Checks every field against the ranges the simulator accepts.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(field("name", "must be a non-empty file stem"));
        }
        if self.clients == 0 {
            return Err(field("clients", "must be at least 1"));
        }
        if self.examples_per_client == 0 {
            return Err(field("examples_per_client", "must be at least 1"));
        }
        if self.eval_examples == 0 {
            return Err(field("eval_examples", "must be at least 1"));
        }
        if self.input_dim == 0 {
            return Err(field("input_dim", "must be at least 1"));
        }
        if self.classes < 2 {
            return Err(field("classes", "must be at least 2"));
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return Err(field("class_separation", "must be finite and non-negative"));
        }
        if self.model == ModelChoice::Mlp && self.hidden == 0 {
            return Err(field("hidden", "must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(field("participation", "must be in (0, 1]"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(field("lr", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return Err(field("ema", "must be in [0, 1]"));
        }
        match self.aggregator {
            AggregatorKind::Clear => {}
            AggregatorKind::Autotune => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(field("alpha", "must be in (0, 1)"));
                }
                if !(2..=1u64 << 62).contains(&self.modulus) {
                    return Err(field("modulus", "must be in [2, 2^62]"));
                }
                if !(self.initial_t.is_finite() && self.initial_t > 0.0) {
                    return Err(field("initial_t", "must be finite and positive"));
                }
                self.autotune_config().map_err(|e| field("alpha", e.to_string()))?;
            }
            AggregatorKind::Clip => {
                if !(self.clip_range.is_finite() && self.clip_range > 0.0) {
                    return Err(field("clip_range", "must be finite and positive"));
                }
                if self.clip_levels < 2 {
                    return Err(field("clip_levels", "must be at least 2"));
                }
                let cohort = ((self.clients as f64 * self.participation).round() as u64).max(1);
                if self.clip_levels.checked_mul(cohort).is_none_or(|k| k > 1u64 << 62) {
                    return Err(field("clip_levels", "clip_levels times cohort size must not exceed 2^62"));
                }
                ClipQuantizerParams::new(self.clip_range, self.clip_levels)
                    .map_err(|e| field("clip_levels", e.to_string()))?;
            }
        }
        self.fed_config().training.validate().map_err(|e| field("lr", e.to_string()))?;
        Ok(())
    }

    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            task: TaskShape {
                n_clients: self.clients,
                examples_per_client: self.examples_per_client,
                eval_examples: self.eval_examples,
                input_dim: self.input_dim,
                n_classes: self.classes,
                class_separation: self.class_separation,
            },
            model: match self.model {
                ModelChoice::Logistic => ModelKind::Logistic,
                ModelChoice::Mlp => ModelKind::Mlp { hidden: self.hidden },
            },
            training: LocalTraining { lr: self.lr, batch_size: self.batch_size, epochs: self.local_epochs },
            participation_fraction: self.participation,
            rounds: self.rounds,
            seed: self.seed,
            paired: self.paired,
        }
    }

    pub fn autotune_config(&self) -> rotsecagg::Result<AutotuneConfig> {
        let mut cfg = AutotuneConfig::new(
            self.alpha,
            self.modulus,
            self.initial_t,
            rotsecagg::rng::derive_seed(self.seed, rotsecagg::rng::Purpose::Aggregator, &[]),
        )?;
        cfg.rounding = self.rounding;
        cfg.rotation_seed_policy = self.rotation_seed_policy;
        cfg.ema = (self.ema > 0.0).then_some(self.ema);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
