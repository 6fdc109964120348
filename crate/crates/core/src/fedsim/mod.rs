//! Desk-scale federated averaging.
//!
//! Each round samples a cohort, runs local SGD on every member, hands the
//! raw updates to an [`Aggregator`] and adds the estimated mean update to
//! the global model. All randomness is drawn from streams derived from the
//! run's master seed, keyed by round and client id.

pub mod aggregator;
pub mod data;
pub mod model;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Purpose};

pub use aggregator::{
    clear_sum, AggregateOutput, Aggregator, AggregatorDiagnostics, AutotuneAggregator,
    ClearAggregator, ClipQuantizeAggregator,
};
pub use data::{make_synthetic_task, ClientDataset, Example, SyntheticTask, TaskShape};
pub use model::{local_update, LayerShape, LocalTraining, ModelKind, ModelParams, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_total: usize,
    pub participation_fraction: f64,
    pub round_seed: u64,
}

impl CohortSpec {
    pub fn new(n_total: usize, participation_fraction: f64, round_seed: u64) -> Result<Self> {
        if n_total == 0 {
            return Err(Error::Value("cohort population must be positive".into()));
        }
        if !(participation_fraction > 0.0 && participation_fraction <= 1.0) {
            return Err(Error::Value(format!(
                "participation fraction must be in (0, 1], got {participation_fraction}"
            )));
        }
        Ok(Self { n_total, participation_fraction, round_seed })
    }

    pub fn cohort_size(&self) -> usize {
        ((self.n_total as f64 * self.participation_fraction).round() as usize).clamp(1, self.n_total)
    }

    /// Distinct client ids for `round`, in ascending order.
    pub fn sample(&self, round: u64) -> Vec<usize> {
        let mut rng = stream(self.round_seed, Purpose::Cohort, &[round]);
        let mut ids = index::sample(&mut rng, self.n_total, self.cohort_size()).into_vec();
        ids.sort_unstable();
        ids
    }
}

/// `params + estimate / n`, where `estimate` is the aggregator's sum.
pub fn server_round(
    params: &ModelParams,
    updates: &[Vec<f64>],
    aggregator: &mut dyn Aggregator,
    round: u64,
) -> Result<(ModelParams, AggregateOutput)> {
    if let Some(bad) = updates.iter().find(|u| u.len() != params.dim()) {
        return Err(Error::Dimension(format!(
            "update has length {}, model has {}",
            bad.len(),
            params.dim()
        )));
    }
    let out = aggregator.aggregate(round, updates)?;
    let n = updates.len() as f64;
    let mut next = params.clone();
    next.values
        .iter_mut()
        .zip(&out.sum_estimate)
        .for_each(|(p, s)| *p += s / n);
    Ok((next, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub task: TaskShape,
    pub model: ModelKind,
    pub training: LocalTraining,
    pub participation_fraction: f64,
    pub rounds: u64,
    pub seed: u64,
    /// Also compute the clear sum each round and report the estimate's MSE.
    /// Only possible in simulation.
    pub paired: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            task: TaskShape::default(),
            model: ModelKind::Logistic,
            training: LocalTraining::default(),
            participation_fraction: 0.1,
            rounds: 200,
            seed: 0,
            paired: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub cohort_size: usize,
    /// Accuracy on the evaluation split after applying this round's update.
    pub eval_accuracy: f64,
    /// Mean cross-entropy of the received model on the cohort's data.
    pub train_loss: f64,
    pub diagnostics: AggregatorDiagnostics,
    /// Mean squared error of the sum estimate against the clear sum.
    pub sum_mse: Option<f64>,
    /// Largest L2 norm among the cohort's updates.
    pub max_update_norm: f64,
}

pub struct Simulation {
    config: FedConfig,
    model: ModelSpec,
    task: SyntheticTask,
    cohorts: CohortSpec,
}

impl Simulation {
    pub fn new(config: FedConfig) -> Result<Self> {
        config.training.validate()?;
        let model = ModelSpec::new(config.task.input_dim, config.task.n_classes, config.model)?;
        let task = make_synthetic_task(&config.task, derive_seed(config.seed, Purpose::Data, &[]))?;
        let cohorts = CohortSpec::new(config.task.n_clients, config.participation_fraction, config.seed)?;
        Ok(Self { config, model, task, cohorts })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    pub fn initial_params(&self) -> ModelParams {
        self.model.init(derive_seed(self.config.seed, Purpose::Init, &[]))
    }

    /// Runs every configured round, calling `on_round` after each.
    pub fn run(
        &self,
        aggregator: &mut dyn Aggregator,
        mut on_round: impl FnMut(&RoundRecord) -> Result<()>,
    ) -> Result<ModelParams> {
        let mut params = self.initial_params();
        for round in 0..self.config.rounds {
            let (next, record) = self.step(&params, aggregator, round)?;
            on_round(&record)?;
            params = next;
        }
        Ok(params)
    }

    pub fn step(
        &self,
        params: &ModelParams,
        aggregator: &mut dyn Aggregator,
        round: u64,
    ) -> Result<(ModelParams, RoundRecord)> {
        let cohort = self.cohorts.sample(round);
        let mut train_loss = 0.0;
        let mut updates = Vec::with_capacity(cohort.len());
        for &client in &cohort {
            let data = &self.task.clients[client].examples;
            train_loss += self.model.mean_loss(&params.values, data)?;
            let seed = derive_seed(self.config.seed, Purpose::Shuffle, &[round, client as u64]);
            updates.push(local_update(&self.model, params, data, &self.config.training, seed)?);
        }
        train_loss /= cohort.len() as f64;
        let max_update_norm = updates
            .iter()
            .map(|u| u.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);

        let (next, out) = server_round(params, &updates, aggregator, round)?;
        let sum_mse = self.config.paired.then(|| {
            let clear = clear_sum(&updates, params.dim());
            clear
                .iter()
                .zip(&out.sum_estimate)
                .map(|(c, e)| (c - e).powi(2))
                .sum::<f64>()
                / clear.len() as f64
        });
        let record = RoundRecord {
            round,
            cohort_size: cohort.len(),
            eval_accuracy: self.model.accuracy(&next.values, &self.task.eval),
            train_loss,
            diagnostics: out.diagnostics,
            sum_mse,
            max_update_norm,
        };
        Ok((next, record))
    }
}
