//! Client datasets and a synthetic multiclass task.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub clients: Vec<ClientDataset>,
    pub eval: Vec<Example>,
    pub input_dim: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskShape {
    pub n_clients: usize,
    pub examples_per_client: usize,
    pub eval_examples: usize,
    pub input_dim: usize,
    pub n_classes: usize,
    /// Standard deviation of each class-mean coordinate; features add unit noise.
    pub class_separation: f64,
}

impl Default for TaskShape {
    fn default() -> Self {
        Self {
            n_clients: 100,
            examples_per_client: 50,
            eval_examples: 2000,
            input_dim: 32,
            n_classes: 10,
            class_separation: 0.8,
        }
    }
}

/// Gaussian class clusters with i.i.d. balanced client partitions.
///
/// Class `c` has a mean drawn once from `N(0, separation^2 I)`; each
/// example is its class mean plus `N(0, I)` noise. Labels are assigned
/// round-robin and then shuffled, so every client sees every class about
/// equally often.
pub fn make_synthetic_task(shape: &TaskShape, seed: u64) -> Result<SyntheticTask> {
    let TaskShape { n_clients, examples_per_client, eval_examples, input_dim, n_classes, class_separation } = *shape;
    if n_clients == 0 || examples_per_client == 0 || eval_examples == 0 || input_dim == 0 || n_classes < 2 {
        return Err(Error::Value(format!("invalid task shape {shape:?}")));
    }
    if !(class_separation.is_finite() && class_separation > 0.0) {
        return Err(Error::Value(format!("class separation must be positive, got {class_separation}")));
    }
    let mut rng = stream(seed, Purpose::Data, &[]);
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..input_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    class_separation * z
                })
                .collect()
        })
        .collect();
    let draw = |count: usize, rng: &mut StreamRng| -> Vec<Example> {
        let mut labels: Vec<usize> = (0..count).map(|i| i % n_classes).collect();
        for i in (1..labels.len()).rev() {
            let j = rng.random_range(0..=i);
            labels.swap(i, j);
        }
        labels
            .into_iter()
            .map(|label| {
                let features = means[label]
                    .iter()
                    .map(|m| {
                        let noise: f64 = StandardNormal.sample(rng);
                        m + noise
                    })
                    .collect();
                Example { features, label }
            })
            .collect()
    };
    let pool = draw(n_clients * examples_per_client, &mut rng);
    let eval = draw(eval_examples, &mut rng);
    let clients = pool
        .chunks_exact(examples_per_client)
        .enumerate()
        .map(|(client_id, chunk)| ClientDataset { client_id, examples: chunk.to_vec() })
        .collect();
    Ok(SyntheticTask { clients, eval, input_dim, n_classes })
}
