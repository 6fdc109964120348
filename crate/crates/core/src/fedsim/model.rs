//! Small classifiers over flat parameter vectors: multinomial logistic
//! regression and an optional one-hidden-layer tanh network.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

use super::data::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ModelKind {
    Logistic,
    Mlp { hidden: usize },
}

/// A named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub layers: Vec<LayerShape>,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub n_classes: usize,
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn new(input_dim: usize, n_classes: usize, kind: ModelKind) -> Result<Self> {
        if input_dim == 0 || n_classes < 2 {
            return Err(Error::Value(format!(
                "model needs input_dim >= 1 and n_classes >= 2, got {input_dim} and {n_classes}"
            )));
        }
        if let ModelKind::Mlp { hidden: 0 } = kind {
            return Err(Error::Value("hidden layer width must be positive".into()));
        }
        Ok(Self { input_dim, n_classes, kind })
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let shapes: Vec<(&str, usize)> = match self.kind {
            ModelKind::Logistic => vec![
                ("weights", self.n_classes * self.input_dim),
                ("bias", self.n_classes),
            ],
            ModelKind::Mlp { hidden } => vec![
                ("hidden_weights", hidden * self.input_dim),
                ("hidden_bias", hidden),
                ("output_weights", self.n_classes * hidden),
                ("output_bias", self.n_classes),
            ],
        };
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, len)| {
                let layer = LayerShape { name: name.to_string(), offset, len };
                offset += len;
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.len).sum()
    }

    /// Logistic models start at zero; hidden layers get Xavier-scaled noise.
    pub fn init(&self, seed: u64) -> ModelParams {
        let layers = self.layers();
        let mut values = vec![0.0; self.param_count()];
        if let ModelKind::Mlp { hidden } = self.kind {
            let mut rng = stream(seed, Purpose::Init, &[]);
            let fill = |slice: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut _| {
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                slice.iter_mut().for_each(|v| *v = dist.sample(rng));
            };
            let (h, o) = (&layers[0], &layers[2]);
            fill(&mut values[h.offset..h.offset + h.len], self.input_dim, hidden, &mut rng);
            fill(&mut values[o.offset..o.offset + o.len], hidden, self.n_classes, &mut rng);
        }
        ModelParams { values, layers }
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "model expects {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Class logits and, for the MLP, the hidden activations.
    fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            ModelKind::Logistic => {
                let b = self.n_classes * self.input_dim;
                (affine(&params[..b], &params[b..], x), Vec::new())
            }
            ModelKind::Mlp { hidden } => {
                let w1 = hidden * self.input_dim;
                let w2 = self.n_classes * hidden;
                let h: Vec<f64> = affine(&params[..w1], &params[w1..w1 + hidden], x)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                let o = w1 + hidden;
                (affine(&params[o..o + w2], &params[o + w2..], &h), h)
            }
        }
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        argmax(&self.forward(params, x).0)
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_grad(&self, params: &[f64], batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
        self.check(params)?;
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let (logits, hidden) = self.forward(params, &ex.features);
            let probs = softmax(&logits);
            loss -= probs[ex.label].max(f64::MIN_POSITIVE).ln();
            let mut delta = probs;
            delta[ex.label] -= 1.0;
            match self.kind {
                ModelKind::Logistic => {
                    let b = self.n_classes * self.input_dim;
                    let (gw, gb) = grad.split_at_mut(b);
                    accumulate_affine(gw, gb, &delta, &ex.features);
                }
                ModelKind::Mlp { hidden: width } => {
                    let w1 = width * self.input_dim;
                    let o = w1 + width;
                    let w2 = self.n_classes * width;
                    // Error signal at the hidden layer.
                    let mut dh = vec![0.0; width];
                    for (c, &dc) in delta.iter().enumerate() {
                        let row = &params[o + c * width..o + (c + 1) * width];
                        dh.iter_mut().zip(row).for_each(|(g, w)| *g += dc * w);
                    }
                    dh.iter_mut().zip(&hidden).for_each(|(g, a)| *g *= 1.0 - a * a);
                    let (first, second) = grad.split_at_mut(o);
                    let (gw2, gb2) = second.split_at_mut(w2);
                    accumulate_affine(gw2, gb2, &delta, &hidden);
                    let (gw1, gb1) = first.split_at_mut(w1);
                    accumulate_affine(gw1, gb1, &dh, &ex.features);
                }
            }
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.features.len() != self.input_dim || ex.label >= self.n_classes {
            return Err(Error::Data(format!(
                "example with {} features and label {} does not fit model ({} features, {} classes)",
                ex.features.len(),
                ex.label,
                self.input_dim,
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Fraction of `examples` classified correctly.
    pub fn accuracy(&self, params: &[f64], examples: &[Example]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let correct = examples
            .iter()
            .filter(|ex| self.predict(params, &ex.features) == ex.label)
            .count();
        correct as f64 / examples.len() as f64
    }

    pub fn mean_loss(&self, params: &[f64], examples: &[Example]) -> Result<f64> {
        let refs: Vec<&Example> = examples.iter().collect();
        Ok(self.loss_and_grad(params, &refs)?.0)
    }
}

fn affine(weights: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    bias.iter()
        .zip(weights.chunks_exact(x.len()))
        .map(|(b, row)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
        .collect()
}

fn accumulate_affine(gw: &mut [f64], gb: &mut [f64], delta: &[f64], input: &[f64]) {
    for ((row, gbi), &d) in gw.chunks_exact_mut(input.len()).zip(gb.iter_mut()).zip(delta) {
        *gbi += d;
        row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Mini-batch SGD from `params` over `data`; returns trained minus received.
pub fn local_update(
    model: &ModelSpec,
    params: &ModelParams,
    data: &[Example],
    training: &LocalTraining,
    shuffle_seed: u64,
) -> Result<Vec<f64>> {
    training.validate()?;
    if data.is_empty() {
        return Err(Error::Data("client dataset is empty".into()));
    }
    model.check(&params.values)?;
    let mut rng = crate::rng::stream_from_seed(shuffle_seed);
    let mut current = params.values.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..training.epochs {
        // Fisher-Yates with the client's stream.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(training.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (_, grad) = model.loss_and_grad(&current, &batch)?;
            current.iter_mut().zip(&grad).for_each(|(p, g)| *p -= training.lr * g);
        }
    }
    Ok(current.iter().zip(&params.values).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl LocalTraining {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Value(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Value("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for LocalTraining {
    fn default() -> Self {
        Self { lr: 0.1, batch_size: 10, epochs: 1 }
    }
}
