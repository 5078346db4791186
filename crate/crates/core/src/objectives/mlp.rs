//! Small fully connected classifier on synthetic Gaussian clusters.
//!
//! Cluster means sit on a circle and alternate labels, so the default
//! two-class, two-cluster task is an XOR layout that a linear model cannot
//! separate. Hidden layers use tanh, the output is softmax cross-entropy.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_gradient, BallDomain, BatchRef, Metrics, Objective};
use crate::error::{Error, Result};

const INPUT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationConfig {
    pub classes: usize,
    pub clusters_per_class: usize,
    pub radius: f64,
    pub spread: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    /// Skip the finite-difference check at construction.
    pub skip_self_test: bool,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            clusters_per_class: 2,
            radius: 1.0,
            spread: 0.3,
            train_samples: 256,
            test_samples: 1024,
            hidden: vec![16, 16],
            batch_size: 32,
            skip_self_test: false,
        }
    }
}

impl ClassificationConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("mlp task: {m}")));
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if self.clusters_per_class == 0 {
            return bad("clusters_per_class must be >= 1");
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return bad("sample counts must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1");
        }
        if !(self.spread >= 0.0 && self.radius >= 0.0) {
            return bad("radius and spread must be >= 0");
        }
        Ok(())
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![INPUT_DIM];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn generate<R: Rng>(cfg: &ClassificationConfig, count: usize, rng: &mut R) -> Self {
        let total_clusters = cfg.classes * cfg.clusters_per_class;
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = i % cfg.classes;
            let k = rng.random_range(0..cfg.clusters_per_class);
            let slot = k * cfg.classes + label;
            let angle = 2.0 * std::f64::consts::PI * slot as f64 / total_clusters as f64;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            inputs.push([
                cfg.radius * angle.cos() + cfg.spread * nx,
                cfg.radius * angle.sin() + cfg.spread * ny,
            ]);
            labels.push(label);
        }
        Self { inputs, labels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct MlpTask {
    config: ClassificationConfig,
    widths: Vec<usize>,
    dim: usize,
    train: Dataset,
    test: Dataset,
    domain: BallDomain,
}

impl MlpTask {
    pub fn new(config: ClassificationConfig, data_seed: u64) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let dim = widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let train = Dataset::generate(&config, config.train_samples, &mut rng);
        let test = Dataset::generate(&config, config.test_samples, &mut rng);
        let task = Self {
            domain: BallDomain::new(vec![0.0; dim], 2.0 * (dim as f64).sqrt()),
            config,
            widths,
            dim,
            train,
            test,
        };
        if !task.config.skip_self_test {
            check_gradient(&task, 2, 20, 1e-4, data_seed ^ 0x9e37)?;
        }
        Ok(task)
    }

    pub fn config(&self) -> &ClassificationConfig {
        &self.config
    }

    pub fn dataset(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Mean cross-entropy and its gradient over the given training indices.
    pub fn loss_and_gradient(
        &self,
        w: &[f64],
        data: &Dataset,
        idx: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        let layers = self.widths.len() - 1;
        let mut grad = vec![0.0; self.dim];
        let mut loss = 0.0;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        for &s in idx {
            acts.clear();
            acts.push(data.inputs[s].to_vec());
            self.forward_into(w, &mut acts);
            let out = &acts[layers];
            let probs = softmax(out);
            let y = data.labels[s];
            loss -= probs[y].max(f64::MIN_POSITIVE).ln();

            // delta at the output pre-activation
            let mut delta: Vec<f64> = probs.clone();
            delta[y] -= 1.0;
            let mut offset = self.dim;
            for l in (0..layers).rev() {
                let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
                offset -= fan_in * fan_out + fan_out;
                let input = &acts[l];
                for o in 0..fan_out {
                    let row = offset + o * fan_in;
                    for i in 0..fan_in {
                        grad[row + i] += delta[o] * input[i];
                    }
                    grad[offset + fan_out * fan_in + o] += delta[o];
                }
                if l > 0 {
                    let mut prev = vec![0.0; fan_in];
                    for o in 0..fan_out {
                        let row = offset + o * fan_in;
                        for i in 0..fan_in {
                            prev[i] += w[row + i] * delta[o];
                        }
                    }
                    // tanh' = 1 - a^2
                    for (p, a) in prev.iter_mut().zip(input) {
                        *p *= 1.0 - a * a;
                    }
                    delta = prev;
                }
            }
        }
        let m = idx.len().max(1) as f64;
        loss /= m;
        grad.iter_mut().for_each(|g| *g /= m);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "mlp loss {loss} is not finite (max |w| = {})",
                w.iter().fold(0.0f64, |a, b| a.max(b.abs()))
            )));
        }
        Ok((loss, grad))
    }

    /// Fills `acts[1..]` given `acts[0]` = input. Last entry holds logits.
    fn forward_into(&self, w: &[f64], acts: &mut Vec<Vec<f64>>) {
        let layers = self.widths.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let input = &acts[l];
            let bias = offset + fan_in * fan_out;
            let mut out = vec![0.0; fan_out];
            for (o, z) in out.iter_mut().enumerate() {
                let row = &w[offset + o * fan_in..offset + (o + 1) * fan_in];
                *z = w[bias + o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if l + 1 < layers {
                    *z = z.tanh();
                }
            }
            offset = bias + fan_out;
            acts.push(out);
        }
    }

    pub fn predict(&self, w: &[f64], x: &[f64; INPUT_DIM]) -> usize {
        let mut acts = vec![x.to_vec()];
        self.forward_into(w, &mut acts);
        let out = acts.last().unwrap();
        out.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    /// Top-1 accuracy in percent.
    pub fn accuracy(&self, w: &[f64], split: Split) -> f64 {
        let data = self.dataset(split);
        let correct = data
            .inputs
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| self.predict(w, x) == y)
            .count();
        100.0 * correct as f64 / data.len() as f64
    }

    /// Training indices of one mini-batch; the epoch order is a seeded shuffle.
    pub fn batch_indices(&self, batch: BatchRef) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(batch.seed);
        rng.set_stream(batch.epoch + 1);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let bs = self.config.batch_size;
        let start = (batch.index * bs).min(order.len());
        let end = (start + bs).min(order.len());
        order[start..end].to_vec()
    }

    pub fn write_dataset_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "split,x0,x1,label")?;
        for (name, d) in [("train", &self.train), ("test", &self.test)] {
            for (x, y) in d.inputs.iter().zip(&d.labels) {
                writeln!(f, "{name},{},{},{y}", x[0], x[1])?;
            }
        }
        Ok(())
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Objective for MlpTask {
    fn name(&self) -> &str {
        "mlp"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64]) -> f64 {
        let idx: Vec<usize> = (0..self.train.len()).collect();
        self.loss_and_gradient(w, &self.train, &idx)
            .map(|r| r.0)
            .unwrap_or(f64::NAN)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let idx: Vec<usize> = (0..self.train.len()).collect();
        self.loss_and_gradient(w, &self.train, &idx)
            .map(|r| r.1)
            .unwrap_or_else(|_| vec![f64::NAN; self.dim])
    }

    fn domain(&self) -> &BallDomain {
        &self.domain
    }

    fn batches_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.batch_size)
    }

    fn batch_value_and_gradient(&self, w: &[f64], batch: BatchRef) -> Result<(f64, Vec<f64>)> {
        let idx = self.batch_indices(batch);
        self.loss_and_gradient(w, &self.train, &idx)
    }

    /// Glorot-uniform weights, zero biases.
    fn initial_point(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Vec::with_capacity(self.dim);
        for p in self.widths.windows(2) {
            let (fan_in, fan_out) = (p[0], p[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                w.push(rng.random_range(-a..a));
            }
            w.extend(std::iter::repeat_n(0.0, fan_out));
        }
        w
    }

    fn metrics(&self, w: &[f64]) -> Option<Metrics> {
        Some(Metrics {
            train_loss: self.value(w),
            train_accuracy: self.accuracy(w, Split::Train),
            test_accuracy: self.accuracy(w, Split::Test),
        })
    }
}
