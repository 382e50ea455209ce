use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.rows(), t.cols());
        Self {
            config,
            step: 0,
            first: params.tensors().iter().map(zeros).collect(),
            second: params.tensors().iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, slot: usize) -> &Tensor<T> {
        &self.first[slot]
    }

    pub fn second_moment(&self, slot: usize) -> &Tensor<T> {
        &self.second[slot]
    }

    /// Applies one update; `grads[i]` pairs with parameter slot `i`.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} gradients for {} parameters",
                self.first.len(),
                grads.len(),
                params.len()
            )));
        }
        for (slot, g) in grads.iter().enumerate() {
            if g.shape() != params.tensor(slot).shape() {
                return Err(Error::shape(
                    "adam_update",
                    params.tensor(slot).shape(),
                    g.shape(),
                ));
            }
            if !g.all_finite() {
                return Err(Error::Training {
                    param: params.names()[slot].clone(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.learning_rate), T::of(c.epsilon));
        for (slot, g) in grads.iter().enumerate() {
            let m = self.first[slot].data_mut();
            let v = self.second[slot].data_mut();
            let p = params.tensor_mut(slot).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Mini-batch schedule shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch,
            seed,
            adam: AdamConfig::default(),
        }
    }
}

/// Runs shuffled mini-batch descent. `loss_fn` builds the batch loss on a
/// fresh graph from the bound parameter leaves and the sample indices of the
/// batch. Returns the per-epoch mean loss (weighted by batch size).
pub fn train_minibatch<T, F>(
    params: &mut ParamStore<T>,
    n_samples: usize,
    cfg: &TrainConfig,
    mut loss_fn: F,
) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&Graph<T>, &[Var], &[usize]) -> Result<Var>,
{
    if n_samples == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::Config(
            "epochs and batch size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, params);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = T::zero();
        for batch in order.chunks(cfg.batch) {
            let g = Graph::new();
            let vars = params.bind(&g);
            let loss = loss_fn(&g, &vars, batch)?;
            let value = g.item(loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    stage: "epoch",
                    index: epoch,
                    detail: format!("loss became {value}"),
                });
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor<T>> = vars.iter().map(|&v| grads.wrt(v)).collect();
            adam.update(params, &grads)?;
            total += value * T::of(batch.len() as f64);
        }
        history.push(total / T::of(n_samples as f64));
    }
    Ok(history)
}
