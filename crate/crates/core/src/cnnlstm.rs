//! Convolution-then-recurrence forecaster.
//!
//! A same-padded 1-D convolution with tanh activation extracts local
//! features from the drivers and target history; an LSTM runs over the
//! feature sequence and a linear head maps its final hidden state to the
//! one-step prediction.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{check_dataset, Forecaster, Window};
use crate::scalar::Scalar;
use crate::tensor::{
    dense, glorot_uniform, lstm_step, train_minibatch, Graph, LstmVars, ParamDoc, ParamStore,
    Tensor, TrainConfig, Var,
};

pub const MODEL_NAME: &str = "cnnlstm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnLstmConfig {
    pub window: usize,
    /// Driver count; the target history is one extra input channel.
    pub n_drivers: usize,
    /// Odd convolution width.
    pub kernel_width: usize,
    pub filters: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for CnnLstmConfig {
    fn default() -> Self {
        Self {
            window: 10,
            n_drivers: 2,
            kernel_width: 3,
            filters: 16,
            hidden: 32,
            seed: 0,
        }
    }
}

impl CnnLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.filters == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "window, filters and hidden size must be at least 1".into(),
            ));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel width {} must be odd",
                self.kernel_width
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.n_drivers + 1
    }
}

const CONV_K: usize = 0;
const CONV_B: usize = 1;
const LSTM_W: usize = 2;
const LSTM_B: usize = 3;
const HEAD_W: usize = 4;
const HEAD_B: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnLstm<T> {
    pub config: CnnLstmConfig,
    pub params: ParamStore<T>,
}

/// Time-major `[T·B, D+1]` input: row `t·B + b` holds the drivers of window
/// `b` at step `t` followed by its target.
pub fn stack_inputs<T: Scalar>(
    batch: &[&Window<T>],
    len: usize,
    n_drivers: usize,
) -> Result<Tensor<T>> {
    for w in batch {
        w.check(len, n_drivers)?;
    }
    let b = batch.len();
    Ok(Tensor::from_fn(len * b, n_drivers + 1, |r, c| {
        let (t, w) = (r / b, batch[r % b]);
        if c < n_drivers {
            w.drivers[t][c]
        } else {
            w.history[t]
        }
    }))
}

/// `tanh(conv1d(x) + bias)` over a time-major batch, `[T·B, F]`.
pub fn conv_features<T: Scalar>(
    cfg: &CnnLstmConfig,
    g: &Graph<T>,
    p: &[Var],
    x: Var,
) -> Result<Var> {
    Ok(g.tanh(g.add(g.conv1d(x, p[CONV_K], cfg.window)?, p[CONV_B])?))
}

/// Batched forward pass, `[B, 1]` predictions.
pub fn forward_graph<T: Scalar>(
    cfg: &CnnLstmConfig,
    g: &Graph<T>,
    p: &[Var],
    batch: &[&Window<T>],
) -> Result<Var> {
    let x = g.leaf(stack_inputs(batch, cfg.window, cfg.n_drivers)?);
    let features = conv_features(cfg, g, p, x)?;
    let b = batch.len();
    let cell = LstmVars {
        weight: p[LSTM_W],
        bias: p[LSTM_B],
    };
    let (mut h, mut c) = (
        g.leaf(Tensor::zeros(b, cfg.hidden)),
        g.leaf(Tensor::zeros(b, cfg.hidden)),
    );
    for t in 0..cfg.window {
        let xt = g.slice_rows(features, t * b, (t + 1) * b)?;
        (h, c) = lstm_step(g, xt, h, c, cell)?;
    }
    dense(g, h, p[HEAD_W], p[HEAD_B])
}

pub fn batch_loss<T: Scalar>(
    cfg: &CnnLstmConfig,
    g: &Graph<T>,
    p: &[Var],
    batch: &[&Window<T>],
    labels: &[T],
) -> Result<Var> {
    let pred = forward_graph(cfg, g, p, batch)?;
    g.mse(pred, g.leaf(Tensor::column_vector(labels.to_vec())))
}

impl<T: Scalar> CnnLstm<T> {
    pub fn new(config: CnnLstmConfig) -> Result<Self> {
        config.validate()?;
        let (k, c, f, h) = (
            config.kernel_width,
            config.channels(),
            config.filters,
            config.hidden,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        params.insert("conv_k", glorot_uniform(&mut rng, k * c, f, k * c, f));
        params.insert("conv_b", Tensor::zeros(1, f));
        params.insert(
            "lstm_w",
            glorot_uniform(&mut rng, f + h, 4 * h, f + h, 4 * h),
        );
        params.insert("lstm_b", Tensor::zeros(1, 4 * h));
        params.insert("head_w", glorot_uniform(&mut rng, h, 1, h, 1));
        params.insert("head_b", Tensor::zeros(1, 1));
        Ok(Self { config, params })
    }

    /// Convolution features of one window, `[T, F]`.
    pub fn features(&self, window: &Window<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let p = self.params.bind(&g);
        let x = g.leaf(stack_inputs(
            &[window],
            self.config.window,
            self.config.n_drivers,
        )?);
        Ok(g.value(conv_features(&self.config, &g, &p, x)?))
    }

    pub fn train(
        &mut self,
        windows: &[Window<T>],
        labels: &[T],
        cfg: &TrainConfig,
    ) -> Result<Vec<T>> {
        check_dataset(windows, labels, self.config.window, self.config.n_drivers)?;
        let model = self.config;
        train_minibatch(&mut self.params, windows.len(), cfg, |g, p, idx| {
            let batch: Vec<&Window<T>> = idx.iter().map(|&i| &windows[i]).collect();
            let y: Vec<T> = idx.iter().map(|&i| labels[i]).collect();
            batch_loss(&model, g, p, &batch, &y)
        })
    }

    pub fn to_doc(&self) -> ParamDoc {
        let config = serde_json::to_value(self.config).expect("config serializes");
        self.params.to_doc(MODEL_NAME, config)
    }

    pub fn from_doc(doc: &ParamDoc) -> Result<Self> {
        doc.check(MODEL_NAME)?;
        let config: CnnLstmConfig = serde_json::from_value(doc.config.clone())?;
        let mut model = Self::new(config)?;
        model.params.load_doc(doc, MODEL_NAME)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_doc().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_doc(&ParamDoc::load(path)?)
    }
}

impl<T: Scalar> Forecaster<T> for CnnLstm<T> {
    fn window_len(&self) -> usize {
        self.config.window
    }

    fn n_drivers(&self) -> usize {
        self.config.n_drivers
    }

    fn predict_batch(&self, windows: &[&Window<T>]) -> Result<Vec<T>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let p = self.params.bind(&g);
        let pred = forward_graph(&self.config, &g, &p, windows)?;
        Ok(g.value(pred).into_data())
    }
}
