//! Dual-stage attention encoder–decoder forecaster.
//!
//! The encoder LSTM reweights the driving series at every step through an
//! input-attention softmax; the decoder LSTM attends over all encoder hidden
//! states and consumes the target history, and a two-layer head maps the
//! final decoder state and context to the one-step prediction.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{check_dataset, Forecaster, Window};
use crate::scalar::Scalar;
use crate::tensor::{
    glorot_uniform, lstm_step, train_minibatch, Graph, LstmVars, ParamDoc, ParamStore, Tensor,
    TrainConfig, Var,
};

pub const MODEL_NAME: &str = "darnn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DarnnConfig {
    /// Window length `T`.
    pub window: usize,
    /// Number of driving series `D`.
    pub n_drivers: usize,
    /// Encoder hidden size `m`.
    pub encoder_hidden: usize,
    /// Decoder hidden size `p`.
    pub decoder_hidden: usize,
    pub seed: u64,
}

impl Default for DarnnConfig {
    fn default() -> Self {
        Self {
            window: 10,
            n_drivers: 2,
            encoder_hidden: 32,
            decoder_hidden: 32,
            seed: 0,
        }
    }
}

impl DarnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0
            || self.n_drivers == 0
            || self.encoder_hidden == 0
            || self.decoder_hidden == 0
        {
            return Err(Error::Config(
                "window, driver count and hidden sizes must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

// Parameter slots, in insertion order.
const ENC_ATTN_W: usize = 0;
const ENC_ATTN_U: usize = 1;
const ENC_ATTN_V: usize = 2;
const ENC_LSTM_W: usize = 3;
const ENC_LSTM_B: usize = 4;
const DEC_ATTN_W: usize = 5;
const DEC_ATTN_U: usize = 6;
const DEC_ATTN_V: usize = 7;
const DEC_LSTM_W: usize = 8;
const DEC_LSTM_B: usize = 9;
const DEC_IN_W: usize = 10;
const DEC_IN_B: usize = 11;
const OUT_W: usize = 12;
const OUT_B: usize = 13;
const OUT_V: usize = 14;
const OUT_BV: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct DarnnOutput<T> {
    pub prediction: T,
    /// `T × D` input-attention weights, one row per encoder step.
    pub input_attention: Tensor<T>,
    /// Temporal-attention weights of the final decoder step.
    pub temporal_attention: Vec<T>,
}

/// Graph handles of one batched forward pass.
#[derive(Debug, Clone)]
pub struct DarnnGraph {
    /// `[B, 1]` predictions.
    pub prediction: Var,
    /// Per encoder step, `[B, D]` input-attention weights.
    pub input_attention: Vec<Var>,
    /// `[B, T]` temporal-attention weights of the final decoder step.
    pub temporal_attention: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Darnn<T> {
    pub config: DarnnConfig,
    pub params: ParamStore<T>,
}

/// Input attention over the driving series. `state` is `[B, 2m]`
/// (encoder hidden and cell), `driver_proj[k]` is the `[B, T]` projection of
/// driver series `k`. Returns `[B, D]` softmax weights.
pub fn input_attention<T: Scalar>(
    g: &Graph<T>,
    state: Var,
    driver_proj: &[Var],
    w: Var,
    v: Var,
) -> Result<Var> {
    let query = g.matmul(state, w)?;
    let scores = driver_proj
        .iter()
        .map(|&p| g.matmul(g.tanh(g.add(query, p)?), v))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.softmax(g.concat(&scores)?))
}

/// Temporal attention over encoder hidden states. `state` is `[B, 2p]`
/// (decoder hidden and cell), `hidden_proj[i]` the `[B, m]` projection of
/// encoder state `i`. Returns `[B, T]` softmax weights.
pub fn temporal_attention<T: Scalar>(
    g: &Graph<T>,
    state: Var,
    hidden_proj: &[Var],
    w: Var,
    v: Var,
) -> Result<Var> {
    input_attention(g, state, hidden_proj, w, v)
}

/// `Σ_i weights[:, i] · hidden[i]`.
fn attend<T: Scalar>(g: &Graph<T>, weights: Var, hidden: &[Var]) -> Result<Var> {
    let mut acc = g.mul(g.slice_cols(weights, 0, 1)?, hidden[0])?;
    for (i, &h) in hidden.iter().enumerate().skip(1) {
        acc = g.add(acc, g.mul(g.slice_cols(weights, i, i + 1)?, h)?)?;
    }
    Ok(acc)
}

/// Batched forward pass from bound parameter leaves `p`.
pub fn forward_graph<T: Scalar>(
    cfg: &DarnnConfig,
    g: &Graph<T>,
    p: &[Var],
    batch: &[&Window<T>],
) -> Result<DarnnGraph> {
    let (len, d) = (cfg.window, cfg.n_drivers);
    for w in batch {
        w.check(len, d)?;
    }
    let b = batch.len();
    let (m, q) = (cfg.encoder_hidden, cfg.decoder_hidden);

    let driver_proj = (0..d)
        .map(|k| g.matmul(g.leaf(Window::driver_matrix(batch, k)), p[ENC_ATTN_U]))
        .collect::<Result<Vec<_>>>()?;
    let enc_lstm = LstmVars {
        weight: p[ENC_LSTM_W],
        bias: p[ENC_LSTM_B],
    };
    let (mut h, mut s) = (g.leaf(Tensor::zeros(b, m)), g.leaf(Tensor::zeros(b, m)));
    let mut hidden = Vec::with_capacity(len);
    let mut alphas = Vec::with_capacity(len);
    for t in 0..len {
        let alpha = input_attention(
            g,
            g.concat(&[h, s])?,
            &driver_proj,
            p[ENC_ATTN_W],
            p[ENC_ATTN_V],
        )?;
        let x = g.mul(alpha, g.leaf(Window::step_drivers(batch, t)))?;
        (h, s) = lstm_step(g, x, h, s, enc_lstm)?;
        hidden.push(h);
        alphas.push(alpha);
    }

    let hidden_proj = hidden
        .iter()
        .map(|&h| g.matmul(h, p[DEC_ATTN_U]))
        .collect::<Result<Vec<_>>>()?;
    let dec_lstm = LstmVars {
        weight: p[DEC_LSTM_W],
        bias: p[DEC_LSTM_B],
    };
    let history = g.leaf(Window::history_matrix(batch));
    let (mut dh, mut ds) = (g.leaf(Tensor::zeros(b, q)), g.leaf(Tensor::zeros(b, q)));
    let mut beta = None;
    let mut context = None;
    for t in 0..len {
        let weights = temporal_attention(
            g,
            g.concat(&[dh, ds])?,
            &hidden_proj,
            p[DEC_ATTN_W],
            p[DEC_ATTN_V],
        )?;
        let c = attend(g, weights, &hidden)?;
        let y = g.slice_cols(history, t, t + 1)?;
        let y_tilde = g.add(g.matmul(g.concat(&[y, c])?, p[DEC_IN_W])?, p[DEC_IN_B])?;
        (dh, ds) = lstm_step(g, y_tilde, dh, ds, dec_lstm)?;
        beta = Some(weights);
        context = Some(c);
    }
    let (beta, context) = (beta.expect("window >= 1"), context.expect("window >= 1"));
    let hidden_out = g.add(g.matmul(g.concat(&[dh, context])?, p[OUT_W])?, p[OUT_B])?;
    let prediction = g.add(g.matmul(hidden_out, p[OUT_V])?, p[OUT_BV])?;
    Ok(DarnnGraph {
        prediction,
        input_attention: alphas,
        temporal_attention: beta,
    })
}

/// Mean squared one-step error of a batch.
pub fn batch_loss<T: Scalar>(
    cfg: &DarnnConfig,
    g: &Graph<T>,
    p: &[Var],
    batch: &[&Window<T>],
    labels: &[T],
) -> Result<Var> {
    let out = forward_graph(cfg, g, p, batch)?;
    let target = g.leaf(Tensor::column_vector(labels.to_vec()));
    g.mse(out.prediction, target)
}

impl<T: Scalar> Darnn<T> {
    pub fn new(config: DarnnConfig) -> Result<Self> {
        config.validate()?;
        let DarnnConfig {
            window: len,
            n_drivers: d,
            encoder_hidden: m,
            decoder_hidden: q,
            seed,
        } = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut glorot = |r: usize, c: usize| glorot_uniform(&mut rng, r, c, r, c);
        params.insert("enc_attn_w", glorot(2 * m, len));
        params.insert("enc_attn_u", glorot(len, len));
        params.insert("enc_attn_v", glorot(len, 1));
        params.insert("enc_lstm_w", glorot(d + m, 4 * m));
        params.insert("enc_lstm_b", Tensor::zeros(1, 4 * m));
        params.insert("dec_attn_w", glorot(2 * q, m));
        params.insert("dec_attn_u", glorot(m, m));
        params.insert("dec_attn_v", glorot(m, 1));
        params.insert("dec_lstm_w", glorot(1 + q, 4 * q));
        params.insert("dec_lstm_b", Tensor::zeros(1, 4 * q));
        params.insert("dec_in_w", glorot(1 + m, 1));
        params.insert("dec_in_b", Tensor::zeros(1, 1));
        params.insert("out_w", glorot(q + m, q));
        params.insert("out_b", Tensor::zeros(1, q));
        params.insert("out_v", glorot(q, 1));
        params.insert("out_bv", Tensor::zeros(1, 1));
        Ok(Self { config, params })
    }

    pub fn forward_batch(&self, windows: &[&Window<T>]) -> Result<Vec<DarnnOutput<T>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let p = self.params.bind(&g);
        let out = forward_graph(&self.config, &g, &p, windows)?;
        let preds = g.value(out.prediction);
        let beta = g.value(out.temporal_attention);
        let alphas: Vec<Tensor<T>> = out.input_attention.iter().map(|&a| g.value(a)).collect();
        let (len, d) = (self.config.window, self.config.n_drivers);
        Ok((0..windows.len())
            .map(|b| DarnnOutput {
                prediction: preds.get(b, 0),
                input_attention: Tensor::from_fn(len, d, |t, k| alphas[t].get(b, k)),
                temporal_attention: beta.row(b).to_vec(),
            })
            .collect())
    }

    pub fn forward(&self, window: &Window<T>) -> Result<DarnnOutput<T>> {
        Ok(self.forward_batch(&[window])?.remove(0))
    }

    /// Mini-batch training on the one-step squared error. Returns the
    /// per-epoch mean loss.
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
        let config: DarnnConfig = serde_json::from_value(doc.config.clone())?;
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

impl<T: Scalar> Forecaster<T> for Darnn<T> {
    fn window_len(&self) -> usize {
        self.config.window
    }

    fn n_drivers(&self) -> usize {
        self.config.n_drivers
    }

    fn predict_batch(&self, windows: &[&Window<T>]) -> Result<Vec<T>> {
        Ok(self
            .forward_batch(windows)?
            .into_iter()
            .map(|o| o.prediction)
            .collect())
    }
}

/// `1 − H(w)/ln T` with natural-log Shannon entropy `H`; `0` when `T = 1`.
pub fn attention_sparsity<T: Scalar>(weights: &[T]) -> Result<T> {
    if weights.is_empty() {
        return Err(Error::Contract("attention weights are empty".into()));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < T::zero()) {
        return Err(Error::Contract(
            "attention weights must be finite and nonnegative".into(),
        ));
    }
    let total: T = weights.iter().copied().sum();
    if (total - T::one()).abs() > T::of(1e-6) {
        return Err(Error::Contract(format!(
            "attention weights sum to {total}, not 1"
        )));
    }
    if weights.len() == 1 {
        return Ok(T::zero());
    }
    let entropy: T = weights
        .iter()
        .filter(|&&w| w > T::zero())
        .map(|&w| -w * w.ln())
        .sum();
    let s = T::one() - entropy / T::of(weights.len() as f64).ln();
    Ok(s.max(T::zero()).min(T::one()))
}
