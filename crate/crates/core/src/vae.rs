//! Variational autoencoder over fixed-length windows of the primary signal.
//!
//! Encoder and decoder are single-hidden-layer tanh networks. Training draws
//! one reparameterized latent sample per window; scoring decodes the latent
//! mean so that reconstruction errors are deterministic.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    dense, glorot_uniform, train_minibatch, Graph, ParamDoc, ParamStore, Tensor, TrainConfig, Var,
};

pub const MODEL_NAME: &str = "vae";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub window: usize,
    pub hidden: usize,
    pub latent: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            window: 10,
            hidden: 32,
            latent: 4,
            seed: 0,
        }
    }
}

const ENC_W: usize = 0;
const ENC_B: usize = 1;
const MU_W: usize = 2;
const MU_B: usize = 3;
const LS_W: usize = 4;
const LS_B: usize = 5;
const DEC_W: usize = 6;
const DEC_B: usize = 7;
const OUT_W: usize = 8;
const OUT_B: usize = 9;

/// Graph handles of one loss evaluation; all three are `[1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct VaeTerms {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
}

/// Per-epoch means of a training run plus the smallest batch KL seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeHistory {
    pub loss: Vec<f64>,
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
    pub min_batch_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T> {
    pub config: VaeConfig,
    pub params: ParamStore<T>,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct DocConfig {
    #[serde(flatten)]
    config: VaeConfig,
    trained: bool,
}

/// Returns `(μ, logσ)`, each `[B, L]`.
pub fn encode<T: Scalar>(g: &Graph<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
    let h = g.tanh(dense(g, x, p[ENC_W], p[ENC_B])?);
    Ok((
        dense(g, h, p[MU_W], p[MU_B])?,
        dense(g, h, p[LS_W], p[LS_B])?,
    ))
}

pub fn decode<T: Scalar>(g: &Graph<T>, p: &[Var], z: Var) -> Result<Var> {
    let h = g.tanh(dense(g, z, p[DEC_W], p[DEC_B])?);
    dense(g, h, p[OUT_W], p[OUT_B])
}

/// `½·Σ(μ² + σ² − 1 − log σ²)` averaged over the batch rows.
pub fn kl_divergence<T: Scalar>(g: &Graph<T>, mu: Var, log_sigma: Var) -> Result<Var> {
    let batch = g.shape(mu)[0];
    let two_ls = g.scale(log_sigma, T::of(2.0));
    let terms = g.sub(
        g.add(g.mul(mu, mu)?, g.exp(two_ls)?)?,
        g.offset(two_ls, T::one()),
    )?;
    Ok(g.scale(g.sum(terms), T::of(0.5 / batch as f64)))
}

/// Reconstruction MSE plus KL for a `[B, T]` batch with frozen standard
/// normal noise `eps` (`[B, L]`).
pub fn vae_loss<T: Scalar>(g: &Graph<T>, p: &[Var], x: Var, eps: &Tensor<T>) -> Result<VaeTerms> {
    let (mu, log_sigma) = encode(g, p, x)?;
    let z = g.add(mu, g.mul(g.exp(log_sigma)?, g.leaf(eps.clone()))?)?;
    let x_hat = decode(g, p, z)?;
    let recon = g.mse(x_hat, x)?;
    let kl = kl_divergence(g, mu, log_sigma)?;
    Ok(VaeTerms {
        loss: g.add(recon, kl)?,
        recon,
        kl,
    })
}

/// Mean squared difference of two equal-length windows.
pub fn reconstruction_error<T: Scalar>(x: &[T], x_hat: &[T]) -> Result<T> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::Shape {
            op: "reconstruction_error",
            left: vec![x.len()],
            right: vec![x_hat.len()],
        });
    }
    let sum: T = x.iter().zip(x_hat).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / T::of(x.len() as f64))
}

impl<T: Scalar> Vae<T> {
    pub fn new(config: VaeConfig) -> Result<Self> {
        if config.window == 0 || config.hidden == 0 || config.latent == 0 {
            return Err(Error::Config(
                "window, hidden and latent sizes must be at least 1".into(),
            ));
        }
        let (t, h, l) = (config.window, config.hidden, config.latent);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut glorot = |r: usize, c: usize| glorot_uniform(&mut rng, r, c, r, c);
        params.insert("enc_w", glorot(t, h));
        params.insert("enc_b", Tensor::zeros(1, h));
        params.insert("mu_w", glorot(h, l));
        params.insert("mu_b", Tensor::zeros(1, l));
        params.insert("log_sigma_w", glorot(h, l));
        params.insert("log_sigma_b", Tensor::zeros(1, l));
        params.insert("dec_w", glorot(l, h));
        params.insert("dec_b", Tensor::zeros(1, h));
        params.insert("out_w", glorot(h, t));
        params.insert("out_b", Tensor::zeros(1, t));
        Ok(Self {
            config,
            params,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks externally set parameters as ready for scoring.
    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn batch_matrix(&self, windows: &[&[T]]) -> Result<Tensor<T>> {
        let t = self.config.window;
        if let Some(w) = windows.iter().find(|w| w.len() != t) {
            return Err(Error::Shape {
                op: "vae_window",
                left: vec![t],
                right: vec![w.len()],
            });
        }
        Ok(Tensor::from_fn(windows.len(), t, |b, i| windows[b][i]))
    }

    /// Trains on standardized windows; the noise stream is seeded from
    /// `cfg.seed`, one draw per window per step.
    pub fn train(&mut self, windows: &[Vec<T>], cfg: &TrainConfig) -> Result<VaeHistory> {
        if windows.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let refs: Vec<&[T]> = windows.iter().map(Vec::as_slice).collect();
        let data = self.batch_matrix(&refs)?;
        let latent = self.config.latent;
        let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_e5);
        let (mut recon_sum, mut kl_sum, mut seen) = (0.0, 0.0, 0usize);
        let (mut recon, mut kl) = (Vec::new(), Vec::new());
        let mut min_batch_kl = f64::INFINITY;
        let n = windows.len();
        let loss = train_minibatch(&mut self.params, n, cfg, |g, p, idx| {
            let x = Tensor::from_fn(idx.len(), data.cols(), |b, i| data.get(idx[b], i));
            let eps = Tensor::from_fn(idx.len(), latent, |_, _| {
                let e: f64 = StandardNormal.sample(&mut noise);
                T::of(e)
            });
            let terms = vae_loss(g, p, g.leaf(x), &eps)?;
            let (r, k) = (g.item(terms.recon)?.as_f64(), g.item(terms.kl)?.as_f64());
            recon_sum += r * idx.len() as f64;
            kl_sum += k * idx.len() as f64;
            min_batch_kl = min_batch_kl.min(k);
            seen += idx.len();
            if seen == n {
                recon.push(recon_sum / n as f64);
                kl.push(kl_sum / n as f64);
                (recon_sum, kl_sum, seen) = (0.0, 0.0, 0);
            }
            Ok(terms.loss)
        })?;
        self.trained = true;
        Ok(VaeHistory {
            loss: loss.iter().map(|v| v.as_f64()).collect(),
            recon,
            kl,
            min_batch_kl,
        })
    }

    /// Mean-latent reconstructions of a batch of windows.
    pub fn reconstruct_batch(&self, windows: &[&[T]]) -> Result<Vec<Vec<T>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let p = self.params.bind(&g);
        let x = g.leaf(self.batch_matrix(windows)?);
        let (mu, _) = encode(&g, &p, x)?;
        let x_hat = g.value(decode(&g, &p, mu)?);
        if !x_hat.all_finite() {
            return Err(Error::Divergence {
                stage: "vae_decode",
                index: 0,
                detail: "non-finite reconstruction".into(),
            });
        }
        Ok((0..windows.len()).map(|b| x_hat.row(b).to_vec()).collect())
    }

    /// Reconstruction error of each window, decoding at the latent mean.
    pub fn score_batch(&self, windows: &[&[T]]) -> Result<Vec<T>> {
        if !self.trained {
            return Err(Error::State("VAE must be trained before scoring".into()));
        }
        let recon = self.reconstruct_batch(windows)?;
        windows
            .iter()
            .zip(&recon)
            .map(|(x, x_hat)| reconstruction_error(x, x_hat))
            .collect()
    }

    pub fn score(&self, window: &[T]) -> Result<T> {
        Ok(self.score_batch(&[window])?[0])
    }

    pub fn to_doc(&self) -> ParamDoc {
        let config = serde_json::to_value(DocConfig {
            config: self.config,
            trained: self.trained,
        })
        .expect("config serializes");
        self.params.to_doc(MODEL_NAME, config)
    }

    pub fn from_doc(doc: &ParamDoc) -> Result<Self> {
        doc.check(MODEL_NAME)?;
        let meta: DocConfig = serde_json::from_value(doc.config.clone())?;
        let mut model = Self::new(meta.config)?;
        model.params.load_doc(doc, MODEL_NAME)?;
        model.trained = meta.trained;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_doc().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_doc(&ParamDoc::load(path)?)
    }
}
