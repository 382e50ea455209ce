//! Forecast-driven anomaly detection for nonlinear dynamical systems.
//!
//! A stochastic growth–relaxation simulator produces labelled trajectories;
//! two one-step forecasters (a dual-stage attention RNN and a CNN–LSTM), a
//! variational autoencoder and an isolation forest over forecast residuals
//! each contribute a per-step anomaly component, and a weighted fusion with
//! a jump-triggered flag rule turns them into detections.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases at the
//! crate root pin the `f64` instantiations used by the pipeline and CLI.

pub mod cnnlstm;
pub mod darnn;
pub mod error;
pub mod forecast;
pub mod fusion;
pub mod iforest;
pub mod pipeline;
pub mod scalar;
pub mod sim;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type ParamStore = tensor::ParamStore<f64>;
pub type SimConfig = sim::SimConfig<f64>;
pub type Trajectory = sim::Trajectory<f64>;
pub type Window = forecast::Window<f64>;
pub type Darnn = darnn::Darnn<f64>;
pub type CnnLstm = cnnlstm::CnnLstm<f64>;
pub type Vae = vae::Vae<f64>;
pub type Standardizer = iforest::Standardizer<f64>;
pub type IsolationForest = iforest::IsolationForest<f64>;
pub type ResidualDetector = iforest::ResidualDetector<f64>;
