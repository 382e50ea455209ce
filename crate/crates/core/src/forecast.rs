//! Shared interface of the one-step forecasters and recursive roll-out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One input window: `drivers[i]` is the driver row at step `i` (length `D`)
/// and `history[i]` the target at the same step, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Window<T> {
    pub drivers: Vec<Vec<T>>,
    pub history: Vec<T>,
}

impl<T: Scalar> Window<T> {
    pub fn new(drivers: Vec<Vec<T>>, history: Vec<T>) -> Result<Self> {
        let w = Self { drivers, history };
        w.check(w.len(), w.n_drivers())?;
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn n_drivers(&self) -> usize {
        self.drivers.first().map_or(0, Vec::len)
    }

    /// Errors unless the window is `len` steps of `n_drivers` drivers.
    pub fn check(&self, len: usize, n_drivers: usize) -> Result<()> {
        let rows_ok =
            self.drivers.len() == len && self.drivers.iter().all(|r| r.len() == n_drivers);
        if self.history.len() != len || !rows_ok {
            return Err(Error::Shape {
                op: "window",
                left: vec![len, n_drivers],
                right: vec![self.history.len(), self.drivers.first().map_or(0, Vec::len)],
            });
        }
        Ok(())
    }

    /// Slides one step forward: appends `target` to the history and a driver
    /// row equal to the last one with `overrides` applied where set.
    pub fn advance(&mut self, target: T, overrides: &[Option<T>]) {
        let mut row = self.drivers.last().cloned().unwrap_or_default();
        for (v, o) in row.iter_mut().zip(overrides) {
            if let Some(o) = o {
                *v = *o;
            }
        }
        self.drivers.remove(0);
        self.drivers.push(row);
        self.history.remove(0);
        self.history.push(target);
    }

    /// `[B, T]` matrix of the target histories of a batch.
    pub fn history_matrix(batch: &[&Self]) -> Tensor<T> {
        let len = batch.first().map_or(0, |w| w.len());
        Tensor::from_fn(batch.len(), len, |b, t| batch[b].history[t])
    }

    /// `[B, T]` matrix holding driver `k` of a batch.
    pub fn driver_matrix(batch: &[&Self], k: usize) -> Tensor<T> {
        let len = batch.first().map_or(0, |w| w.len());
        Tensor::from_fn(batch.len(), len, |b, t| batch[b].drivers[t][k])
    }

    /// `[B, D]` driver rows at step `t`.
    pub fn step_drivers(batch: &[&Self], t: usize) -> Tensor<T> {
        let d = batch.first().map_or(0, |w| w.n_drivers());
        Tensor::from_fn(batch.len(), d, |b, k| batch[b].drivers[t][k])
    }
}

/// A trained one-step forecaster over standardized windows.
pub trait Forecaster<T: Scalar> {
    fn window_len(&self) -> usize;

    fn n_drivers(&self) -> usize;

    /// One prediction per window.
    fn predict_batch(&self, windows: &[&Window<T>]) -> Result<Vec<T>>;

    fn predict(&self, window: &Window<T>) -> Result<T> {
        Ok(self.predict_batch(&[window])?[0])
    }
}

/// Recursive multi-step forecast: each prediction becomes the newest history
/// entry for the next step; future driver rows hold the last observed row,
/// with `overrides[k]` (when set) replacing driver `k`. Returns
/// `[window][h]`.
pub fn rollout_batch<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    windows: &[&Window<T>],
    horizon: usize,
    overrides: &[Option<T>],
) -> Result<Vec<Vec<T>>> {
    if horizon < 1 {
        return Err(Error::Config("roll-out horizon must be at least 1".into()));
    }
    for w in windows {
        w.check(model.window_len(), model.n_drivers())?;
    }
    let mut work: Vec<Window<T>> = windows.iter().map(|w| (*w).clone()).collect();
    let mut out = vec![Vec::with_capacity(horizon); windows.len()];
    for h in 0..horizon {
        let refs: Vec<&Window<T>> = work.iter().collect();
        let preds = model.predict_batch(&refs)?;
        for (i, p) in preds.into_iter().enumerate() {
            out[i].push(p);
            if h + 1 < horizon {
                work[i].advance(p, overrides);
            }
        }
    }
    Ok(out)
}

pub fn rollout_forecast<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    window: &Window<T>,
    horizon: usize,
    overrides: &[Option<T>],
) -> Result<Vec<T>> {
    Ok(rollout_batch(model, &[window], horizon, overrides)?.remove(0))
}

/// Validates a labelled training set for a forecaster.
pub(crate) fn check_dataset<T: Scalar>(
    windows: &[Window<T>],
    labels: &[T],
    len: usize,
    n_drivers: usize,
) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if windows.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} windows but {} labels",
            windows.len(),
            labels.len()
        )));
    }
    windows.iter().try_for_each(|w| w.check(len, n_drivers))
}
