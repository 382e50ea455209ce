//! Sliding windows over a standardized dataset.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::pipeline::data::Dataset;
use crate::Window;

/// Time-ordered windows with their one-step labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowedSet {
    pub windows: Vec<Window>,
    pub labels: Vec<f64>,
    /// Absolute index of the last step of each window; the label sits at `t + 1`.
    pub ends: Vec<usize>,
}

impl WindowedSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn refs(&self) -> Vec<&Window> {
        self.windows.iter().collect()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.ends.iter().map(|t| t + 1).collect()
    }

    /// Target histories, the VAE's inputs.
    pub fn histories(&self) -> Vec<Vec<f64>> {
        self.windows.iter().map(|w| w.history.clone()).collect()
    }
}

/// Every window lying inside `range`: the window ending at `t` covers
/// `[t − T + 1, t]` and is labelled `y_{t+1}`, giving `len − T` windows.
pub fn make_windows(ds: &Dataset, len: usize, range: Range<usize>) -> Result<WindowedSet> {
    if len == 0 || range.end > ds.len() || len >= range.len() {
        return Err(Error::Config(format!(
            "window length {len} needs a range longer than it inside {} rows, got {range:?}",
            ds.len()
        )));
    }
    let mut set = WindowedSet::default();
    for t in range.start + len - 1..range.end - 1 {
        let lo = t + 1 - len;
        let drivers = (lo..=t)
            .map(|i| ds.drivers.iter().map(|d| d[i]).collect())
            .collect();
        set.windows
            .push(Window::new(drivers, ds.target[lo..=t].to_vec())?);
        set.labels.push(ds.target[t + 1]);
        set.ends.push(t);
    }
    Ok(set)
}

/// Windows whose labels cover exactly `range`, reaching back before its
/// start for history.
pub fn windows_labelling(ds: &Dataset, len: usize, range: Range<usize>) -> Result<WindowedSet> {
    if range.start < len {
        return Err(Error::Config(format!(
            "range {range:?} starts before a full window of {len}"
        )));
    }
    make_windows(ds, len, range.start - len..range.end)
}
