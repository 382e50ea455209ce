//! CSV ingestion, contiguous splits and training-range standardization.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Trajectory;

/// Contiguous, ordered, disjoint index ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// Leading `train_frac`, then `val_frac`, remainder to test.
    pub fn by_fraction(n: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        let ok = |f: f64| f.is_finite() && f > 0.0;
        if !ok(train_frac) || !ok(val_frac) || train_frac + val_frac >= 1.0 {
            return Err(Error::Config(format!(
                "split fractions {train_frac}, {val_frac} must be positive and leave a test range"
            )));
        }
        let a = (n as f64 * train_frac).round() as usize;
        let b = (n as f64 * (train_frac + val_frac)).round() as usize;
        if a == 0 || b <= a || b >= n {
            return Err(Error::Data(format!(
                "{n} rows cannot be split {train_frac}/{val_frac}"
            )));
        }
        Ok(Self {
            train: 0..a,
            val: a..b,
            test: b..n,
        })
    }
}

/// Per-channel z-score statistics, target first then drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics over `range`. A constant channel gets std 1 so
    /// it standardizes to a constant instead of failing.
    pub fn fit(channels: &[&[f64]], range: Range<usize>) -> Result<Self> {
        if range.is_empty() {
            return Err(Error::Data("standardization range is empty".into()));
        }
        let n = range.len() as f64;
        let mut mean = Vec::with_capacity(channels.len());
        let mut std = Vec::with_capacity(channels.len());
        for c in channels {
            let xs = &c[range.clone()];
            let m = xs.iter().sum::<f64>() / n;
            let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            std.push(if s > 0.0 { s } else { 1.0 });
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }

    pub fn invert(&self, channel: usize, z: f64) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }
}

/// A target series with its driving series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub target: Vec<f64>,
    /// `drivers[k][i]`: driver `k` at row `i`.
    pub drivers: Vec<Vec<f64>>,
    pub target_name: String,
    pub driver_names: Vec<String>,
    pub splits: Splits,
    /// Computed on the training range.
    pub stats: ChannelStats,
}

pub const DEFAULT_TRAIN_FRAC: f64 = 0.7;
pub const DEFAULT_VAL_FRAC: f64 = 0.15;

impl Dataset {
    pub fn new(
        times: Vec<f64>,
        target: Vec<f64>,
        drivers: Vec<Vec<f64>>,
        target_name: String,
        driver_names: Vec<String>,
    ) -> Result<Self> {
        let n = times.len();
        if target.len() != n
            || drivers.iter().any(|d| d.len() != n)
            || drivers.len() != driver_names.len()
        {
            return Err(Error::Data("channel lengths differ".into()));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "time stamps not increasing at row {}",
                i + 1
            )));
        }
        let splits = Splits::by_fraction(n, DEFAULT_TRAIN_FRAC, DEFAULT_VAL_FRAC)?;
        let mut ds = Self {
            times,
            target,
            drivers,
            target_name,
            driver_names,
            stats: ChannelStats {
                mean: vec![],
                std: vec![],
            },
            splits: splits.clone(),
        };
        ds.resplit(splits)?;
        Ok(ds)
    }

    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        Self::new(
            traj.times.clone(),
            traj.primary.clone(),
            vec![traj.auxiliary.clone(), traj.forcing.clone()],
            "P".into(),
            vec!["T_aux".into(), "P_RF".into()],
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_drivers(&self) -> usize {
        self.drivers.len()
    }

    /// Replaces the splits and refits the statistics on the new training range.
    pub fn resplit(&mut self, splits: Splits) -> Result<()> {
        let ordered = splits.train.start == 0
            && splits.train.end == splits.val.start
            && splits.val.end == splits.test.start
            && splits.test.end == self.len()
            && !splits.train.is_empty()
            && !splits.val.is_empty()
            && !splits.test.is_empty();
        if !ordered {
            return Err(Error::Config(format!(
                "splits {splits:?} do not tile {} rows",
                self.len()
            )));
        }
        self.stats = ChannelStats::fit(&self.channels(), splits.train.clone())?;
        self.splits = splits;
        Ok(())
    }

    /// Target then drivers.
    pub fn channels(&self) -> Vec<&[f64]> {
        std::iter::once(self.target.as_slice())
            .chain(self.drivers.iter().map(Vec::as_slice))
            .collect()
    }

    /// Copy with every channel z-scored by the stored statistics.
    pub fn standardized(&self) -> Self {
        let mut out = self.clone();
        out.target = self
            .target
            .iter()
            .map(|&x| self.stats.apply(0, x))
            .collect();
        for (k, d) in out.drivers.iter_mut().enumerate() {
            for x in d.iter_mut() {
                *x = self.stats.apply(k + 1, *x);
            }
        }
        out
    }

    /// Driver index of a channel name or of a numeric index.
    pub fn driver_index(&self, name: &str) -> Option<usize> {
        self.driver_names
            .iter()
            .position(|d| d == name)
            .or_else(|| name.parse::<usize>().ok().filter(|&k| k < self.n_drivers()))
    }
}

fn parse_field(raw: &str, line: usize, col: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column `{col}`: `{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("column `{col}` is not finite"),
        });
    }
    Ok(v)
}

/// Reads `t,<target>,<drivers...>` with a header row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 2 || header == [""] {
        return Err(Error::Parse {
            line: 1,
            msg: "header needs a time and a target column".into(),
        });
    }
    let d = header.len() - 2;
    let (mut times, mut target, mut drivers) = (Vec::new(), Vec::new(), vec![Vec::new(); d]);
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(line, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        times.push(parse_field(&rec[0], line, &header[0])?);
        target.push(parse_field(&rec[1], line, &header[1])?);
        for k in 0..d {
            drivers[k].push(parse_field(&rec[k + 2], line, &header[k + 2])?);
        }
    }
    if times.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    Dataset::new(
        times,
        target,
        drivers,
        header[1].clone(),
        header[2..].to_vec(),
    )
}
