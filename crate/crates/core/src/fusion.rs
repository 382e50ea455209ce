//! Score components, weighted fusion, the jump-triggered flag rule, weight
//! search and what-if evaluation of driver overrides.
//!
//! Scores live on the standardized scale of the training data and are
//! concrete `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::darnn::attention_sparsity;
use crate::error::{Error, Result};
use crate::forecast::rollout_batch;
use crate::iforest::quantile;
use crate::pipeline::metrics::evaluate_detection;
use crate::sim::Perturbation;
use crate::{CnnLstm, Darnn, ResidualDetector, Vae, Window};

/// Nonnegative weights of (R̂, S, E, I).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta_w: f64,
}

impl FusionWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta_w: f64) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            gamma,
            delta_w,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|&x| !x.is_finite() || x < 0.0) || a.iter().all(|&x| x == 0.0) {
            return Err(Error::Config(format!(
                "fusion weights {a:?} must be finite, nonnegative and not all zero"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta_w]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Unit weight on component `i` (0 = R̂, 1 = S, 2 = E, 3 = I) only.
    pub fn only(i: usize) -> Self {
        let mut a = [0.0; 4];
        a[i] = 1.0;
        Self::from_array(a).expect("unit weight is valid")
    }

    pub fn scaled(&self, k: f64) -> Self {
        let a = self.as_array().map(|x| x * k);
        Self {
            alpha: a[0],
            beta: a[1],
            gamma: a[2],
            delta_w: a[3],
        }
    }
}

pub const COMPONENT_NAMES: [&str; 4] = ["r_hat", "s_att", "e_rec", "i_iso"];

/// `{0, 0.25, 0.5, 0.75, 1}⁴` without the all-zero point, in lexicographic order.
pub fn default_grid() -> Vec<FusionWeights> {
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut grid = Vec::with_capacity(624);
    for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                for &d in &levels {
                    if let Ok(w) = FusionWeights::new(a, b, c, d) {
                        grid.push(w);
                    }
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub t: usize,
    pub r_hat: f64,
    pub s_att: f64,
    pub e_rec: f64,
    pub i_iso: f64,
    pub fused: f64,
}

impl ScoreComponents {
    pub fn new(t: usize, values: [f64; 4], weights: &FusionWeights) -> Result<Self> {
        let mut c = Self {
            t,
            r_hat: values[0],
            s_att: values[1],
            e_rec: values[2],
            i_iso: values[3],
            fused: 0.0,
        };
        c.fused = composite_score(&c, weights)?;
        Ok(c)
    }

    pub fn values(&self) -> [f64; 4] {
        [self.r_hat, self.s_att, self.e_rec, self.i_iso]
    }

    pub fn reweighted(&self, weights: &FusionWeights) -> Result<Self> {
        Self::new(self.t, self.values(), weights)
    }
}

/// `α·R̂ + β·S + γ·E + δ_w·I`.
pub fn composite_score(c: &ScoreComponents, w: &FusionWeights) -> Result<f64> {
    let v = c.values();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract(format!(
            "non-finite score components {v:?} at t = {}",
            c.t
        )));
    }
    Ok(w.alpha * v[0] + w.beta * v[1] + w.gamma * v[2] + w.delta_w * v[3])
}

/// `|residual| / std_train`.
pub fn normalize_residual(residual: f64, train_std: f64) -> Result<f64> {
    if !(train_std > 0.0) || !train_std.is_finite() {
        return Err(Error::Degenerate(format!(
            "training residual std {train_std} must be positive"
        )));
    }
    Ok(residual.abs() / train_std)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagRule {
    /// Baseline the score must exceed.
    pub b: f64,
    /// Minimum one-step increase.
    pub delta_c: f64,
}

impl FlagRule {
    pub fn new(b: f64, delta_c: f64) -> Result<Self> {
        if !b.is_finite() || !delta_c.is_finite() || delta_c < 0.0 {
            return Err(Error::Config(format!(
                "flag rule needs finite b and delta_c >= 0, got {b}, {delta_c}"
            )));
        }
        Ok(Self { b, delta_c })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            b: self.b * k,
            delta_c: self.delta_c * k,
        }
    }
}

/// Positions `i` with `scores[i] > b` and `scores[i] − scores[i−1] > δ_c`,
/// taking the score before the first position as 0.
pub fn flag_anomalies(scores: &[f64], rule: &FlagRule) -> Vec<usize> {
    let mut prev = 0.0;
    let mut flags = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if s > rule.b && s - prev > rule.delta_c {
            flags.push(i);
        }
        prev = s;
    }
    flags
}

/// Flagged time indices of a scored series.
pub fn flag_components(components: &[ScoreComponents], rule: &FlagRule) -> Vec<usize> {
    let fused: Vec<f64> = components.iter().map(|c| c.fused).collect();
    flag_anomalies(&fused, rule)
        .into_iter()
        .map(|i| components[i].t)
        .collect()
}

/// Candidate flag rules searched jointly with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RuleSearch {
    Fixed(FlagRule),
    /// `b` at the given quantiles of the fused score and `δ_c` at the given
    /// multiples of the standard deviation of its one-step differences. Both
    /// scale with the score, so rescaling the weights selects the same flags.
    Relative {
        baseline_quantiles: Vec<f64>,
        delta_multiples: Vec<f64>,
    },
}

impl Default for RuleSearch {
    fn default() -> Self {
        RuleSearch::Relative {
            baseline_quantiles: vec![0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.975, 0.99],
            delta_multiples: vec![0.0, 0.25, 0.5, 1.0, 2.0, 3.0],
        }
    }
}

impl RuleSearch {
    pub fn candidates(&self, scores: &[f64]) -> Vec<FlagRule> {
        match self {
            RuleSearch::Fixed(rule) => vec![*rule],
            RuleSearch::Relative {
                baseline_quantiles,
                delta_multiples,
            } => {
                let diffs: Vec<f64> = scores.windows(2).map(|w| w[1] - w[0]).collect();
                let spread = if diffs.len() < 2 {
                    0.0
                } else {
                    let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
                    (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt()
                };
                let mut rules = Vec::new();
                for &q in baseline_quantiles {
                    let b = quantile(scores, q);
                    for &k in delta_multiples {
                        rules.push(FlagRule {
                            b,
                            delta_c: k * spread,
                        });
                    }
                }
                rules
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub weights: FusionWeights,
    pub rule: FlagRule,
    pub f1: f64,
}

/// Best rule for fixed weights; ties keep the earliest candidate.
pub fn search_rule(
    components: &[ScoreComponents],
    events: &[Perturbation],
    weights: &FusionWeights,
    search: &RuleSearch,
    tolerance: i64,
) -> Result<Selection> {
    let scored = components
        .iter()
        .map(|c| c.reweighted(weights))
        .collect::<Result<Vec<_>>>()?;
    let fused: Vec<f64> = scored.iter().map(|c| c.fused).collect();
    let mut best: Option<Selection> = None;
    for rule in search.candidates(&fused) {
        let flags: Vec<usize> = flag_anomalies(&fused, &rule)
            .into_iter()
            .map(|i| scored[i].t)
            .collect();
        let f1 = evaluate_detection(&flags, events, tolerance)?.f1;
        if best.is_none_or(|b| f1 > b.f1) {
            best = Some(Selection {
                weights: *weights,
                rule,
                f1,
            });
        }
    }
    best.ok_or_else(|| Error::Config("rule search has no candidates".into()))
}

/// Exhaustive search of weights (and rules) maximizing event-level F1 on the
/// given components. Ties go to the lexicographically smallest weights.
pub fn grid_search_weights(
    components: &[ScoreComponents],
    events: &[Perturbation],
    grid: &[FusionWeights],
    search: &RuleSearch,
    tolerance: i64,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::Config("weight grid is empty".into()));
    }
    let results = std::thread::scope(|s| {
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(8);
        let chunk = grid.len().div_ceil(workers);
        let handles: Vec<_> = grid
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|w| search_rule(components, events, w, search, tolerance))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("grid worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut best: Option<Selection> = None;
    for sel in results.into_iter().flatten() {
        let better = match best {
            None => true,
            Some(b) => {
                sel.f1 > b.f1
                    || (sel.f1 == b.f1 && lex_less(&sel.weights.as_array(), &b.weights.as_array()))
            }
        };
        if better {
            best = Some(sel);
        }
    }
    Ok(best.expect("grid is nonempty"))
}

fn lex_less(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a.iter()
        .zip(b)
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

/// Per-horizon forecasts of both models and isolation scores for one time
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureVector {
    pub da_preds: Vec<f64>,
    pub cnn_preds: Vec<f64>,
    pub iso_scores: Vec<f64>,
}

impl MetaFeatureVector {
    pub fn new(da_preds: Vec<f64>, cnn_preds: Vec<f64>, iso_scores: Vec<f64>) -> Result<Self> {
        let h = da_preds.len();
        if h == 0 || cnn_preds.len() != h || iso_scores.len() != h {
            return Err(Error::Contract(format!(
                "feature arrays must share a nonzero length, got {}, {}, {}",
                h,
                cnn_preds.len(),
                iso_scores.len()
            )));
        }
        Ok(Self {
            da_preds,
            cnn_preds,
            iso_scores,
        })
    }

    pub fn horizon(&self) -> usize {
        self.da_preds.len()
    }
}

/// Statistics fitted outside the component models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Weight of the DA-RNN in the ensemble forecast; the CNN-LSTM gets the rest.
    pub blend: f64,
    /// Standard deviation of one-step ensemble residuals on the training range.
    pub residual_std: f64,
}

impl Calibration {
    pub fn ensemble(&self, da: f64, cnn: f64) -> f64 {
        self.blend * da + (1.0 - self.blend) * cnn
    }
}

/// Fused score of one time step. With `truth` (`y_{t+1..t+H}`) R̂ is the
/// largest normalized ensemble residual over the horizon; without it the
/// normalized DA-RNN/CNN-LSTM disagreement stands in. `I` is the mean of
/// the isolation scores; `S` and `E` come from the current window. Since
/// only R̂ varies with the horizon, the result equals the horizon maximum of
/// the per-horizon composite scores.
pub fn meta_score(
    fv: &MetaFeatureVector,
    truth: Option<&[f64]>,
    s_att: f64,
    e_rec: f64,
    cal: &Calibration,
    weights: &FusionWeights,
    t: usize,
) -> Result<ScoreComponents> {
    let h = fv.horizon();
    let mut r_hat = 0.0f64;
    for i in 0..h {
        let residual = match truth {
            Some(y) => {
                if y.len() != h {
                    return Err(Error::Contract(format!(
                        "{} truth values for horizon {h}",
                        y.len()
                    )));
                }
                y[i] - cal.ensemble(fv.da_preds[i], fv.cnn_preds[i])
            }
            None => fv.da_preds[i] - fv.cnn_preds[i],
        };
        r_hat = r_hat.max(normalize_residual(residual, cal.residual_std)?);
    }
    let i_iso = fv.iso_scores.iter().sum::<f64>() / h as f64;
    ScoreComponents::new(t, [r_hat, s_att, e_rec, i_iso], weights)
}

/// Component outputs for a batch of windows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Projection {
    /// `[window][h]` roll-out forecasts.
    pub da: Vec<Vec<f64>>,
    pub cnn: Vec<Vec<f64>>,
    pub s_att: Vec<f64>,
    pub e_rec: Vec<f64>,
    /// Final-step temporal attention of each window.
    pub temporal_attention: Vec<Vec<f64>>,
    /// Input-attention map (`T × D`, row-major) of each window.
    pub input_attention: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub da_preds: Vec<f64>,
    pub cnn_preds: Vec<f64>,
    pub components: ScoreComponents,
    pub projected_score: f64,
    pub accept: bool,
}

/// Trained components plus calibration, everything needed to score.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub darnn: Darnn,
    pub cnnlstm: CnnLstm,
    pub vae: Vae,
    pub detector: ResidualDetector,
    pub calibration: Calibration,
}

/// Windows per forward graph when scoring long series.
const CHUNK: usize = 256;

impl Ensemble {
    pub fn project(
        &self,
        windows: &[&Window],
        horizon: usize,
        overrides: &[Option<f64>],
    ) -> Result<Projection> {
        let mut out = Projection::default();
        for part in windows.chunks(CHUNK) {
            let attn = self.darnn.forward_batch(part)?;
            for a in &attn {
                out.s_att.push(attention_sparsity(&a.temporal_attention)?);
                out.temporal_attention.push(a.temporal_attention.clone());
                out.input_attention.push(a.input_attention.data().to_vec());
            }
            out.da
                .extend(rollout_batch(&self.darnn, part, horizon, overrides)?);
            out.cnn
                .extend(rollout_batch(&self.cnnlstm, part, horizon, overrides)?);
            let histories: Vec<&[f64]> = part.iter().map(|w| w.history.as_slice()).collect();
            out.e_rec.extend(self.vae.score_batch(&histories)?);
        }
        Ok(out)
    }

    /// Scores recorded data: `truths[i]` holds the observed
    /// targets after window `i` (at most `horizon` of them, at least one).
    pub fn score_windows(
        &self,
        windows: &[&Window],
        ts: &[usize],
        truths: &[&[f64]],
        horizon: usize,
        weights: &FusionWeights,
    ) -> Result<(Vec<ScoreComponents>, Projection)> {
        if windows.len() != ts.len() || windows.len() != truths.len() {
            return Err(Error::Contract(
                "windows, times and truths must align".into(),
            ));
        }
        let proj = self.project(windows, horizon, &[])?;
        let comps = (0..windows.len())
            .map(|i| {
                let fv = self.features(&proj, i, truths[i])?;
                meta_score(
                    &fv,
                    Some(truths[i]),
                    proj.s_att[i],
                    proj.e_rec[i],
                    &self.calibration,
                    weights,
                    ts[i],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((comps, proj))
    }

    /// Feature vector of window `i`, truncated to the available truth.
    fn features(&self, proj: &Projection, i: usize, truth: &[f64]) -> Result<MetaFeatureVector> {
        let h = truth.len();
        if h == 0 || h > proj.da[i].len() {
            return Err(Error::Contract(format!(
                "need 1..={} truth values, got {h}",
                proj.da[i].len()
            )));
        }
        let iso = (0..h)
            .map(|j| self.detector.score((truth[j] - proj.da[i][j]).abs()))
            .collect::<Result<Vec<_>>>()?;
        MetaFeatureVector::new(proj.da[i][..h].to_vec(), proj.cnn[i][..h].to_vec(), iso)
    }

    /// Projected score of a driver override over the next `horizon` steps.
    /// No future truth exists, so R̂ and the isolation input use the
    /// DA-RNN/CNN-LSTM disagreement. The action is rejected when the
    /// projected score exceeds the rule baseline.
    pub fn whatif(
        &self,
        window: &Window,
        horizon: usize,
        overrides: &[Option<f64>],
        weights: &FusionWeights,
        rule: &FlagRule,
        t: usize,
    ) -> Result<WhatIf> {
        let proj = self.project(&[window], horizon, overrides)?;
        let (da, cnn) = (proj.da[0].clone(), proj.cnn[0].clone());
        let iso = da
            .iter()
            .zip(&cnn)
            .map(|(a, c)| self.detector.score((a - c).abs()))
            .collect::<Result<Vec<_>>>()?;
        let fv = MetaFeatureVector::new(da.clone(), cnn.clone(), iso)?;
        let components = meta_score(
            &fv,
            None,
            proj.s_att[0],
            proj.e_rec[0],
            &self.calibration,
            weights,
            t,
        )?;
        Ok(WhatIf {
            da_preds: da,
            cnn_preds: cnn,
            projected_score: components.fused,
            accept: components.fused <= rule.b,
            components,
        })
    }

    /// Writes `darnn.json`, `cnnlstm.json`, `vae.json`, `iforest.json` and
    /// `calibration.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.darnn.save(dir.join("darnn.json"))?;
        self.cnnlstm.save(dir.join("cnnlstm.json"))?;
        self.vae.save(dir.join("vae.json"))?;
        self.detector.save(dir.join("iforest.json"))?;
        std::fs::write(
            dir.join("calibration.json"),
            serde_json::to_string_pretty(&self.calibration)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let file = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::State(format!(
                    "component model {} is missing",
                    p.display()
                )))
            }
        };
        let vae = Vae::load(file("vae.json")?)?;
        if !vae.is_trained() {
            return Err(Error::State("stored VAE was never trained".into()));
        }
        Ok(Self {
            darnn: Darnn::load(file("darnn.json")?)?,
            cnnlstm: CnnLstm::load(file("cnnlstm.json")?)?,
            vae,
            detector: ResidualDetector::load(file("iforest.json")?)?,
            calibration: serde_json::from_str(&std::fs::read_to_string(file(
                "calibration.json",
            )?)?)?,
        })
    }
}
