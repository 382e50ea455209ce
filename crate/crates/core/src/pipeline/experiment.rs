//! End-to-end experiment: simulate, split, train, fuse, score and report.

use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnnlstm::CnnLstmConfig;
use crate::darnn::DarnnConfig;
use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::fusion::{
    default_grid, flag_components, grid_search_weights, search_rule, Calibration, Ensemble,
    FlagRule, FusionWeights, Projection, RuleSearch, ScoreComponents, Selection, COMPONENT_NAMES,
};
use crate::iforest::IForestConfig;
use crate::pipeline::data::{ChannelStats, Dataset, Splits};
use crate::pipeline::metrics::{evaluate_detection, DetectionReport};
use crate::pipeline::windows::{make_windows, windows_labelling, WindowedSet};
use crate::sim::{simulate, Perturbation};
use crate::tensor::{AdamConfig, TrainConfig};
use crate::vae::{VaeConfig, VaeHistory};
use crate::{CnnLstm, Darnn, ResidualDetector, SimConfig, Vae, Window};

/// Everything an experiment needs; `seed` overrides every component seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub window: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub darnn: DarnnConfig,
    pub cnnlstm: CnnLstmConfig,
    pub vae: VaeConfig,
    pub iforest: IForestConfig,
    /// Roll-out horizon `H` of the score.
    pub horizon: usize,
    /// Event match tolerance in steps.
    pub tolerance: i64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub rule_search: RuleSearch,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            window: 10,
            epochs: 30,
            batch: 32,
            learning_rate: AdamConfig::default().learning_rate,
            darnn: DarnnConfig::default(),
            cnnlstm: CnnLstmConfig::default(),
            vae: VaeConfig::default(),
            iforest: IForestConfig::default(),
            horizon: 5,
            tolerance: 5,
            train_frac: super::data::DEFAULT_TRAIN_FRAC,
            val_frac: super::data::DEFAULT_VAL_FRAC,
            rule_search: RuleSearch::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Twice the default run length with pulses kept on almost to the end,
    /// so the test range holds about twenty perturbations.
    pub fn benchmark(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.sim.t_end = 199.95;
        cfg.sim.t_ramp = 199.925;
        cfg.seed = seed;
        cfg
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn train_config(&self, offset: u64) -> TrainConfig {
        let mut t = TrainConfig::new(self.epochs, self.batch, self.seed.wrapping_add(offset));
        t.adam.learning_rate = self.learning_rate;
        t
    }

    /// Component configs with the shared window, driver count and seeds.
    fn component_configs(
        &self,
        n_drivers: usize,
    ) -> (DarnnConfig, CnnLstmConfig, VaeConfig, IForestConfig) {
        let s = self.seed;
        let darnn = DarnnConfig {
            window: self.window,
            n_drivers,
            seed: s.wrapping_add(1),
            ..self.darnn
        };
        let cnn = CnnLstmConfig {
            window: self.window,
            n_drivers,
            seed: s.wrapping_add(2),
            ..self.cnnlstm
        };
        let vae = VaeConfig {
            window: self.window,
            seed: s.wrapping_add(3),
            ..self.vae
        };
        let forest = IForestConfig {
            seed: s.wrapping_add(4),
            ..self.iforest
        };
        (darnn, cnn, vae, forest)
    }
}

/// Per-epoch training losses of the learned components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub darnn: Vec<f64>,
    pub cnnlstm: Vec<f64>,
    pub vae: VaeHistory,
}

/// Blend weights tried for the ensemble forecast.
pub fn blend_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// One-step predictions in bounded-size batches.
pub fn one_step<F: Forecaster<f64> + ?Sized>(model: &F, windows: &[&Window]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(windows.len());
    for part in windows.chunks(256) {
        out.extend(model.predict_batch(part)?);
    }
    Ok(out)
}

fn mean_abs(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x.abs();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Trains all four components on the training range of a standardized
/// dataset. The forecast blend minimizes one-step MAE on the validation
/// range; the residual scale and the isolation forest use the training range.
pub fn train_ensemble(z: &Dataset, cfg: &ExperimentConfig) -> Result<(Ensemble, TrainingLog)> {
    let (dcfg, ccfg, vcfg, fcfg) = cfg.component_configs(z.n_drivers());
    let train =
        make_windows(z, cfg.window, z.splits.train.clone()).map_err(|e| e.in_stage("window"))?;
    let histories = train.histories();
    let (da, cnn, vae) = std::thread::scope(|s| {
        let da = s.spawn(|| -> Result<_> {
            let mut m = Darnn::new(dcfg)?;
            let losses = m.train(&train.windows, &train.labels, &cfg.train_config(11))?;
            Ok((m, losses))
        });
        let cnn = s.spawn(|| -> Result<_> {
            let mut m = CnnLstm::new(ccfg)?;
            let losses = m.train(&train.windows, &train.labels, &cfg.train_config(12))?;
            Ok((m, losses))
        });
        let vae = s.spawn(|| -> Result<_> {
            let mut m = Vae::new(vcfg)?;
            let hist = m.train(&histories, &cfg.train_config(13))?;
            Ok((m, hist))
        });
        let msg = "training thread panicked";
        (
            da.join().expect(msg),
            cnn.join().expect(msg),
            vae.join().expect(msg),
        )
    });
    let (darnn, da_loss) = da.map_err(|e| e.in_stage("train-darnn"))?;
    let (cnnlstm, cnn_loss) = cnn.map_err(|e| e.in_stage("train-cnnlstm"))?;
    let (vae, vae_hist) = vae.map_err(|e| e.in_stage("train-vae"))?;

    let calibrate = || -> Result<(Calibration, ResidualDetector)> {
        let val = windows_labelling(z, cfg.window, z.splits.val.clone())?;
        let (td, tc) = (
            one_step(&darnn, &train.refs())?,
            one_step(&cnnlstm, &train.refs())?,
        );
        let (vd, vc) = (
            one_step(&darnn, &val.refs())?,
            one_step(&cnnlstm, &val.refs())?,
        );
        let mut blend = 0.0;
        let mut best = f64::INFINITY;
        for w in blend_grid() {
            let mae =
                mean_abs((0..val.len()).map(|i| val.labels[i] - (w * vd[i] + (1.0 - w) * vc[i])));
            if mae < best {
                best = mae;
                blend = w;
            }
        }
        let resid: Vec<f64> = (0..train.len())
            .map(|i| train.labels[i] - (blend * td[i] + (1.0 - blend) * tc[i]))
            .collect();
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let residual_std =
            (resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
        let da_abs: Vec<f64> = (0..train.len())
            .map(|i| (train.labels[i] - td[i]).abs())
            .collect();
        let detector = ResidualDetector::fit(&da_abs, fcfg)?;
        Ok((
            Calibration {
                blend,
                residual_std,
            },
            detector,
        ))
    };
    let (calibration, detector) = calibrate().map_err(|e| e.in_stage("calibrate"))?;
    crate::fusion::normalize_residual(0.0, calibration.residual_std)
        .map_err(|e| e.in_stage("calibrate"))?;
    Ok((
        Ensemble {
            darnn,
            cnnlstm,
            vae,
            detector,
            calibration,
        },
        TrainingLog {
            darnn: da_loss,
            cnnlstm: cnn_loss,
            vae: vae_hist,
        },
    ))
}

/// Scored labels of one range with the raw component outputs behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRange {
    pub components: Vec<ScoreComponents>,
    pub windows: WindowedSet,
    pub projection: Projection,
}

impl ScoredRange {
    /// One-step ensemble forecasts.
    pub fn ensemble_one_step(&self, cal: &Calibration) -> Vec<f64> {
        (0..self.windows.len())
            .map(|i| cal.ensemble(self.projection.da[i][0], self.projection.cnn[i][0]))
            .collect()
    }
}

/// Scores every label index in `range` of a standardized dataset. Truth
/// for the horizon is cut at the range end.
pub fn score_range(
    ens: &Ensemble,
    z: &Dataset,
    window: usize,
    horizon: usize,
    range: Range<usize>,
    weights: &FusionWeights,
) -> Result<ScoredRange> {
    let set = windows_labelling(z, window, range.clone())?;
    let ts = set.label_indices();
    let truths: Vec<&[f64]> = ts
        .iter()
        .map(|&j| &z.target[j..(j + horizon).min(range.end)])
        .collect();
    let (components, projection) =
        ens.score_windows(&set.refs(), &ts, &truths, horizon, weights)?;
    Ok(ScoredRange {
        components,
        windows: set,
        projection,
    })
}

/// Events starting inside `range`.
pub fn events_in(log: &[Perturbation], range: &Range<usize>) -> Vec<Perturbation> {
    log.iter()
        .filter(|e| range.contains(&e.start))
        .copied()
        .collect()
}

/// `{"flags", "scores", "components", "weights", "rule"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub flags: Vec<usize>,
    pub scores: Vec<f64>,
    pub components: Vec<ScoreComponents>,
    pub weights: FusionWeights,
    pub rule: FlagRule,
}

impl AnomalyReport {
    pub fn new(
        components: Vec<ScoreComponents>,
        weights: FusionWeights,
        rule: FlagRule,
    ) -> Result<Self> {
        let components = components
            .iter()
            .map(|c| c.reweighted(&weights))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            flags: flag_components(&components, &rule),
            scores: components.iter().map(|c| c.fused).collect(),
            components,
            weights,
            rule,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// Stored next to the component models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema: String,
    pub window: usize,
    pub horizon: usize,
    pub tolerance: i64,
    pub target_name: String,
    pub driver_names: Vec<String>,
    pub stats: ChannelStats,
    /// Selected on validation when ground truth was available.
    pub selection: Option<Selection>,
}

pub const BUNDLE_SCHEMA: &str = "anomcast.bundle/v1";

impl ModelBundle {
    pub fn new(ds: &Dataset, cfg: &ExperimentConfig, selection: Option<Selection>) -> Self {
        Self {
            schema: BUNDLE_SCHEMA.into(),
            window: cfg.window,
            horizon: cfg.horizon,
            tolerance: cfg.tolerance,
            target_name: ds.target_name.clone(),
            driver_names: ds.driver_names.clone(),
            stats: ds.stats.clone(),
            selection,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_json(dir.as_ref().join("bundle.json"), self)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("bundle.json");
        if !path.exists() {
            return Err(Error::State(format!(
                "model bundle {} is missing",
                path.display()
            )));
        }
        let b: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if b.schema != BUNDLE_SCHEMA {
            return Err(Error::Data(format!("unknown bundle schema `{}`", b.schema)));
        }
        Ok(b)
    }

    /// Standardizes a raw dataset with the stored training statistics.
    pub fn standardize(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_drivers() != self.driver_names.len() {
            return Err(Error::Data(format!(
                "data has {} drivers, models expect {}",
                ds.n_drivers(),
                self.driver_names.len()
            )));
        }
        let mut d = ds.clone();
        d.stats = self.stats.clone();
        Ok(d.standardized())
    }
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Outcome of one detector on the test range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub name: String,
    pub weights: FusionWeights,
    pub rule: FlagRule,
    pub val_f1: f64,
    pub test: DetectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastErrors {
    /// Mean absolute one-step test residual in standardized units.
    pub darnn: f64,
    pub cnnlstm: f64,
    pub ensemble: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fused: DetectorResult,
    pub standalone: Vec<DetectorResult>,
    pub forecast_mae: ForecastErrors,
    pub calibration: Calibration,
    pub val_events: usize,
    pub test_events: usize,
    pub splits: Splits,
}

impl Metrics {
    pub fn best_standalone_f1(&self) -> f64 {
        self.standalone
            .iter()
            .map(|d| d.test.f1)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: AnomalyReport,
    pub metrics: Metrics,
    pub log: TrainingLog,
}

/// Runs the full protocol and writes its artifacts into `out`:
/// `trajectory.csv` (+ truth), `models/`, `report.json`, `metrics.json`,
/// `losses.csv`, `scores.csv`, `temporal_attention.csv`,
/// `input_attention.csv` and `config.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out: impl AsRef<Path>) -> Result<ExperimentOutcome> {
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;
    let mut sim_cfg = cfg.sim.clone();
    sim_cfg.seed = cfg.seed;
    let traj = simulate(&sim_cfg).map_err(|e| e.in_stage("simulate"))?;
    traj.save(out.join("trajectory.csv"))
        .map_err(|e| e.in_stage("simulate"))?;

    let mut ds = Dataset::from_trajectory(&traj).map_err(|e| e.in_stage("split"))?;
    ds.resplit(Splits::by_fraction(ds.len(), cfg.train_frac, cfg.val_frac)?)
        .map_err(|e| e.in_stage("split"))?;
    let z = ds.standardized();

    let (ens, log) = train_ensemble(&z, cfg)?;

    let placeholder = FusionWeights::only(0);
    let val = score_range(
        &ens,
        &z,
        cfg.window,
        cfg.horizon,
        z.splits.val.clone(),
        &placeholder,
    )
    .map_err(|e| e.in_stage("score-validation"))?;
    let val_events = events_in(&traj.perturbation_log, &z.splits.val);
    let selection = grid_search_weights(
        &val.components,
        &val_events,
        &default_grid(),
        &cfg.rule_search,
        cfg.tolerance,
    )
    .map_err(|e| e.in_stage("fuse"))?;

    let test = score_range(
        &ens,
        &z,
        cfg.window,
        cfg.horizon,
        z.splits.test.clone(),
        &selection.weights,
    )
    .map_err(|e| e.in_stage("score-test"))?;
    let test_events = events_in(&traj.perturbation_log, &z.splits.test);

    let evaluate = |name: &str, sel: Selection| -> Result<DetectorResult> {
        let report = AnomalyReport::new(test.components.clone(), sel.weights, sel.rule)?;
        Ok(DetectorResult {
            name: name.into(),
            weights: sel.weights,
            rule: sel.rule,
            val_f1: sel.f1,
            test: evaluate_detection(&report.flags, &test_events, cfg.tolerance)?,
        })
    };
    let fused = evaluate("fused", selection).map_err(|e| e.in_stage("evaluate"))?;
    let standalone = (0..4)
        .map(|i| {
            let sel = search_rule(
                &val.components,
                &val_events,
                &FusionWeights::only(i),
                &cfg.rule_search,
                cfg.tolerance,
            )?;
            evaluate(COMPONENT_NAMES[i], sel)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("evaluate"))?;

    let labels = &test.windows.labels;
    let ens_pred = test.ensemble_one_step(&ens.calibration);
    let forecast_mae = ForecastErrors {
        darnn: mean_abs((0..labels.len()).map(|i| labels[i] - test.projection.da[i][0])),
        cnnlstm: mean_abs((0..labels.len()).map(|i| labels[i] - test.projection.cnn[i][0])),
        ensemble: mean_abs((0..labels.len()).map(|i| labels[i] - ens_pred[i])),
    };
    let report = AnomalyReport::new(test.components.clone(), selection.weights, selection.rule)?;
    let metrics = Metrics {
        fused,
        standalone,
        forecast_mae,
        calibration: ens.calibration,
        val_events: val_events.len(),
        test_events: test_events.len(),
        splits: z.splits.clone(),
    };

    let write = || -> Result<()> {
        let models = out.join("models");
        ens.save(&models)?;
        ModelBundle::new(&ds, cfg, Some(selection)).save(&models)?;
        write_json(models.join("fusion.json"), &selection)?;
        write_json(out.join("config.json"), cfg)?;
        report.save(out.join("report.json"))?;
        write_json(out.join("metrics.json"), &metrics)?;
        write_losses(&out.join("losses.csv"), &log)?;
        write_scores(&out.join("scores.csv"), &report, &test, &ens.calibration)?;
        write_attention(
            &out.join("temporal_attention.csv"),
            &out.join("input_attention.csv"),
            &test,
            &ds,
        )?;
        Ok(())
    };
    write().map_err(|e| e.in_stage("write"))?;
    Ok(ExperimentOutcome {
        report,
        metrics,
        log,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn write_losses(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "epoch,darnn,cnnlstm,vae,vae_recon,vae_kl")?;
    let n = log
        .darnn
        .len()
        .max(log.cnnlstm.len())
        .max(log.vae.loss.len());
    let cell = |v: &[f64], i: usize| v.get(i).map_or(String::new(), |x| x.to_string());
    for i in 0..n {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            i + 1,
            cell(&log.darnn, i),
            cell(&log.cnnlstm, i),
            cell(&log.vae.loss, i),
            cell(&log.vae.recon, i),
            cell(&log.vae.kl, i)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_scores(
    path: &Path,
    report: &AnomalyReport,
    scored: &ScoredRange,
    cal: &Calibration,
) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "t,r_hat,s_att,e_rec,i_iso,fused,flag,y,darnn,cnnlstm,ensemble,residual"
    )?;
    let ens = scored.ensemble_one_step(cal);
    for (i, c) in report.components.iter().enumerate() {
        let y = scored.windows.labels[i];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.t,
            c.r_hat,
            c.s_att,
            c.e_rec,
            c.i_iso,
            c.fused,
            u8::from(report.flags.binary_search(&c.t).is_ok()),
            y,
            scored.projection.da[i][0],
            scored.projection.cnn[i][0],
            ens[i],
            y - ens[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_attention(
    temporal: &Path,
    input: &Path,
    scored: &ScoredRange,
    ds: &Dataset,
) -> Result<()> {
    let ts = scored.windows.label_indices();
    let window = scored.windows.windows.first().map_or(0, |w| w.len());
    let mut w = create(temporal)?;
    let lags: Vec<String> = (0..window)
        .map(|j| format!("lag{}", window - 1 - j))
        .collect();
    writeln!(w, "t,{}", lags.join(","))?;
    for (t, a) in ts.iter().zip(&scored.projection.temporal_attention) {
        let row: Vec<String> = a.iter().map(f64::to_string).collect();
        writeln!(w, "{t},{}", row.join(","))?;
    }
    w.flush()?;
    let mut w = create(input)?;
    writeln!(w, "t,lag,{}", ds.driver_names.join(","))?;
    let d = ds.n_drivers().max(1);
    for (t, a) in ts.iter().zip(&scored.projection.input_attention) {
        for (j, row) in a.chunks(d).enumerate() {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{t},{},{}", window - 1 - j, cells.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Trains on a loaded dataset and saves the models. With ground-truth
/// events the fusion weights and rule are selected on validation.
pub fn train_models(
    ds: &Dataset,
    events: Option<&[Perturbation]>,
    cfg: &ExperimentConfig,
    out: impl AsRef<Path>,
) -> Result<(ModelBundle, TrainingLog)> {
    let out = out.as_ref();
    let z = ds.standardized();
    let (ens, log) = train_ensemble(&z, cfg)?;
    let selection = match events {
        Some(log_events) => {
            let val = score_range(
                &ens,
                &z,
                cfg.window,
                cfg.horizon,
                z.splits.val.clone(),
                &FusionWeights::only(0),
            )
            .map_err(|e| e.in_stage("score-validation"))?;
            let val_events = events_in(log_events, &z.splits.val);
            Some(
                grid_search_weights(
                    &val.components,
                    &val_events,
                    &default_grid(),
                    &cfg.rule_search,
                    cfg.tolerance,
                )
                .map_err(|e| e.in_stage("fuse"))?,
            )
        }
        None => None,
    };
    ens.save(out)?;
    let bundle = ModelBundle::new(ds, cfg, selection);
    bundle.save(out)?;
    if let Some(sel) = selection {
        write_json(out.join("fusion.json"), &sel)?;
    }
    write_losses(&out.join("losses.csv"), &log)?;
    Ok((bundle, log))
}

/// Loaded models ready to score raw data.
pub struct Detector {
    pub ensemble: Ensemble,
    pub bundle: ModelBundle,
}

impl Detector {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            bundle: ModelBundle::load(dir)?,
            ensemble: Ensemble::load(dir)?,
        })
    }

    /// Scores every label from the first full window to the end.
    pub fn detect(
        &self,
        ds: &Dataset,
        weights: &FusionWeights,
        rule: &FlagRule,
        horizon: usize,
    ) -> Result<AnomalyReport> {
        let z = self.bundle.standardize(ds)?;
        let scored = score_range(
            &self.ensemble,
            &z,
            self.bundle.window,
            horizon,
            self.bundle.window..z.len(),
            weights,
        )?;
        AnomalyReport::new(scored.components, *weights, *rule)
    }

    /// Window ending at row `at` of a raw dataset, standardized.
    pub fn window_at(&self, ds: &Dataset, at: usize) -> Result<Window> {
        let z = self.bundle.standardize(ds)?;
        let t = self.bundle.window;
        if at + 1 < t || at >= z.len() {
            return Err(Error::Config(format!(
                "row {at} has no full window of {t} inside {} rows",
                z.len()
            )));
        }
        let lo = at + 1 - t;
        let drivers = (lo..=at)
            .map(|i| z.drivers.iter().map(|d| d[i]).collect())
            .collect();
        Window::new(drivers, z.target[lo..=at].to_vec())
    }

    /// Raw driver overrides mapped to the standardized scale.
    pub fn standardize_overrides(&self, overrides: &[(usize, f64)]) -> Result<Vec<Option<f64>>> {
        let d = self.bundle.driver_names.len();
        let mut out = vec![None; d];
        for &(k, v) in overrides {
            if k >= d {
                return Err(Error::Config(format!(
                    "driver {k} out of range for {d} drivers"
                )));
            }
            out[k] = Some(self.bundle.stats.apply(k + 1, v));
        }
        Ok(out)
    }

    /// Stored selection, or an error when training had no ground truth.
    pub fn selection(&self) -> Result<Selection> {
        self.bundle.selection.ok_or_else(|| {
            Error::State("models carry no fusion selection; pass explicit weights".into())
        })
    }
}
