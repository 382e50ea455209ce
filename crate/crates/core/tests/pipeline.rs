//! End-to-end checks of the experiment on a small configuration.

use std::path::Path;

use anomcast::fusion::{
    composite_score, flag_anomalies, grid_search_weights, meta_score, FusionWeights,
    MetaFeatureVector, RuleSearch,
};
use anomcast::pipeline::data::ChannelStats;
use anomcast::pipeline::experiment::{
    events_in, run_experiment, score_range, AnomalyReport, Detector, ExperimentConfig, Metrics,
};
use anomcast::pipeline::{evaluate_detection, load_csv};
use anomcast::sim::Perturbation;

fn small(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.sim.t_end = 39.95;
    cfg.sim.t_ramp = 39.9;
    cfg.window = 6;
    cfg.epochs = 3;
    cfg.batch = 64;
    cfg.darnn.encoder_hidden = 6;
    cfg.darnn.decoder_hidden = 6;
    cfg.cnnlstm.filters = 4;
    cfg.cnnlstm.hidden = 6;
    cfg.vae.hidden = 6;
    cfg.vae.latent = 2;
    cfg.iforest.n_trees = 25;
    cfg.seed = seed;
    cfg
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn experiment_writes_artifacts_and_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(7);
    let out = run_experiment(&cfg, dir.path()).unwrap();

    for f in [
        "trajectory.csv",
        "trajectory.truth.json",
        "report.json",
        "metrics.json",
        "losses.csv",
        "scores.csv",
        "temporal_attention.csv",
        "input_attention.csv",
        "config.json",
        "models/darnn.json",
        "models/cnnlstm.json",
        "models/vae.json",
        "models/iforest.json",
        "models/bundle.json",
        "models/fusion.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    // Report format.
    let raw: serde_json::Value = read_json(&dir.path().join("report.json"));
    let keys: Vec<&str> = raw
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    assert_eq!(keys.len(), 5);
    for k in ["flags", "scores", "components", "weights", "rule"] {
        assert!(keys.contains(&k), "{k}");
    }
    let c0 = raw["components"][0].as_object().unwrap();
    for k in ["t", "r_hat", "s_att", "e_rec", "i_iso", "fused"] {
        assert!(c0.contains_key(k), "{k}");
    }
    assert!(raw["rule"].get("b").is_some() && raw["rule"].get("delta_c").is_some());

    // Scores and flags recomputed step by step from the persisted components.
    let report = AnomalyReport::load(dir.path().join("report.json")).unwrap();
    assert_eq!(report, out.report);
    for (c, &s) in report.components.iter().zip(&report.scores) {
        assert_eq!(composite_score(c, &report.weights).unwrap(), s);
    }
    let flags: Vec<usize> = flag_anomalies(&report.scores, &report.rule)
        .into_iter()
        .map(|i| report.components[i].t)
        .collect();
    assert_eq!(flags, report.flags);

    // The test range is scored label by label.
    let metrics: Metrics = read_json(&dir.path().join("metrics.json"));
    let test = metrics.splits.test.clone();
    assert_eq!(report.components.first().unwrap().t, test.start);
    assert_eq!(report.components.last().unwrap().t, test.end - 1);
    let truth: Vec<Perturbation> = read_json(&dir.path().join("trajectory.truth.json"));
    let test_events = events_in(&truth, &test);
    assert_eq!(metrics.test_events, test_events.len());
    assert_eq!(
        evaluate_detection(&report.flags, &test_events, cfg.tolerance).unwrap(),
        metrics.fused.test
    );

    // Statistics come from the training range only.
    let ds = load_csv(dir.path().join("trajectory.csv")).unwrap();
    let det = Detector::load(dir.path().join("models")).unwrap();
    let train_stats = ChannelStats::fit(&ds.channels(), metrics.splits.train.clone()).unwrap();
    assert_eq!(det.bundle.stats, train_stats);
    for range in [metrics.splits.val.clone(), test.clone()] {
        let other = ChannelStats::fit(&ds.channels(), range).unwrap();
        assert_ne!(other.mean[0], det.bundle.stats.mean[0]);
    }

    // Loaded models reproduce the test scores.
    let z = det.bundle.standardize(&ds).unwrap();
    let again = score_range(
        &det.ensemble,
        &z,
        cfg.window,
        cfg.horizon,
        test.clone(),
        &report.weights,
    )
    .unwrap();
    assert_eq!(again.components, report.components);

    // Each score equals meta_score over the stored component outputs.
    let cal = det.ensemble.calibration;
    for (i, c) in again.components.iter().enumerate().step_by(17) {
        let t = c.t;
        let truth = &z.target[t..(t + cfg.horizon).min(test.end)];
        let h = truth.len();
        let p = &again.projection;
        let iso: Vec<f64> = (0..h)
            .map(|j| {
                det.ensemble
                    .detector
                    .score((truth[j] - p.da[i][j]).abs())
                    .unwrap()
            })
            .collect();
        let fv =
            MetaFeatureVector::new(p.da[i][..h].to_vec(), p.cnn[i][..h].to_vec(), iso).unwrap();
        let direct = meta_score(
            &fv,
            Some(truth),
            p.s_att[i],
            p.e_rec[i],
            &cal,
            &report.weights,
            t,
        )
        .unwrap();
        assert_eq!(&direct, c);
        // Manual recomputation of R̂ from its definition.
        let r = (0..h)
            .map(|j| (truth[j] - cal.ensemble(p.da[i][j], p.cnn[i][j])).abs() / cal.residual_std)
            .fold(0.0, f64::max);
        assert_eq!(r, c.r_hat);
    }

    // Detection on the raw CSV covers every row with a full window.
    let full = det
        .detect(&ds, &report.weights, &report.rule, cfg.horizon)
        .unwrap();
    assert_eq!(full.components.len(), ds.len() - cfg.window);

    // Attention plot data: one row per scored step, rows on the simplex.
    let attn = std::fs::read_to_string(dir.path().join("temporal_attention.csv")).unwrap();
    let rows: Vec<&str> = attn.lines().skip(1).collect();
    assert_eq!(rows.len(), report.components.len());
    let sum: f64 = rows[0]
        .split(',')
        .skip(1)
        .map(|x| x.parse::<f64>().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9);
}

#[test]
fn same_seed_same_report_and_stage_errors() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small(11);
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join("report.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    let mut bad = small(11);
    bad.window = 0;
    let e = run_experiment(&bad, a.path()).unwrap_err();
    assert!(e.to_string().contains("stage `window`"), "{e}");
    let mut bad = small(11);
    bad.sim.dt = -1.0;
    let e = run_experiment(&bad, a.path()).unwrap_err();
    assert!(e.to_string().contains("stage `simulate`"), "{e}");
}

#[test]
fn small_grid_matches_exhaustive_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(5);
    run_experiment(&cfg, dir.path()).unwrap();
    let det = Detector::load(dir.path().join("models")).unwrap();
    let ds = load_csv(dir.path().join("trajectory.csv")).unwrap();
    let z = det.bundle.standardize(&ds).unwrap();
    let truth: Vec<Perturbation> = read_json(&dir.path().join("trajectory.truth.json"));
    let val = z.splits.val.clone();
    let scored = score_range(
        &det.ensemble,
        &z,
        cfg.window,
        cfg.horizon,
        val.clone(),
        &FusionWeights::only(0),
    )
    .unwrap();
    let events = events_in(&truth, &val);
    let grid = [
        FusionWeights::new(1.0, 0.0, 0.0, 0.0).unwrap(),
        FusionWeights::new(0.0, 0.0, 1.0, 0.5).unwrap(),
        FusionWeights::new(0.5, 0.5, 0.5, 0.5).unwrap(),
    ];
    let search = RuleSearch::default();
    let chosen =
        grid_search_weights(&scored.components, &events, &grid, &search, cfg.tolerance).unwrap();

    // Manual: every weight, every candidate rule, keep the strict maximum,
    // then the smallest tuple among equals.
    let mut best: Option<(f64, [f64; 4])> = None;
    for w in &grid {
        let fused: Vec<f64> = scored
            .components
            .iter()
            .map(|c| composite_score(c, w).unwrap())
            .collect();
        let mut f1 = 0.0f64;
        for rule in search.candidates(&fused) {
            let flags: Vec<usize> = flag_anomalies(&fused, &rule)
                .into_iter()
                .map(|i| scored.components[i].t)
                .collect();
            f1 = f1.max(
                evaluate_detection(&flags, &events, cfg.tolerance)
                    .unwrap()
                    .f1,
            );
        }
        let a = w.as_array();
        let better = match best {
            None => true,
            Some((bf, ba)) => {
                f1 > bf || (f1 == bf && a.partial_cmp(&ba) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((f1, a));
        }
    }
    let (f1, weights) = best.unwrap();
    assert_eq!(chosen.f1, f1);
    assert_eq!(chosen.weights.as_array(), weights);
}
