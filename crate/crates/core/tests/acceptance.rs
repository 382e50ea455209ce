//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use anomcast::cnnlstm::{self, CnnLstmConfig};
use anomcast::darnn::{self, attention_sparsity, DarnnConfig};
use anomcast::fusion::{
    composite_score, flag_anomalies, FlagRule, FusionWeights, MetaFeatureVector, RuleSearch,
    ScoreComponents,
};
use anomcast::iforest::{average_path_length, IForestConfig};
use anomcast::pipeline::experiment::{
    run_experiment, train_ensemble, Detector, ExperimentConfig, ExperimentOutcome,
};
use anomcast::pipeline::{load_csv, Dataset};
use anomcast::sim::simulate;
use anomcast::tensor::gradcheck::check_gradients;
use anomcast::tensor::layers::{conv1d, dense, lstm_step, LstmVars};
use anomcast::tensor::{Graph, Tensor, Var};
use anomcast::vae::{vae_loss, VaeConfig};
use anomcast::{CnnLstm, Darnn, IsolationForest, SimConfig, Vae, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<(bool, String), String>;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn run(id: usize, name: &'static str, limit: Duration, f: impl FnOnce() -> Outcome) -> Line {
    let start = Instant::now();
    let (mut pass, mut detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    if elapsed > limit {
        pass = false;
        detail.push_str(&format!("; over the {}s budget", limit.as_secs()));
    }
    let line = Line {
        id,
        name,
        pass,
        detail,
        secs: elapsed.as_secs_f64(),
    };
    print_line(&line);
    line
}

fn print_line(l: &Line) {
    println!(
        "criterion {:>2} {:<34} {} ({}) [{:.1}s]",
        l.id,
        l.name,
        if l.pass { "PASS" } else { "FAIL" },
        l.detail,
        l.secs
    );
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Scalar root `Σ coeff ⊙ out` so every output entry carries gradient.
fn project(g: &Graph<f64>, out: Var, coeff: &Tensor<f64>) -> Result<Var, anomcast::Error> {
    Ok(g.sum(g.mul(out, g.leaf(coeff.clone()))?))
}

fn random_windows(rng: &mut ChaCha8Rng, n: usize, len: usize, d: usize) -> Vec<Window> {
    (0..n)
        .map(|_| Window {
            drivers: (0..len)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            history: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

const POINTS: u64 = 10;
const EPS: f64 = 1e-5;

fn criterion_gradients() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name, e)),
    };
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let c = random_tensor(&mut rng, 3, 2);
        let inputs = [
            random_tensor(&mut rng, 3, 4),
            random_tensor(&mut rng, 4, 2),
            random_tensor(&mut rng, 1, 2),
        ];
        let r = check_gradients(&inputs, EPS, |g, v| {
            project(g, dense(g, v[0], v[1], v[2])?, &c)
        })
        .map_err(err)?;
        record("dense", r.max_rel_error);

        let (ch, cc) = (random_tensor(&mut rng, 2, 4), random_tensor(&mut rng, 2, 4));
        let inputs = [
            random_tensor(&mut rng, 2, 3),
            random_tensor(&mut rng, 2, 4),
            random_tensor(&mut rng, 2, 4),
            random_tensor(&mut rng, 7, 16),
            random_tensor(&mut rng, 1, 16),
        ];
        let r = check_gradients(&inputs, EPS, |g, v| {
            let (h, c) = lstm_step(
                g,
                v[0],
                v[1],
                v[2],
                LstmVars {
                    weight: v[3],
                    bias: v[4],
                },
            )?;
            g.add(project(g, h, &ch)?, project(g, c, &cc)?)
        })
        .map_err(err)?;
        record("lstm_step", r.max_rel_error);

        let c = random_tensor(&mut rng, 6, 2);
        let inputs = [
            random_tensor(&mut rng, 6, 3),
            random_tensor(&mut rng, 9, 2),
            random_tensor(&mut rng, 1, 2),
        ];
        let r = check_gradients(&inputs, EPS, |g, v| {
            project(g, conv1d(g, v[0], v[1], v[2])?, &c)
        })
        .map_err(err)?;
        record("conv1d", r.max_rel_error);

        // Input attention: B = 2, m = 3, T = 4, D = 3.
        let c = random_tensor(&mut rng, 2, 3);
        let mut inputs = vec![
            random_tensor(&mut rng, 2, 6),
            random_tensor(&mut rng, 6, 4),
            random_tensor(&mut rng, 4, 1),
        ];
        inputs.extend((0..3).map(|_| random_tensor(&mut rng, 2, 4)));
        let r = check_gradients(&inputs, EPS, |g, v| {
            project(g, darnn::input_attention(g, v[0], &v[3..], v[1], v[2])?, &c)
        })
        .map_err(err)?;
        record("input attention", r.max_rel_error);

        // Temporal attention: B = 2, p = 3, m = 4, T = 5.
        let c = random_tensor(&mut rng, 2, 5);
        let mut inputs = vec![
            random_tensor(&mut rng, 2, 6),
            random_tensor(&mut rng, 6, 4),
            random_tensor(&mut rng, 4, 1),
        ];
        inputs.extend((0..5).map(|_| random_tensor(&mut rng, 2, 4)));
        let r = check_gradients(&inputs, EPS, |g, v| {
            project(
                g,
                darnn::temporal_attention(g, v[0], &v[3..], v[1], v[2])?,
                &c,
            )
        })
        .map_err(err)?;
        record("temporal attention", r.max_rel_error);

        let vae = Vae::new(VaeConfig {
            window: 5,
            hidden: 4,
            latent: 2,
            seed,
        })
        .map_err(err)?;
        let x = random_tensor(&mut rng, 3, 5);
        let noise = Tensor::from_fn(3, 2, |_, _| rng.sample(StandardNormal));
        let r = check_gradients(vae.params.tensors(), EPS, |g, p| {
            Ok(vae_loss(g, p, g.leaf(x.clone()), &noise)?.loss)
        })
        .map_err(err)?;
        record("vae (frozen noise)", r.max_rel_error);

        let cfg = DarnnConfig {
            window: 4,
            n_drivers: 2,
            encoder_hidden: 3,
            decoder_hidden: 3,
            seed,
        };
        let model = Darnn::new(cfg).map_err(err)?;
        let ws = random_windows(&mut rng, 2, 4, 2);
        let batch: Vec<&Window> = ws.iter().collect();
        let labels = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let r = check_gradients(model.params.tensors(), EPS, |g, p| {
            darnn::batch_loss(&cfg, g, p, &batch, &labels)
        })
        .map_err(err)?;
        record("da-rnn", r.max_rel_error);

        let cfg = CnnLstmConfig {
            window: 6,
            n_drivers: 2,
            kernel_width: 3,
            filters: 2,
            hidden: 4,
            seed,
        };
        let model = CnnLstm::new(cfg).map_err(err)?;
        let ws = random_windows(&mut rng, 2, 6, 2);
        let batch: Vec<&Window> = ws.iter().collect();
        let r = check_gradients(model.params.tensors(), EPS, |g, p| {
            cnnlstm::batch_loss(&cfg, g, p, &batch, &labels)
        })
        .map_err(err)?;
        record("cnn-lstm", r.max_rel_error);
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Ok((
        max < 1e-4,
        format!(
            "max rel error {max:.2e} < 1e-4 over {POINTS} points: {}",
            parts.join(", ")
        ),
    ))
}

fn criterion_simulator() -> Outcome {
    // (a) Logistic growth with pulses and forcing off.
    let mut base = SimConfig::default()
        .without_perturbations()
        .without_forcing();
    // Excitation covers every step whose rate reaches a stored sample.
    base.t_ramp = base.t_end - base.dt / 2.0;
    let traj = simulate(&base).map_err(err)?;
    let monotone = traj.primary.windows(2).all(|w| w[1] >= w[0]);
    let bounded = traj.primary.iter().all(|&p| p <= base.p_sat);

    // (b) Relaxation at dt = α/1000 with α = 1.
    let mut relax = SimConfig::default().without_perturbations();
    relax.alpha_relax = 1.0;
    relax.dt = relax.alpha_relax / 1000.0;
    relax.t_ramp = 10.0;
    relax.t_end = 20.0;
    let tr = simulate(&relax).map_err(err)?;
    let k = tr
        .times
        .iter()
        .position(|&t| t > relax.t_ramp + 1e-9)
        .ok_or("no relaxation phase")?;
    let amp = tr.primary[k] - relax.p0;
    let mut decay_err = 0.0f64;
    for i in k..tr.len() {
        let exact = relax.p0 + amp * (-relax.alpha_relax * (tr.times[i] - tr.times[k])).exp();
        decay_err = decay_err.max(((tr.primary[i] - exact) / exact).abs());
    }

    // (c) Euler refinement against the closed-form logistic curve.
    let logistic = |t: f64| {
        let (k, r, p0) = (base.p_sat, base.p_coeff, base.p0);
        k / (1.0 + (k / p0 - 1.0) * (-r * t).exp())
    };
    let max_err = |dt: f64| -> Result<f64, String> {
        let mut c = base.clone();
        c.dt = dt;
        c.t_end = 50.0;
        c.t_ramp = 50.0 - dt / 2.0;
        let tr = simulate(&c).map_err(err)?;
        Ok(tr
            .times
            .iter()
            .zip(&tr.primary)
            .map(|(&t, &p)| (p - logistic(t)).abs())
            .fold(0.0, f64::max))
    };
    let (coarse, fine) = (max_err(0.05)?, max_err(0.025)?);
    let ratio = coarse / fine;
    let pass = monotone && bounded && decay_err < 0.01 && (1.5..=2.5).contains(&ratio);
    Ok((
        pass,
        format!(
            "monotone {monotone}, bounded {bounded}, decay rel error {decay_err:.2e} < 1e-2, dt ratio {ratio:.3} in [1.5, 2.5]"
        ),
    ))
}

fn criterion_descent() -> Outcome {
    let cfg = ExperimentConfig::default();
    let traj = simulate(&cfg.sim).map_err(err)?;
    let z = Dataset::from_trajectory(&traj).map_err(err)?.standardized();
    let (_, log) = train_ensemble(&z, &cfg).map_err(err)?;
    let ratio = |v: &[f64]| v[v.len() - 1] / v[0];
    let (rd, rc, rv) = (ratio(&log.darnn), ratio(&log.cnnlstm), ratio(&log.vae.loss));
    let kl_ok = log.vae.min_batch_kl >= 0.0 && log.vae.kl.iter().all(|&k| k >= 0.0);
    Ok((
        rd <= 0.5 && rc <= 0.5 && rv <= 0.7 && kl_ok,
        format!(
            "final/first loss: da-rnn {rd:.3} <= 0.5, cnn-lstm {rc:.3} <= 0.5, vae {rv:.3} <= 0.7; min batch KL {:.2e} >= 0",
            log.vae.min_batch_kl
        ),
    ))
}

fn criterion_iforest() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut data: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
    data.extend((0..10).map(|i| if i % 2 == 0 { 6.0 } else { -6.0 }));
    let forest = IsolationForest::fit(&data, IForestConfig::default()).map_err(err)?;
    let scores = forest.score_batch(&data).map_err(err)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let top = (0.02 * data.len() as f64).floor() as usize;
    let in_top = order[..top].iter().filter(|&&i| i >= 1000).count();
    let c2 = average_path_length(2);
    Ok((
        in_top == 10 && c2 == 1.0,
        format!("{in_top}/10 planted points in the top {top} scores; c(2) = {c2}"),
    ))
}

fn brute_force_flags(scores: &[f64], rule: &FlagRule) -> Vec<usize> {
    (0..scores.len())
        .filter(|&i| {
            let prev = if i == 0 { 0.0 } else { scores[i - 1] };
            scores[i] > rule.b && scores[i] - prev > rule.delta_c
        })
        .collect()
}

fn criterion_flag_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..200);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..2.0)).collect();
        let rule =
            FlagRule::new(rng.random_range(-0.5..1.5), rng.random_range(0.0..1.0)).map_err(err)?;
        if flag_anomalies(&scores, &rule) != brute_force_flags(&scores, &rule) {
            mismatches += 1;
        }
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} mismatches over 1000 series"),
    ))
}

fn criterion_fusion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let only_r = FusionWeights::only(0);
    let mut identity_failures = 0;
    let mut flag_failures = 0;
    let mut search_failures = 0;
    for _ in 0..100 {
        let n = 150;
        let comps: Vec<ScoreComponents> = (0..n)
            .map(|t| {
                let v = [
                    rng.random_range(0.0..5.0),
                    rng.random(),
                    rng.random_range(0.0..3.0),
                    rng.random(),
                ];
                ScoreComponents::new(t, v, &only_r)
            })
            .collect::<Result<_, _>>()
            .map_err(err)?;
        for c in &comps {
            if composite_score(c, &only_r).map_err(err)? != c.r_hat {
                identity_failures += 1;
            }
        }
        let w = FusionWeights::new(rng.random(), rng.random(), rng.random(), rng.random())
            .map_err(err)?;
        let k = rng.random_range(0.1..10.0);
        let rule =
            FlagRule::new(rng.random_range(0.5..3.0), rng.random_range(0.0..0.8)).map_err(err)?;
        let fused = |w: &FusionWeights| -> Result<Vec<f64>, String> {
            comps
                .iter()
                .map(|c| composite_score(c, w).map_err(err))
                .collect()
        };
        let (base, scaled) = (fused(&w)?, fused(&w.scaled(k))?);
        if flag_anomalies(&base, &rule) != flag_anomalies(&scaled, &rule.scaled(k)) {
            flag_failures += 1;
        }
        // The searched rules scale with the score as well.
        let search = RuleSearch::default();
        let (ra, rb) = (search.candidates(&base), search.candidates(&scaled));
        if ra
            .iter()
            .zip(&rb)
            .any(|(a, b)| flag_anomalies(&base, a) != flag_anomalies(&scaled, b))
        {
            search_failures += 1;
        }
    }
    Ok((
        identity_failures == 0 && flag_failures == 0 && search_failures == 0,
        format!(
            "(1,0,0,0) identity failures {identity_failures}; flag-set changes under rescaling: fixed rule {flag_failures}/100, searched rules {search_failures}/100"
        ),
    ))
}

fn criterion_benchmark(runs: &[ExperimentOutcome]) -> Outcome {
    let mut f1_wins = 0;
    let mut mae_wins = 0;
    let mut parts = Vec::new();
    for (seed, o) in runs.iter().enumerate() {
        let m = &o.metrics;
        let best = m.best_standalone_f1();
        let e = &m.forecast_mae;
        f1_wins += usize::from(m.fused.test.f1 >= best);
        mae_wins += usize::from(e.ensemble <= e.darnn.min(e.cnnlstm));
        parts.push(format!(
            "seed {}: F1 {:.3} vs {:.3}, MAE {:.4} vs {:.4}/{:.4}, {} events",
            seed + 1,
            m.fused.test.f1,
            best,
            e.ensemble,
            e.darnn,
            e.cnnlstm,
            m.test_events
        ));
    }
    Ok((
        f1_wins >= 4 && mae_wins >= 4,
        format!(
            "F1 wins {f1_wins}/5, MAE wins {mae_wins}/5 (need 4 each); {}",
            parts.join("; ")
        ),
    ))
}

fn criterion_sparsity(runs: &[&ExperimentOutcome]) -> Outcome {
    let mut total = 0;
    let mut outside = 0;
    for o in runs {
        for c in &o.report.components {
            total += 1;
            outside += usize::from(!(0.0..=1.0).contains(&c.s_att));
        }
    }
    let uniform = attention_sparsity(&[0.25; 4]).map_err(err)?;
    let one_hot = attention_sparsity(&[0.0, 1.0, 0.0]).map_err(err)?;
    Ok((
        outside == 0 && total > 0 && uniform == 0.0 && one_hot == 1.0,
        format!(
            "{outside}/{total} scored windows outside [0, 1]; uniform {uniform}, one-hot {one_hot}"
        ),
    ))
}

fn criterion_determinism(a: &Path, b: &Path) -> Outcome {
    let ra = std::fs::read(a.join("report.json")).map_err(err)?;
    let rb = std::fs::read(b.join("report.json")).map_err(err)?;
    Ok((
        ra == rb,
        format!("report.json {} bytes, identical: {}", ra.len(), ra == rb),
    ))
}

fn criterion_whatif(run_dir: &Path) -> Outcome {
    let detector = Detector::load(run_dir.join("models")).map_err(err)?;
    let ds = load_csv(run_dir.join("trajectory.csv")).map_err(err)?;
    let sel = detector.selection().map_err(err)?;
    let at = ds.splits.test.start;
    let window = detector.window_at(&ds, at).map_err(err)?;
    let ens = &detector.ensemble;
    let h = detector.bundle.horizon;
    let rule = sel.rule;

    let idle = ens
        .whatif(&window, h, &[], &sel.weights, &rule, at)
        .map_err(err)?;
    let unset = ens
        .whatif(&window, h, &[None, None], &sel.weights, &rule, at)
        .map_err(err)?;
    // Independent projection: chained one-step forecasts with held drivers.
    let chain = |model: &dyn anomcast::forecast::Forecaster<f64>| -> Result<Vec<f64>, String> {
        let mut w = window.clone();
        let mut out = Vec::new();
        for _ in 0..h {
            let p = model.predict(&w).map_err(err)?;
            out.push(p);
            w.advance(p, &[]);
        }
        Ok(out)
    };
    let (da, cnn) = (chain(&ens.darnn)?, chain(&ens.cnnlstm)?);
    let iso = da
        .iter()
        .zip(&cnn)
        .map(|(a, c)| ens.detector.score((a - c).abs()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let fv = MetaFeatureVector::new(da.clone(), cnn.clone(), iso).map_err(err)?;
    let s = attention_sparsity(&ens.darnn.forward(&window).map_err(err)?.temporal_attention)
        .map_err(err)?;
    let e = ens.vae.score(&window.history).map_err(err)?;
    let manual = anomcast::fusion::meta_score(&fv, None, s, e, &ens.calibration, &sel.weights, at)
        .map_err(err)?;
    let null_ok = idle.projected_score == unset.projected_score
        && idle.projected_score == manual.fused
        && idle.da_preds == da
        && idle.cnn_preds == cnn;

    // Saturating action: forcing held at ten times its nominal level.
    let k = detector
        .bundle
        .driver_names
        .iter()
        .position(|n| n == "P_RF")
        .ok_or("no forcing channel")?;
    let nominal = SimConfig::default().forcing();
    let action = detector
        .standardize_overrides(&[(k, 10.0 * nominal)])
        .map_err(err)?;
    let pushed = ens
        .whatif(&window, h, &action, &sel.weights, &rule, at)
        .map_err(err)?;
    Ok((
        null_ok && pushed.projected_score > idle.projected_score,
        format!(
            "null action reproduces the plain projection: {null_ok}; override score {:.4} > null {:.4}",
            pushed.projected_score, idle.projected_score
        ),
    ))
}

fn main() {
    let mut lines = Vec::new();
    lines.push(run(
        1,
        "gradient correctness",
        Duration::from_secs(60),
        criterion_gradients,
    ));
    lines.push(run(
        2,
        "simulator analytics",
        Duration::from_secs(60),
        criterion_simulator,
    ));
    lines.push(run(
        3,
        "training descent",
        Duration::from_secs(600),
        criterion_descent,
    ));
    lines.push(run(
        4,
        "isolation forest planted outliers",
        Duration::from_secs(30),
        criterion_iforest,
    ));
    lines.push(run(
        5,
        "flag-rule oracle",
        Duration::from_secs(60),
        criterion_flag_rule,
    ));
    lines.push(run(
        6,
        "fusion identities",
        Duration::from_secs(60),
        criterion_fusion_identities,
    ));

    let tmp = tempfile::tempdir().expect("temp dir");
    let mut runs = Vec::new();
    let mut failure = None;
    let line7 = run(
        7,
        "ensemble vs standalone benchmark",
        Duration::from_secs(1800),
        || {
            for seed in 1..=5u64 {
                let o = run_experiment(
                    &ExperimentConfig::benchmark(seed),
                    tmp.path().join(format!("bench{seed}")),
                )
                .map_err(err)?;
                runs.push(o);
            }
            criterion_benchmark(&runs)
        },
    );
    lines.push(line7);

    let (a, b) = (tmp.path().join("det-a"), tmp.path().join("det-b"));
    let mut det = Vec::new();
    let line9 = run(9, "determinism", Duration::from_secs(600), || {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 42;
        det.push(run_experiment(&cfg, &a).map_err(err)?);
        det.push(run_experiment(&cfg, &b).map_err(err)?);
        criterion_determinism(&a, &b)
    });
    let all: Vec<&ExperimentOutcome> = runs.iter().chain(&det).collect();
    lines.push(run(
        8,
        "attention-sparsity bounds",
        Duration::from_secs(60),
        || criterion_sparsity(&all),
    ));
    lines.push(line9);
    lines.push(run(10, "what-if contract", Duration::from_secs(60), || {
        criterion_whatif(&a)
    }));

    lines.sort_by_key(|l| l.id);
    println!("\nsummary");
    for l in &lines {
        print_line(l);
        if !l.pass {
            failure.get_or_insert(l.id);
        }
    }
    if let Some(id) = failure {
        eprintln!("acceptance failed (first failing criterion: {id})");
        std::process::exit(1);
    }
}
