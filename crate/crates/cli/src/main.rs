use std::path::{Path, PathBuf};

use anomcast::fusion::{FlagRule, FusionWeights};
use anomcast::pipeline::experiment::{
    train_models, write_json, AnomalyReport, Detector, ExperimentConfig,
};
use anomcast::pipeline::{evaluate_detection, load_csv, run_experiment};
use anomcast::sim::{simulate, truth_path, Perturbation};
use anomcast::SimConfig;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "anomcast",
    version,
    about = "Forecast-driven anomaly detection on simulated trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as CSV plus a truth file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the component models on the training split of a CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a CSV with trained models and write an anomaly report.
    Detect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// `auto`, a JSON file, or inline JSON (`[a,b,c,d]` or an object).
        #[arg(long, default_value = "auto")]
        weights: String,
        #[arg(long)]
        baseline: Option<f64>,
        #[arg(long = "delta-c")]
        delta_c: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare report flags with ground-truth events.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 5)]
        tolerance: i64,
    },
    /// Project the score of a driver override from a given row.
    Whatif {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        at: usize,
        /// `channel=value,...` in raw units; channels by name or index.
        #[arg(long = "override", default_value = "")]
        overrides: String,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        baseline: Option<f64>,
    },
    /// Full experiment: simulate, train, fuse, score and report.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_weights(spec: &str) -> Result<Option<FusionWeights>> {
    if spec == "auto" {
        return Ok(None);
    }
    let text = if Path::new(spec).is_file() {
        std::fs::read_to_string(spec)?
    } else {
        spec.to_string()
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).context("weights must be `auto`, a JSON file or JSON")?;
    let w = match value {
        serde_json::Value::Array(_) => FusionWeights::from_array(serde_json::from_value(value)?)?,
        serde_json::Value::Object(ref m) if m.contains_key("weights") => {
            serde_json::from_value(m["weights"].clone())?
        }
        _ => serde_json::from_value(value)?,
    };
    w.validate()?;
    Ok(Some(w))
}

fn parse_overrides(spec: &str, detector: &Detector) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((name, value)) = part.split_once('=') else {
            bail!("override `{part}` is not `channel=value`");
        };
        let name = name.trim();
        let names = &detector.bundle.driver_names;
        let k = names
            .iter()
            .position(|n| n == name)
            .or_else(|| name.parse::<usize>().ok().filter(|&k| k < names.len()))
            .with_context(|| format!("unknown driver `{name}`; known: {}", names.join(", ")))?;
        let v: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("override value `{value}`"))?;
        out.push((k, v));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg: SimConfig = match config {
                Some(p) => read_json(&p)?,
                None => SimConfig::default(),
            };
            cfg.seed = seed;
            let traj = simulate(&cfg)?;
            let truth = traj.save(&out)?;
            eprintln!(
                "wrote {} rows to {} and {} events to {}",
                traj.len(),
                out.display(),
                traj.perturbation_log.len(),
                truth.display()
            );
        }
        Command::Train {
            data,
            window,
            epochs,
            batch,
            out,
            seed,
        } => {
            let ds = load_csv(&data)?;
            let truth = truth_path(&data);
            let events: Option<Vec<Perturbation>> = if truth.exists() {
                Some(read_json(&truth)?)
            } else {
                None
            };
            let cfg = ExperimentConfig {
                window,
                epochs,
                batch,
                seed,
                ..ExperimentConfig::default()
            };
            std::fs::create_dir_all(&out)?;
            let (bundle, log) = train_models(&ds, events.as_deref(), &cfg, &out)?;
            print_json(&serde_json::json!({
                "models": out,
                "final_loss": {
                    "darnn": log.darnn.last(),
                    "cnnlstm": log.cnnlstm.last(),
                    "vae": log.vae.loss.last(),
                },
                "selection": bundle.selection,
            }))?;
        }
        Command::Detect {
            data,
            models,
            weights,
            baseline,
            delta_c,
            horizon,
            out,
        } => {
            let detector = Detector::load(&models)?;
            let stored = detector.bundle.selection;
            let weights = match parse_weights(&weights)? {
                Some(w) => w,
                None => detector.selection()?.weights,
            };
            let rule = match (baseline, delta_c, stored) {
                (Some(b), Some(d), _) => FlagRule::new(b, d)?,
                (b, d, Some(sel)) => {
                    FlagRule::new(b.unwrap_or(sel.rule.b), d.unwrap_or(sel.rule.delta_c))?
                }
                _ => bail!("no stored flag rule; pass --baseline and --delta-c"),
            };
            let ds = load_csv(&data)?;
            let report = detector.detect(
                &ds,
                &weights,
                &rule,
                horizon.unwrap_or(detector.bundle.horizon),
            )?;
            report.save(&out)?;
            eprintln!(
                "{} flags over {} scored steps",
                report.flags.len(),
                report.scores.len()
            );
        }
        Command::Evaluate {
            report,
            truth,
            tolerance,
        } => {
            let report = AnomalyReport::load(&report)?;
            let events: Vec<Perturbation> = read_json(&truth)?;
            print_json(&evaluate_detection(&report.flags, &events, tolerance)?)?;
        }
        Command::Whatif {
            models,
            data,
            at,
            overrides,
            horizon,
            baseline,
        } => {
            let detector = Detector::load(&models)?;
            let sel = detector.selection()?;
            let rule = FlagRule::new(baseline.unwrap_or(sel.rule.b), sel.rule.delta_c)?;
            let ds = load_csv(&data)?;
            let window = detector.window_at(&ds, at)?;
            let action =
                detector.standardize_overrides(&parse_overrides(&overrides, &detector)?)?;
            let h = horizon.unwrap_or(detector.bundle.horizon);
            let ens = &detector.ensemble;
            let projected = ens.whatif(&window, h, &action, &sel.weights, &rule, at)?;
            let idle = ens.whatif(&window, h, &[], &sel.weights, &rule, at)?;
            print_json(&serde_json::json!({
                "at": at,
                "horizon": h,
                "action": projected,
                "null_action_score": idle.projected_score,
                "baseline": rule.b,
            }))?;
        }
        Command::Run { config, out, seed } => {
            let mut cfg: ExperimentConfig = match config {
                Some(p) => read_json(&p)?,
                None => ExperimentConfig::default(),
            };
            cfg.seed = seed;
            let outcome = run_experiment(&cfg, &out)?;
            let m = &outcome.metrics;
            write_json(
                out.join("summary.json"),
                &serde_json::json!({
                    "fused_f1": m.fused.test.f1,
                    "best_standalone_f1": m.best_standalone_f1(),
                    "forecast_mae": m.forecast_mae,
                    "test_events": m.test_events,
                    "flags": outcome.report.flags.len(),
                }),
            )?;
            eprintln!(
                "fused F1 {:.3} (best standalone {:.3}), {} flags for {} test events; artifacts in {}",
                m.fused.test.f1,
                m.best_standalone_f1(),
                outcome.report.flags.len(),
                m.test_events,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
