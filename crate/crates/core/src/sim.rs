//! Stochastic growth–relaxation simulator.
//!
//! During the excitation phase (`t ≤ t_ramp`) the primary state follows
//! logistic growth plus a constant forcing term and rectangular random
//! pulses; afterwards it relaxes exponentially back to its baseline. An
//! auxiliary state tracks the primary through a saturating first-order lag.
//! Integration is explicit Euler with a fixed step.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SimConfig<T> {
    /// Logistic growth rate (1/time).
    pub p_coeff: T,
    /// Primary saturation level.
    pub p_sat: T,
    pub t_coeff: T,
    /// Forcing amplitude V.
    pub v_amp: T,
    /// Forcing time constant τ.
    pub tau: T,
    /// Forcing width w.
    pub w_width: T,
    /// Relaxation rate back to `p0` (1/time).
    pub alpha_relax: T,
    /// Baseline and initial primary state.
    pub p0: T,
    /// End of the excitation phase.
    pub t_ramp: T,
    pub t_end: T,
    pub dt: T,
    /// Auxiliary saturation level.
    pub t_sat: T,
    pub aux_gain: T,
    pub aux_rate: T,
    /// `|dP/dt|` at or above which a pulse may start.
    pub grad_threshold: T,
    pub pert_amp_range: (T, T),
    /// Pulse duration in steps, inclusive bounds.
    pub pert_len_range: (usize, usize),
    /// Per-armed-step probability of starting a pulse.
    pub pert_prob: T,
    pub seed: u64,
}

impl<T: Scalar> Default for SimConfig<T> {
    /// 2000 steps of `dt = 0.05`: growth from 1 toward 10 over the first
    /// ~450 steps, pulses throughout excitation, relaxation over the last 200.
    fn default() -> Self {
        Self {
            p_coeff: T::of(0.2),
            p_sat: T::of(10.0),
            t_coeff: T::of(0.5),
            v_amp: T::of(1.0),
            tau: T::of(5.0),
            w_width: T::of(2.0),
            alpha_relax: T::of(0.2),
            p0: T::of(1.0),
            t_ramp: T::of(90.0),
            t_end: T::of(99.95),
            dt: T::of(0.05),
            t_sat: T::of(5.0),
            aux_gain: T::of(0.6),
            aux_rate: T::of(0.5),
            grad_threshold: T::zero(),
            pert_amp_range: (T::of(4.0), T::of(8.0)),
            pert_len_range: (2, 5),
            pert_prob: T::of(0.04),
            seed: 0,
        }
    }
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("p_coeff", self.p_coeff),
            ("p_sat", self.p_sat),
            ("t_coeff", self.t_coeff),
            ("v_amp", self.v_amp),
            ("tau", self.tau),
            ("w_width", self.w_width),
            ("alpha_relax", self.alpha_relax),
            ("p0", self.p0),
            ("t_ramp", self.t_ramp),
            ("t_end", self.t_end),
            ("dt", self.dt),
            ("t_sat", self.t_sat),
            ("aux_gain", self.aux_gain),
            ("aux_rate", self.aux_rate),
            ("pert_amp_range.0", self.pert_amp_range.0),
            ("pert_amp_range.1", self.pert_amp_range.1),
            ("pert_prob", self.pert_prob),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite")));
        }
        let z = T::zero();
        let checks = [
            (self.dt > z, "dt > 0"),
            (
                self.t_ramp > z && self.t_end > self.t_ramp,
                "t_end > t_ramp > 0",
            ),
            (self.p0 > z && self.p_sat > self.p0, "p_sat > p0 > 0"),
            (self.alpha_relax > z, "alpha_relax > 0"),
            (
                self.tau != z && self.w_width != z,
                "tau and w_width nonzero",
            ),
            (self.t_sat > z, "t_sat > 0"),
            (self.aux_rate >= z, "aux_rate >= 0"),
            (
                !self.grad_threshold.is_nan() && self.grad_threshold >= z,
                "grad_threshold >= 0",
            ),
            (
                self.pert_amp_range.0 <= self.pert_amp_range.1,
                "pert_amp_range ordered",
            ),
            (
                self.pert_len_range.0 >= 1 && self.pert_len_range.0 <= self.pert_len_range.1,
                "pert_len_range ordered with minimum >= 1",
            ),
            (
                self.pert_prob >= z && self.pert_prob <= T::one(),
                "0 <= pert_prob <= 1",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, rule)) => Err(Error::Config(format!("simulator requires {rule}"))),
            None => Ok(()),
        }
    }

    /// Constant forcing term `t_coeff·V / (w·τ)`.
    pub fn forcing(&self) -> T {
        self.t_coeff * self.v_amp / (self.w_width * self.tau)
    }

    /// `floor(t_end/dt) + 1`, tolerant of the representation error in `t_end/dt`.
    pub fn n_steps(&self) -> usize {
        let ratio = self.t_end.as_f64() / self.dt.as_f64();
        (ratio * (1.0 + Self::slack())).floor() as usize + 1
    }

    /// Relative tolerance for comparing step times against phase boundaries.
    fn slack() -> f64 {
        (T::epsilon().as_f64() * 16.0).max(1e-12)
    }

    pub fn time(&self, step: usize) -> T {
        T::of(step as f64) * self.dt
    }

    pub fn in_excitation(&self, step: usize) -> bool {
        let t = step as f64 * self.dt.as_f64();
        t <= self.t_ramp.as_f64() * (1.0 + Self::slack())
    }

    /// Disables the stochastic pulses.
    pub fn without_perturbations(mut self) -> Self {
        self.pert_prob = T::zero();
        self
    }

    /// Zeroes the constant forcing term.
    pub fn without_forcing(mut self) -> Self {
        self.t_coeff = T::zero();
        self
    }
}

/// One injected pulse, inclusive step indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub start: usize,
    pub end: usize,
    pub amplitude: f64,
}

impl Perturbation {
    pub fn contains(&self, step: usize) -> bool {
        (self.start..=self.end).contains(&step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub primary: Vec<T>,
    pub auxiliary: Vec<T>,
    pub forcing: Vec<T>,
    /// Pulse value applied at each step (zero outside pulses).
    pub eta: Vec<T>,
    pub perturbation_log: Vec<Perturbation>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `t,P,T_aux,P_RF` rows.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "t,P,T_aux,P_RF")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.times[i].as_f64(),
                self.primary[i].as_f64(),
                self.auxiliary[i].as_f64(),
                self.forcing[i].as_f64()
            )?;
        }
        Ok(())
    }

    /// Writes the CSV to `path` and the perturbation log next to it as
    /// `<stem>.truth.json`. Returns the truth-file path.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<std::path::PathBuf> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        let truth = truth_path(path);
        std::fs::write(
            &truth,
            serde_json::to_string_pretty(&self.perturbation_log)?,
        )?;
        Ok(truth)
    }
}

/// `<dir>/<stem>.truth.json` for a trajectory file `<dir>/<stem>.csv`.
pub fn truth_path(csv: &Path) -> std::path::PathBuf {
    let stem = csv
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trajectory");
    csv.with_file_name(format!("{stem}.truth.json"))
}

fn check_finite<T: Scalar>(values: &[T]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidState(format!(
            "non-finite simulator input {values:?}"
        )))
    }
}

/// `p_coeff·p·(1 − p/p_sat) + forcing + eta`.
pub fn excitation_rate<T: Scalar>(p: T, forcing: T, eta: T, cfg: &SimConfig<T>) -> Result<T> {
    check_finite(&[p, forcing, eta])?;
    Ok(cfg.p_coeff * p * (T::one() - p / cfg.p_sat) + forcing + eta)
}

/// `−alpha_relax·(p − p0)`.
pub fn relaxation_rate<T: Scalar>(p: T, cfg: &SimConfig<T>) -> Result<T> {
    check_finite(&[p])?;
    Ok(-cfg.alpha_relax * (p - cfg.p0))
}

/// `aux_rate·(aux_gain·p·(1 − aux/t_sat) − aux)`.
pub fn auxiliary_rate<T: Scalar>(p: T, aux: T, cfg: &SimConfig<T>) -> Result<T> {
    check_finite(&[p, aux])?;
    Ok(cfg.aux_rate * (cfg.aux_gain * p * (T::one() - aux / cfg.t_sat) - aux))
}

/// Gradient-armed pulse generator. At most one pulse is active at a time.
#[derive(Debug, Clone)]
pub struct PerturbationProcess<T> {
    rng: ChaCha8Rng,
    active: Option<(usize, T)>,
    log: Vec<Perturbation>,
}

impl<T: Scalar> PerturbationProcess<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            active: None,
            log: Vec::new(),
        }
    }

    /// Pulse value for `step`. With no pulse active and `|prev_rate|` at or
    /// above the threshold, one uniform draw decides whether a pulse starts;
    /// a started pulse then draws its amplitude and its length, in that order.
    pub fn next(&mut self, step: usize, prev_rate: T, cfg: &SimConfig<T>) -> T {
        if let Some((remaining, amplitude)) = self.active {
            self.active = (remaining > 1).then_some((remaining - 1, amplitude));
            return amplitude;
        }
        if prev_rate.abs() < cfg.grad_threshold {
            return T::zero();
        }
        let u: f64 = self.rng.random();
        if u >= cfg.pert_prob.as_f64() {
            return T::zero();
        }
        let (lo, hi) = (cfg.pert_amp_range.0.as_f64(), cfg.pert_amp_range.1.as_f64());
        let amplitude = if lo < hi {
            self.rng.random_range(lo..=hi)
        } else {
            lo
        };
        let (lmin, lmax) = cfg.pert_len_range;
        let len = self.rng.random_range(lmin..=lmax);
        self.log.push(Perturbation {
            start: step,
            end: step + len - 1,
            amplitude,
        });
        let amplitude = T::of(amplitude);
        self.active = (len > 1).then_some((len - 1, amplitude));
        amplitude
    }

    /// Closes the log, clipping a pulse still running past `last_step`.
    pub fn finish(mut self, last_step: Option<usize>) -> Vec<Perturbation> {
        if let (Some(last), Some(p)) = (last_step, self.log.last_mut()) {
            p.end = p.end.min(last);
        }
        self.log
    }
}

pub fn simulate<T: Scalar>(cfg: &SimConfig<T>) -> Result<Trajectory<T>> {
    cfg.validate()?;
    let n = cfg.n_steps();
    let forcing_value = cfg.forcing();
    let mut traj = Trajectory {
        times: Vec::with_capacity(n),
        primary: Vec::with_capacity(n),
        auxiliary: Vec::with_capacity(n),
        forcing: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        perturbation_log: Vec::new(),
    };
    let mut process = PerturbationProcess::new(cfg.seed);
    let (mut p, mut aux) = (cfg.p0, T::zero());
    let mut prev_rate = excitation_rate(p, forcing_value, T::zero(), cfg)?;
    let mut last_pulse_step = None;

    for i in 0..n {
        let excited = cfg.in_excitation(i);
        let forcing = if excited { forcing_value } else { T::zero() };
        traj.times.push(cfg.time(i));
        traj.primary.push(p);
        traj.auxiliary.push(aux);
        traj.forcing.push(forcing);
        if i + 1 == n {
            traj.eta.push(T::zero());
            break;
        }
        let (eta, rate) = if excited {
            last_pulse_step = Some(i);
            let eta = process.next(i, prev_rate, cfg);
            (eta, excitation_rate(p, forcing, eta, cfg)?)
        } else {
            (T::zero(), relaxation_rate(p, cfg)?)
        };
        traj.eta.push(eta);
        let aux_next = aux + cfg.dt * auxiliary_rate(p, aux, cfg)?;
        p += cfg.dt * rate;
        aux = aux_next;
        if !p.is_finite() || !aux.is_finite() {
            return Err(Error::Divergence {
                stage: "step",
                index: i + 1,
                detail: format!("state became P = {p}, T = {aux}"),
            });
        }
        prev_rate = rate;
    }
    traj.perturbation_log = process.finish(last_pulse_step);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quiet() -> SimConfig<f64> {
        SimConfig::default().without_perturbations()
    }

    #[test]
    fn default_has_2000_steps() {
        assert_eq!(SimConfig::<f64>::default().n_steps(), 2000);
        let traj = simulate(&SimConfig::<f64>::default()).unwrap();
        assert_eq!(traj.len(), 2000);
        assert!(!traj.perturbation_log.is_empty());
    }

    #[test]
    fn excitation_rate_fixed_points() {
        let cfg = SimConfig::<f64>::default();
        assert_eq!(excitation_rate(cfg.p_sat, 0.37, 0.0, &cfg).unwrap(), 0.37);
        let peak = excitation_rate(cfg.p_sat / 2.0, 0.0, 0.0, &cfg).unwrap();
        assert!((peak - cfg.p_coeff * cfg.p_sat / 4.0).abs() < 1e-15);
        assert_eq!(excitation_rate(0.0, 0.0, 0.0, &cfg).unwrap(), 0.0);
        assert!(matches!(
            excitation_rate(f64::NAN, 0.0, 0.0, &cfg),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn relaxation_rate_values() {
        let cfg = SimConfig::<f64> {
            alpha_relax: 2.0,
            ..SimConfig::default()
        };
        assert_eq!(relaxation_rate(cfg.p0, &cfg).unwrap(), 0.0);
        assert_eq!(relaxation_rate(cfg.p0 + 1.0, &cfg).unwrap(), -2.0);
        assert!(relaxation_rate(f64::INFINITY, &cfg).is_err());
    }

    #[test]
    fn forcing_term() {
        let cfg = SimConfig::<f64>::default();
        assert!((cfg.forcing() - 0.5 * 1.0 / (2.0 * 5.0)).abs() < 1e-15);
    }

    #[test]
    fn disabled_process_is_silent() {
        let traj = simulate(&quiet()).unwrap();
        assert!(traj.perturbation_log.is_empty());
        assert!(traj.eta.iter().all(|&e| e == 0.0));

        let never_armed = SimConfig::<f64> {
            grad_threshold: f64::INFINITY,
            pert_prob: 1.0,
            ..SimConfig::default()
        };
        let traj = simulate(&never_armed).unwrap();
        assert!(traj.perturbation_log.is_empty());
        assert!(traj.eta.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn flat_without_growth_or_forcing() {
        let cfg = SimConfig::<f64> {
            p_coeff: 0.0,
            ..quiet().without_forcing()
        };
        let traj = simulate(&cfg).unwrap();
        assert!(traj.primary.iter().all(|&p| p == cfg.p0));
    }

    #[test]
    fn logistic_growth_is_monotone_and_bounded() {
        let cfg = quiet().without_forcing();
        let traj = simulate(&cfg).unwrap();
        let excited: Vec<f64> = (0..traj.len())
            .filter(|&i| cfg.in_excitation(i))
            .map(|i| traj.primary[i])
            .collect();
        assert!(excited.windows(2).all(|w| w[1] >= w[0]));
        assert!(excited.iter().all(|&p| p <= cfg.p_sat));
        // Relaxation phase approaches p0 monotonically.
        let relaxed: Vec<f64> = (0..traj.len())
            .filter(|&i| !cfg.in_excitation(i))
            .map(|i| (traj.primary[i] - cfg.p0).abs())
            .collect();
        assert!(relaxed.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn back_to_back_pulses_fill_excitation() {
        let cfg = SimConfig::<f64> {
            grad_threshold: 0.0,
            pert_prob: 1.0,
            pert_len_range: (7, 7),
            ..SimConfig::default()
        };
        let traj = simulate(&cfg).unwrap();
        let excited_steps = (0..traj.len() - 1)
            .filter(|&i| cfg.in_excitation(i))
            .count();
        assert_eq!(traj.perturbation_log.len(), excited_steps.div_ceil(7));
        for pair in traj.perturbation_log.windows(2) {
            assert_eq!(pair[1].start, pair[0].end + 1);
        }
    }

    #[test]
    fn log_matches_pulse_trace() {
        let traj = simulate(&SimConfig::<f64> {
            seed: 17,
            ..SimConfig::default()
        })
        .unwrap();
        for (i, &e) in traj.eta.iter().enumerate() {
            let logged = traj.perturbation_log.iter().any(|p| p.contains(i));
            assert_eq!(e != 0.0, logged, "step {i}");
        }
        for p in &traj.perturbation_log {
            assert!(p.start <= p.end && p.end < traj.len());
        }
        assert!(traj
            .perturbation_log
            .windows(2)
            .all(|w| w[0].end < w[1].start));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SimConfig::<f64> {
            seed: 99,
            ..SimConfig::default()
        };
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = SimConfig { seed: 100, ..cfg };
        assert_ne!(
            simulate(&other).unwrap().perturbation_log,
            simulate(&cfg).unwrap().perturbation_log
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            SimConfig::<f64> {
                dt: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                t_ramp: 200.0,
                ..SimConfig::default()
            },
            SimConfig {
                p0: 20.0,
                ..SimConfig::default()
            },
            SimConfig {
                alpha_relax: -1.0,
                ..SimConfig::default()
            },
            SimConfig {
                pert_prob: 1.5,
                ..SimConfig::default()
            },
            SimConfig {
                pert_len_range: (4, 2),
                ..SimConfig::default()
            },
            SimConfig {
                pert_amp_range: (3.0, 1.0),
                ..SimConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(simulate(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn divergence_reports_step() {
        let cfg = SimConfig::<f64> {
            p_coeff: -50.0,
            dt: 0.5,
            t_end: 400.0,
            t_ramp: 300.0,
            ..quiet()
        };
        match simulate(&cfg) {
            Err(Error::Divergence { index, .. }) => assert!(index > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn single_precision_tracks_double() {
        let c64 = quiet();
        let c32 = SimConfig::<f32>::default().without_perturbations();
        let (a, b) = (simulate(&c64).unwrap(), simulate(&c32).unwrap());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.primary.iter().zip(&b.primary) {
            assert!((x - *y as f64).abs() / x.abs() < 1e-4);
        }
    }

    #[test]
    fn csv_and_truth_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let traj = simulate(&SimConfig::<f64>::default()).unwrap();
        let truth = traj.save(&path).unwrap();
        assert_eq!(truth, dir.path().join("run.truth.json"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,P,T_aux,P_RF\n"));
        assert_eq!(text.lines().count(), traj.len() + 1);
        let log: Vec<Perturbation> =
            serde_json::from_str(&std::fs::read_to_string(truth).unwrap()).unwrap();
        assert_eq!(log, traj.perturbation_log);
        let raw: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("run.truth.json")).unwrap(),
        )
        .unwrap();
        assert!(
            raw[0].get("start").is_some()
                && raw[0].get("end").is_some()
                && raw[0].get("amplitude").is_some()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn pulses_stay_inside_trajectory(seed in 0u64..1000, prob in 0.0f64..0.3) {
            let cfg = SimConfig::<f64> { seed, pert_prob: prob, ..SimConfig::default() };
            let traj = simulate(&cfg).unwrap();
            for p in &traj.perturbation_log {
                prop_assert!(p.end < traj.len());
                prop_assert!(cfg.in_excitation(p.start) && cfg.in_excitation(p.end));
            }
        }
    }
}
