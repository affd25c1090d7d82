//! Staircase-only simulations for checking where the weighted up-down rule
//! converges, without the device or limb models in the loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::observer::{ObserverModel, Stimulus, WeibullObserver};
use crate::session::config::{DEFAULT_WEIBULL_BETA, DEFAULT_WEIBULL_GAMMA, DEFAULT_WEIBULL_LAMBDA};
use crate::staircase::{
    convergence_target, mean_of_last, new_staircase, record_response, StaircaseConfig,
    StaircaseError,
};

/// Smallest run count `validate_convergence` accepts.
pub const MIN_VALIDATION_RUNS: usize = 100;
/// Allowed distance of the tail proportion correct from the target.
pub const TAIL_TOLERANCE: f64 = 0.02;
/// Allowed threshold bias, in percent of the observer's target point.
pub const THRESHOLD_BIAS_TOLERANCE_PCT: f64 = 8.0;

/// Mean signed level change per trial, in units of the up step, for a
/// responder that is correct with fixed probability `p`. Bounds and
/// termination are pushed out of reach so only the rule itself acts.
pub fn bernoulli_drift<R: Rng + ?Sized>(
    p: f64,
    trials: usize,
    down_rule: u32,
    down_up_ratio: f64,
    rng: &mut R,
) -> Result<f64, StaircaseError> {
    let cfg = StaircaseConfig {
        reference_stiffness: 1.0,
        initial_level: 1e6,
        up_step: 1.0,
        down_up_ratio,
        down_rule,
        reversal_limit: usize::MAX,
        reversals_averaged: 1,
        level_floor: 1e-9,
        level_cap: 2e6,
    };
    let mut state = new_staircase(&cfg)?;
    let start = state.level;
    for _ in 0..trials {
        let correct = rng.random::<f64>() < p;
        state = record_response(&state, &cfg, correct)?.state;
    }
    Ok((state.level - start) / (trials as f64 * cfg.up_step))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub threshold: f64,
    pub trials: usize,
    pub tail_trials: usize,
    pub tail_correct: usize,
}

/// One staircase run against `observer`, presenting plain springs at
/// `velocity` in random order.
pub fn staircase_run<R: Rng + ?Sized>(
    cfg: &StaircaseConfig,
    observer: &ObserverModel,
    velocity: f64,
    rng: &mut R,
) -> Result<RunSummary, StaircaseError> {
    let mut state = new_staircase(cfg)?;
    let mut outcomes = Vec::new();
    while !state.terminated {
        let k_ref = cfg.reference_stiffness;
        let k_cmp = k_ref + state.level;
        let stim = if rng.random::<bool>() {
            Stimulus::plain(k_ref, k_cmp, velocity)
        } else {
            Stimulus::plain(k_cmp, k_ref, velocity)
        };
        let correct = observer.respond(&stim, rng) == crate::observer::Response::Different;
        let t = record_response(&state, cfg, correct)?;
        outcomes.push((t.trial_index, correct));
        state = t.state;
    }
    let levels: Vec<f64> = state
        .reversals
        .iter()
        .map(|r| r.level_at_reversal)
        .collect();
    let after = state.reversals.get(1).map_or(usize::MAX, |r| r.trial_index);
    let tail: Vec<bool> = outcomes
        .iter()
        .filter(|(i, _)| *i > after)
        .map(|(_, c)| *c)
        .collect();
    Ok(RunSummary {
        threshold: mean_of_last(&levels, cfg.reversals_averaged),
        trials: outcomes.len(),
        tail_trials: tail.len(),
        tail_correct: tail.iter().filter(|c| **c).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub runs: usize,
    pub seed: u64,
    pub down_rule: u32,
    pub down_up_ratio: f64,
    pub target: f64,
    /// Bernoulli responder at `target`: mean step per trial in up steps.
    pub bernoulli_drift: f64,
    pub bernoulli_trials: usize,
    /// Weibull observer: pooled proportion correct after the 2nd reversal.
    pub tail_proportion: f64,
    pub mean_threshold_pct: f64,
    pub threshold_se_pct: f64,
    pub mean_trials: f64,
    pub tail_ok: bool,
    pub threshold_ok: bool,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.tail_ok && self.threshold_ok
    }
}

/// Runs the Bernoulli drift check and `runs` Weibull-observer staircases
/// whose target point sits at the reference stiffness. Thresholds are
/// reported in percent of that point.
pub fn validate_convergence(
    runs: usize,
    seed: u64,
    down_rule: u32,
    down_up_ratio: f64,
) -> Result<ConvergenceReport, StaircaseError> {
    if runs < MIN_VALIDATION_RUNS {
        return Err(StaircaseError::InvalidConfig(format!(
            "need at least {MIN_VALIDATION_RUNS} runs, got {runs}"
        )));
    }
    let target = convergence_target(down_rule, down_up_ratio)?;
    let mut cfg = StaircaseConfig {
        down_rule,
        down_up_ratio,
        ..StaircaseConfig::default()
    };
    cfg.level_floor = cfg.down_step();
    cfg.validate()?;
    let point = cfg.reference_stiffness;
    let observer = WeibullObserver::with_point(
        point,
        target,
        DEFAULT_WEIBULL_BETA,
        DEFAULT_WEIBULL_GAMMA,
        DEFAULT_WEIBULL_LAMBDA,
    )
    .map_err(|e| StaircaseError::InvalidConfig(e.to_string()))?;
    let observer = ObserverModel::Weibull(observer);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bernoulli_trials = 100_000;
    let drift = bernoulli_drift(target, bernoulli_trials, down_rule, down_up_ratio, &mut rng)?;

    let mut thresholds = Vec::with_capacity(runs);
    let (mut tail_n, mut tail_k, mut trials) = (0usize, 0usize, 0usize);
    for _ in 0..runs {
        let s = staircase_run(&cfg, &observer, 0.0, &mut rng)?;
        thresholds.push(100.0 * s.threshold / point);
        tail_n += s.tail_trials;
        tail_k += s.tail_correct;
        trials += s.trials;
    }
    let (mean, se) = mean_and_se(&thresholds);
    let tail = tail_k as f64 / tail_n as f64;
    Ok(ConvergenceReport {
        runs,
        seed,
        down_rule,
        down_up_ratio,
        target,
        bernoulli_drift: drift,
        bernoulli_trials,
        tail_proportion: tail,
        mean_threshold_pct: mean,
        threshold_se_pct: se,
        mean_trials: trials as f64 / runs as f64,
        tail_ok: (tail - target).abs() <= TAIL_TOLERANCE,
        threshold_ok: (mean - 100.0).abs() <= THRESHOLD_BIAS_TOLERANCE_PCT,
    })
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::staircase::DOWN_UP_RATIO;

    #[test]
    fn certain_responder_only_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = bernoulli_drift(1.0, 3000, 3, DOWN_UP_RATIO, &mut rng).unwrap();
        assert!((d + DOWN_UP_RATIO / 3.0).abs() < 1e-3, "{d}");
        let d = bernoulli_drift(0.0, 3000, 3, DOWN_UP_RATIO, &mut rng).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn below_minimum_runs_rejected() {
        assert!(validate_convergence(50, 0, 3, DOWN_UP_RATIO).is_err());
    }

    #[test]
    fn unit_ratio_target() {
        let r = validate_convergence(100, 1, 3, 1.0).unwrap();
        assert!((r.target - 0.5f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((r.target - 0.7937).abs() < 5e-5);
    }

    #[test]
    fn mean_and_se_of_known_sample() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
