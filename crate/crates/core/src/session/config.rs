use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::observer::{ObserverModel, VelocityScaling, WeibullObserver};
use crate::plant::{
    DeviceConfig, LimbConfig, TrajectoryPlan, DEFAULT_AMPLITUDE_DEG, DEFAULT_LED_WINDOW_DEG,
    DEFAULT_VELOCITY_TOLERANCE,
};
use crate::staircase::{convergence_target, StaircaseConfig, DOWN_UP_RATIO, REFERENCE_STIFFNESS};

/// One metronome setting. `deg_per_s` must equal `amplitude * bpm / 60`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunVelocity {
    pub bpm: f64,
    pub deg_per_s: f64,
}

impl RunVelocity {
    pub fn from_bpm(bpm: f64, amplitude: f64) -> Self {
        RunVelocity {
            bpm,
            deg_per_s: amplitude * bpm / 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySettings {
    pub amplitude_deg: f64,
    pub led_window_deg: f64,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        TrajectorySettings {
            amplitude_deg: DEFAULT_AMPLITUDE_DEG,
            led_window_deg: DEFAULT_LED_WINDOW_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub reference_stiffness: f64,
    pub staircase: StaircaseConfig,
    pub velocities: Vec<RunVelocity>,
    pub trajectory: TrajectorySettings,
    pub limb: LimbConfig,
    pub device: DeviceConfig,
    pub observer: ObserverModel,
    pub velocity_tolerance: f64,
    pub seed: u64,
    /// Probability that a trial presents the reference twice.
    pub catch_trial_rate: f64,
    /// Attempts per interval before a trial is abandoned.
    pub repeat_limit: u32,
    /// Probability that the participant presses the wrong button; the
    /// experimenter's correction is logged as an amendment.
    pub wrong_button_rate: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let amplitude = DEFAULT_AMPLITUDE_DEG;
        SessionConfig {
            reference_stiffness: REFERENCE_STIFFNESS,
            staircase: StaircaseConfig::default(),
            velocities: vec![
                RunVelocity::from_bpm(45.0, amplitude),
                RunVelocity::from_bpm(75.0, amplitude),
            ],
            trajectory: TrajectorySettings::default(),
            limb: LimbConfig::default(),
            device: DeviceConfig::default(),
            observer: ObserverModel::Weibull(default_observer(REFERENCE_STIFFNESS)),
            velocity_tolerance: DEFAULT_VELOCITY_TOLERANCE,
            seed: 0,
            catch_trial_rate: 0.0,
            repeat_limit: 5,
            wrong_button_rate: 0.0,
        }
    }
}

/// Slope of the default simulated participant's psychometric function.
pub const DEFAULT_WEIBULL_BETA: f64 = 5.0;
pub const DEFAULT_WEIBULL_GAMMA: f64 = 0.05;
pub const DEFAULT_WEIBULL_LAMBDA: f64 = 0.02;

/// Weibull observer whose staircase target point sits at `delta_k`.
pub fn default_observer(delta_k: f64) -> WeibullObserver {
    let target = convergence_target(3, DOWN_UP_RATIO).expect("valid rule");
    WeibullObserver::with_point(
        delta_k,
        target,
        DEFAULT_WEIBULL_BETA,
        DEFAULT_WEIBULL_GAMMA,
        DEFAULT_WEIBULL_LAMBDA,
    )
    .expect("default observer is valid")
}

/// Weibull observer whose target point is `percent_at[i].1` % of `reference`
/// at velocity `percent_at[i].0` deg/s.
pub fn velocity_dependent_observer(reference: f64, percent_at: &[(f64, f64)]) -> WeibullObserver {
    let mut obs = default_observer(reference);
    obs.velocity_scaling = VelocityScaling::from_pairs(
        &percent_at
            .iter()
            .map(|&(v, pct)| (v, pct / 100.0))
            .collect::<Vec<_>>(),
    );
    obs
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let cfg: SessionConfig =
            serde_json::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn plan_for(&self, velocity: &RunVelocity) -> TrajectoryPlan {
        TrajectoryPlan::from_bpm(
            self.trajectory.amplitude_deg,
            velocity.bpm,
            self.device.control_rate,
            self.trajectory.led_window_deg,
        )
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |key: &str, msg: &str| Err(SessionError::Config(format!("`{key}`: {msg}")));
        if !(self.reference_stiffness > 0.0 && self.reference_stiffness.is_finite()) {
            return bad("reference_stiffness", "must be > 0");
        }
        self.staircase
            .validate()
            .map_err(|e| SessionError::Config(format!("`staircase`: {e}")))?;
        if self.staircase.reference_stiffness != self.reference_stiffness {
            return bad(
                "staircase.reference_stiffness",
                "must equal reference_stiffness",
            );
        }
        if self.staircase.reversal_limit < 3 {
            return bad(
                "staircase.reversal_limit",
                "sessions need at least 3 reversals",
            );
        }
        if self.velocities.is_empty() {
            return bad("velocities", "must not be empty");
        }
        for v in &self.velocities {
            let expect = self.trajectory.amplitude_deg * v.bpm / 60.0;
            if v.bpm.is_nan()
                || v.bpm <= 0.0
                || (v.deg_per_s - expect).abs() > 1e-9 * expect.abs().max(1.0)
            {
                return bad(
                    "velocities",
                    &format!(
                        "{} bpm over {} deg gives {expect} deg/s, not {}",
                        v.bpm, self.trajectory.amplitude_deg, v.deg_per_s
                    ),
                );
            }
        }
        if !(self.trajectory.amplitude_deg > 0.0 && self.trajectory.led_window_deg > 0.0) {
            return bad("trajectory", "amplitude_deg and led_window_deg must be > 0");
        }
        self.limb
            .validate()
            .map_err(|e| SessionError::Config(format!("`limb`: {e}")))?;
        self.device
            .validate()
            .map_err(|e| SessionError::Config(format!("`device`: {e}")))?;
        self.observer
            .validate()
            .map_err(|e| SessionError::Config(format!("`observer`: {e}")))?;
        if self.velocity_tolerance.is_nan() || self.velocity_tolerance < 0.0 {
            return bad("velocity_tolerance", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.catch_trial_rate) {
            return bad("catch_trial_rate", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.wrong_button_rate) {
            return bad("wrong_button_rate", "must lie in [0, 1)");
        }
        if self.repeat_limit < 1 {
            return bad("repeat_limit", "must be >= 1");
        }
        Ok(())
    }
}
