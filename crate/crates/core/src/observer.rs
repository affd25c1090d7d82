//! Simulated participants for the same-different stiffness task and
//! signal-detection helpers.
//!
//! Two model families answer "Same"/"Different" for a pair of springs:
//! a Weibull psychometric function of the stiffness difference, and a
//! differencing observer that compares two noisy stiffness estimates against
//! a criterion. Both scale with exploration velocity through a piecewise
//! linear multiplier table. Fixed and Bernoulli responders exist for protocol
//! tests.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal::{inverse_normal_cdf, OutOfDomain};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObserverError {
    #[error("invalid observer: {0}")]
    Invalid(String),
    #[error("degenerate rate {0}: apply a correction before computing d'")]
    DegenerateRate(f64),
}

impl From<OutOfDomain> for ObserverError {
    fn from(e: OutOfDomain) -> Self {
        ObserverError::DegenerateRate(e.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Response {
    Same,
    Different,
}

impl Response {
    pub fn flipped(self) -> Self {
        match self {
            Response::Same => Response::Different,
            Response::Different => Response::Same,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityPoint {
    pub velocity_deg_s: f64,
    pub multiplier: f64,
}

/// Piecewise-linear multiplier over exploration velocity, flat outside the
/// table. An empty table means 1 everywhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VelocityScaling(Vec<VelocityPoint>);

impl VelocityScaling {
    pub fn new(mut points: Vec<VelocityPoint>) -> Self {
        points.sort_by(|a, b| a.velocity_deg_s.total_cmp(&b.velocity_deg_s));
        VelocityScaling(points)
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|&(v, m)| VelocityPoint {
                    velocity_deg_s: v,
                    multiplier: m,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[VelocityPoint] {
        &self.0
    }

    pub fn at(&self, velocity: f64) -> f64 {
        let pts = &self.0;
        match pts.len() {
            0 => 1.0,
            1 => pts[0].multiplier,
            _ => {
                if velocity <= pts[0].velocity_deg_s {
                    return pts[0].multiplier;
                }
                let last = pts[pts.len() - 1];
                if velocity >= last.velocity_deg_s {
                    return last.multiplier;
                }
                let i = pts.partition_point(|p| p.velocity_deg_s <= velocity);
                let (a, b) = (pts[i - 1], pts[i]);
                let t = (velocity - a.velocity_deg_s) / (b.velocity_deg_s - a.velocity_deg_s);
                a.multiplier + t * (b.multiplier - a.multiplier)
            }
        }
    }

    fn validate(&self) -> Result<(), ObserverError> {
        let ok = self.0.iter().all(|p| {
            p.velocity_deg_s.is_finite() && p.multiplier.is_finite() && p.multiplier > 0.0
        });
        let sorted = self
            .0
            .windows(2)
            .all(|w| w[0].velocity_deg_s < w[1].velocity_deg_s);
        if ok && sorted {
            Ok(())
        } else {
            Err(ObserverError::Invalid(
                "velocity_scaling needs positive multipliers at distinct velocities".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeibullObserver {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    #[serde(default)]
    pub velocity_scaling: VelocityScaling,
    /// Perceived-difference penalty per unit of peak activation by which the
    /// stiffer spring falls short of the softer one. Zero disables the hook.
    #[serde(default)]
    pub emg_bias_gain: f64,
}

impl WeibullObserver {
    /// Observer whose `p_different` equals `p` at `delta_k` (before velocity scaling).
    pub fn with_point(
        delta_k: f64,
        p: f64,
        beta: f64,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self, ObserverError> {
        if !(p > gamma && p < 1.0 - lambda) || delta_k <= 0.0 {
            return Err(ObserverError::Invalid(format!(
                "point ({delta_k}, {p}) not reachable with gamma {gamma}, lambda {lambda}"
            )));
        }
        let q = (p - gamma) / (1.0 - gamma - lambda);
        let alpha = delta_k / (-(1.0 - q).ln()).powf(1.0 / beta);
        let obs = WeibullObserver {
            alpha,
            beta,
            gamma,
            lambda,
            velocity_scaling: VelocityScaling::default(),
            emg_bias_gain: 0.0,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        let Self {
            alpha,
            beta,
            gamma,
            lambda,
            ..
        } = *self;
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(ObserverError::Invalid(
                "alpha and beta must be positive".into(),
            ));
        }
        if !(gamma >= 0.0 && lambda >= 0.0 && gamma < 1.0 - lambda) {
            return Err(ObserverError::Invalid(
                "require 0 <= gamma < 1 - lambda <= 1".into(),
            ));
        }
        if self.emg_bias_gain.is_nan() || self.emg_bias_gain < 0.0 {
            return Err(ObserverError::Invalid("emg_bias_gain must be >= 0".into()));
        }
        self.velocity_scaling.validate()
    }
}

pub fn weibull_p_different(delta_k: f64, velocity: f64, obs: &WeibullObserver) -> f64 {
    let scale = obs.alpha * obs.velocity_scaling.at(velocity);
    let x = delta_k.max(0.0) / scale;
    obs.gamma + (1.0 - obs.gamma - obs.lambda) * (1.0 - (-x.powf(obs.beta)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdtObserver {
    pub sigma: f64,
    pub criterion: f64,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub velocity_scaling: VelocityScaling,
    #[serde(default)]
    pub emg_bias_gain: f64,
}

impl SdtObserver {
    pub fn validate(&self) -> Result<(), ObserverError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(ObserverError::Invalid("sigma must be > 0".into()));
        }
        if !(self.criterion >= 0.0 && self.criterion.is_finite() && self.bias.is_finite()) {
            return Err(ObserverError::Invalid("criterion must be >= 0".into()));
        }
        if self.emg_bias_gain.is_nan() || self.emg_bias_gain < 0.0 {
            return Err(ObserverError::Invalid("emg_bias_gain must be >= 0".into()));
        }
        self.velocity_scaling.validate()
    }

    pub fn sigma_at(&self, velocity: f64) -> f64 {
        self.sigma * self.velocity_scaling.at(velocity)
    }

    /// Closed-form P(Different) for a pair differing by `delta_k`.
    pub fn p_different(&self, delta_k: f64, velocity: f64) -> f64 {
        use crate::normal::normal_cdf;
        let sd = self.sigma_at(velocity) * std::f64::consts::SQRT_2;
        let c = (self.criterion + self.bias).max(0.0);
        1.0 - (normal_cdf((c - delta_k) / sd) - normal_cdf((-c - delta_k) / sd))
    }
}

/// Everything a simulated participant gets to perceive on one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stimulus {
    pub k_first: f64,
    pub k_second: f64,
    pub velocity: f64,
    /// Peak muscle activation recorded while exploring each interval.
    pub peak_activation: [f64; 2],
}

impl Stimulus {
    pub fn plain(k_first: f64, k_second: f64, velocity: f64) -> Self {
        Stimulus {
            k_first,
            k_second,
            velocity,
            peak_activation: [0.0, 0.0],
        }
    }

    pub fn delta_k(&self) -> f64 {
        (self.k_second - self.k_first).abs()
    }

    /// How far the stiffer interval's peak activation falls below the softer one's.
    pub fn activation_shortfall(&self) -> f64 {
        let [a1, a2] = self.peak_activation;
        if self.k_second > self.k_first {
            (a1 - a2).max(0.0)
        } else if self.k_first > self.k_second {
            (a2 - a1).max(0.0)
        } else {
            0.0
        }
    }
}

pub fn sdt_respond<R: Rng + ?Sized>(stim: &Stimulus, obs: &SdtObserver, rng: &mut R) -> Response {
    let sigma = obs.sigma_at(stim.velocity);
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    let est1 = stim.k_first + sigma * e1;
    let est2 = stim.k_second + sigma * e2;
    let cut = obs.criterion + obs.bias + obs.emg_bias_gain * stim.activation_shortfall();
    if (est1 - est2).abs() > cut {
        Response::Different
    } else {
        Response::Same
    }
}

/// The observer families a session can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ObserverModel {
    Weibull(WeibullObserver),
    Sdt(SdtObserver),
    /// Correct with fixed probability regardless of the stimulus.
    Bernoulli {
        p_correct: f64,
    },
    /// Always gives the same answer.
    Fixed {
        response: Response,
    },
}

impl ObserverModel {
    pub fn validate(&self) -> Result<(), ObserverError> {
        match self {
            ObserverModel::Weibull(w) => w.validate(),
            ObserverModel::Sdt(s) => s.validate(),
            ObserverModel::Bernoulli { p_correct } => {
                if (0.0..=1.0).contains(p_correct) {
                    Ok(())
                } else {
                    Err(ObserverError::Invalid(
                        "p_correct must lie in [0, 1]".into(),
                    ))
                }
            }
            ObserverModel::Fixed { .. } => Ok(()),
        }
    }

    pub fn respond<R: Rng + ?Sized>(&self, stim: &Stimulus, rng: &mut R) -> Response {
        match self {
            ObserverModel::Weibull(w) => {
                let shortfall = w.emg_bias_gain * stim.activation_shortfall();
                let p = weibull_p_different(stim.delta_k() - shortfall, stim.velocity, w);
                if rng.random::<f64>() < p {
                    Response::Different
                } else {
                    Response::Same
                }
            }
            ObserverModel::Sdt(s) => sdt_respond(stim, s, rng),
            ObserverModel::Bernoulli { p_correct } => {
                let right = if stim.k_first == stim.k_second {
                    Response::Same
                } else {
                    Response::Different
                };
                if rng.random::<f64>() < *p_correct {
                    right
                } else {
                    right.flipped()
                }
            }
            ObserverModel::Fixed { response } => *response,
        }
    }
}

/// Sensitivity index `z(hit) - z(false alarm)`. Rates of exactly 0 or 1 are
/// rejected rather than corrected.
pub fn d_prime(hit_rate: f64, false_alarm_rate: f64) -> Result<f64, ObserverError> {
    Ok(inverse_normal_cdf(hit_rate)? - inverse_normal_cdf(false_alarm_rate)?)
}
