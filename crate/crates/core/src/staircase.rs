//! Weighted transformed up-down staircase with fixed step sizes.
//!
//! The tracked quantity is the stiffness *difference* between the comparison
//! and the reference spring (mNm/deg). After `down_rule` consecutive correct
//! responses the level drops by `down_up_ratio * up_step`; any incorrect
//! response raises it by `up_step`. The procedure stops once `reversal_limit`
//! direction changes have been observed, and the threshold is the mean level
//! over the last `reversals_averaged` of them.
//!
//! Moves that would leave `[level_floor, level_cap]` are clamped to the bound
//! and reflected: the clamped move is checked against the previous direction
//! like any other move, and the bound itself then registers as a turning point.
//! A responder that is always correct therefore still terminates by bouncing
//! off the floor instead of sitting there forever.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{DEFAULT_AMPLITUDE_DEG, DEFAULT_TORQUE_LIMIT_MNM};

/// Reference spring constant of the original protocol, mNm/deg.
pub const REFERENCE_STIFFNESS: f64 = 1.11;
/// Down step as a fraction of the up step for a 1-up/3-down rule targeting 83.15 %.
pub const DOWN_UP_RATIO: f64 = 0.7393;
/// Up step as a fraction of the reference stiffness.
pub const UP_STEP_FRACTION: f64 = 0.10;

const LEVEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StaircaseError {
    #[error("invalid staircase config: {0}")]
    InvalidConfig(String),
    #[error("staircase already terminated")]
    Terminated,
    #[error("staircase not terminated: {have} of {need} reversals")]
    NotTerminated { have: usize, need: usize },
    #[error("invalid up-down rule: {0}")]
    InvalidRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseConfig {
    pub reference_stiffness: f64,
    pub initial_level: f64,
    pub up_step: f64,
    pub down_up_ratio: f64,
    pub down_rule: u32,
    pub reversal_limit: usize,
    pub reversals_averaged: usize,
    pub level_floor: f64,
    pub level_cap: f64,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        Self::for_reference(
            REFERENCE_STIFFNESS,
            DEFAULT_TORQUE_LIMIT_MNM / DEFAULT_AMPLITUDE_DEG - REFERENCE_STIFFNESS,
        )
    }
}

impl StaircaseConfig {
    /// Protocol defaults scaled to `reference`: start with the comparison at
    /// twice the reference, up step of 10 % of the reference, floor of one
    /// down step.
    pub fn for_reference(reference: f64, level_cap: f64) -> Self {
        let up_step = UP_STEP_FRACTION * reference;
        StaircaseConfig {
            reference_stiffness: reference,
            initial_level: reference,
            up_step,
            down_up_ratio: DOWN_UP_RATIO,
            down_rule: 3,
            reversal_limit: 10,
            reversals_averaged: 8,
            level_floor: DOWN_UP_RATIO * up_step,
            level_cap,
        }
    }

    pub fn down_step(&self) -> f64 {
        self.down_up_ratio * self.up_step
    }

    pub fn validate(&self) -> Result<(), StaircaseError> {
        let fail = |msg: &str| Err(StaircaseError::InvalidConfig(msg.to_string()));
        let finite = [
            self.reference_stiffness,
            self.initial_level,
            self.up_step,
            self.down_up_ratio,
            self.level_floor,
            self.level_cap,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("all numeric fields must be finite");
        }
        if self.reference_stiffness <= 0.0 {
            return fail("reference_stiffness must be > 0");
        }
        if self.up_step <= 0.0 {
            return fail("up_step must be > 0");
        }
        if !(self.down_up_ratio > 0.0 && self.down_up_ratio <= 1.0) {
            return fail("down_up_ratio must lie in (0, 1]");
        }
        if self.down_rule < 1 {
            return fail("down_rule must be >= 1");
        }
        if self.reversal_limit < 1 {
            return fail("reversal_limit must be >= 1");
        }
        if self.reversals_averaged < 1 || self.reversals_averaged > self.reversal_limit {
            return fail("reversals_averaged must lie in [1, reversal_limit]");
        }
        if !(self.level_floor > 0.0
            && self.level_floor <= self.initial_level
            && self.initial_level <= self.level_cap)
        {
            return fail("require 0 < level_floor <= initial_level <= level_cap");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversalRecord {
    pub trial_index: usize,
    pub level_at_reversal: f64,
    pub new_direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseState {
    pub level: f64,
    pub consecutive_correct: u32,
    pub last_move_direction: Option<Direction>,
    pub reversals: Vec<ReversalRecord>,
    pub trial_index: usize,
    pub terminated: bool,
}

/// What a single response did to the staircase.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StaircaseState,
    pub trial_index: usize,
    pub level_before: f64,
    pub level_after: f64,
    /// `None` when the response only advanced the correct-run counter.
    pub direction: Option<Direction>,
    pub clamped: bool,
    pub new_reversals: Vec<ReversalRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub absolute: f64,
    pub percent_of_reference: f64,
}

impl ThresholdEstimate {
    pub fn from_absolute(absolute: f64, reference: f64) -> Self {
        ThresholdEstimate {
            absolute,
            percent_of_reference: 100.0 * absolute / reference,
        }
    }
}

pub fn new_staircase(config: &StaircaseConfig) -> Result<StaircaseState, StaircaseError> {
    config.validate()?;
    Ok(StaircaseState {
        level: config.initial_level,
        consecutive_correct: 0,
        last_move_direction: None,
        reversals: Vec::new(),
        trial_index: 0,
        terminated: false,
    })
}

pub fn record_response(
    state: &StaircaseState,
    config: &StaircaseConfig,
    correct: bool,
) -> Result<Transition, StaircaseError> {
    if state.terminated {
        return Err(StaircaseError::Terminated);
    }
    let mut next = state.clone();
    let trial_index = state.trial_index;
    next.trial_index += 1;

    let direction = if correct {
        next.consecutive_correct += 1;
        if next.consecutive_correct >= config.down_rule {
            next.consecutive_correct = 0;
            Some(Direction::Down)
        } else {
            None
        }
    } else {
        next.consecutive_correct = 0;
        Some(Direction::Up)
    };

    let level_before = state.level;
    let mut clamped = false;
    let mut new_reversals = Vec::new();

    if let Some(dir) = direction {
        let intended = match dir {
            Direction::Up => level_before + config.up_step,
            Direction::Down => level_before - config.down_step(),
        };
        let bounded = intended.clamp(config.level_floor, config.level_cap);
        clamped = match dir {
            Direction::Up => intended - config.level_cap > LEVEL_EPS,
            Direction::Down => config.level_floor - intended > LEVEL_EPS,
        };

        if matches!(state.last_move_direction, Some(prev) if prev != dir) {
            new_reversals.push(ReversalRecord {
                trial_index,
                level_at_reversal: level_before,
                new_direction: dir,
            });
        }
        next.level = bounded;
        next.last_move_direction = Some(dir);

        // The bound is a turning point: reflect the direction there.
        if clamped {
            let reflected = dir.opposite();
            new_reversals.push(ReversalRecord {
                trial_index,
                level_at_reversal: bounded,
                new_direction: reflected,
            });
            next.last_move_direction = Some(reflected);
        }

        let room = config.reversal_limit - next.reversals.len();
        new_reversals.truncate(room);
        next.reversals.extend_from_slice(&new_reversals);
        if next.reversals.len() >= config.reversal_limit {
            next.terminated = true;
        }
    }

    Ok(Transition {
        level_after: next.level,
        state: next,
        trial_index,
        level_before,
        direction,
        clamped,
        new_reversals,
    })
}

pub fn threshold_estimate(
    state: &StaircaseState,
    config: &StaircaseConfig,
) -> Result<ThresholdEstimate, StaircaseError> {
    if !state.terminated || state.reversals.len() < config.reversal_limit {
        return Err(StaircaseError::NotTerminated {
            have: state.reversals.len(),
            need: config.reversal_limit,
        });
    }
    let levels: Vec<f64> = state
        .reversals
        .iter()
        .map(|r| r.level_at_reversal)
        .collect();
    Ok(ThresholdEstimate::from_absolute(
        mean_of_last(&levels, config.reversals_averaged),
        config.reference_stiffness,
    ))
}

/// Arithmetic mean of the trailing `count` values (all of them if fewer).
pub fn mean_of_last(levels: &[f64], count: usize) -> f64 {
    let tail = &levels[levels.len().saturating_sub(count)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Proportion correct at which the expected level change per trial is zero:
/// `p^n * down = (1 - p^n) * up`, i.e. `p = (1 / (1 + ratio))^(1/n)`.
pub fn convergence_target(down_rule: u32, down_up_ratio: f64) -> Result<f64, StaircaseError> {
    if down_rule < 1 {
        return Err(StaircaseError::InvalidRule("down_rule must be >= 1".into()));
    }
    if !(down_up_ratio > 0.0 && down_up_ratio.is_finite()) {
        return Err(StaircaseError::InvalidRule(
            "down_up_ratio must be > 0".into(),
        ));
    }
    Ok((1.0 / (1.0 + down_up_ratio)).powf(1.0 / down_rule as f64))
}
