//! Experiment orchestration: trials, staircase runs and whole sessions
//! against a simulated participant, recorded as an append-only event log.
//!
//! A trial presents the reference spring and the comparison spring chosen by
//! the staircase, in random order. Each interval is one out-and-back
//! exploration on the simulated device; explorations that miss the metronome
//! pace or the LED window are repeated without touching the staircase. A run
//! lasts until the staircase terminates; a session performs one run per
//! configured velocity, in seeded random order.

pub mod batch;
pub mod config;
pub mod events;
pub mod replay;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{RunVelocity, SessionConfig};
pub use events::{EventBody, ExplorationSummary, LogFormatError, Recorder, TrialEvent};
pub use replay::{replay, replay_jsonl, ReplayError};

use crate::observer::{d_prime, ObserverError, Response, Stimulus};
use crate::plant::{achieved_velocity_ok, simulate_exploration, PlantError, SpringParam};
use crate::staircase::{
    mean_of_last, new_staircase, record_response, StaircaseConfig, StaircaseError, StaircaseState,
    ThresholdEstimate, Transition,
};

/// Simulated seconds spent training before each run.
pub const TRAINING_SECONDS: f64 = 120.0;
/// Simulated break between runs.
pub const BREAK_SECONDS: f64 = 300.0;
/// Simulated time for responding and resetting between trials.
pub const RESPONSE_SECONDS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Staircase(#[from] StaircaseError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("run {run_index} trial {trial_index}: interval {interval} rejected {attempts} times (repeat limit)")]
    RepeatLimit {
        run_index: usize,
        trial_index: usize,
        interval: usize,
        attempts: u32,
    },
    #[error(transparent)]
    Log(#[from] LogFormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub velocity_deg_s: f64,
    pub threshold: ThresholdEstimate,
    pub trial_count: usize,
    pub reversal_levels: Vec<f64>,
    /// Proportion correct over staircase trials after the second reversal;
    /// absent when no such trial exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proportion_correct_tail: Option<f64>,
    pub standard_trials: usize,
    pub standard_different: usize,
    pub catch_trials: usize,
    pub catch_different: usize,
    pub rejected_explorations: usize,
}

impl RunResult {
    /// Sensitivity from hits on standard pairs and false alarms on catch
    /// pairs. Fails when either rate is 0 or 1.
    pub fn d_prime(&self) -> Result<f64, ObserverError> {
        if self.standard_trials == 0 || self.catch_trials == 0 {
            return Err(ObserverError::Invalid(
                "d' needs standard and catch trials".into(),
            ));
        }
        d_prime(
            self.standard_different as f64 / self.standard_trials as f64,
            self.catch_different as f64 / self.catch_trials as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub seed: u64,
    pub runs: Vec<RunResult>,
    /// Velocities (deg/s) in executed order.
    pub velocity_order: Vec<f64>,
    pub log_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub result: SessionResult,
    pub events: Vec<TrialEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub response: Response,
    pub correct: bool,
    pub catch_trial: bool,
    /// `None` for catch trials, which leave the staircase alone.
    pub transition: Option<Transition>,
    pub rejected_explorations: usize,
}

/// Fixed inputs of one run.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub config: &'a SessionConfig,
    pub velocity: RunVelocity,
    pub run_index: usize,
}

pub fn run_trial<R: Rng + ?Sized>(
    ctx: &RunContext<'_>,
    state: &StaircaseState,
    trial_index: usize,
    rec: &mut Recorder,
    rng: &mut R,
) -> Result<TrialOutcome, SessionError> {
    let cfg = ctx.config;
    if state.terminated {
        return Err(StaircaseError::Terminated.into());
    }
    let catch_trial = cfg.catch_trial_rate > 0.0 && rng.random::<f64>() < cfg.catch_trial_rate;
    let k_reference = cfg.reference_stiffness;
    let k_comparison = if catch_trial {
        k_reference
    } else {
        k_reference + state.level
    };
    let reference_first: bool = rng.random();
    let springs = if reference_first {
        [k_reference, k_comparison]
    } else {
        [k_comparison, k_reference]
    };

    rec.push(EventBody::Presented {
        run_index: ctx.run_index,
        trial_index,
        level: state.level,
        k_reference,
        k_comparison,
        reference_first,
        catch_trial,
    });

    let plan = cfg.plan_for(&ctx.velocity);
    let mut summaries = [ExplorationSummary {
        attempts: 0,
        achieved_velocity: 0.0,
        peak_torque: 0.0,
        peak_activation: 0.0,
    }; 2];
    let mut rejected = 0;
    for (interval, &k) in springs.iter().enumerate() {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let recording =
                simulate_exploration(SpringParam { k }, &plan, &cfg.limb, &cfg.device, rng)?;
            rec.advance(plan.duration());
            if achieved_velocity_ok(&recording, &plan, cfg.velocity_tolerance) {
                summaries[interval] = ExplorationSummary {
                    attempts: attempt,
                    achieved_velocity: recording.achieved_mean_velocity,
                    peak_torque: recording.peak_abs_commanded_torque(),
                    peak_activation: recording.peak_activation(),
                };
                break;
            }
            rejected += 1;
            rec.push(EventBody::ExplorationRejected {
                run_index: ctx.run_index,
                trial_index,
                interval,
                attempt,
                achieved_velocity: recording.achieved_mean_velocity,
                led_events: recording.led_events.len(),
            });
            if attempt >= cfg.repeat_limit {
                return Err(SessionError::RepeatLimit {
                    run_index: ctx.run_index,
                    trial_index,
                    interval,
                    attempts: attempt,
                });
            }
        }
    }

    let stimulus = Stimulus {
        k_first: springs[0],
        k_second: springs[1],
        velocity: ctx.velocity.deg_per_s,
        peak_activation: [summaries[0].peak_activation, summaries[1].peak_activation],
    };
    let response = cfg.observer.respond(&stimulus, rng);
    let pressed = if cfg.wrong_button_rate > 0.0 && rng.random::<f64>() < cfg.wrong_button_rate {
        response.flipped()
    } else {
        response
    };
    let responded_seq = rec.push(EventBody::Responded {
        run_index: ctx.run_index,
        trial_index,
        response: pressed,
        explorations: summaries,
    });
    if pressed != response {
        rec.push(EventBody::Amendment {
            amends: responded_seq,
            response,
            reason: "wrong button".into(),
        });
    }

    let correct = is_correct(response, catch_trial);
    let transition = if catch_trial {
        None
    } else {
        let t = record_response(state, &cfg.staircase, correct)?;
        push_transition(rec, ctx.run_index, trial_index, &t, state.reversals.len());
        Some(t)
    };
    rec.advance(RESPONSE_SECONDS);

    Ok(TrialOutcome {
        response,
        correct,
        catch_trial,
        transition,
        rejected_explorations: rejected,
    })
}

/// Standard pairs always differ; catch pairs never do.
pub fn is_correct(response: Response, catch_trial: bool) -> bool {
    match response {
        Response::Different => !catch_trial,
        Response::Same => catch_trial,
    }
}

pub(crate) fn push_transition(
    rec: &mut Recorder,
    run_index: usize,
    trial_index: usize,
    t: &Transition,
    prior_reversals: usize,
) {
    rec.push(EventBody::StaircaseMoved {
        run_index,
        trial_index,
        level_before: t.level_before,
        level_after: t.level_after,
        direction: t.direction,
        clamped: t.clamped,
    });
    for (i, r) in t.new_reversals.iter().enumerate() {
        rec.push(EventBody::Reversal {
            run_index,
            trial_index,
            reversal_index: prior_reversals + i,
            level: r.level_at_reversal,
            new_direction: r.new_direction,
        });
    }
}

/// Accumulates per-trial facts into a [`RunResult`]; shared with replay so
/// both paths compute results identically.
#[derive(Debug, Default, Clone)]
pub(crate) struct RunTally {
    /// (staircase trial index, correct) for standard trials.
    standard: Vec<(usize, bool)>,
    standard_different: usize,
    catch_trials: usize,
    catch_different: usize,
    trials: usize,
    rejected: usize,
}

impl RunTally {
    pub(crate) fn add(
        &mut self,
        response: Response,
        catch_trial: bool,
        staircase_index: Option<usize>,
        rejected: usize,
    ) {
        self.trials += 1;
        self.rejected += rejected;
        let different = response == Response::Different;
        if catch_trial {
            self.catch_trials += 1;
            self.catch_different += different as usize;
        } else if let Some(i) = staircase_index {
            self.standard.push((i, is_correct(response, false)));
            self.standard_different += different as usize;
        }
    }

    pub(crate) fn add_rejected(&mut self) {
        self.rejected += 1;
    }

    pub(crate) fn finish(
        &self,
        sc: &StaircaseConfig,
        velocity: f64,
        state: &StaircaseState,
    ) -> Result<RunResult, StaircaseError> {
        if !state.terminated {
            return Err(StaircaseError::NotTerminated {
                have: state.reversals.len(),
                need: sc.reversal_limit,
            });
        }
        let reversal_levels: Vec<f64> = state
            .reversals
            .iter()
            .map(|r| r.level_at_reversal)
            .collect();
        let threshold = ThresholdEstimate::from_absolute(
            mean_of_last(&reversal_levels, sc.reversals_averaged),
            sc.reference_stiffness,
        );
        let after = state.reversals[1].trial_index;
        let (mut n, mut k) = (0usize, 0usize);
        for &(_, c) in self.standard.iter().filter(|(i, _)| *i > after) {
            n += 1;
            k += c as usize;
        }
        Ok(RunResult {
            velocity_deg_s: velocity,
            threshold,
            trial_count: self.trials,
            reversal_levels,
            proportion_correct_tail: (n > 0).then(|| k as f64 / n as f64),
            standard_trials: self.standard.len(),
            standard_different: self.standard_different,
            catch_trials: self.catch_trials,
            catch_different: self.catch_different,
            rejected_explorations: self.rejected,
        })
    }
}

fn execute_run<R: Rng + ?Sized>(
    cfg: &SessionConfig,
    velocity: RunVelocity,
    run_index: usize,
    rec: &mut Recorder,
    rng: &mut R,
) -> Result<RunResult, SessionError> {
    rec.push(EventBody::RunStarted {
        run_index,
        velocity_deg_s: velocity.deg_per_s,
        bpm: velocity.bpm,
    });
    let ctx = RunContext {
        config: cfg,
        velocity,
        run_index,
    };
    let mut state = new_staircase(&cfg.staircase)?;
    let mut tally = RunTally::default();
    let mut trial_index = 0;
    while !state.terminated {
        let outcome = run_trial(&ctx, &state, trial_index, rec, rng)?;
        let staircase_index = outcome.transition.as_ref().map(|t| t.trial_index);
        tally.add(
            outcome.response,
            outcome.catch_trial,
            staircase_index,
            outcome.rejected_explorations,
        );
        if let Some(t) = outcome.transition {
            state = t.state;
        }
        trial_index += 1;
    }
    let result = tally.finish(&cfg.staircase, velocity.deg_per_s, &state)?;
    rec.push(EventBody::RunTerminated {
        result: result.clone(),
    });
    Ok(result)
}

/// One staircase run at `velocity`, with its own event log.
pub fn run_staircase_run<R: Rng + ?Sized>(
    cfg: &SessionConfig,
    velocity: RunVelocity,
    rng: &mut R,
) -> Result<(RunResult, Vec<TrialEvent>), SessionError> {
    cfg.validate()?;
    let mut rec = Recorder::default();
    let result = execute_run(cfg, velocity, 0, &mut rec, rng)?;
    Ok((result, rec.events))
}

pub fn run_session(cfg: &SessionConfig) -> Result<SessionOutput, SessionError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = cfg.velocities.clone();
    order.shuffle(&mut rng);

    let mut rec = Recorder::default();
    rec.push(EventBody::SessionStarted {
        seed: cfg.seed,
        reference_stiffness: cfg.reference_stiffness,
        staircase: cfg.staircase.clone(),
        velocity_order: order.clone(),
        catch_trial_rate: cfg.catch_trial_rate,
        velocity_tolerance: cfg.velocity_tolerance,
        repeat_limit: cfg.repeat_limit,
    });

    let mut runs = Vec::with_capacity(order.len());
    for (run_index, velocity) in order.iter().enumerate() {
        if run_index > 0 {
            rec.push(EventBody::Metadata {
                label: "break".into(),
                duration_s: BREAK_SECONDS,
            });
            rec.advance(BREAK_SECONDS);
        }
        rec.push(EventBody::Metadata {
            label: "training".into(),
            duration_s: TRAINING_SECONDS,
        });
        rec.advance(TRAINING_SECONDS);
        runs.push(execute_run(cfg, *velocity, run_index, &mut rec, &mut rng)?);
    }

    let result = SessionResult {
        seed: cfg.seed,
        runs,
        velocity_order: order.iter().map(|v| v.deg_per_s).collect(),
        log_digest: events::log_digest(&rec.events)?,
    };
    rec.push(EventBody::SessionCompleted {
        result: result.clone(),
    });
    Ok(SessionOutput {
        result,
        events: rec.events,
    })
}
