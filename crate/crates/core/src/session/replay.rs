//! Rebuilds session results from an event log alone.
//!
//! Responses (with amendments applied) are the only inputs; every staircase
//! move, reversal and result is recomputed and checked against the log. A
//! recorded derived event may disagree with the recomputation only when an
//! amendment to the same run was appended after it.

use std::collections::HashMap;

use thiserror::Error;

use super::events::{log_digest, parse_jsonl, EventBody, LogFormatError, TrialEvent};
use super::{RunResult, RunTally, SessionResult};
use crate::observer::Response;
use crate::staircase::{new_staircase, record_response, StaircaseConfig, StaircaseState};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("corrupt log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error(transparent)]
    Format(#[from] LogFormatError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub result: SessionResult,
    pub amendments: usize,
    /// Recorded derived events that an amendment made stale.
    pub superseded: usize,
}

fn corrupt<T>(seq: u64, reason: impl Into<String>) -> Result<T, ReplayError> {
    Err(ReplayError::CorruptLog {
        seq,
        reason: reason.into(),
    })
}

struct PendingTrial {
    trial_index: usize,
    catch_trial: bool,
    rejected: usize,
}

struct RunReplay {
    run_index: usize,
    velocity: f64,
    state: StaircaseState,
    tally: RunTally,
    trial: Option<PendingTrial>,
    /// Derived events the recomputation expects next, in order.
    expected: Vec<EventBody>,
    /// Seq of the latest amendment touching this run, if any.
    last_amendment: Option<u64>,
    result: Option<RunResult>,
}

impl RunReplay {
    fn superseded(&self, seq: u64) -> bool {
        self.last_amendment.is_some_and(|a| a > seq)
    }
}

pub fn replay_jsonl(text: &str) -> Result<ReplayReport, ReplayError> {
    replay(&parse_jsonl(text)?)
}

pub fn replay(events: &[TrialEvent]) -> Result<ReplayReport, ReplayError> {
    let Some(first) = events.first() else {
        return corrupt(0, "empty log");
    };
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            return corrupt(e.seq, format!("expected seq {i}"));
        }
    }
    let EventBody::SessionStarted {
        seed,
        staircase,
        velocity_order,
        ..
    } = &first.body
    else {
        return corrupt(0, "log must start with SessionStarted");
    };

    // Resolve amendments up front: they may be appended long after the
    // response they correct.
    let mut run_of_responded: HashMap<u64, usize> = HashMap::new();
    let mut resolved: HashMap<u64, Response> = HashMap::new();
    let mut last_amendment: HashMap<usize, u64> = HashMap::new();
    let mut amendments = 0;
    for e in events {
        match &e.body {
            EventBody::Responded { run_index, .. } => {
                run_of_responded.insert(e.seq, *run_index);
            }
            EventBody::Amendment {
                amends, response, ..
            } => {
                let Some(&run) = run_of_responded.get(amends).filter(|_| *amends < e.seq) else {
                    return corrupt(e.seq, format!("amendment targets seq {amends}, which is not an earlier Responded event"));
                };
                resolved.insert(*amends, *response);
                last_amendment.insert(run, e.seq);
                amendments += 1;
            }
            _ => {}
        }
    }

    let mut runs: Vec<RunResult> = Vec::new();
    let mut current: Option<RunReplay> = None;
    let mut completed: Option<(u64, &SessionResult)> = None;
    let mut superseded = 0;

    for e in &events[1..] {
        if let Some((done_seq, _)) = completed {
            if !matches!(e.body, EventBody::Amendment { .. }) {
                return corrupt(
                    e.seq,
                    format!("{} after SessionCompleted (seq {done_seq})", e.body.kind()),
                );
            }
            continue;
        }
        match &e.body {
            EventBody::SessionStarted { .. } => return corrupt(e.seq, "second SessionStarted"),
            EventBody::Metadata { .. } | EventBody::Amendment { .. } => {}
            EventBody::RunStarted {
                run_index,
                velocity_deg_s,
                ..
            } => {
                if let Some(run) = &current {
                    return corrupt(e.seq, format!("run {} has no RunTerminated", run.run_index));
                }
                if *run_index != runs.len() {
                    return corrupt(
                        e.seq,
                        format!("expected run {}, found run {run_index}", runs.len()),
                    );
                }
                match velocity_order.get(*run_index) {
                    Some(v) if v.deg_per_s == *velocity_deg_s => {}
                    _ => return corrupt(
                        e.seq,
                        format!(
                            "run {run_index} velocity {velocity_deg_s} not in the announced order"
                        ),
                    ),
                }
                current = Some(RunReplay {
                    run_index: *run_index,
                    velocity: *velocity_deg_s,
                    state: new_staircase(staircase).map_err(|err| ReplayError::CorruptLog {
                        seq: 0,
                        reason: format!("staircase config: {err}"),
                    })?,
                    tally: RunTally::default(),
                    trial: None,
                    expected: Vec::new(),
                    last_amendment: last_amendment.get(run_index).copied(),
                    result: None,
                });
            }
            EventBody::RunTerminated { result } => {
                let Some(mut run) = current.take() else {
                    return corrupt(e.seq, "RunTerminated outside a run");
                };
                if run.trial.is_some() {
                    return corrupt(e.seq, "RunTerminated in the middle of a trial");
                }
                let recomputed = match run.result.take() {
                    Some(r) => r,
                    None => {
                        return corrupt(
                            e.seq,
                            format!(
                                "run {} has not reached its reversal limit after amendments",
                                run.run_index
                            ),
                        )
                    }
                };
                if recomputed != *result {
                    if !run.superseded(e.seq) {
                        return corrupt(
                            e.seq,
                            format!("run {} result differs from recomputation", run.run_index),
                        );
                    }
                    superseded += 1;
                }
                if !run.expected.is_empty() && !run.superseded(e.seq) {
                    return corrupt(
                        e.seq,
                        format!("missing {} before RunTerminated", run.expected[0].kind()),
                    );
                }
                runs.push(recomputed);
            }
            EventBody::SessionCompleted { result } => {
                if let Some(run) = &current {
                    return corrupt(
                        e.seq,
                        format!(
                            "SessionCompleted while run {} has no RunTerminated",
                            run.run_index
                        ),
                    );
                }
                completed = Some((e.seq, result));
            }
            body => {
                let Some(run) = current.as_mut() else {
                    return corrupt(e.seq, format!("{} outside a run", body.kind()));
                };
                superseded += trial_event(run, staircase, e, &resolved)?;
            }
        }
    }

    let end = events.len() as u64;
    if let Some(run) = current {
        return corrupt(
            end,
            format!("missing RunTerminated for run {}", run.run_index),
        );
    }
    if runs.len() != velocity_order.len() {
        return corrupt(end, format!("missing RunStarted for run {}", runs.len()));
    }
    let Some((done_seq, recorded)) = completed else {
        return corrupt(end, "missing SessionCompleted");
    };

    let before_completion = &events[..done_seq as usize];
    if log_digest(before_completion)? != recorded.log_digest {
        return corrupt(
            done_seq,
            "recorded log digest does not match the events before it",
        );
    }
    let result = SessionResult {
        seed: *seed,
        runs,
        velocity_order: velocity_order.iter().map(|v| v.deg_per_s).collect(),
        log_digest: log_digest(events)?,
    };
    let amended_later = last_amendment.values().any(|&a| a > done_seq);
    if (recorded.runs != result.runs
        || recorded.seed != result.seed
        || recorded.velocity_order != result.velocity_order)
        && !amended_later
    {
        return corrupt(done_seq, "session result differs from recomputation");
    }
    Ok(ReplayReport {
        result,
        amendments,
        superseded,
    })
}

/// Handles one within-run event; returns how many superseded events it
/// accounted for.
fn trial_event(
    run: &mut RunReplay,
    staircase: &StaircaseConfig,
    e: &TrialEvent,
    resolved: &HashMap<u64, Response>,
) -> Result<usize, ReplayError> {
    let check_run = |idx: usize| {
        if idx == run.run_index {
            Ok(())
        } else {
            corrupt(
                e.seq,
                format!("event for run {idx} inside run {}", run.run_index),
            )
        }
    };
    match &e.body {
        EventBody::Presented {
            run_index,
            trial_index,
            level,
            catch_trial,
            ..
        } => {
            check_run(*run_index)?;
            if run.trial.is_some() {
                return corrupt(e.seq, "Presented before the previous trial was answered");
            }
            if !run.expected.is_empty() && !run.superseded(e.seq) {
                return corrupt(
                    e.seq,
                    format!("missing {} before next trial", run.expected[0].kind()),
                );
            }
            let stale = usize::from(!run.expected.is_empty());
            run.expected.clear();
            run.trial = Some(PendingTrial {
                trial_index: *trial_index,
                catch_trial: *catch_trial,
                rejected: 0,
            });
            if *level != run.state.level && run.result.is_none() {
                if !run.superseded(e.seq) {
                    return corrupt(
                        e.seq,
                        format!(
                            "presented level {level} but staircase is at {}",
                            run.state.level
                        ),
                    );
                }
                return Ok(stale + 1);
            }
            Ok(stale)
        }
        EventBody::ExplorationRejected { run_index, .. } => {
            check_run(*run_index)?;
            match run.trial.as_mut() {
                Some(t) => {
                    t.rejected += 1;
                    Ok(0)
                }
                None => corrupt(e.seq, "ExplorationRejected outside a trial"),
            }
        }
        EventBody::Responded {
            run_index,
            trial_index,
            response,
            ..
        } => {
            check_run(*run_index)?;
            let Some(trial) = run.trial.take() else {
                return corrupt(e.seq, "Responded without Presented");
            };
            if trial.trial_index != *trial_index {
                return corrupt(
                    e.seq,
                    format!(
                        "response for trial {trial_index} during trial {}",
                        trial.trial_index
                    ),
                );
            }
            if run.result.is_some() {
                // The amended staircase finished earlier than the recorded one.
                return if run.superseded(e.seq) {
                    Ok(1)
                } else {
                    corrupt(e.seq, "trial after the staircase terminated")
                };
            }
            let response = resolved.get(&e.seq).copied().unwrap_or(*response);
            for _ in 0..trial.rejected {
                run.tally.add_rejected();
            }
            if trial.catch_trial {
                run.tally.add(response, true, None, 0);
            } else {
                let correct = super::is_correct(response, false);
                let t = record_response(&run.state, staircase, correct).map_err(|err| {
                    ReplayError::CorruptLog {
                        seq: e.seq,
                        reason: err.to_string(),
                    }
                })?;
                run.tally.add(response, false, Some(t.trial_index), 0);
                let mut rec = super::Recorder::default();
                super::push_transition(
                    &mut rec,
                    run.run_index,
                    *trial_index,
                    &t,
                    run.state.reversals.len(),
                );
                run.expected = rec.events.into_iter().map(|ev| ev.body).collect();
                run.state = t.state;
            }
            if run.state.terminated {
                let result = run
                    .tally
                    .finish(staircase, run.velocity, &run.state)
                    .map_err(|err| ReplayError::CorruptLog {
                        seq: e.seq,
                        reason: err.to_string(),
                    })?;
                run.result = Some(result);
            }
            Ok(0)
        }
        EventBody::StaircaseMoved { run_index, .. } | EventBody::Reversal { run_index, .. } => {
            check_run(*run_index)?;
            let matches = !run.expected.is_empty() && run.expected[0] == e.body;
            if matches {
                run.expected.remove(0);
                return Ok(0);
            }
            if run.superseded(e.seq) {
                if !run.expected.is_empty() && run.expected[0].kind() == e.body.kind() {
                    run.expected.remove(0);
                }
                return Ok(1);
            }
            match run.expected.first() {
                Some(want) => corrupt(
                    e.seq,
                    format!(
                        "recorded {} differs from recomputed {}",
                        e.body.kind(),
                        want.kind()
                    ),
                ),
                None => corrupt(e.seq, format!("unexpected {}", e.body.kind())),
            }
        }
        other => corrupt(e.seq, format!("unexpected {}", other.kind())),
    }
}
