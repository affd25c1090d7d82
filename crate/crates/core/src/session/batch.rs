//! Monte Carlo driver: many independent sessions, merged in seed order.

use std::io::{self, Write};

use rayon::prelude::*;

use super::{run_session, SessionConfig, SessionError, SessionOutput, SessionResult};

pub const SUMMARY_HEADER: &str =
    "session_id,seed,velocity_deg_s,threshold_pct,trials,reversals,prop_correct_tail";

/// Seed of session `index` in a batch starting at `base`.
pub fn session_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Runs `sessions` sessions with seeds `base_seed + i` and maps each output
/// through `f`. Results come back in session order regardless of
/// scheduling. `threads == 0` runs serially on the calling thread.
pub fn run_batch<T, F>(
    cfg: &SessionConfig,
    sessions: usize,
    base_seed: u64,
    threads: usize,
    f: F,
) -> Result<Vec<T>, SessionError>
where
    T: Send,
    F: Fn(usize, SessionOutput) -> T + Sync + Send,
{
    cfg.validate()?;
    let one = |i: usize| -> Result<T, SessionError> {
        let out = run_session(&SessionConfig {
            seed: session_seed(base_seed, i),
            ..cfg.clone()
        })?;
        Ok(f(i, out))
    };
    if threads == 0 {
        return (0..sessions).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SessionError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..sessions).into_par_iter().map(one).collect())
}

/// Summary rows, one per run.
pub fn write_summary_csv<W: Write>(mut w: W, results: &[SessionResult]) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for (id, s) in results.iter().enumerate() {
        for run in &s.runs {
            let tail = run
                .proportion_correct_tail
                .map(|p| p.to_string())
                .unwrap_or_default();
            writeln!(
                w,
                "{id},{},{},{},{},{},{tail}",
                s.seed,
                run.velocity_deg_s,
                run.threshold.percent_of_reference,
                run.trial_count,
                run.reversal_levels.len(),
            )?;
        }
    }
    Ok(())
}
