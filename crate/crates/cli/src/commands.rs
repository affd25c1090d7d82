use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use stifflab::convergence::{self, ConvergenceReport};
use stifflab::emg::{
    self, design_butterworth_lowpass, linear_envelope, synthesize_emg, Channel, FilterMode,
    StageOrder, SynthParams, DEFAULT_EMG_RATE_HZ, ENVELOPE_CUTOFF_HZ,
};
use stifflab::observer::Response;
use stifflab::plant::{simulate_exploration, SpringParam};
use stifflab::session::batch::{run_batch, write_summary_csv};
use stifflab::session::events::to_jsonl;
use stifflab::session::{
    replay_jsonl, run_staircase_run, EventBody, ReplayError, SessionConfig, SessionError,
};

/// Gains of the two synthetic channels; PQ is the more active muscle.
pub const PQ_GAIN: f64 = 1.0;
pub const PT_GAIN: f64 = 0.6;

pub const TRACE_HEADER: &str = "trial,level_pct,response,reversal_flag";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0} already exists (use --force to overwrite)")]
    Exists(PathBuf),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(msg) => CliError::Config(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SessionConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            SessionConfig::from_json(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SessionConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Refuses to clobber any of `paths` unless `force` is set.
fn check_writable(paths: &[PathBuf], force: bool) -> Result<(), CliError> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Exists(p.clone()));
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn simulate(
    config: Option<&Path>,
    sessions: usize,
    out: &Path,
    seed: Option<u64>,
    force: bool,
    threads: usize,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let log_paths: Vec<PathBuf> = (0..sessions)
        .map(|i| out.join(format!("session_{i:04}.jsonl")))
        .collect();
    let summary_path = out.join("summary.csv");
    let mut all = log_paths.clone();
    all.push(summary_path.clone());
    check_writable(&all, force)?;

    let outputs = run_batch(&cfg, sessions, cfg.seed, threads, |_, o| {
        (o.result, to_jsonl(&o.events))
    })?;
    create_dir(out)?;
    let mut results = Vec::with_capacity(outputs.len());
    for ((result, log), path) in outputs.into_iter().zip(&log_paths) {
        let log = log.map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(path, log).map_err(io_err(path))?;
        results.push(result);
    }
    let mut w = create(&summary_path)?;
    write_summary_csv(&mut w, &results).map_err(io_err(&summary_path))?;
    w.flush().map_err(io_err(&summary_path))?;
    println!(
        "wrote {sessions} session log(s) and {} to {}",
        summary_path.display(),
        out.display()
    );
    Ok(())
}

pub fn format_report(r: &ConvergenceReport) -> String {
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    format!(
        "rule: 1-up/{}-down, down/up step ratio {}\n\
         target proportion correct: {:.4}\n\
         bernoulli responder at target: mean step {:+.5} up-steps/trial over {} trials\n\
         weibull observer, {} runs (seed {}): mean {:.1} trials/run\n\
         tail proportion correct: {:.4} (target {:.4} +/- {}) {}\n\
         mean threshold: {:.2}% of the observer's target point (SE {:.2}%, bias limit {}%) {}\n\
         overall: {}\n",
        r.down_rule,
        r.down_up_ratio,
        r.target,
        r.bernoulli_drift,
        r.bernoulli_trials,
        r.runs,
        r.seed,
        r.mean_trials,
        r.tail_proportion,
        r.target,
        convergence::TAIL_TOLERANCE,
        verdict(r.tail_ok),
        r.mean_threshold_pct,
        r.threshold_se_pct,
        convergence::THRESHOLD_BIAS_TOLERANCE_PCT,
        verdict(r.threshold_ok),
        verdict(r.passed()),
    )
}

pub fn validate_convergence(
    runs: usize,
    seed: u64,
    down_rule: u32,
    down_up_ratio: f64,
    out: Option<&Path>,
    force: bool,
) -> Result<(), CliError> {
    if runs < convergence::MIN_VALIDATION_RUNS {
        return Err(CliError::Usage(format!(
            "--runs must be at least {}, got {runs}",
            convergence::MIN_VALIDATION_RUNS
        )));
    }
    if let Some(p) = out {
        check_writable(&[p.to_path_buf()], force)?;
    }
    let report = convergence::validate_convergence(runs, seed, down_rule, down_up_ratio)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    print!("{}", format_report(&report));
    if let Some(p) = out {
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(p, json + "\n").map_err(io_err(p))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Validation("convergence outside tolerance".into()))
    }
}

pub fn trace(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    force: bool,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    check_writable(&[out.to_path_buf()], force)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, events) = run_staircase_run(&cfg, cfg.velocities[0], &mut rng)?;

    struct Row {
        level: f64,
        response: Option<Response>,
        reversals: usize,
    }
    let mut rows: BTreeMap<usize, Row> = BTreeMap::new();
    let mut responded_trial = BTreeMap::new();
    for e in &events {
        match &e.body {
            EventBody::Presented {
                trial_index, level, ..
            } => {
                rows.insert(
                    *trial_index,
                    Row {
                        level: *level,
                        response: None,
                        reversals: 0,
                    },
                );
            }
            EventBody::Responded {
                trial_index,
                response,
                ..
            } => {
                responded_trial.insert(e.seq, *trial_index);
                rows.get_mut(trial_index).expect("presented").response = Some(*response);
            }
            EventBody::Amendment {
                amends, response, ..
            } => {
                let t = responded_trial[amends];
                rows.get_mut(&t).expect("presented").response = Some(*response);
            }
            EventBody::Reversal { trial_index, .. } => {
                rows.get_mut(trial_index).expect("presented").reversals += 1
            }
            _ => {}
        }
    }

    let mut w = create(out)?;
    let write = |w: &mut BufWriter<File>| -> io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for (trial, row) in &rows {
            let response = match row.response {
                Some(Response::Different) => "different",
                Some(Response::Same) => "same",
                None => "",
            };
            let pct = 100.0 * row.level / cfg.reference_stiffness;
            writeln!(w, "{trial},{pct},{response},{}", row.reversals)?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(out))?;
    println!("wrote {} trials to {}", rows.len(), out.display());
    Ok(())
}

pub fn emg_demo(
    config: Option<&Path>,
    duration: f64,
    out: &Path,
    seed: Option<u64>,
    force: bool,
) -> Result<(), CliError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(CliError::Usage(format!(
            "--duration must be > 0, got {duration}"
        )));
    }
    let cfg = load_config(config, seed)?;
    let names = [
        "pq_raw.csv",
        "pq_envelope.csv",
        "pt_raw.csv",
        "pt_envelope.csv",
    ];
    let paths: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
    check_writable(&paths, force)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan = cfg.plan_for(&cfg.velocities[0]);
    let spring = SpringParam {
        k: cfg.reference_stiffness,
    };
    let control_rate = cfg.device.control_rate;
    let wanted = (duration * control_rate).round().max(1.0) as usize;
    // Back-to-back explorations of the reference spring until the demo is long enough.
    let mut activation = Vec::with_capacity(wanted);
    while activation.len() < wanted {
        let rec = simulate_exploration(spring, &plan, &cfg.limb, &cfg.device, &mut rng)
            .map_err(|e| CliError::Config(e.to_string()))?;
        activation.extend_from_slice(&rec.activation);
    }
    activation.truncate(wanted);
    let activation: Vec<f64> = emg::resample_linear(&activation, control_rate, DEFAULT_EMG_RATE_HZ)
        .into_iter()
        .map(|a| a.clamp(0.0, 1.0))
        .collect();

    let spec = design_butterworth_lowpass(ENVELOPE_CUTOFF_HZ, DEFAULT_EMG_RATE_HZ)
        .map_err(|e| CliError::Config(e.to_string()))?;
    create_dir(out)?;
    for (i, (channel, gain)) in [(Channel::PQ, PQ_GAIN), (Channel::PT, PT_GAIN)]
        .into_iter()
        .enumerate()
    {
        let params = SynthParams {
            gain,
            ..SynthParams::default()
        };
        let sig = synthesize_emg(&activation, DEFAULT_EMG_RATE_HZ, &params, channel, &mut rng)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let env = linear_envelope(&sig, &spec, FilterMode::Forward, StageOrder::default())
            .map_err(|e| CliError::Config(e.to_string()))?;
        for (path, samples) in [
            (&paths[2 * i], &sig.samples),
            (&paths[2 * i + 1], &env.samples),
        ] {
            let mut w = create(path)?;
            emg::io::write_csv(&mut w, DEFAULT_EMG_RATE_HZ, samples).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
    }
    println!("wrote {} to {}", names.join(", "), out.display());
    Ok(())
}

pub fn replay(log: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let text = fs::read_to_string(log).map_err(io_err(log))?;
    let report = replay_jsonl(&text).map_err(|e| match e {
        ReplayError::CorruptLog { .. } | ReplayError::Format(_) => {
            CliError::Validation(e.to_string())
        }
    })?;
    if let Some(s) = seed {
        if s != report.result.seed {
            return Err(CliError::Validation(format!(
                "log was recorded with seed {}, not {s}",
                report.result.seed
            )));
        }
    }
    println!(
        "replay OK: seed {}, {} amendment(s)",
        report.result.seed, report.amendments
    );
    for run in &report.result.runs {
        println!(
            "  {} deg/s: threshold {:.2}% of reference after {} trials",
            run.velocity_deg_s, run.threshold.percent_of_reference, run.trial_count
        );
    }
    println!("  digest {}", report.result.log_digest);
    Ok(())
}
