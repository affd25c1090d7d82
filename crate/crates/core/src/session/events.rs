//! Append-only session event log and its JSONL encoding.
//!
//! Each line is `{"seq":..,"kind":..,"t_wall":..,"payload":{..}}`. Floating
//! point values are written as decimals with 17 significant digits so that
//! every value parses back to the identical double.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::RunVelocity;
use super::{RunResult, SessionResult};
use crate::observer::Response;
use crate::staircase::{Direction, StaircaseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSummary {
    pub attempts: u32,
    pub achieved_velocity: f64,
    pub peak_torque: f64,
    pub peak_activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    SessionStarted {
        seed: u64,
        reference_stiffness: f64,
        staircase: StaircaseConfig,
        velocity_order: Vec<RunVelocity>,
        catch_trial_rate: f64,
        velocity_tolerance: f64,
        repeat_limit: u32,
    },
    /// Protocol phases with no simulated effect (training, breaks).
    Metadata {
        label: String,
        duration_s: f64,
    },
    RunStarted {
        run_index: usize,
        velocity_deg_s: f64,
        bpm: f64,
    },
    Presented {
        run_index: usize,
        trial_index: usize,
        level: f64,
        k_reference: f64,
        k_comparison: f64,
        reference_first: bool,
        catch_trial: bool,
    },
    ExplorationRejected {
        run_index: usize,
        trial_index: usize,
        interval: usize,
        attempt: u32,
        achieved_velocity: f64,
        led_events: usize,
    },
    Responded {
        run_index: usize,
        trial_index: usize,
        response: Response,
        explorations: [ExplorationSummary; 2],
    },
    StaircaseMoved {
        run_index: usize,
        trial_index: usize,
        level_before: f64,
        level_after: f64,
        direction: Option<Direction>,
        clamped: bool,
    },
    Reversal {
        run_index: usize,
        trial_index: usize,
        reversal_index: usize,
        level: f64,
        new_direction: Direction,
    },
    RunTerminated {
        result: RunResult,
    },
    /// Replaces the response of an earlier `Responded` event.
    Amendment {
        amends: u64,
        response: Response,
        reason: String,
    },
    SessionCompleted {
        result: SessionResult,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::SessionStarted { .. } => "SessionStarted",
            EventBody::Metadata { .. } => "Metadata",
            EventBody::RunStarted { .. } => "RunStarted",
            EventBody::Presented { .. } => "Presented",
            EventBody::ExplorationRejected { .. } => "ExplorationRejected",
            EventBody::Responded { .. } => "Responded",
            EventBody::StaircaseMoved { .. } => "StaircaseMoved",
            EventBody::Reversal { .. } => "Reversal",
            EventBody::RunTerminated { .. } => "RunTerminated",
            EventBody::Amendment { .. } => "Amendment",
            EventBody::SessionCompleted { .. } => "SessionCompleted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialEvent {
    pub seq: u64,
    /// Simulated seconds since the session started.
    pub t_wall: f64,
    pub body: EventBody,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEvent {
    seq: u64,
    kind: String,
    t_wall: f64,
    payload: Value,
}

/// Writes every f64 as a plain decimal with 17 significant digits
/// (scientific notation only for very large or very small magnitudes).
#[derive(Default)]
struct SigDigits(CompactFormatter);

pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..=16).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if exp >= 0 {
        let split = exp as usize + 1;
        format!("{sign}{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("{sign}0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    }
}

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogFormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-finite number in event {0}")]
    NonFinite(u64),
}

impl TrialEvent {
    pub fn to_json_line(&self) -> Result<String, LogFormatError> {
        let tagged =
            serde_json::to_value(&self.body).map_err(|_| LogFormatError::NonFinite(self.seq))?;
        let payload = tagged.get("payload").cloned().unwrap_or(Value::Null);
        if !self.t_wall.is_finite() || has_null_number(&payload) {
            return Err(LogFormatError::NonFinite(self.seq));
        }
        let wire = WireEvent {
            seq: self.seq,
            kind: self.body.kind().to_string(),
            t_wall: self.t_wall,
            payload,
        };
        let mut out = Vec::with_capacity(256);
        let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits::default());
        wire.serialize(&mut ser).expect("in-memory write");
        Ok(String::from_utf8(out).expect("utf-8 json"))
    }

    pub fn from_json_line(line: &str, line_no: usize) -> Result<Self, LogFormatError> {
        let perr = |msg: String| LogFormatError::Parse { line: line_no, msg };
        let wire: WireEvent = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
        let mut tagged = serde_json::Map::new();
        tagged.insert("kind".into(), Value::String(wire.kind));
        tagged.insert("payload".into(), wire.payload);
        let body: EventBody =
            serde_json::from_value(Value::Object(tagged)).map_err(|e| perr(e.to_string()))?;
        Ok(TrialEvent {
            seq: wire.seq,
            t_wall: wire.t_wall,
            body,
        })
    }
}

// serde_json maps NaN/inf to null when building a Value; no payload field is nullable
// except an unmoved staircase direction, which is never a number.
fn has_null_number(v: &Value) -> bool {
    match v {
        Value::Object(m) => m
            .iter()
            .any(|(k, v)| (v.is_null() && k != "direction") || has_null_number(v)),
        Value::Array(a) => a.iter().any(|v| v.is_null() || has_null_number(v)),
        _ => false,
    }
}

pub fn to_jsonl(events: &[TrialEvent]) -> Result<String, LogFormatError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json_line()?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TrialEvent>, LogFormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| TrialEvent::from_json_line(l, i + 1))
        .collect()
}

/// SHA-256 over the encoded lines of every event except `SessionCompleted`.
pub fn log_digest(events: &[TrialEvent]) -> Result<String, LogFormatError> {
    let mut h = Sha256::new();
    for e in events
        .iter()
        .filter(|e| !matches!(e.body, EventBody::SessionCompleted { .. }))
    {
        h.update(e.to_json_line()?.as_bytes());
        h.update(b"\n");
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Event sink with a sequence counter and a simulated clock.
#[derive(Debug, Default)]
pub struct Recorder {
    pub events: Vec<TrialEvent>,
    pub clock: f64,
}

impl Recorder {
    pub fn push(&mut self, body: EventBody) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(TrialEvent {
            seq,
            t_wall: self.clock,
            body,
        });
        seq
    }

    pub fn advance(&mut self, seconds: f64) {
        self.clock += seconds;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_f64(1.11), "1.1100000000000001");
        assert_eq!(format_f64(67.5), "67.500000000000000");
        assert_eq!(format_f64(-0.0820623), "-0.082062300000000005");
        assert_eq!(format_f64(0.0), "0.0");
        assert_eq!(format_f64(1e300), "1.0000000000000001e300");
        assert_eq!(format_f64(3e-9), "3.0000000000000000e-9");
    }

    proptest! {
        #[test]
        fn decimal_rendering_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            let text = format_f64(v);
            let back: f64 = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn line_shape_and_round_trip() {
        let e = TrialEvent {
            seq: 7,
            t_wall: 12.5,
            body: EventBody::StaircaseMoved {
                run_index: 0,
                trial_index: 3,
                level_before: 1.11,
                level_after: 1.0279377,
                direction: Some(Direction::Down),
                clamped: false,
            },
        };
        let line = e.to_json_line().unwrap();
        assert!(
            line.starts_with(
                r#"{"seq":7,"kind":"StaircaseMoved","t_wall":12.500000000000000,"payload":{"#
            ),
            "{line}"
        );
        assert_eq!(TrialEvent::from_json_line(&line, 1).unwrap(), e);
    }

    #[test]
    fn non_finite_values_refused() {
        let e = TrialEvent {
            seq: 0,
            t_wall: 0.0,
            body: EventBody::Metadata {
                label: "x".into(),
                duration_s: f64::NAN,
            },
        };
        assert!(matches!(
            e.to_json_line(),
            Err(LogFormatError::NonFinite(0))
        ));
    }

    #[test]
    fn garbage_line_reports_line_number() {
        let err = parse_jsonl("\n{\"seq\": 0}\n").unwrap_err();
        assert!(matches!(err, LogFormatError::Parse { line: 2, .. }));
    }
}
