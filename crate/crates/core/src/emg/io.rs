//! CSV and raw binary import/export for signals and envelopes.
//!
//! CSV: header `time,value`, one row per sample.
//! Raw: `<stem>.f64` holds little-endian IEEE-754 doubles; `<stem>.json`
//! holds `{"sample_rate": .., "channel": ..}` (channel null for envelopes).

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Channel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub sample_rate: f64,
    pub channel: Option<Channel>,
}

pub fn write_csv<W: Write>(mut w: W, sample_rate: f64, samples: &[f64]) -> io::Result<()> {
    writeln!(w, "time,value")?;
    for (i, v) in samples.iter().enumerate() {
        writeln!(w, "{},{}", i as f64 / sample_rate, v)?;
    }
    Ok(())
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Returns `(sample_rate, samples)`; the rate is taken from the first two
/// time stamps (NaN for single-sample files).
pub fn read_csv<R: BufRead>(r: R) -> io::Result<(f64, Vec<f64>)> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "time,value" => {}
        _ => return Err(invalid("expected header `time,value`".into())),
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> io::Result<f64> {
            s.and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| invalid(format!("bad row {}: {line}", i + 2)))
        };
        times.push(parse(parts.next())?);
        values.push(parse(parts.next())?);
    }
    let rate = if times.len() >= 2 {
        1.0 / (times[1] - times[0])
    } else {
        f64::NAN
    };
    Ok((rate, values))
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f64"), stem.with_extension("json"))
}

pub fn write_raw(
    stem: &Path,
    sample_rate: f64,
    channel: Option<Channel>,
    samples: &[f64],
) -> io::Result<()> {
    let (data, meta) = stem_paths(stem);
    let mut bytes = Vec::with_capacity(samples.len() * 8);
    for v in samples {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(data, bytes)?;
    let sidecar = Sidecar {
        sample_rate,
        channel,
    };
    fs::write(
        meta,
        serde_json::to_vec_pretty(&sidecar).map_err(io::Error::other)?,
    )
}

pub fn read_raw(stem: &Path) -> io::Result<(Sidecar, Vec<f64>)> {
    let (data, meta) = stem_paths(stem);
    let sidecar: Sidecar =
        serde_json::from_slice(&fs::read(meta)?).map_err(|e| invalid(e.to_string()))?;
    let bytes = fs::read(data)?;
    if bytes.len() % 8 != 0 {
        return Err(invalid(format!(
            "raw file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((sidecar, samples))
}
