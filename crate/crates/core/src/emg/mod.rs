//! Synthetic surface EMG and the linear-envelope pipeline:
//! DC removal, full-wave rectification, 3rd-order Butterworth low-pass.

mod filter;
pub mod io;

pub use filter::{
    apply_filter, design_butterworth_lowpass, design_butterworth_lowpass_order, filter_samples,
    FilterMode, FilterSpec, Section,
};

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENVELOPE_CUTOFF_HZ: f64 = 5.5;
pub const DEFAULT_EMG_RATE_HZ: f64 = 2000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmgError {
    #[error("band [{low}, {high}] Hz not inside (0, {nyquist}) Hz")]
    BandOutOfRange { low: f64, high: f64, nyquist: f64 },
    #[error("cutoff {cutoff} Hz must lie strictly between 0 and Nyquist of {sample_rate} Hz")]
    CutoffOutOfRange { cutoff: f64, sample_rate: f64 },
    #[error("empty signal")]
    EmptySignal,
    #[error("invalid EMG parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    /// Pronator quadratus.
    PQ,
    /// Pronator teres.
    PT,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmgSignal {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// mV per unit activation.
    pub gain: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub dc_offset: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            gain: 1.0,
            band_low: 20.0,
            band_high: 450.0,
            dc_offset: 0.0,
        }
    }
}

/// Order of the first two envelope stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// Subtract the mean, then rectify.
    #[default]
    DcThenRectify,
    /// Rectify, then subtract the mean of the rectified signal.
    RectifyThenDc,
}

/// Unit-variance Gaussian noise band-limited to `[low, high]` Hz by zeroing
/// FFT bins outside the band.
fn band_limited_noise<R: Rng + ?Sized>(
    n: usize,
    sample_rate: f64,
    low: f64,
    high: f64,
    rng: &mut R,
) -> Result<Vec<f64>, EmgError> {
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = sample_rate / n as f64;
    for (i, c) in buf.iter_mut().enumerate() {
        let f = i.min(n - i) as f64 * df;
        if f < low || f > high {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return Err(EmgError::InvalidParams(format!(
            "record of {n} samples has no frequency bins inside the band"
        )));
    }
    let scale = 1.0 / var.sqrt();
    out.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    Ok(out)
}

pub fn synthesize_emg<R: Rng + ?Sized>(
    activation: &[f64],
    sample_rate: f64,
    params: &SynthParams,
    channel: Channel,
    rng: &mut R,
) -> Result<EmgSignal, EmgError> {
    let nyquist = sample_rate / 2.0;
    if !(params.band_low >= 0.0 && params.band_low < params.band_high && params.band_high < nyquist)
    {
        return Err(EmgError::BandOutOfRange {
            low: params.band_low,
            high: params.band_high,
            nyquist,
        });
    }
    if activation.is_empty() {
        return Err(EmgError::EmptySignal);
    }
    if activation.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(EmgError::InvalidParams(
            "activation must lie in [0, 1]".into(),
        ));
    }
    let carrier = band_limited_noise(
        activation.len(),
        sample_rate,
        params.band_low,
        params.band_high,
        rng,
    )?;
    let samples = activation
        .iter()
        .zip(&carrier)
        .map(|(a, n)| params.dc_offset + params.gain * a * n)
        .collect();
    Ok(EmgSignal {
        sample_rate,
        samples,
        channel,
    })
}

pub fn rectify(signal: &EmgSignal) -> EmgSignal {
    EmgSignal {
        samples: signal.samples.iter().map(|v| v.abs()).collect(),
        ..signal.clone()
    }
}

pub fn remove_dc(signal: &EmgSignal) -> Result<EmgSignal, EmgError> {
    if signal.samples.is_empty() {
        return Err(EmgError::EmptySignal);
    }
    let mean = signal.samples.iter().sum::<f64>() / signal.samples.len() as f64;
    Ok(EmgSignal {
        samples: signal.samples.iter().map(|v| v - mean).collect(),
        ..signal.clone()
    })
}

pub fn linear_envelope(
    signal: &EmgSignal,
    spec: &FilterSpec,
    mode: FilterMode,
    order: StageOrder,
) -> Result<Envelope, EmgError> {
    let prepared = match order {
        StageOrder::DcThenRectify => rectify(&remove_dc(signal)?),
        StageOrder::RectifyThenDc => remove_dc(&rectify(signal))?,
    };
    Ok(Envelope {
        sample_rate: signal.sample_rate,
        samples: filter_samples(&prepared.samples, spec, mode),
    })
}

/// Linear interpolation of a uniformly sampled series onto another rate,
/// covering the same time span.
pub fn resample_linear(samples: &[f64], from_rate: f64, to_rate: f64) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let n_out = ((samples.len() as f64) * to_rate / from_rate).round() as usize;
    let last = samples.len() - 1;
    (0..n_out)
        .map(|i| {
            let x = i as f64 * from_rate / to_rate;
            let j = (x.floor() as usize).min(last);
            let frac = x - j as f64;
            if j == last {
                samples[last]
            } else {
                samples[j] + frac * (samples[j + 1] - samples[j])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sig(samples: Vec<f64>) -> EmgSignal {
        EmgSignal {
            sample_rate: 2000.0,
            samples,
            channel: Channel::PQ,
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn silent_muscle_is_pure_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SynthParams {
            dc_offset: 0.3,
            ..SynthParams::default()
        };
        let s = synthesize_emg(&[0.0; 4000], 2000.0, &p, Channel::PT, &mut rng).unwrap();
        assert!(s.samples.iter().all(|v| *v == 0.3));
    }

    #[test]
    fn full_activation_has_unit_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = synthesize_emg(
            &vec![1.0; 20_000],
            2000.0,
            &SynthParams::default(),
            Channel::PQ,
            &mut rng,
        )
        .unwrap();
        let n = s.samples.len() as f64;
        let mean = s.samples.iter().sum::<f64>() / n;
        let sd = (s.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 1.0).abs() < 0.02);
    }

    #[test]
    fn linear_in_activation_under_same_seed() {
        let act: Vec<f64> = (0..3000)
            .map(|i| 0.2 + 0.2 * (i as f64 * 0.01).sin())
            .collect();
        let double: Vec<f64> = act.iter().map(|a| 2.0 * a).collect();
        let p = SynthParams {
            dc_offset: 0.1,
            ..SynthParams::default()
        };
        let a = synthesize_emg(
            &act,
            2000.0,
            &p,
            Channel::PQ,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = synthesize_emg(
            &double,
            2000.0,
            &p,
            Channel::PQ,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!(((y - 0.1) - 2.0 * (x - 0.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn band_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = SynthParams {
            band_high: 1200.0,
            ..SynthParams::default()
        };
        assert!(matches!(
            synthesize_emg(&[0.5; 100], 2000.0, &p, Channel::PQ, &mut rng),
            Err(EmgError::BandOutOfRange { .. })
        ));
        let p = SynthParams {
            band_low: 300.0,
            band_high: 200.0,
            ..SynthParams::default()
        };
        assert!(synthesize_emg(&[0.5; 100], 2000.0, &p, Channel::PQ, &mut rng).is_err());
    }

    #[test]
    fn rectification() {
        let x = sig(vec![-1.0, 2.0, -3.0]);
        assert_eq!(rectify(&x).samples, vec![1.0, 2.0, 3.0]);
        assert_eq!(rectify(&rectify(&x)), rectify(&x));
        let neg = sig(x.samples.iter().map(|v| -v).collect());
        assert_eq!(rectify(&neg), rectify(&x));
    }

    #[test]
    fn dc_removal() {
        assert_eq!(
            remove_dc(&sig(vec![1.0, 3.0])).unwrap().samples,
            vec![-1.0, 1.0]
        );
        assert!(remove_dc(&sig(vec![4.2; 10]))
            .unwrap()
            .samples
            .iter()
            .all(|v| v.abs() < 1e-15));
        let zm = sig(vec![-0.5, 0.25, 0.25]);
        let out = remove_dc(&zm).unwrap();
        for (a, b) in out.samples.iter().zip(&zm.samples) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(remove_dc(&sig(vec![])).unwrap_err(), EmgError::EmptySignal);
        let big = sig((0..1000).map(|i| 1e3 + (i as f64).sin()).collect());
        let out = remove_dc(&big).unwrap();
        assert!((out.samples.iter().sum::<f64>() / 1000.0).abs() < 1e-12 * 1e3);
    }

    #[test]
    fn pure_dc_has_flat_envelope() {
        let spec = design_butterworth_lowpass(5.5, 2000.0).unwrap();
        let env = linear_envelope(
            &sig(vec![2.5; 4000]),
            &spec,
            FilterMode::Forward,
            StageOrder::default(),
        )
        .unwrap();
        assert!(env.samples.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(env.samples.len(), 4000);
    }

    #[test]
    fn envelope_is_homogeneous() {
        let spec = design_butterworth_lowpass(5.5, 2000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = synthesize_emg(
            &vec![0.5; 4000],
            2000.0,
            &SynthParams::default(),
            Channel::PQ,
            &mut rng,
        )
        .unwrap();
        let scaled = sig(s.samples.iter().map(|v| 3.0 * v).collect());
        let a = linear_envelope(&s, &spec, FilterMode::Forward, StageOrder::default()).unwrap();
        let b =
            linear_envelope(&scaled, &spec, FilterMode::Forward, StageOrder::default()).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((y - 3.0 * x).abs() < 1e-9);
        }
    }

    #[test]
    fn envelope_tracks_smooth_activation() {
        let fs = 2000.0;
        let act: Vec<f64> = (0..20_000)
            .map(|i| {
                let t = i as f64 / fs;
                0.45 + 0.3 * (2.0 * PI * 0.4 * t).sin() + 0.1 * (2.0 * PI * 0.9 * t + 1.0).sin()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = synthesize_emg(&act, fs, &SynthParams::default(), Channel::PQ, &mut rng).unwrap();
        let spec = design_butterworth_lowpass(5.5, fs).unwrap();
        for mode in [FilterMode::Forward, FilterMode::ForwardBackward] {
            let env = linear_envelope(&s, &spec, mode, StageOrder::default()).unwrap();
            let r = pearson(&env.samples, &act);
            assert!(r >= 0.9, "{mode:?}: r = {r}");
            let max = env.samples.iter().fold(f64::MIN, |m, v| m.max(*v));
            let min = env.samples.iter().fold(f64::MAX, |m, v| m.min(*v));
            assert!(min >= -0.05 * max);
        }
    }

    #[test]
    fn literal_order_leaves_no_offset_either() {
        let spec = design_butterworth_lowpass(5.5, 2000.0).unwrap();
        let s = sig([1.0, -1.0].repeat(2000));
        let dc_first =
            linear_envelope(&s, &spec, FilterMode::Forward, StageOrder::DcThenRectify).unwrap();
        let rect_first =
            linear_envelope(&s, &spec, FilterMode::Forward, StageOrder::RectifyThenDc).unwrap();
        // rectifying first collapses the alternating signal to a constant
        assert!(rect_first.samples.iter().all(|v| v.abs() < 1e-12));
        assert!((dc_first.samples.last().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let spec = design_butterworth_lowpass(5.5, 2000.0).unwrap();
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let s = synthesize_emg(
                &vec![0.7; 5000],
                2000.0,
                &SynthParams::default(),
                Channel::PT,
                &mut rng,
            )
            .unwrap();
            linear_envelope(
                &s,
                &spec,
                FilterMode::ForwardBackward,
                StageOrder::default(),
            )
            .unwrap()
        };
        let (a, b) = (mk(), mk());
        assert!(a
            .samples
            .iter()
            .zip(&b.samples)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn resampling_preserves_span() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = resample_linear(&x, 1000.0, 2000.0);
        assert_eq!(y, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.0]);
    }
}
