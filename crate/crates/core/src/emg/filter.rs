//! Butterworth low-pass design by bilinear transform, realized as a cascade
//! of second-order sections.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{EmgError, EmgSignal};

/// One biquad `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
/// First-order sections have `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Roots of `z^2 + a1 z + a2` (one root when first order).
    pub fn poles(&self) -> Vec<Complex64> {
        let (a1, a2) = (self.a[1], self.a[2]);
        if a2 == 0.0 {
            return vec![Complex64::new(-a1, 0.0)];
        }
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        vec![(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff: f64,
    pub sample_rate: f64,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    Forward,
    ForwardBackward,
}

/// The envelope filter: 3rd-order Butterworth low-pass.
pub fn design_butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Result<FilterSpec, EmgError> {
    design_butterworth_lowpass_order(3, cutoff, sample_rate)
}

/// Order-`n` Butterworth low-pass. The analog prototype's poles sit on the
/// left half of the unit circle; the cutoff is prewarped so the digital
/// half-power point lands exactly on `cutoff`.
pub fn design_butterworth_lowpass_order(
    order: usize,
    cutoff: f64,
    sample_rate: f64,
) -> Result<FilterSpec, EmgError> {
    if !(sample_rate > 0.0 && cutoff > 0.0 && cutoff < sample_rate / 2.0) {
        return Err(EmgError::CutoffOutOfRange {
            cutoff,
            sample_rate,
        });
    }
    if order == 0 {
        return Err(EmgError::InvalidParams("filter order must be >= 1".into()));
    }
    let k = (PI * cutoff / sample_rate).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));

    // Upper-half-plane prototype poles exp(j*pi*(2m + n + 1) / 2n); each
    // conjugate pair gives s^2 + 2*zeta*s + 1 with zeta = -Re(p).
    for m in 0..order / 2 {
        let angle = PI * (2 * m + order + 1) as f64 / (2 * order) as f64;
        let two_zeta = -2.0 * angle.cos();
        let norm = 1.0 / (1.0 + two_zeta * k + k2);
        let b0 = k2 * norm;
        sections.push(Section {
            b: [b0, 2.0 * b0, b0],
            a: [
                1.0,
                2.0 * (k2 - 1.0) * norm,
                (1.0 - two_zeta * k + k2) * norm,
            ],
        });
    }
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        sections.push(Section {
            b: [k * norm, k * norm, 0.0],
            a: [1.0, (k - 1.0) * norm, 0.0],
        });
    }

    Ok(FilterSpec {
        order,
        cutoff,
        sample_rate,
        sections,
    })
}

impl FilterSpec {
    pub fn response_at(&self, freq: f64) -> Complex64 {
        let w = 2.0 * PI * freq / self.sample_rate;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude_db(&self, freq: f64) -> f64 {
        20.0 * self.response_at(freq).norm().log10()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(Section::poles).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }
}

fn cascade(samples: &mut [f64], sections: &[Section]) {
    for s in sections {
        // transposed direct form II
        let (mut z1, mut z2) = (0.0, 0.0);
        for x in samples.iter_mut() {
            let input = *x;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[1] * y + z2;
            z2 = s.b[2] * input - s.a[2] * y;
            *x = y;
        }
    }
}

pub fn filter_samples(samples: &[f64], spec: &FilterSpec, mode: FilterMode) -> Vec<f64> {
    let mut out = samples.to_vec();
    cascade(&mut out, &spec.sections);
    if mode == FilterMode::ForwardBackward {
        out.reverse();
        cascade(&mut out, &spec.sections);
        out.reverse();
    }
    out
}

pub fn apply_filter(signal: &EmgSignal, spec: &FilterSpec, mode: FilterMode) -> EmgSignal {
    EmgSignal {
        samples: filter_samples(&signal.samples, spec, mode),
        ..signal.clone()
    }
}
