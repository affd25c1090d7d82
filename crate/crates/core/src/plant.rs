//! Simulated 1-DoF rotary device coupled to a pronating forearm.
//!
//! The forearm follows a metronome-paced minimum-jerk out-and-back stroke.
//! Its muscles apply a feedforward torque (inverse dynamics of the reference
//! stroke against the spring being explored) plus PD tracking and noise. The
//! device renders a linear torsion spring from the encoder-quantized angle
//! and saturates at its torque limit.
//!
//! Units at the boundary: degrees, mNm, mNm/deg. The integrator works in
//! radians and Nm.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TORQUE_LIMIT_MNM: f64 = 300.0;
pub const DEFAULT_AMPLITUDE_DEG: f64 = 90.0;
pub const DEFAULT_LED_WINDOW_DEG: f64 = 2.5;
pub const DEFAULT_CONTROL_RATE_HZ: f64 = 1000.0;
pub const DEFAULT_VELOCITY_TOLERANCE: f64 = 5.0;

/// Beats per minute to stroke duration: one stroke per beat.
pub fn beat_duration_from_bpm(bpm: f64) -> f64 {
    60.0 / bpm
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid plant config: {0}")]
    InvalidConfig(String),
    #[error("unstable integration: |angle| = {angle_deg:.3} deg at t = {time:.4} s")]
    UnstableIntegration { angle_deg: f64, time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    /// Counts per revolution after quadrature decoding.
    pub encoder_counts_per_rev: u32,
    pub torque_limit: f64,
    pub control_rate: f64,
    /// When false the spring is rendered from the true angle.
    pub quantize: bool,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            encoder_counts_per_rev: 4096,
            torque_limit: DEFAULT_TORQUE_LIMIT_MNM,
            control_rate: DEFAULT_CONTROL_RATE_HZ,
            quantize: true,
        }
    }
}

impl DeviceConfig {
    pub fn resolution_deg(&self) -> f64 {
        360.0 / self.encoder_counts_per_rev as f64
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if self.encoder_counts_per_rev < 4 {
            return Err(PlantError::InvalidConfig(
                "encoder_counts_per_rev must be >= 4".into(),
            ));
        }
        if !(self.torque_limit > 0.0 && self.torque_limit.is_finite()) {
            return Err(PlantError::InvalidConfig("torque_limit must be > 0".into()));
        }
        if !(self.control_rate > 0.0 && self.control_rate.is_finite()) {
            return Err(PlantError::InvalidConfig("control_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringParam {
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub amplitude: f64,
    pub beat_duration: f64,
    pub sample_rate: f64,
    pub led_window: f64,
}

impl TrajectoryPlan {
    pub fn from_bpm(amplitude: f64, bpm: f64, sample_rate: f64, led_window: f64) -> Self {
        TrajectoryPlan {
            amplitude,
            beat_duration: beat_duration_from_bpm(bpm),
            sample_rate,
            led_window,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.amplitude)
            && ok(self.beat_duration)
            && ok(self.sample_rate)
            && ok(self.led_window)
        {
            Ok(())
        } else {
            Err(PlantError::InvalidConfig(
                "amplitude, beat_duration, sample_rate and led_window must be > 0".into(),
            ))
        }
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.beat_duration
    }

    pub fn sample_count(&self) -> usize {
        (self.duration() * self.sample_rate).round() as usize
    }

    pub fn mean_speed(&self) -> f64 {
        self.amplitude / self.beat_duration
    }

    pub fn peak_speed(&self) -> f64 {
        1.875 * self.mean_speed()
    }

    /// Reference angle, velocity and acceleration (deg, deg/s, deg/s²) at `t`.
    /// Outside `[0, 2T]` the limb rests at the nearest endpoint.
    pub fn reference_at(&self, t: f64) -> (f64, f64, f64) {
        let big_t = self.beat_duration;
        let a = self.amplitude;
        let (t_local, sign, base) = if t <= 0.0 {
            return (0.0, 0.0, 0.0);
        } else if t < big_t {
            (t, 1.0, 0.0)
        } else if t < 2.0 * big_t {
            (t - big_t, -1.0, a)
        } else {
            return (0.0, 0.0, 0.0);
        };
        let s = t_local / big_t;
        let (s2, s3) = (s * s, s * s * s);
        let pos = 10.0 * s3 - 15.0 * s3 * s + 6.0 * s3 * s2;
        let vel = (30.0 * s2 - 60.0 * s3 + 30.0 * s2 * s2) / big_t;
        let acc = (60.0 * s - 180.0 * s2 + 120.0 * s3) / (big_t * big_t);
        (base + sign * a * pos, sign * a * vel, sign * a * acc)
    }
}

/// Reference out-and-back stroke sampled at `plan.sample_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub time: Vec<f64>,
    pub angle: Vec<f64>,
    pub velocity: Vec<f64>,
}

pub fn min_jerk_trajectory(plan: &TrajectoryPlan) -> ReferenceTrajectory {
    let n = plan.sample_count();
    let dt = 1.0 / plan.sample_rate;
    let mut out = ReferenceTrajectory {
        time: Vec::with_capacity(n),
        angle: Vec::with_capacity(n),
        velocity: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t = i as f64 * dt;
        let (p, v, _) = plan.reference_at(t);
        out.time.push(t);
        out.angle.push(p);
        out.velocity.push(v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimbConfig {
    pub inertia: f64,
    pub damping: f64,
    pub tracking_stiffness_gain: f64,
    pub tracking_damping_gain: f64,
    pub motor_noise_std: f64,
    /// Muscle torque that maps to full activation, Nm.
    pub max_muscle_torque: f64,
}

impl Default for LimbConfig {
    fn default() -> Self {
        LimbConfig {
            inertia: 0.004,
            damping: 0.01,
            tracking_stiffness_gain: 5.0,
            tracking_damping_gain: 0.2,
            motor_noise_std: 0.002,
            max_muscle_torque: 0.5,
        }
    }
}

impl LimbConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let nonneg = [
            self.damping,
            self.tracking_stiffness_gain,
            self.tracking_damping_gain,
            self.motor_noise_std,
        ];
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(PlantError::InvalidConfig("inertia must be > 0".into()));
        }
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(PlantError::InvalidConfig(
                "damping, gains and noise must be >= 0".into(),
            ));
        }
        if !(self.max_muscle_torque > 0.0 && self.max_muscle_torque.is_finite()) {
            return Err(PlantError::InvalidConfig(
                "max_muscle_torque must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Restoring torque of a linear torsion spring (mNm), saturated at the device limit.
pub fn spring_torque(spring: SpringParam, angle_deg: f64, device: &DeviceConfig) -> f64 {
    (-spring.k * angle_deg).clamp(-device.torque_limit, device.torque_limit)
}

pub fn quantize_angle(angle_deg: f64, device: &DeviceConfig) -> f64 {
    let r = device.resolution_deg();
    (angle_deg / r).floor() * r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedEvent {
    /// 0 for the outward stroke, 1 for the return.
    pub stroke: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub time: Vec<f64>,
    pub angle: Vec<f64>,
    pub quantized_angle: Vec<f64>,
    pub commanded_torque: Vec<f64>,
    pub muscle_torque: Vec<f64>,
    pub activation: Vec<f64>,
    pub led_events: Vec<LedEvent>,
    pub achieved_mean_velocity: f64,
}

impl TrialRecording {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn peak_abs_commanded_torque(&self) -> f64 {
        self.commanded_torque
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn peak_activation(&self) -> f64 {
        self.activation.iter().fold(0.0, |m: f64, v| m.max(*v))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "time,angle,quantized_angle,commanded_torque,muscle_torque,activation"
        )?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.time[i],
                self.angle[i],
                self.quantized_angle[i],
                self.commanded_torque[i],
                self.muscle_torque[i],
                self.activation[i]
            )?;
        }
        Ok(())
    }
}

struct Dynamics<'a> {
    plan: &'a TrajectoryPlan,
    limb: &'a LimbConfig,
    /// Spring the limb's internal model expects, Nm/rad.
    k_nominal: f64,
}

impl Dynamics<'_> {
    /// Muscle torque (Nm) without noise at state (theta, omega) in rad.
    fn muscle(&self, t: f64, theta: f64, omega: f64) -> f64 {
        let (p, v, a) = self.plan.reference_at(t);
        let (p, v, a) = (p.to_radians(), v.to_radians(), a.to_radians());
        let feedforward = self.limb.inertia * a + self.limb.damping * v + self.k_nominal * p;
        let feedback = self.limb.tracking_stiffness_gain * (p - theta)
            + self.limb.tracking_damping_gain * (v - omega);
        feedforward + feedback
    }

    fn accel(&self, t: f64, theta: f64, omega: f64, device_torque: f64, noise: f64) -> f64 {
        let tau = self.muscle(t, theta, omega) + noise;
        (tau - self.limb.damping * omega + device_torque) / self.limb.inertia
    }
}

/// Integrates one out-and-back exploration of `spring` with classic RK4 at the
/// device control rate. The rendered torque and the motor noise are held
/// constant over each control period.
pub fn simulate_exploration<R: Rng + ?Sized>(
    spring: SpringParam,
    plan: &TrajectoryPlan,
    limb: &LimbConfig,
    device: &DeviceConfig,
    rng: &mut R,
) -> Result<TrialRecording, PlantError> {
    plan.validate()?;
    limb.validate()?;
    device.validate()?;
    if !(spring.k >= 0.0 && spring.k.is_finite()) {
        return Err(PlantError::InvalidConfig("spring k must be >= 0".into()));
    }

    let dt = 1.0 / device.control_rate;
    let duration = plan.duration();
    let n = (duration * device.control_rate).round() as usize;
    let dynamics = Dynamics {
        plan,
        limb,
        k_nominal: spring.k * 1e-3 * (180.0 / std::f64::consts::PI),
    };
    let limit_rad = (10.0 * plan.amplitude).to_radians();

    let mut rec = TrialRecording {
        time: Vec::with_capacity(n),
        angle: Vec::with_capacity(n),
        quantized_angle: Vec::with_capacity(n),
        commanded_torque: Vec::with_capacity(n),
        muscle_torque: Vec::with_capacity(n),
        activation: Vec::with_capacity(n),
        led_events: Vec::new(),
        achieved_mean_velocity: 0.0,
    };

    let (mut theta, mut omega) = (0.0_f64, 0.0_f64);
    let mut path = 0.0;
    let mut led_seen = [false, false];

    for i in 0..n {
        let t = i as f64 * dt;
        let angle_deg = theta.to_degrees();
        let q = if device.quantize {
            quantize_angle(angle_deg, device)
        } else {
            angle_deg
        };
        let cmd = spring_torque(spring, q, device);
        let device_nm = cmd * 1e-3;
        let noise = if limb.motor_noise_std > 0.0 {
            limb.motor_noise_std * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let muscle = dynamics.muscle(t, theta, omega) + noise;

        rec.time.push(t);
        rec.angle.push(angle_deg);
        rec.quantized_angle.push(q);
        rec.commanded_torque.push(cmd);
        rec.muscle_torque.push(muscle * 1e3);
        rec.activation
            .push((muscle.abs() / limb.max_muscle_torque).min(1.0));

        let stroke = if t < plan.beat_duration { 0 } else { 1 };
        let target = if stroke == 0 { plan.amplitude } else { 0.0 };
        if !led_seen[stroke] && (angle_deg - target).abs() < plan.led_window {
            led_seen[stroke] = true;
            rec.led_events.push(LedEvent { stroke, time: t });
        }

        let f = |tt: f64, th: f64, om: f64| (om, dynamics.accel(tt, th, om, device_nm, noise));
        let (k1t, k1o) = f(t, theta, omega);
        let (k2t, k2o) = f(t + 0.5 * dt, theta + 0.5 * dt * k1t, omega + 0.5 * dt * k1o);
        let (k3t, k3o) = f(t + 0.5 * dt, theta + 0.5 * dt * k2t, omega + 0.5 * dt * k2o);
        let (k4t, k4o) = f(t + dt, theta + dt * k3t, omega + dt * k3o);
        let next = theta + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        omega += dt / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o);
        path += (next - theta).abs().to_degrees();
        theta = next;

        if !theta.is_finite() || theta.abs() > limit_rad {
            return Err(PlantError::UnstableIntegration {
                angle_deg: theta.to_degrees(),
                time: t + dt,
            });
        }
    }

    rec.achieved_mean_velocity = path / duration;
    Ok(rec)
}

/// Accepts an exploration when its mean speed is within `tolerance` of the
/// metronome pace and the LED lit on both strokes.
pub fn achieved_velocity_ok(rec: &TrialRecording, plan: &TrajectoryPlan, tolerance: f64) -> bool {
    let on_pace = (rec.achieved_mean_velocity - plan.mean_speed()).abs() <= tolerance;
    let both_strokes = [0, 1]
        .iter()
        .all(|s| rec.led_events.iter().any(|e| e.stroke == *s));
    on_pace && both_strokes
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plan(bpm: f64) -> TrajectoryPlan {
        TrajectoryPlan::from_bpm(90.0, bpm, 1000.0, 2.5)
    }

    fn quiet() -> LimbConfig {
        LimbConfig {
            motor_noise_std: 0.0,
            ..LimbConfig::default()
        }
    }

    #[test]
    fn metronome_pacing() {
        let slow = plan(45.0);
        assert!((slow.beat_duration - 4.0 / 3.0).abs() < 1e-12);
        assert!((slow.mean_speed() - 67.5).abs() < 1e-9);
        assert!((slow.peak_speed() - 126.5625).abs() < 1e-9);
        let fast = plan(75.0);
        assert!((fast.beat_duration - 0.8).abs() < 1e-12);
        assert!((fast.mean_speed() - 112.5).abs() < 1e-9);
    }

    #[test]
    fn min_jerk_boundary_conditions() {
        let p = plan(45.0);
        let t = p.beat_duration;
        assert_eq!(p.reference_at(0.0), (0.0, 0.0, 0.0));
        let (a, v, acc) = p.reference_at(t);
        assert!((a - 90.0).abs() < 1e-9 && v.abs() < 1e-9 && acc.abs() < 1e-9);
        let (a, v, _) = p.reference_at(0.5 * t);
        assert!((a - 45.0).abs() < 1e-9);
        assert!((v - 126.5625).abs() < 1e-9);
        let (a, v, _) = p.reference_at(1.5 * t);
        assert!((a - 45.0).abs() < 1e-9 && (v + 126.5625).abs() < 1e-9);
        let (a, v, acc) = p.reference_at(2.0 * t - 1e-12);
        assert!(a.abs() < 1e-9 && v.abs() < 1e-9 && acc.abs() < 1e-6);
    }

    #[test]
    fn sampled_trajectory_is_smooth_and_sized() {
        let p = plan(75.0);
        let r = min_jerk_trajectory(&p);
        assert_eq!(r.time.len(), 1600);
        let max_v = r.velocity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_v <= p.peak_speed() + 1e-9);
    }

    #[test]
    fn spring_rendering() {
        let d = DeviceConfig::default();
        assert!((spring_torque(SpringParam { k: 1.11 }, 90.0, &d) + 99.9).abs() < 1e-9);
        let k2 = 1.11 * 1.838;
        assert!((spring_torque(SpringParam { k: k2 }, 90.0, &d).abs() - 183.6162).abs() < 1e-9);
        assert_eq!(spring_torque(SpringParam { k: 1.11 }, 0.0, &d), 0.0);
        assert_eq!(spring_torque(SpringParam { k: 10.0 }, 90.0, &d), -300.0);
        assert_eq!(spring_torque(SpringParam { k: 10.0 }, -90.0, &d), 300.0);
    }

    #[test]
    fn quantization_lattice() {
        let d = DeviceConfig::default();
        assert_eq!(d.resolution_deg(), 0.087890625);
        assert_eq!(quantize_angle(0.0, &d), 0.0);
        for n in [-7i32, 1, 13, 1024] {
            let a = n as f64 * d.resolution_deg();
            assert_eq!(quantize_angle(a, &d), a);
        }
        for i in 0..10_000 {
            let a = -180.0 + i as f64 * 0.0361;
            let e = a - quantize_angle(a, &d);
            assert!((0.0..d.resolution_deg()).contains(&e));
        }
    }

    #[test]
    fn tuned_tracking_hits_pace() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = plan(45.0);
        let rec = simulate_exploration(
            SpringParam { k: 1.11 },
            &p,
            &quiet(),
            &DeviceConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(rec.len(), 2667);
        assert!((rec.achieved_mean_velocity - 67.5).abs() < 1.0);
        assert_eq!(rec.led_events.len(), 2);
        assert!(achieved_velocity_ok(&rec, &p, 5.0));
        for i in 0..rec.len() {
            assert!((rec.angle[i] - rec.quantized_angle[i]).abs() < 0.087890625);
            assert!(rec.commanded_torque[i].abs() <= 300.0);
            assert!((0.0..=1.0).contains(&rec.activation[i]));
        }
    }

    #[test]
    fn zero_spring_renders_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = simulate_exploration(
            SpringParam { k: 0.0 },
            &plan(75.0),
            &quiet(),
            &DeviceConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(rec.commanded_torque.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn rendering_is_linear_in_stiffness() {
        let d = DeviceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = simulate_exploration(SpringParam { k: 1.11 }, &plan(45.0), &quiet(), &d, &mut rng)
            .unwrap();
        let b = simulate_exploration(SpringParam { k: 2.22 }, &plan(45.0), &quiet(), &d, &mut rng)
            .unwrap();
        let ratio = b.peak_abs_commanded_torque() / a.peak_abs_commanded_torque();
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
        for (q, c) in b.quantized_angle.iter().zip(&b.commanded_torque) {
            assert_eq!(*c, -2.22 * q);
        }
    }

    #[test]
    fn ideal_spring_cycle_is_conservative() {
        let d = DeviceConfig {
            quantize: false,
            ..DeviceConfig::default()
        };
        let k = 1.11;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec =
            simulate_exploration(SpringParam { k }, &plan(45.0), &quiet(), &d, &mut rng).unwrap();
        let mut work = 0.0;
        for i in 1..rec.len() {
            let dtheta = rec.angle[i] - rec.angle[i - 1];
            work += 0.5 * (rec.commanded_torque[i] + rec.commanded_torque[i - 1]) * dtheta;
        }
        let stored = 0.5 * k * 90.0 * 90.0;
        assert!(
            work.abs() < 1e-4 * stored,
            "net work {work} vs peak energy {stored}"
        );
    }

    #[test]
    fn velocity_check_rules() {
        let p = plan(45.0);
        let mut rec = TrialRecording {
            time: vec![],
            angle: vec![],
            quantized_angle: vec![],
            commanded_torque: vec![],
            muscle_torque: vec![],
            activation: vec![],
            led_events: vec![
                LedEvent {
                    stroke: 0,
                    time: 1.0,
                },
                LedEvent {
                    stroke: 1,
                    time: 2.5,
                },
            ],
            achieved_mean_velocity: 67.5,
        };
        assert!(achieved_velocity_ok(&rec, &p, 5.0));
        rec.achieved_mean_velocity = 60.0;
        assert!(!achieved_velocity_ok(&rec, &p, 5.0));
        rec.achieved_mean_velocity = 67.5;
        rec.led_events.pop();
        assert!(!achieved_velocity_ok(&rec, &p, 5.0));
    }

    #[test]
    fn unstable_gains_are_reported() {
        // PD gain far too stiff for the integration step.
        let limb = LimbConfig {
            inertia: 1e-4,
            tracking_stiffness_gain: 100.0,
            motor_noise_std: 0.0,
            ..LimbConfig::default()
        };
        let d = DeviceConfig {
            control_rate: 100.0,
            ..DeviceConfig::default()
        };
        let p = TrajectoryPlan::from_bpm(90.0, 45.0, 100.0, 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = simulate_exploration(SpringParam { k: 1.11 }, &p, &limb, &d, &mut rng);
        assert!(
            matches!(err, Err(PlantError::UnstableIntegration { .. })),
            "{err:?}"
        );
    }

    #[test]
    fn csv_export_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = simulate_exploration(
            SpringParam { k: 1.11 },
            &plan(75.0),
            &quiet(),
            &DeviceConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time,angle,quantized_angle,commanded_torque,muscle_torque,activation"
        );
        assert_eq!(lines.count(), rec.len());
    }
}
