//! Simulation toolkit for single-joint stiffness discrimination experiments.
//!
//! A weighted 1-up/3-down staircase drives a same-different task over two
//! virtual torsion springs. A simulated forearm explores each spring at a
//! metronome pace on a simulated rotary device, a model observer answers,
//! and every step lands in an append-only event log that replays to the same
//! result. Muscle activation from the forearm model feeds a synthetic EMG
//! generator and a linear-envelope pipeline.

pub mod convergence;
pub mod emg;
pub mod normal;
pub mod observer;
pub mod plant;
pub mod session;
pub mod staircase;
