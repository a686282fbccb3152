//! Human activity recognition for smart glasses from laser feedback
//! interferometry (LFI) eye sensors and a head-mounted IMU.
//!
//! The crate covers the whole chain: FMCW processing of the LFI signal
//! ([`lfi`]), a generator for labeled recordings of seven activities
//! ([`synth`]), data preparation ([`dataset`]), a random-forest baseline
//! ([`rfc`]), a 1D-CNN trained from scratch ([`cnn`]), few-shot
//! personalization ([`personalize`]) and leave-one-participant-out
//! evaluation ([`eval`]). [`app`] wires them into the command-line runs.

pub mod activity;
pub mod app;
pub mod cnn;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod lfi;
pub mod par;
pub mod personalize;
pub mod rfc;
pub mod rng;
pub mod synth;

pub use par::Exec;
