//! Deterministic simulator for an adaptive-gain electrodermal activity (EDA)
//! acquisition chain.
//!
//! The pipeline runs synthetic skin conductance ([`signal`]) through an analog
//! front end with a selectable resistor ladder ([`afe`]), a gain-selection state
//! machine ([`controller`]) and an 8 Hz firmware cycle ([`engine`]). The
//! resulting hardware event log feeds a component-level current model
//! ([`power`]) and the acquisition records feed a bit-exact packet codec
//! ([`telemetry`]). [`analysis`] builds the resolution, error and correlation
//! reports on top.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`, see
//! [`Scalar`]); the aliases at the crate root fix it to one of the two.

// `!(x > 0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod afe;
pub mod analysis;
pub mod controller;
pub mod engine;
pub mod power;
pub mod scalar;
pub mod signal;
pub mod telemetry;

pub use scalar::Scalar;

pub type EdaTrace64 = signal::EdaTrace<f64>;
pub type EdaTrace32 = signal::EdaTrace<f32>;
pub type SynthParams64 = signal::SynthParams<f64>;
pub type SynthParams32 = signal::SynthParams<f32>;
pub type AfeConfig64 = afe::AfeConfig<f64>;
pub type AfeConfig32 = afe::AfeConfig<f32>;
pub type GainSetting64 = afe::GainSetting<f64>;
pub type GainSetting32 = afe::GainSetting<f32>;
pub type GainLadder64 = afe::GainLadder<f64>;
pub type GainLadder32 = afe::GainLadder<f32>;
pub type CalibrationTable64 = afe::CalibrationTable<f64>;
pub type CalibrationTable32 = afe::CalibrationTable<f32>;
pub type AcquisitionRecord64 = engine::AcquisitionRecord<f64>;
pub type AcquisitionRecord32 = engine::AcquisitionRecord<f32>;
pub type SweepRow64 = analysis::SweepRow<f64>;
pub type ErrorRow64 = analysis::ErrorRow<f64>;
