//! Analog front end: excitation, selectable-resistor divider, amplifier,
//! rail clamp and ADC.
//!
//! Every stage reduces to a [`Network`]: a reference resistor `r1` in series
//! with the skin, with the divider tap amplified by `gain`:
//!
//! ```text
//! Vout = v_exc · r1 / (r_skin + r1) · gain
//! ```
//!
//! The baseline [`FixedDivider`] is the `gain = 1` case. A [`GainSetting`]
//! picks `r1` on one multiplexer and an amplifier resistor `r2` on the other,
//! with `gain = 1 + r2 / r_gain`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Low end of the skin resistance range the front end must cover, Ω.
pub const R_SKIN_MIN_OHM: f64 = 25e3;
/// High end of the skin resistance range the front end must cover, Ω.
pub const R_SKIN_MAX_OHM: f64 = 10e6;

/// Baseline divider reference fitted to the target fixed-gain resolution
/// endpoints under a 12-bit / 1.8 V ADC. Derived value, not a measurement.
pub const FITTED_R_REF_OHM: f64 = 80_399.0;

/// Versioned default gain ladder.
pub const DEFAULT_LADDER_JSON: &str = include_str!("../../../config/ladder_v1.json");

/// Coverage band for the ladder, as fractions of the rail.
const COVERAGE_LO: f64 = 0.05;
const COVERAGE_HI: f64 = 0.98;

#[derive(Debug, Error, PartialEq)]
pub enum AfeError {
    #[error("skin resistance must be positive, got {0} Ω")]
    NonPositiveResistance(f64),
    #[error("voltage must be non-negative, got {0} V")]
    NegativeVoltage(f64),
    #[error("operating point saturated: ideal output {vout} V at or above rail {rail} V")]
    Saturated { vout: f64, rail: f64 },
    #[error("ADC code {0} is at a range extreme and cannot be inverted")]
    SaturatedCode(u32),
    #[error("invalid AFE config: {0}")]
    Config(String),
    #[error("invalid gain ladder: {0}")]
    Ladder(String),
    #[error("ladder leaves skin resistance {from} Ω .. {to} Ω uncovered")]
    Coverage { from: f64, to: f64 },
    #[error("invalid calibration table: {0}")]
    Calibration(String),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    FixedDivider,
    #[default]
    AdaptiveLadder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfeConfig<T> {
    pub v_exc_v: T,
    pub v_rail_v: T,
    pub adc_bits: u8,
    /// Fixed ground-leg resistor of the amplifier stage.
    pub r_gain_ohm: T,
    pub topology: Topology,
    /// The no-adaptive-gain baseline. Also used when `topology` is
    /// `FixedDivider`.
    pub fixed_divider: FixedDivider<T>,
}

impl<T: Scalar> Default for AfeConfig<T> {
    fn default() -> Self {
        Self {
            v_exc_v: T::lit(1.8),
            v_rail_v: T::lit(1.8),
            adc_bits: 12,
            r_gain_ohm: T::lit(100e3),
            topology: Topology::AdaptiveLadder,
            fixed_divider: FixedDivider::fitted(),
        }
    }
}

impl<T: Scalar> AfeConfig<T> {
    pub fn validate(&self) -> Result<(), AfeError> {
        if !(self.v_exc_v > T::zero()) {
            return Err(AfeError::Config("v_exc_v must be positive".into()));
        }
        if !(self.v_rail_v > T::zero()) {
            return Err(AfeError::Config("v_rail_v must be positive".into()));
        }
        if !(8..=16).contains(&self.adc_bits) {
            return Err(AfeError::Config(format!(
                "adc_bits must be within 8..=16, got {}",
                self.adc_bits
            )));
        }
        if !(self.r_gain_ohm > T::zero()) {
            return Err(AfeError::Config("r_gain_ohm must be positive".into()));
        }
        if !(self.fixed_divider.r_ref_ohm > T::zero()) {
            return Err(AfeError::Config(
                "fixed_divider.r_ref_ohm must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of ADC codes, `2^adc_bits`.
    pub fn levels(&self) -> u32 {
        1u32 << self.adc_bits
    }

    pub fn max_code(&self) -> u32 {
        self.levels() - 1
    }

    pub fn v_lsb(&self) -> T {
        self.v_rail_v / T::from_u32(self.levels()).unwrap()
    }

    /// Center voltage of `code`'s quantization bin.
    pub fn code_center_v(&self, code: u32) -> T {
        (T::from_u32(code).unwrap() + T::lit(0.5)) * self.v_lsb()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedDivider<T> {
    pub r_ref_ohm: T,
}

impl<T: Scalar> FixedDivider<T> {
    pub fn fitted() -> Self {
        Self {
            r_ref_ohm: T::lit(FITTED_R_REF_OHM),
        }
    }
}

impl<T: Scalar> Default for FixedDivider<T> {
    fn default() -> Self {
        Self::fitted()
    }
}

/// One selectable (r1, r2) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSetting<T> {
    pub index: usize,
    pub r1_ohm: T,
    pub r2_ohm: T,
    pub amp_factor: T,
}

impl<T: Scalar> GainSetting<T> {
    /// Build from resistor values; `amp_factor = 1 + r2 / r_gain`.
    pub fn from_resistors(index: usize, r1_ohm: T, r2_ohm: T, r_gain_ohm: T) -> Self {
        Self {
            index,
            r1_ohm,
            r2_ohm,
            amp_factor: T::one() + r2_ohm / r_gain_ohm,
        }
    }
}

/// Reduced form of any front-end stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Network<T> {
    pub r1_ohm: T,
    pub gain: T,
}

impl<T: Scalar> Network<T> {
    pub fn ideal_vout(&self, r_skin: T, cfg: &AfeConfig<T>) -> T {
        cfg.v_exc_v * self.r1_ohm / (r_skin + self.r1_ohm) * self.gain
    }

    /// Exact inverse of [`Network::ideal_vout`] for `v > 0`.
    pub fn invert(&self, v: T, cfg: &AfeConfig<T>) -> T {
        self.r1_ohm * (cfg.v_exc_v * self.gain / v - T::one())
    }
}

/// Anything that reduces to a [`Network`], optionally via calibration.
pub trait AfeStage<T: Scalar> {
    fn network(&self, cfg: &AfeConfig<T>, calib: Option<&CalibrationTable<T>>) -> Network<T>;
}

impl<T: Scalar> AfeStage<T> for Network<T> {
    fn network(&self, _: &AfeConfig<T>, _: Option<&CalibrationTable<T>>) -> Network<T> {
        *self
    }
}

impl<T: Scalar> AfeStage<T> for FixedDivider<T> {
    fn network(&self, _: &AfeConfig<T>, calib: Option<&CalibrationTable<T>>) -> Network<T> {
        let r1_ohm = calib.and_then(|c| c.r_ref_ohm).unwrap_or(self.r_ref_ohm);
        Network {
            r1_ohm,
            gain: T::one(),
        }
    }
}

impl<T: Scalar> AfeStage<T> for GainSetting<T> {
    fn network(&self, cfg: &AfeConfig<T>, calib: Option<&CalibrationTable<T>>) -> Network<T> {
        match calib.and_then(|c| c.settings.get(&self.index)) {
            Some(m) => Network {
                r1_ohm: m.r1_ohm,
                gain: T::one() + m.r2_ohm / cfg.r_gain_ohm,
            },
            None => Network {
                r1_ohm: self.r1_ohm,
                gain: self.amp_factor,
            },
        }
    }
}

/// Output voltage before and after the rail clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vout<T> {
    pub ideal: T,
    pub clamped: T,
}

pub fn transfer_vout<T: Scalar>(
    r_skin: T,
    stage: &impl AfeStage<T>,
    cfg: &AfeConfig<T>,
) -> Result<Vout<T>, AfeError> {
    if !(r_skin > T::zero()) {
        return Err(AfeError::NonPositiveResistance(r_skin.to_f64_lossy()));
    }
    let ideal = stage.network(cfg, None).ideal_vout(r_skin, cfg);
    Ok(Vout {
        ideal,
        clamped: ideal.min(cfg.v_rail_v),
    })
}

/// `clamp(floor(v / v_rail · 2^bits), 0, 2^bits − 1)`.
pub fn quantize<T: Scalar>(v: T, cfg: &AfeConfig<T>) -> Result<u32, AfeError> {
    if !(v >= T::zero()) {
        return Err(AfeError::NegativeVoltage(v.to_f64_lossy()));
    }
    let scaled = (v / cfg.v_rail_v * T::from_u32(cfg.levels()).unwrap()).floor();
    let code = scaled
        .to_u64()
        .unwrap_or(u64::MAX)
        .min(cfg.max_code() as u64);
    Ok(code as u32)
}

/// Ohms per ADC bit at `r_skin`: `V_LSB / |dVout/dR|`, analytic.
pub fn resolution_at<T: Scalar>(
    r_skin: T,
    stage: &impl AfeStage<T>,
    cfg: &AfeConfig<T>,
) -> Result<T, AfeError> {
    if !(r_skin > T::zero()) {
        return Err(AfeError::NonPositiveResistance(r_skin.to_f64_lossy()));
    }
    let net = stage.network(cfg, None);
    let ideal = net.ideal_vout(r_skin, cfg);
    if ideal >= cfg.v_rail_v {
        return Err(AfeError::Saturated {
            vout: ideal.to_f64_lossy(),
            rail: cfg.v_rail_v.to_f64_lossy(),
        });
    }
    let span = r_skin + net.r1_ohm;
    Ok(cfg.v_lsb() * span * span / (cfg.v_exc_v * net.r1_ohm * net.gain))
}

/// Invert the transfer function at the center voltage of `code`, using
/// measured resistor values when a calibration table is given.
pub fn reconstruct_resistance<T: Scalar>(
    code: u32,
    stage: &impl AfeStage<T>,
    cfg: &AfeConfig<T>,
    calib: Option<&CalibrationTable<T>>,
) -> Result<T, AfeError> {
    if code == 0 || code >= cfg.max_code() {
        return Err(AfeError::SaturatedCode(code));
    }
    Ok(stage
        .network(cfg, calib)
        .invert(cfg.code_center_v(code), cfg))
}

/// Measured values for one ladder position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredPair<T> {
    pub r1_ohm: T,
    pub r2_ohm: T,
}

/// Per-board measured resistor values keyed by setting index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTable<T> {
    pub settings: BTreeMap<usize, MeasuredPair<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ref_ohm: Option<T>,
}

impl<T: Scalar> CalibrationTable<T> {
    /// Every measured value must sit within ±5% of nominal.
    pub fn validate(&self, ladder: &GainLadder<T>, cfg: &AfeConfig<T>) -> Result<(), AfeError> {
        let tol = T::lit(0.05);
        let near = |measured: T, nominal: T| {
            if nominal == T::zero() {
                measured.abs() <= tol * cfg.r_gain_ohm
            } else {
                ((measured - nominal) / nominal).abs() <= tol
            }
        };
        for (idx, m) in &self.settings {
            let s = ladder.settings.get(*idx).ok_or_else(|| {
                AfeError::Calibration(format!("setting {idx} not present in ladder"))
            })?;
            if !near(m.r1_ohm, s.r1_ohm) || !near(m.r2_ohm, s.r2_ohm) {
                return Err(AfeError::Calibration(format!(
                    "setting {idx} measured values outside ±5% of nominal"
                )));
            }
        }
        if let Some(r) = self.r_ref_ohm {
            if !near(r, cfg.fixed_divider.r_ref_ohm) {
                return Err(AfeError::Calibration(
                    "r_ref_ohm outside ±5% of nominal".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AfeError>
    where
        T: serde::de::DeserializeOwned,
    {
        serde_json::from_str(text).map_err(|e| AfeError::Json(e.to_string()))
    }
}

/// Ordered gain settings, index 0 giving the highest output voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainLadder<T> {
    #[serde(default)]
    pub version: u32,
    pub settings: Vec<GainSetting<T>>,
}

impl<T: Scalar> GainLadder<T> {
    pub fn default_ladder() -> Self
    where
        T: serde::de::DeserializeOwned,
    {
        Self::from_json(DEFAULT_LADDER_JSON).expect("shipped ladder parses")
    }

    pub fn from_json(text: &str) -> Result<Self, AfeError>
    where
        T: serde::de::DeserializeOwned,
    {
        serde_json::from_str(text).map_err(|e| AfeError::Json(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&GainSetting<T>> {
        self.settings.get(index)
    }

    /// Structural checks plus the coverage invariant over the skin range.
    pub fn validate(&self, cfg: &AfeConfig<T>) -> Result<(), AfeError> {
        if self.settings.len() < 2 {
            return Err(AfeError::Ladder("need at least two settings".into()));
        }
        for (i, s) in self.settings.iter().enumerate() {
            if s.index != i {
                return Err(AfeError::Ladder(format!(
                    "indices must be contiguous from 0; position {i} has index {}",
                    s.index
                )));
            }
            if !(s.r1_ohm > T::zero() && s.r2_ohm >= T::zero() && s.amp_factor > T::zero()) {
                return Err(AfeError::Ladder(format!(
                    "setting {i}: resistor values out of range"
                )));
            }
            let expect = T::one() + s.r2_ohm / cfg.r_gain_ohm;
            if ((s.amp_factor - expect) / expect).abs() > T::lit(1e-6) {
                return Err(AfeError::Ladder(format!(
                    "setting {i}: amp_factor {} disagrees with 1 + r2/r_gain = {}",
                    s.amp_factor, expect
                )));
            }
        }
        let mid = (T::lit(R_SKIN_MIN_OHM) * T::lit(R_SKIN_MAX_OHM)).sqrt();
        for w in self.settings.windows(2) {
            let a = w[0].network(cfg, None).ideal_vout(mid, cfg);
            let b = w[1].network(cfg, None).ideal_vout(mid, cfg);
            if !(a > b) {
                return Err(AfeError::Ladder(format!(
                    "settings {} and {} not in descending output order at {} Ω",
                    w[0].index, w[1].index, mid
                )));
            }
        }
        self.check_coverage(cfg, T::lit(R_SKIN_MIN_OHM), T::lit(R_SKIN_MAX_OHM))
    }

    /// Every `r_skin` in `[lo, hi]` must have some setting whose ideal output
    /// lies in `[0.05, 0.98]·v_rail`. Each setting covers an exact interval
    /// of resistance, so this is an interval-union test.
    pub fn check_coverage(&self, cfg: &AfeConfig<T>, lo: T, hi: T) -> Result<(), AfeError> {
        let v_lo = T::lit(COVERAGE_LO) * cfg.v_rail_v;
        let v_hi = T::lit(COVERAGE_HI) * cfg.v_rail_v;
        let mut spans: Vec<(T, T)> = self
            .settings
            .iter()
            .map(|s| {
                let n = s.network(cfg, None);
                (n.invert(v_hi, cfg), n.invert(v_lo, cfg))
            })
            .collect();
        spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut reach = lo;
        for (a, b) in spans {
            if a > reach {
                break;
            }
            reach = reach.max(b);
        }
        if reach < hi {
            let next = self
                .settings
                .iter()
                .map(|s| s.network(cfg, None).invert(v_hi, cfg))
                .filter(|&a| a > reach)
                .fold(hi, T::min);
            return Err(AfeError::Coverage {
                from: reach.to_f64_lossy(),
                to: next.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// Draw a board: each nominal resistor scaled by an independent uniform
    /// factor in `[1 − tol, 1 + tol]`. Returns the true hardware ladder and
    /// the calibration table an LCR-meter pass over that board would produce.
    pub fn perturbed<R: Rng>(
        &self,
        cfg: &AfeConfig<T>,
        tolerance: f64,
        rng: &mut R,
    ) -> (GainLadder<T>, CalibrationTable<T>) {
        let mut settings = Vec::with_capacity(self.settings.len());
        let mut table = BTreeMap::new();
        for s in &self.settings {
            let f1 = T::lit(1.0 + rng.random_range(-tolerance..=tolerance));
            let f2 = T::lit(1.0 + rng.random_range(-tolerance..=tolerance));
            let r1 = s.r1_ohm * f1;
            let r2 = s.r2_ohm * f2;
            settings.push(GainSetting::from_resistors(s.index, r1, r2, cfg.r_gain_ohm));
            table.insert(
                s.index,
                MeasuredPair {
                    r1_ohm: r1,
                    r2_ohm: r2,
                },
            );
        }
        (
            GainLadder {
                version: self.version,
                settings,
            },
            CalibrationTable {
                settings: table,
                r_ref_ohm: None,
            },
        )
    }
}
