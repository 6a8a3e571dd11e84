//! Evaluation reports: resolution sweep, resistor error table, Pearson
//! correlation and the ramp compensation report.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afe::{
    quantize, reconstruct_resistance, resolution_at, AfeConfig, AfeError, AfeStage,
    CalibrationTable, GainLadder,
};
use crate::controller::{self, gain_ratio, Action, Thresholds};
use crate::engine::Acquisition;
use crate::scalar::{fmt_sig, us_to_ohm, Scalar};
use crate::signal::{synthesize_eda, EdaTrace, SignalError, SynthParams};

/// Labeled metal-film resistors used for the bench accuracy table, Ω.
pub const BENCH_RESISTORS_OHM: [f64; 12] = [
    27e3, 47e3, 100e3, 220e3, 330e3, 560e3, 820e3, 1e6, 2.2e6, 3.3e6, 5.1e6, 10e6,
];

pub const DEFAULT_SWEEP_POINTS: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Afe(#[from] AfeError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("grid point {0} Ω outside the 25 kΩ..10 MΩ skin range")]
    GridOutOfRange(f64),
    #[error("controller did not settle at {0} Ω")]
    NoSteadySetting(f64),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooShort(usize),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("resistor set is empty")]
    EmptyResistorSet,
    #[error("csv: {0}")]
    Io(String),
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![lo];
    }
    let span = (hi / lo).ln();
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo * (span * T::from_usize(i).unwrap() / T::from_usize(n - 1).unwrap()).exp()
            }
        })
        .collect()
}

/// Ladder position the controller settles on when it approaches `r_skin`
/// from saturation (starting at index 0): the highest-output setting that
/// does not saturate.
pub fn steady_setting<T: Scalar>(
    r_skin: T,
    cfg: &AfeConfig<T>,
    hardware: &GainLadder<T>,
    thresholds: &Thresholds,
) -> Result<usize, AnalysisError> {
    let mut err = None;
    let idx = controller::settle(0, hardware.len(), thresholds, |i| {
        let v = hardware.settings[i]
            .network(cfg, None)
            .ideal_vout(r_skin, cfg)
            .min(cfg.v_rail_v);
        quantize(v, cfg).unwrap_or_else(|e| {
            err = Some(e);
            0
        })
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    idx.ok_or(AnalysisError::NoSteadySetting(r_skin.to_f64_lossy()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<T> {
    pub r_skin_ohm: T,
    pub res_fixed_ohm_per_bit: T,
    pub res_adaptive_ohm_per_bit: T,
    pub best_setting_index: usize,
    pub vout_fixed_v: T,
    pub vout_adaptive_v: T,
}

pub fn resolution_sweep<T: Scalar>(
    cfg: &AfeConfig<T>,
    ladder: &GainLadder<T>,
    thresholds: &Thresholds,
    grid: &[T],
) -> Result<Vec<SweepRow<T>>, AnalysisError> {
    ladder.validate(cfg)?;
    let (lo, hi) = (
        T::lit(crate::afe::R_SKIN_MIN_OHM),
        T::lit(crate::afe::R_SKIN_MAX_OHM),
    );
    // tolerate round-off at the endpoints of a log grid
    let slack = T::lit(1e-9);
    let divider = cfg.fixed_divider;
    grid.iter()
        .map(|&r| {
            if r < lo * (T::one() - slack) || r > hi * (T::one() + slack) {
                return Err(AnalysisError::GridOutOfRange(r.to_f64_lossy()));
            }
            let best = steady_setting(r, cfg, ladder, thresholds)?;
            let setting = &ladder.settings[best];
            Ok(SweepRow {
                r_skin_ohm: r,
                res_fixed_ohm_per_bit: resolution_at(r, &divider, cfg)?,
                res_adaptive_ohm_per_bit: resolution_at(r, setting, cfg)?,
                best_setting_index: best,
                vout_fixed_v: divider
                    .network(cfg, None)
                    .ideal_vout(r, cfg)
                    .min(cfg.v_rail_v),
                vout_adaptive_v: setting
                    .network(cfg, None)
                    .ideal_vout(r, cfg)
                    .min(cfg.v_rail_v),
            })
        })
        .collect()
}

pub fn write_sweep_csv<T: Scalar, W: Write>(rows: &[SweepRow<T>], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "r_skin_ohm,res_fixed_ohm_per_bit,res_adaptive_ohm_per_bit,best_setting_index,vout_fixed_v,vout_adaptive_v"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_sig(r.r_skin_ohm.to_f64_lossy(), 9),
            fmt_sig(r.res_fixed_ohm_per_bit.to_f64_lossy(), 9),
            fmt_sig(r.res_adaptive_ohm_per_bit.to_f64_lossy(), 9),
            r.best_setting_index,
            fmt_sig(r.vout_fixed_v.to_f64_lossy(), 9),
            fmt_sig(r.vout_adaptive_v.to_f64_lossy(), 9),
        )?;
    }
    Ok(())
}

/// The four endpoint figures of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepHeadline {
    pub fixed_at_low_ohm_per_bit: f64,
    pub fixed_at_high_ohm_per_bit: f64,
    pub adaptive_at_low_ohm_per_bit: f64,
    pub adaptive_at_high_ohm_per_bit: f64,
    pub low_ohm: f64,
    pub high_ohm: f64,
    pub segments: usize,
}

pub fn sweep_headline<T: Scalar>(rows: &[SweepRow<T>]) -> Option<SweepHeadline> {
    let first = rows.first()?;
    let last = rows.last()?;
    let segments = 1 + rows
        .windows(2)
        .filter(|w| w[0].best_setting_index != w[1].best_setting_index)
        .count();
    Some(SweepHeadline {
        fixed_at_low_ohm_per_bit: first.res_fixed_ohm_per_bit.to_f64_lossy(),
        fixed_at_high_ohm_per_bit: last.res_fixed_ohm_per_bit.to_f64_lossy(),
        adaptive_at_low_ohm_per_bit: first.res_adaptive_ohm_per_bit.to_f64_lossy(),
        adaptive_at_high_ohm_per_bit: last.res_adaptive_ohm_per_bit.to_f64_lossy(),
        low_ohm: first.r_skin_ohm.to_f64_lossy(),
        high_ohm: last.r_skin_ohm.to_f64_lossy(),
        segments,
    })
}

/// A physical board: the resistor values actually fitted, plus whatever
/// calibration the firmware reconstructs with.
#[derive(Debug, Clone, PartialEq)]
pub struct Board<T> {
    pub hardware: GainLadder<T>,
    pub calibration: Option<CalibrationTable<T>>,
}

impl<T: Scalar> Board<T> {
    /// Hardware equal to the nominal ladder.
    pub fn nominal(ladder: &GainLadder<T>) -> Self {
        Self {
            hardware: ladder.clone(),
            calibration: None,
        }
    }

    /// Hardware drawn with uniform ±`tolerance` resistor error, calibrated
    /// with the exact drawn values.
    pub fn perturbed(
        ladder: &GainLadder<T>,
        cfg: &AfeConfig<T>,
        tolerance: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hardware, table) = ladder.perturbed(cfg, tolerance, &mut rng);
        Self {
            hardware,
            calibration: Some(table),
        }
    }

    pub fn uncalibrated(&self) -> Self {
        Self {
            hardware: self.hardware.clone(),
            calibration: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantization {
    Adc,
    /// Reconstruct from the unquantized output voltage.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow<T> {
    pub r_true_ohm: T,
    pub r_measured_ohm: T,
    pub abs_error_ohm: T,
    pub rel_error_percent: T,
    pub setting_index: usize,
}

/// Measure each resistor on `board` at the controller's steady setting and
/// reconstruct with the nominal ladder plus the board's calibration.
pub fn error_table<T: Scalar>(
    resistors: &[T],
    cfg: &AfeConfig<T>,
    nominal: &GainLadder<T>,
    thresholds: &Thresholds,
    board: &Board<T>,
    quantization: Quantization,
) -> Result<Vec<ErrorRow<T>>, AnalysisError> {
    if resistors.is_empty() {
        return Err(AnalysisError::EmptyResistorSet);
    }
    let calib = board.calibration.as_ref();
    resistors
        .iter()
        .map(|&r_true| {
            let idx = steady_setting(r_true, cfg, &board.hardware, thresholds)?;
            let v = board.hardware.settings[idx]
                .network(cfg, None)
                .ideal_vout(r_true, cfg);
            let setting = &nominal.settings[idx];
            let r_measured = match quantization {
                Quantization::Adc => {
                    let code = quantize(v.min(cfg.v_rail_v), cfg)?;
                    reconstruct_resistance(code, setting, cfg, calib)?
                }
                Quantization::Ideal => setting.network(cfg, calib).invert(v, cfg),
            };
            let abs = (r_measured - r_true).abs();
            Ok(ErrorRow {
                r_true_ohm: r_true,
                r_measured_ohm: r_measured,
                abs_error_ohm: abs,
                rel_error_percent: T::lit(100.0) * abs / r_true,
                setting_index: idx,
            })
        })
        .collect()
}

pub fn max_rel_error_percent<T: Scalar>(rows: &[ErrorRow<T>]) -> T {
    rows.iter()
        .map(|r| r.rel_error_percent)
        .fold(T::zero(), T::max)
}

pub fn write_error_csv<T: Scalar, W: Write>(rows: &[ErrorRow<T>], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "r_true_ohm,r_measured_ohm,abs_error_ohm,rel_error_percent,setting_index"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_sig(r.r_true_ohm.to_f64_lossy(), 9),
            fmt_sig(r.r_measured_ohm.to_f64_lossy(), 9),
            fmt_sig(r.abs_error_ohm.to_f64_lossy(), 9),
            fmt_sig(r.rel_error_percent.to_f64_lossy(), 9),
            r.setting_index
        )?;
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooShort(x.len()));
    }
    let n = T::from_usize(x.len()).unwrap();
    let mx = x.iter().fold(T::zero(), |a, &b| a + b) / n;
    let my = y.iter().fold(T::zero(), |a, &b| a + b) / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(AnalysisError::ZeroVariance);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Held ground truth at each record's timestamp.
pub fn truth_at_records<T: Scalar>(trace: &EdaTrace<T>, acq: &Acquisition<T>) -> Vec<T> {
    acq.records
        .iter()
        .map(|r| {
            trace
                .hold_at_ms(r.t_ms)
                .unwrap_or_else(|| trace.samples[trace.len() - 1])
        })
        .collect()
}

/// Two observations of the same underlying trace with independent noise
/// draws, standing in for two devices worn at once.
pub fn noisy_observers<T: Scalar>(
    params: &SynthParams<T>,
    sigma_us: T,
    seeds: (u64, u64),
) -> Result<(EdaTrace<T>, EdaTrace<T>), AnalysisError> {
    let a = synthesize_eda(&SynthParams {
        noise_sigma_us: sigma_us,
        rng_seed: seeds.0,
        ..params.clone()
    })?;
    let b = synthesize_eda(&SynthParams {
        noise_sigma_us: sigma_us,
        rng_seed: seeds.1,
        ..params.clone()
    })?;
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row<T> {
    pub t_ms: u64,
    pub conductance_us: T,
    pub vout_v: T,
    pub setting_index: usize,
    /// Attenuation relative to the run's first setting; absent when the two
    /// settings use different divider resistors.
    pub gain_ratio: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Transition<T> {
    /// Cycle on which the switch was decided; it applies from `cycle + 1`.
    pub cycle: usize,
    pub action: Action,
    pub from_index: usize,
    pub to_index: usize,
    pub ratio_before: Option<T>,
    pub ratio_after: Option<T>,
    pub pre_code: u32,
    pub post_code: Option<u32>,
    /// Output the old setting would give at the first post-switch instant.
    pub pre_setting_vout_v: Option<T>,
    /// Measured (code-center) output at the first post-switch instant.
    pub post_vout_v: Option<T>,
}

impl<T: Scalar> Fig2Transition<T> {
    pub fn drop_factor(&self) -> Option<T> {
        Some(self.pre_setting_vout_v? / self.post_vout_v?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Report<T> {
    pub rows: Vec<Fig2Row<T>>,
    pub transitions: Vec<Fig2Transition<T>>,
}

/// Align ground truth, output voltage and gain ratio over a run and describe
/// each gain switch.
pub fn fig2_report<T: Scalar>(
    trace: &EdaTrace<T>,
    acq: &Acquisition<T>,
    cfg: &AfeConfig<T>,
    ladder: &GainLadder<T>,
) -> Fig2Report<T> {
    let truth = truth_at_records(trace, acq);
    let base = &ladder.settings[acq.initial_index];
    let ratio_of = |i: usize| gain_ratio(&ladder.settings[i], base).ok();
    let rows: Vec<Fig2Row<T>> = acq
        .records
        .iter()
        .zip(&truth)
        .map(|(rec, &g)| {
            let net = ladder.settings[rec.setting_index].network(cfg, None);
            Fig2Row {
                t_ms: rec.t_ms,
                conductance_us: g,
                vout_v: net.ideal_vout(us_to_ohm(g), cfg).min(cfg.v_rail_v),
                setting_index: rec.setting_index,
                gain_ratio: ratio_of(rec.setting_index),
            }
        })
        .collect();
    let transitions = acq
        .switches
        .iter()
        .map(|&(k, action)| {
            let from = acq.records[k].setting_index;
            let to = match action {
                Action::StepToLowerVout => from + 1,
                Action::StepToHigherVout => from - 1,
                Action::Hold => from,
            };
            let post = acq.records.get(k + 1);
            Fig2Transition {
                cycle: k,
                action,
                from_index: from,
                to_index: to,
                ratio_before: ratio_of(from),
                ratio_after: ratio_of(to),
                pre_code: acq.records[k].adc_code,
                post_code: post.map(|p| p.adc_code),
                pre_setting_vout_v: post.map(|_| {
                    ladder.settings[from]
                        .network(cfg, None)
                        .ideal_vout(us_to_ohm(truth[k + 1]), cfg)
                }),
                post_vout_v: post.map(|p| cfg.code_center_v(p.adc_code)),
            }
        })
        .collect();
    Fig2Report { rows, transitions }
}

pub fn write_fig2_csv<T: Scalar, W: Write>(
    report: &Fig2Report<T>,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "t_ms,conductance_us,vout_v,setting_index,gain_ratio")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.t_ms,
            fmt_sig(r.conductance_us.to_f64_lossy(), 9),
            fmt_sig(r.vout_v.to_f64_lossy(), 9),
            r.setting_index,
            r.gain_ratio
                .map(|g| fmt_sig(g.to_f64_lossy(), 9))
                .unwrap_or_default()
        )?;
    }
    Ok(())
}
