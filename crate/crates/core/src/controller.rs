//! Gain-selection state machine.
//!
//! Once per cycle the firmware looks at the ADC code: a saturated code moves
//! one rung toward lower output voltage, a code at or below the low threshold
//! moves one rung toward higher output voltage, anything else holds. The move
//! is latched and applied at the start of the next cycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afe::{AfeConfig, AfeStage, GainLadder, GainSetting, R_SKIN_MAX_OHM, R_SKIN_MIN_OHM};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("thresholds must satisfy 0 < low_code ({low}) < sat_hi_code ({sat}) < {levels}")]
    Order { low: u32, sat: u32, levels: u32 },
    #[error(
        "settings {upper} and {lower} differ by a factor of {ratio:.4} in output voltage; \
         hysteresis needs less than {limit:.4}"
    )]
    Hysteresis {
        upper: usize,
        lower: usize,
        ratio: f64,
        limit: f64,
    },
    #[error("gain ratio between settings {a} and {b} depends on the operating point (r1 differs)")]
    OperatingPointDependentRatio { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Hold,
    StepToLowerVout,
    StepToHigherVout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Codes at or above this count as saturated.
    pub sat_hi_code: u32,
    /// Codes at or below this are too weak to keep.
    pub low_code: u32,
}

impl Thresholds {
    /// `sat_hi = 2^bits − 2`, `low = 2^bits / 4`.
    pub fn for_bits(adc_bits: u8) -> Self {
        let levels = 1u32 << adc_bits;
        Self {
            sat_hi_code: levels - 2,
            low_code: levels / 4,
        }
    }

    /// Ordering checks, plus the no-limit-cycle condition: for every adjacent
    /// pair of settings the output-voltage ratio, over the whole skin range,
    /// must stay below `sat_hi / (low + 1)`. A saturated reading then always
    /// lands above `low` after stepping down, and vice versa.
    pub fn validate<T: Scalar>(
        &self,
        ladder: &GainLadder<T>,
        cfg: &AfeConfig<T>,
    ) -> Result<(), ControllerError> {
        let levels = cfg.levels();
        if !(0 < self.low_code && self.low_code < self.sat_hi_code && self.sat_hi_code < levels) {
            return Err(ControllerError::Order {
                low: self.low_code,
                sat: self.sat_hi_code,
                levels,
            });
        }
        let limit = self.sat_hi_code as f64 / (self.low_code as f64 + 1.0);
        for w in ladder.settings.windows(2) {
            let (a, b) = (w[0].network(cfg, None), w[1].network(cfg, None));
            // the ratio is monotone in r_skin, so the range endpoints bound it
            for r in [R_SKIN_MIN_OHM, R_SKIN_MAX_OHM] {
                let r = T::lit(r);
                let ratio = (a.ideal_vout(r, cfg) / b.ideal_vout(r, cfg)).to_f64_lossy();
                if !(ratio > 1.0 && ratio < limit) {
                    return Err(ControllerError::Hysteresis {
                        upper: w[0].index,
                        lower: w[1].index,
                        ratio,
                        limit,
                    });
                }
            }
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::for_bits(12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerState {
    pub active_index: usize,
    pub last_code: u32,
    pub pending_switch: Option<usize>,
}

impl ControllerState {
    pub fn new(active_index: usize) -> Self {
        Self {
            active_index,
            last_code: 0,
            pending_switch: None,
        }
    }

    /// Apply any latched switch; called at the start of a cycle.
    pub fn begin_cycle(&mut self) {
        if let Some(next) = self.pending_switch.take() {
            self.active_index = next;
        }
    }
}

/// One controller decision. `ladder_len` bounds the index; index 0 is the
/// highest-output setting.
pub fn step(
    state: ControllerState,
    code: u32,
    ladder_len: usize,
    thresholds: &Thresholds,
) -> (ControllerState, Action) {
    let i = state.active_index;
    let (action, target) = if code >= thresholds.sat_hi_code && i + 1 < ladder_len {
        (Action::StepToLowerVout, Some(i + 1))
    } else if code <= thresholds.low_code && i > 0 {
        (Action::StepToHigherVout, Some(i - 1))
    } else {
        (Action::Hold, None)
    };
    (
        ControllerState {
            active_index: i,
            last_code: code,
            pending_switch: target,
        },
        action,
    )
}

/// Run the controller against a fixed input from `start` until it holds.
/// `code_for(index)` gives the ADC code the input produces on that setting.
/// Returns `None` if no hold is reached within `ladder_len + 1` decisions.
pub fn settle(
    start: usize,
    ladder_len: usize,
    thresholds: &Thresholds,
    mut code_for: impl FnMut(usize) -> u32,
) -> Option<usize> {
    let mut state = ControllerState::new(start);
    for _ in 0..=ladder_len {
        let (next, action) = step(state, code_for(state.active_index), ladder_len, thresholds);
        if action == Action::Hold {
            return Some(next.active_index);
        }
        state = next;
        state.begin_cycle();
    }
    None
}

/// `amp_factor(base) / amp_factor(setting)`; only meaningful when both share
/// the same `r1`.
pub fn gain_ratio<T: Scalar>(
    setting: &GainSetting<T>,
    base: &GainSetting<T>,
) -> Result<T, ControllerError> {
    if setting.r1_ohm != base.r1_ohm {
        return Err(ControllerError::OperatingPointDependentRatio {
            a: setting.index,
            b: base.index,
        });
    }
    Ok(base.amp_factor / setting.amp_factor)
}
