//! Component-level supply current model.
//!
//! Current is a constant MCU floor, plus the sensing chain while enabled,
//! plus a rectangular pulse per radio event and a 1 ms inrush pulse per
//! sensing-converter enable. Charges are in µC, currents in mA, time in ms
//! (so 1 mA for 1 ms is 1 µC).

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, EventKind, EventLog};

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("malformed event log: {0}")]
    Log(#[from] EngineError),
    #[error("radio pulse starting at {start} ms runs past the {duration} ms window")]
    PulseOverrun { start: u64, duration: u64 },
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("invalid power config: {0}")]
    Config(String),
    #[error("battery capacity and average current must be positive")]
    NonPositiveBattery,
}

/// Supply-current parameters. The defaults are a least-squares fit of the
/// component split to the target always-on and duty-cycled baseline and
/// average currents under the default engine schedule; they are derived,
/// not datasheet values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub i_mcu_base_ma: f64,
    pub i_afe_active_ma: f64,
    pub q_ble_event_uc: f64,
    pub t_ble_event_ms: u64,
    /// Charge drawn each time the sensing converter is re-enabled.
    pub q_dcdc_inrush_uc: f64,
    pub supply_v: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            i_mcu_base_ma: 0.6087,
            i_afe_active_ma: 1.4052,
            q_ble_event_uc: 7.744,
            t_ble_event_ms: 3,
            q_dcdc_inrush_uc: 400.0,
            supply_v: 3.7,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<(), PowerError> {
        let fields = [
            ("i_mcu_base_ma", self.i_mcu_base_ma),
            ("i_afe_active_ma", self.i_afe_active_ma),
            ("q_ble_event_uc", self.q_ble_event_uc),
            ("q_dcdc_inrush_uc", self.q_dcdc_inrush_uc),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PowerError::Config(format!("{name} must be non-negative")));
            }
        }
        if !(self.supply_v > 0.0) {
            return Err(PowerError::Config("supply_v must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    /// Mean current with radio events excluded.
    pub baseline_ma: f64,
    pub average_ma: f64,
    /// Largest 1 ms bin.
    pub peak_ma: f64,
    pub total_charge_mah: f64,
    pub average_power_mw: f64,
    pub duration_ms: u64,
}

/// Current per 1 ms bin; bin `k` covers `[k, k+1)` ms.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub current_ma: Vec<f64>,
}

impl Timeline {
    /// Integral in µC.
    pub fn charge_uc(&self) -> f64 {
        self.current_ma.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_ms,current_ma")?;
        for (t, i) in self.current_ma.iter().enumerate() {
            writeln!(w, "{t},{}", crate::scalar::fmt_sig(*i, 9))?;
        }
        Ok(())
    }
}

pub fn simulate_power(
    log: &EventLog,
    duration_ms: u64,
    cfg: &PowerConfig,
) -> Result<(PowerSummary, Timeline), PowerError> {
    if duration_ms == 0 {
        return Err(PowerError::ZeroDuration);
    }
    cfg.validate()?;
    log.validate(duration_ms)?;

    let n = duration_ms as usize;
    let mut bins = vec![cfg.i_mcu_base_ma; n];
    let mut base_uc = cfg.i_mcu_base_ma * duration_ms as f64;
    let mut tx_uc = 0.0;
    let mut afe_since: Option<u64> = None;

    let add_afe = |from: u64, to: u64, bins: &mut [f64]| {
        for b in &mut bins[from as usize..to as usize] {
            *b += cfg.i_afe_active_ma;
        }
        cfg.i_afe_active_ma * (to - from) as f64
    };

    for e in &log.events {
        match e.kind {
            EventKind::AfeOn => afe_since = Some(e.t_ms),
            EventKind::AfeOff => {
                if let Some(from) = afe_since.take() {
                    base_uc += add_afe(from, e.t_ms, &mut bins);
                }
            }
            EventKind::TxStart => {
                let width = cfg.t_ble_event_ms.max(1);
                if e.t_ms + width > duration_ms {
                    return Err(PowerError::PulseOverrun {
                        start: e.t_ms,
                        duration: duration_ms,
                    });
                }
                let level = cfg.q_ble_event_uc / width as f64;
                for b in &mut bins[e.t_ms as usize..(e.t_ms + width) as usize] {
                    *b += level;
                }
                tx_uc += cfg.q_ble_event_uc;
            }
            EventKind::DcdcOn => {
                if e.t_ms >= duration_ms {
                    return Err(PowerError::PulseOverrun {
                        start: e.t_ms,
                        duration: duration_ms,
                    });
                }
                bins[e.t_ms as usize] += cfg.q_dcdc_inrush_uc;
                base_uc += cfg.q_dcdc_inrush_uc;
            }
            EventKind::TxEnd | EventKind::DcdcOff | EventKind::Sample => {}
        }
    }
    if let Some(from) = afe_since {
        base_uc += add_afe(from, duration_ms, &mut bins);
    }

    let d = duration_ms as f64;
    let total_uc = base_uc + tx_uc;
    let average_ma = total_uc / d;
    let peak_ma = bins.iter().cloned().fold(0.0, f64::max);
    Ok((
        PowerSummary {
            baseline_ma: base_uc / d,
            average_ma,
            peak_ma,
            total_charge_mah: total_uc / 3.6e6,
            average_power_mw: average_ma * cfg.supply_v,
            duration_ms,
        },
        Timeline { current_ma: bins },
    ))
}

/// Hours of operation, `capacity / average`, no derating.
pub fn battery_life(capacity_mah: f64, average_ma: f64) -> Result<f64, PowerError> {
    if !(capacity_mah > 0.0 && average_ma > 0.0) {
        return Err(PowerError::NonPositiveBattery);
    }
    Ok(capacity_mah / average_ma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Event;
    use proptest::prelude::*;

    fn ev(t_ms: u64, kind: EventKind) -> Event {
        Event {
            t_ms,
            kind,
            payload: None,
        }
    }

    #[test]
    fn empty_log_is_quiescent_floor() {
        let cfg = PowerConfig::default();
        let (s, tl) = simulate_power(&EventLog::default(), 1000, &cfg).unwrap();
        assert_eq!(s.baseline_ma, cfg.i_mcu_base_ma);
        assert_eq!(s.average_ma, cfg.i_mcu_base_ma);
        assert_eq!(s.peak_ma, cfg.i_mcu_base_ma);
        assert_eq!(tl.current_ma.len(), 1000);
    }

    #[test]
    fn pulse_shapes() {
        let cfg = PowerConfig {
            i_mcu_base_ma: 1.0,
            i_afe_active_ma: 2.0,
            q_ble_event_uc: 6.0,
            t_ble_event_ms: 3,
            q_dcdc_inrush_uc: 50.0,
            supply_v: 3.7,
        };
        let log = EventLog {
            events: vec![
                ev(0, EventKind::DcdcOn),
                ev(0, EventKind::AfeOn),
                ev(5, EventKind::AfeOff),
                ev(5, EventKind::DcdcOff),
                ev(5, EventKind::TxStart),
                ev(8, EventKind::TxEnd),
            ],
        };
        let (s, tl) = simulate_power(&log, 10, &cfg).unwrap();
        assert_eq!(
            tl.current_ma,
            vec![53.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 1.0, 1.0]
        );
        // 10 + 10 + 50 µC baseline, 6 µC radio, over 10 ms
        assert!((s.baseline_ma - 7.0).abs() < 1e-12);
        assert!((s.average_ma - 7.6).abs() < 1e-12);
        assert_eq!(s.peak_ma, 53.0);
    }

    #[test]
    fn malformed_logs_rejected() {
        let cfg = PowerConfig::default();
        let log = EventLog {
            events: vec![ev(3, EventKind::AfeOff)],
        };
        assert!(matches!(
            simulate_power(&log, 10, &cfg),
            Err(PowerError::Log(_))
        ));
        let log = EventLog {
            events: vec![ev(9, EventKind::TxStart)],
        };
        assert!(matches!(
            simulate_power(&log, 10, &cfg),
            Err(PowerError::PulseOverrun { .. })
        ));
        assert_eq!(
            simulate_power(&EventLog::default(), 0, &cfg),
            Err(PowerError::ZeroDuration)
        );
        let bad = PowerConfig {
            i_afe_active_ma: -1.0,
            ..cfg
        };
        assert!(matches!(
            simulate_power(&EventLog::default(), 10, &bad),
            Err(PowerError::Config(_))
        ));
    }

    #[test]
    fn battery_examples() {
        let h = battery_life(30.0, 0.721).unwrap();
        assert!((h - 41.6).abs() < 0.05);
        assert_eq!(battery_life(30.0, 1.0).unwrap(), 30.0);
        assert!(battery_life(0.0, 1.0).is_err());
        assert!(battery_life(30.0, -1.0).is_err());
    }

    fn arb_log() -> impl Strategy<Value = (EventLog, u64)> {
        // a well-formed random log: afe windows, tx pulses, converter enables
        prop::collection::vec((0u64..3, 0u64..40), 0..30).prop_map(|ops| {
            let mut events = Vec::new();
            let mut t = 0;
            for (kind, gap) in ops {
                t += gap;
                match kind {
                    0 => {
                        events.push(ev(t, EventKind::AfeOn));
                        t += 5;
                        events.push(ev(t, EventKind::AfeOff));
                    }
                    1 => {
                        events.push(ev(t, EventKind::TxStart));
                        t += 3;
                        events.push(ev(t, EventKind::TxEnd));
                    }
                    _ => {
                        events.push(ev(t, EventKind::DcdcOn));
                        t += 1;
                        events.push(ev(t, EventKind::DcdcOff));
                    }
                }
            }
            (EventLog { events }, t + 10)
        })
    }

    proptest! {
        #[test]
        fn charge_conservation((log, d) in arb_log()) {
            let (s, tl) = simulate_power(&log, d, &PowerConfig::default()).unwrap();
            let integral = tl.charge_uc();
            prop_assert!((s.average_ma * d as f64 - integral).abs() <= 1e-9 * integral);
            prop_assert!(s.baseline_ma <= s.average_ma + 1e-12);
            prop_assert!(s.average_ma <= s.peak_ma + 1e-12);
        }

        #[test]
        fn adding_events_never_reduces_charge((log, d) in arb_log(), kind in 0u8..3) {
            let cfg = PowerConfig::default();
            let (before, _) = simulate_power(&log, d, &cfg).unwrap();
            let mut more = log.clone();
            let end = more.events.last().map_or(0, |e| e.t_ms);
            let extra = match kind {
                0 => vec![ev(end, EventKind::Sample)],
                1 => vec![ev(end, EventKind::TxStart), ev(end + 3, EventKind::TxEnd)],
                _ => vec![ev(end, EventKind::DcdcOn), ev(end + 1, EventKind::DcdcOff)],
            };
            more.events.extend(extra);
            let (after, _) = simulate_power(&more, d, &cfg).unwrap();
            prop_assert!(after.total_charge_mah >= before.total_charge_mah);
        }
    }
}
