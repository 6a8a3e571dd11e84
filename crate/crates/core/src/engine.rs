//! Firmware cycle simulation.
//!
//! Each cycle the firmware powers the sensing chain (depending on the duty
//! mode), samples the held ground truth, converts, reconstructs, lets the
//! controller latch a gain move for the next cycle, and schedules radio
//! traffic. Output is one [`AcquisitionRecord`] per cycle and an [`EventLog`]
//! of hardware state changes for the power model.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afe::{
    quantize, reconstruct_resistance, AfeConfig, AfeError, AfeStage, GainLadder, Network, Topology,
};
use crate::controller::{self, Action, ControllerError, ControllerState, Thresholds};
use crate::scalar::{fmt_sig, us_to_ohm, Scalar};
use crate::signal::EdaTrace;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace lasts {trace_ms} ms, shorter than one {period_ms} ms cycle")]
    TraceTooShort { trace_ms: f64, period_ms: u64 },
    #[error("trace rate {trace_hz} Hz is below the {engine_hz} Hz cycle rate")]
    RateTooLow { trace_hz: f64, engine_hz: f64 },
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("initial setting {index} outside ladder of {len}")]
    InitialIndex { index: usize, len: usize },
    #[error("autorange did not settle on the first sample")]
    Autorange,
    #[error(transparent)]
    Afe(#[from] AfeError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("records csv: {0}")]
    Csv(String),
    #[error("event log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DutyMode {
    /// MUX and OP powered for the whole run.
    AlwaysOn,
    /// MUX and OP enabled only for the sampling window.
    #[default]
    DutyCycledMuxOp,
    /// Sensing converter itself toggled with the sampling window.
    ToggledDcdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TxMode {
    #[default]
    PerSample,
    Batched15s,
}

/// Which ladder position the run starts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialSetting {
    /// Power-on autorange: start at the lowest-output setting and let the
    /// controller climb on the first sample before cycle 0 is recorded.
    #[default]
    Autorange,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub sample_period_ms: u64,
    pub afe_on_ms: u64,
    /// Radio busy time per transmission, for the TxEnd event.
    pub tx_ms: u64,
    pub batch_window_ms: u64,
    pub duty_mode: DutyMode,
    pub tx_mode: TxMode,
    pub initial_setting: InitialSetting,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            sample_period_ms: 125,
            afe_on_ms: 5,
            tx_ms: 3,
            batch_window_ms: 15_000,
            duty_mode: DutyMode::DutyCycledMuxOp,
            tx_mode: TxMode::PerSample,
            initial_setting: InitialSetting::Autorange,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.sample_period_ms == 0 {
            return Err(EngineError::Config(
                "sample_period_ms must be positive".into(),
            ));
        }
        if self.afe_on_ms == 0 || self.afe_on_ms > self.sample_period_ms {
            return Err(EngineError::Config(
                "afe_on_ms must satisfy 0 < afe_on_ms <= sample_period_ms".into(),
            ));
        }
        if self.afe_on_ms + self.tx_ms > self.sample_period_ms {
            return Err(EngineError::Config(
                "afe_on_ms + tx_ms must fit within one sample period".into(),
            ));
        }
        if self.batch_window_ms < self.sample_period_ms
            || !self.batch_window_ms.is_multiple_of(self.sample_period_ms)
        {
            return Err(EngineError::Config(
                "batch_window_ms must be a positive multiple of sample_period_ms".into(),
            ));
        }
        Ok(())
    }

    /// Samples per batched transmission (120 at the defaults).
    pub fn batch_len(&self) -> usize {
        (self.batch_window_ms / self.sample_period_ms) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord<T> {
    pub t_ms: u64,
    pub adc_code: u32,
    pub setting_index: usize,
    pub saturated: bool,
    pub conductance_us: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    AfeOn,
    AfeOff,
    Sample,
    TxStart,
    TxEnd,
    DcdcOn,
    DcdcOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t_ms: u64,
    pub kind: EventKind,
    /// ADC code for `Sample`, sample count for `TxStart`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    fn push(&mut self, t_ms: u64, kind: EventKind, payload: Option<u32>) {
        self.events.push(Event {
            t_ms,
            kind,
            payload,
        });
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Times nondecreasing, within `[0, duration_ms]`, and On/Off alternating
    /// per device. A device may be left on at the end of the log.
    pub fn validate(&self, duration_ms: u64) -> Result<(), EngineError> {
        let mut afe = false;
        let mut dcdc = false;
        let mut tx = false;
        let mut last = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.t_ms < last {
                return Err(EngineError::Log(format!("event {i} goes back in time")));
            }
            if e.t_ms > duration_ms {
                return Err(EngineError::Log(format!(
                    "event {i} at {} ms is past the {duration_ms} ms run",
                    e.t_ms
                )));
            }
            last = e.t_ms;
            let (flag, on) = match e.kind {
                EventKind::AfeOn => (&mut afe, true),
                EventKind::AfeOff => (&mut afe, false),
                EventKind::DcdcOn => (&mut dcdc, true),
                EventKind::DcdcOff => (&mut dcdc, false),
                EventKind::TxStart => (&mut tx, true),
                EventKind::TxEnd => (&mut tx, false),
                EventKind::Sample => continue,
            };
            if *flag == on {
                return Err(EngineError::Log(format!(
                    "event {i} ({:?}) does not alternate with its pair",
                    e.kind
                )));
            }
            *flag = on;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, EngineError> {
        let mut events = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| EngineError::Log(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(
                serde_json::from_str(&line)
                    .map_err(|e| EngineError::Log(format!("line {}: {e}", n + 1)))?,
            );
        }
        Ok(Self { events })
    }
}

/// Output of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition<T> {
    pub records: Vec<AcquisitionRecord<T>>,
    pub log: EventLog,
    pub duration_ms: u64,
    /// Setting in force on cycle 0.
    pub initial_index: usize,
    /// Controller decisions that moved the gain, as `(cycle, action)`.
    pub switches: Vec<(usize, Action)>,
}

impl<T: Scalar> Acquisition<T> {
    pub fn write_records_csv<W: Write>(&self, w: W) -> Result<(), EngineError> {
        write_records_csv(&self.records, w)
    }
}

pub fn write_records_csv<T: Scalar, W: Write>(
    records: &[AcquisitionRecord<T>],
    w: W,
) -> Result<(), EngineError> {
    let err = |e: csv::Error| EngineError::Csv(e.to_string());
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "t_ms",
        "adc_code",
        "setting_index",
        "saturated",
        "conductance_us",
    ])
    .map_err(err)?;
    for r in records {
        wr.write_record([
            r.t_ms.to_string(),
            r.adc_code.to_string(),
            r.setting_index.to_string(),
            u8::from(r.saturated).to_string(),
            fmt_sig(r.conductance_us.to_f64_lossy(), 9),
        ])
        .map_err(err)?;
    }
    wr.flush().map_err(|e| EngineError::Csv(e.to_string()))
}

pub fn read_records_csv<T: Scalar, R: Read>(
    r: R,
) -> Result<Vec<AcquisitionRecord<T>>, EngineError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| EngineError::Csv(e.to_string()))?;
        let bad = |col: &str| EngineError::Csv(format!("row {}: bad {col}", n + 1));
        let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
        out.push(AcquisitionRecord {
            t_ms: field(0).parse().map_err(|_| bad("t_ms"))?,
            adc_code: field(1).parse().map_err(|_| bad("adc_code"))?,
            setting_index: field(2).parse().map_err(|_| bad("setting_index"))?,
            saturated: match field(3) {
                "0" | "false" => false,
                "1" | "true" => true,
                _ => return Err(bad("saturated")),
            },
            conductance_us: T::lit(field(4).parse::<f64>().map_err(|_| bad("conductance_us"))?),
        });
    }
    Ok(out)
}

/// The stage the engine measures through on a given ladder position.
fn stage_network<T: Scalar>(
    cfg: &AfeConfig<T>,
    ladder: &GainLadder<T>,
    index: usize,
) -> Network<T> {
    match cfg.topology {
        Topology::FixedDivider => cfg.fixed_divider.network(cfg, None),
        Topology::AdaptiveLadder => ladder.settings[index].network(cfg, None),
    }
}

fn code_at<T: Scalar>(cfg: &AfeConfig<T>, net: &Network<T>, r_skin: T) -> Result<u32, AfeError> {
    let v = net.ideal_vout(r_skin, cfg).min(cfg.v_rail_v);
    quantize(v, cfg)
}

pub fn run_acquisition<T: Scalar>(
    trace: &EdaTrace<T>,
    afe: &AfeConfig<T>,
    ladder: &GainLadder<T>,
    thresholds: &Thresholds,
    cfg: &EngineConfig,
) -> Result<Acquisition<T>, EngineError> {
    cfg.validate()?;
    afe.validate()?;
    if trace.is_empty() {
        return Err(EngineError::EmptyTrace);
    }
    let adaptive = afe.topology == Topology::AdaptiveLadder;
    if adaptive {
        ladder.validate(afe)?;
        thresholds.validate(ladder, afe)?;
    }
    let trace_hz = trace.sample_rate_hz.to_f64_lossy();
    let engine_hz = 1000.0 / cfg.sample_period_ms as f64;
    if trace_hz < engine_hz {
        return Err(EngineError::RateTooLow {
            trace_hz,
            engine_hz,
        });
    }
    let trace_ms = trace.len() as f64 * 1000.0 / trace_hz;
    let n_cycles = ((trace_ms + 1e-6) / cfg.sample_period_ms as f64).floor() as usize;
    if n_cycles == 0 {
        return Err(EngineError::TraceTooShort {
            trace_ms,
            period_ms: cfg.sample_period_ms,
        });
    }
    let duration_ms = n_cycles as u64 * cfg.sample_period_ms;
    let ladder_len = if adaptive { ladder.len() } else { 1 };

    let r_at = |t_ms: u64| -> T {
        let g = trace
            .hold_at_ms(t_ms)
            .unwrap_or_else(|| trace.samples[trace.len() - 1]);
        us_to_ohm(g)
    };

    let initial_index = match cfg.initial_setting {
        InitialSetting::Index(i) if i < ladder_len => i,
        InitialSetting::Index(index) => {
            return Err(EngineError::InitialIndex {
                index,
                len: ladder_len,
            })
        }
        InitialSetting::Autorange if !adaptive => 0,
        InitialSetting::Autorange => {
            let r0 = r_at(0);
            let mut failed = None;
            let settled = controller::settle(ladder_len - 1, ladder_len, thresholds, |i| {
                code_at(afe, &stage_network(afe, ladder, i), r0).unwrap_or_else(|e| {
                    failed = Some(e);
                    0
                })
            });
            if let Some(e) = failed {
                return Err(e.into());
            }
            settled.ok_or(EngineError::Autorange)?
        }
    };

    let mut state = ControllerState::new(initial_index);
    let mut records = Vec::with_capacity(n_cycles);
    let mut log = EventLog::default();
    let mut switches = Vec::new();
    let batch_len = cfg.batch_len();
    let max_code = afe.max_code();

    if cfg.duty_mode == DutyMode::AlwaysOn {
        log.push(0, EventKind::AfeOn, None);
    }
    for k in 0..n_cycles {
        state.begin_cycle();
        let t = k as u64 * cfg.sample_period_ms;
        let t_sample = t + cfg.afe_on_ms;
        match cfg.duty_mode {
            DutyMode::AlwaysOn => {}
            DutyMode::DutyCycledMuxOp => log.push(t, EventKind::AfeOn, None),
            DutyMode::ToggledDcdc => {
                log.push(t, EventKind::DcdcOn, None);
                log.push(t, EventKind::AfeOn, None);
            }
        }

        let idx = state.active_index;
        let net = stage_network(afe, ladder, idx);
        let code = code_at(afe, &net, r_at(t))?;
        log.push(t_sample, EventKind::Sample, Some(code));
        match cfg.duty_mode {
            DutyMode::AlwaysOn => {}
            DutyMode::DutyCycledMuxOp => log.push(t_sample, EventKind::AfeOff, None),
            DutyMode::ToggledDcdc => {
                log.push(t_sample, EventKind::AfeOff, None);
                log.push(t_sample, EventKind::DcdcOff, None);
            }
        }

        let saturated = adaptive && code >= thresholds.sat_hi_code || code == 0 || code >= max_code;
        let r_rec = reconstruct_resistance(code.clamp(1, max_code - 1), &net, afe, None)?;
        records.push(AcquisitionRecord {
            t_ms: t,
            adc_code: code,
            setting_index: idx,
            saturated,
            conductance_us: us_to_ohm(r_rec),
        });

        if adaptive {
            let (next, action) = controller::step(state, code, ladder_len, thresholds);
            if action != Action::Hold {
                switches.push((k, action));
            }
            state = next;
        }

        let tx_count = match cfg.tx_mode {
            TxMode::PerSample => Some(1),
            TxMode::Batched15s if (k + 1) % batch_len == 0 => Some(batch_len),
            TxMode::Batched15s if k + 1 == n_cycles => Some(n_cycles % batch_len),
            TxMode::Batched15s => None,
        };
        if let Some(n) = tx_count {
            log.push(t_sample, EventKind::TxStart, Some(n as u32));
            log.push(t_sample + cfg.tx_ms, EventKind::TxEnd, None);
        }
    }
    if cfg.duty_mode == DutyMode::AlwaysOn {
        log.push(duration_ms, EventKind::AfeOff, None);
    }
    // afe_on_ms == sample_period_ms puts an AfeOff on the next cycle's AfeOn
    // instant; a stable sort keeps Off before On
    log.events.sort_by_key(|e| e.t_ms);

    Ok(Acquisition {
        records,
        log,
        duration_ms,
        initial_index,
        switches,
    })
}
