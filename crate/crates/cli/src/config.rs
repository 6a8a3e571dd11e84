use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use edasim::afe::{AfeConfig, GainLadder};
use edasim::controller::Thresholds;
use edasim::engine::EngineConfig;
use edasim::power::PowerConfig;
use edasim::signal::{ScrEvent, SynthParams};
use edasim::telemetry::ChannelModel;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const CONFIG_ENV: &str = "EDA_SIM_CONFIG";

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed configuration; exit status 1.
    Config(String),
    /// Inputs parsed but failed a check, or a run failed; exit status 2.
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Validation(_) => 2,
        }
    }

    pub fn invalid(e: impl fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Validation(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2Config {
    pub from_us: f64,
    pub to_us: f64,
    pub duration_s: f64,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            from_us: 1.0,
            to_us: 6.0,
            duration_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub points: usize,
    pub r_min_ohm: f64,
    pub r_max_ohm: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            points: edasim::analysis::DEFAULT_SWEEP_POINTS,
            r_min_ohm: edasim::afe::R_SKIN_MIN_OHM,
            r_max_ohm: edasim::afe::R_SKIN_MAX_OHM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorsConfig {
    pub resistors_ohm: Vec<f64>,
    pub tolerance: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for ErrorsConfig {
    fn default() -> Self {
        Self {
            resistors_ohm: edasim::analysis::BENCH_RESISTORS_OHM.to_vec(),
            tolerance: 0.01,
            draws: 100,
            seed: 0x5245_5349,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerRunConfig {
    pub duration_s: f64,
    pub battery_mah: f64,
    pub model: PowerConfig,
}

impl Default for PowerRunConfig {
    fn default() -> Self {
        Self {
            duration_s: 600.0,
            battery_mah: 30.0,
            model: PowerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub signal: SynthParams<f64>,
    pub afe: AfeConfig<f64>,
    /// Ladder JSON, relative to the config file; the built-in ladder if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<PathBuf>,
    pub thresholds: Thresholds,
    pub engine: EngineConfig,
    pub power: PowerRunConfig,
    pub channel: ChannelModel,
    pub sweep: SweepConfig,
    pub errors: ErrorsConfig,
    pub fig2: Fig2Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ev = |onset_s, amplitude_us| ScrEvent {
            onset_s,
            amplitude_us,
        };
        Self {
            signal: SynthParams {
                tonic_level_us: 2.0,
                tonic_drift_us_per_s: 0.01,
                scr_events: vec![ev(8.0, 0.6), ev(21.0, 1.4), ev(37.5, 0.4), ev(44.0, 0.9)],
                ..SynthParams::default()
            },
            afe: AfeConfig::default(),
            ladder: None,
            thresholds: Thresholds::default(),
            engine: EngineConfig::default(),
            power: PowerRunConfig::default(),
            channel: ChannelModel::default(),
            sweep: SweepConfig::default(),
            errors: ErrorsConfig::default(),
            fig2: Fig2Config::default(),
        }
    }
}

/// A loaded configuration with its ladder resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub run: RunConfig,
    pub ladder: GainLadder<f64>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse `text` as field-wise overrides on top of the defaults.
pub fn parse_overrides(text: &str) -> Result<RunConfig, CliError> {
    let over: Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    if !over.is_object() {
        return Err(CliError::Config("top level must be a JSON object".into()));
    }
    let mut base = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    merge(&mut base, over);
    serde_path_to_error::deserialize(base).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("field `{path}`: {}", e.inner()))
    })
}

/// Resolve the config path (flag, then environment), load, apply the seed
/// override and validate.
pub fn load(flag: Option<&Path>, seed: Option<u64>) -> Result<Loaded, CliError> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let (mut run, base_dir) = match &path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (parse_overrides(&text)?, dir)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(s) = seed {
        run.signal.rng_seed = s;
        run.channel.rng_seed = s;
        run.errors.seed = s;
    }
    let ladder = match &run.ladder {
        Some(rel) => {
            let p = base_dir.join(rel);
            let text = fs::read_to_string(&p)
                .map_err(|e| CliError::Config(format!("ladder {}: {e}", p.display())))?;
            GainLadder::from_json(&text).map_err(|e| CliError::Config(format!("ladder: {e}")))?
        }
        None => GainLadder::default_ladder(),
    };
    let loaded = Loaded { run, ladder };
    loaded.validate()?;
    Ok(loaded)
}

impl Loaded {
    pub fn validate(&self) -> Result<(), CliError> {
        let r = &self.run;
        r.signal.validate().map_err(CliError::invalid)?;
        r.afe.validate().map_err(CliError::invalid)?;
        self.ladder.validate(&r.afe).map_err(CliError::invalid)?;
        r.thresholds
            .validate(&self.ladder, &r.afe)
            .map_err(CliError::invalid)?;
        r.engine.validate().map_err(CliError::invalid)?;
        if r.engine.batch_len() > edasim::telemetry::BATCH_LEN {
            return Err(CliError::Validation(format!(
                "batch window holds {} samples; a packet carries at most {}",
                r.engine.batch_len(),
                edasim::telemetry::BATCH_LEN
            )));
        }
        r.power.model.validate().map_err(CliError::invalid)?;
        if !(r.power.duration_s > 0.0 && r.power.battery_mah > 0.0) {
            return Err(CliError::Validation(
                "power.duration_s and power.battery_mah must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&r.channel.drop_probability) {
            return Err(CliError::Validation(
                "channel.drop_probability must be in [0, 1]".into(),
            ));
        }
        let s = &r.sweep;
        if s.points == 0 || !(s.r_min_ohm > 0.0 && s.r_min_ohm < s.r_max_ohm) {
            return Err(CliError::Validation(
                "sweep needs points > 0 and 0 < r_min_ohm < r_max_ohm".into(),
            ));
        }
        let e = &r.errors;
        if e.resistors_ohm.is_empty() || e.resistors_ohm.iter().any(|&x| !(x > 0.0)) {
            return Err(CliError::Validation(
                "errors.resistors_ohm must be non-empty and positive".into(),
            ));
        }
        if !(e.tolerance >= 0.0 && e.tolerance < 0.05) {
            return Err(CliError::Validation(
                "errors.tolerance must be in [0, 0.05)".into(),
            ));
        }
        let f = &r.fig2;
        if !(f.from_us > 0.0 && f.to_us > 0.0 && f.duration_s > 0.0) {
            return Err(CliError::Validation(
                "fig2 needs positive from_us, to_us and duration_s".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_defaults() {
        assert_eq!(parse_overrides("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn nested_override_keeps_siblings() {
        let r = parse_overrides(r#"{"engine": {"tx_mode": "batched15s"}}"#).unwrap();
        assert_eq!(r.engine.tx_mode, edasim::engine::TxMode::Batched15s);
        assert_eq!(r.engine.sample_period_ms, 125);
    }

    #[test]
    fn bad_field_is_named() {
        let e = parse_overrides(r#"{"afe": {"adc_bits": "twelve"}}"#).unwrap_err();
        assert!(e.to_string().contains("afe.adc_bits"), "{e}");
        let e = parse_overrides(r#"{"engine": {"sample_perod_ms": 100}}"#).unwrap_err();
        assert!(e.to_string().contains("sample_perod_ms"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }
}
