//! `edasim`: wires configuration files to the simulator and writes reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use edasim::analysis::{
    self, error_table, fig2_report, log_grid, max_rel_error_percent, pearson, resolution_sweep,
    sweep_headline, Board, Quantization,
};
use edasim::engine::{
    read_records_csv, run_acquisition, Acquisition, DutyMode, EngineConfig, TxMode,
};
use edasim::power::{battery_life, simulate_power, PowerSummary};
use edasim::signal::{synthesize_eda, EdaTrace, SynthParams};
use edasim::telemetry::{self, decode_stream, packetize, run_channel};
use serde::Serialize;
use serde_json::json;

use config::{load, CliError, Loaded};

#[derive(Parser)]
#[command(
    name = "edasim",
    version,
    about = "Adaptive-gain EDA front end simulator"
)]
struct Cli {
    /// JSON overrides applied field-wise to the defaults (falls back to $EDA_SIM_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for signal noise, channel drops and resistor draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a trace and run the full acquisition, power and telemetry chain.
    Simulate,
    /// Resolution of the fixed divider and the adaptive ladder over skin resistance.
    Sweep,
    /// Reconstruction error over labeled resistors, with and without calibration.
    Errors,
    /// Supply current for each duty-cycling and transmission mode.
    Power,
    /// Gain compensation on a conductance ramp.
    Fig2,
    /// Wire-format tools.
    Telemetry {
        #[command(subcommand)]
        op: TelemetryOp,
    },
    /// Load and check a configuration without running anything.
    ValidateConfig {
        /// Print the fully merged configuration as JSON.
        #[arg(long)]
        print: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PerSample,
    Batched,
}

#[derive(Subcommand)]
enum TelemetryOp {
    /// Packetize an acquisition records CSV into `packets.bin`.
    Encode {
        records: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Decode a packet stream and print one JSON object per packet.
    Decode { input: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edasim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::ValidateConfig { print } => {
            if *print {
                println!("{}", to_json(&cfg.run)?);
            } else {
                println!("ok");
            }
            Ok(())
        }
        Command::Telemetry {
            op: TelemetryOp::Decode { input },
        } => telemetry_decode(input),
        Command::Telemetry {
            op: TelemetryOp::Encode { records, mode },
        } => {
            let mode = match mode {
                Some(ModeArg::PerSample) => TxMode::PerSample,
                Some(ModeArg::Batched) => TxMode::Batched15s,
                None => cfg.run.engine.tx_mode,
            };
            let out = Output::new(&cli.out)?;
            telemetry_encode(records, mode, &out)
        }
        cmd => {
            let out = Output::new(&cli.out)?;
            match cmd {
                Command::Simulate => simulate(&cfg, &out),
                Command::Sweep => sweep(&cfg, &out),
                Command::Errors => errors(&cfg, &out),
                Command::Power => power(&cfg, &out),
                Command::Fig2 => fig2(&cfg, &out),
                _ => unreachable!(),
            }
        }
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.dir.join(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }

    fn json<S: Serialize>(&self, name: &str, value: &S) -> Result<(), CliError> {
        let mut text = to_json(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn csv(
        &self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> Result<(), String>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(CliError::Validation)?;
        self.write(name, &buf)
    }
}

fn io_err(p: &Path, e: std::io::Error) -> CliError {
    CliError::Validation(format!("{}: {e}", p.display()))
}

fn to_json<S: Serialize>(v: &S) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(CliError::invalid)
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn acquire(
    cfg: &Loaded,
    trace: &EdaTrace<f64>,
    engine: &EngineConfig,
) -> Result<Acquisition<f64>, CliError> {
    run_acquisition(
        trace,
        &cfg.run.afe,
        &cfg.ladder,
        &cfg.run.thresholds,
        engine,
    )
    .map_err(CliError::invalid)
}

fn simulate(cfg: &Loaded, out: &Output) -> Result<(), CliError> {
    let r = &cfg.run;
    let trace = synthesize_eda(&r.signal).map_err(CliError::invalid)?;
    let acq = acquire(cfg, &trace, &r.engine)?;
    let (power, timeline) =
        simulate_power(&acq.log, acq.duration_ms, &r.power.model).map_err(CliError::invalid)?;
    let packets = packetize(&acq.records, 0, r.engine.tx_mode).map_err(CliError::invalid)?;
    let (_, channel) = run_channel(&packets, &r.channel);
    let truth = analysis::truth_at_records(&trace, &acq);
    let measured: Vec<f64> = acq.records.iter().map(|x| x.conductance_us).collect();
    let correlation = pearson(&truth, &measured).ok();
    let stream: Vec<u8> = packets.iter().flat_map(|p| p.to_bytes()).collect();

    out.csv("trace.csv", |b| trace.write_csv(b).map_err(s))?;
    out.csv("records.csv", |b| acq.write_records_csv(b).map_err(s))?;
    out.csv("events.jsonl", |b| acq.log.write_jsonl(b).map_err(s))?;
    out.csv("power_timeline.csv", |b| timeline.write_csv(b).map_err(s))?;
    out.write("packets.bin", &stream)?;
    out.json(
        "summary.json",
        &json!({
            "samples": acq.records.len(),
            "duration_ms": acq.duration_ms,
            "initial_setting": acq.initial_index,
            "gain_switches": acq.switches.len(),
            "saturated_samples": acq.records.iter().filter(|x| x.saturated).count(),
            "pearson_truth_vs_reconstructed": correlation,
            "power": power,
            "battery_life_h": battery_life(r.power.battery_mah, power.average_ma).ok(),
            "packets": packets.len(),
            "wire_bytes": stream.len(),
            "channel": channel,
        }),
    )
}

fn sweep(cfg: &Loaded, out: &Output) -> Result<(), CliError> {
    let sc = &cfg.run.sweep;
    let grid = log_grid(sc.r_min_ohm, sc.r_max_ohm, sc.points);
    let rows = resolution_sweep(&cfg.run.afe, &cfg.ladder, &cfg.run.thresholds, &grid)
        .map_err(CliError::invalid)?;
    out.csv("resolution_sweep.csv", |b| {
        analysis::write_sweep_csv(&rows, b).map_err(s)
    })?;
    let head = sweep_headline(&rows).expect("non-empty grid");
    let dominance_violations = rows
        .iter()
        .filter(|x| x.r_skin_ohm > 300e3 && x.res_adaptive_ohm_per_bit > x.res_fixed_ohm_per_bit)
        .count();
    out.json(
        "summary.json",
        &json!({
            "headline": head,
            "points": rows.len(),
            "adaptive_worse_than_fixed_above_300k": dominance_violations,
        }),
    )
}

fn errors(cfg: &Loaded, out: &Output) -> Result<(), CliError> {
    let r = &cfg.run;
    let e = &r.errors;
    let table = |board: &Board<f64>, q| {
        error_table(
            &e.resistors_ohm,
            &r.afe,
            &cfg.ladder,
            &r.thresholds,
            board,
            q,
        )
        .map_err(CliError::invalid)
    };
    let nominal = table(&Board::nominal(&cfg.ladder), Quantization::Adc)?;
    out.csv("error_table.csv", |b| {
        analysis::write_error_csv(&nominal, b).map_err(s)
    })?;

    let mut draws = Vec::with_capacity(e.draws);
    let mut lines = b"draw,seed,max_calibrated_percent,max_uncalibrated_percent\n".to_vec();
    for k in 0..e.draws {
        let seed = e.seed.wrapping_add(k as u64);
        let board = Board::perturbed(&cfg.ladder, &r.afe, e.tolerance, seed);
        let cal = max_rel_error_percent(&table(&board, Quantization::Adc)?);
        let uncal = max_rel_error_percent(&table(&board.uncalibrated(), Quantization::Adc)?);
        lines.extend(
            format!(
                "{k},{seed},{},{}\n",
                edasim::scalar::fmt_sig(cal, 9),
                edasim::scalar::fmt_sig(uncal, 9)
            )
            .bytes(),
        );
        draws.push((cal, uncal));
    }
    out.write("error_draws.csv", &lines)?;
    let worst = |f: fn(&(f64, f64)) -> f64| draws.iter().map(f).fold(0.0, f64::max);
    out.json(
        "summary.json",
        &json!({
            "max_rel_error_percent": max_rel_error_percent(&nominal),
            "draws": e.draws,
            "tolerance": e.tolerance,
            "worst_calibrated_percent": worst(|d| d.0),
            "worst_uncalibrated_percent": worst(|d| d.1),
            "draws_where_calibration_helped_or_tied": draws.iter().filter(|d| d.0 <= d.1).count(),
        }),
    )
}

#[derive(Serialize)]
struct PowerRow {
    duty_mode: DutyMode,
    tx_mode: TxMode,
    #[serde(flatten)]
    summary: PowerSummary,
    battery_life_h: f64,
}

fn power(cfg: &Loaded, out: &Output) -> Result<(), CliError> {
    let r = &cfg.run;
    let params = SynthParams {
        duration_s: r.power.duration_s,
        ..r.signal.clone()
    };
    let trace = synthesize_eda(&params).map_err(CliError::invalid)?;
    let modes = [
        (DutyMode::AlwaysOn, TxMode::PerSample),
        (DutyMode::DutyCycledMuxOp, TxMode::PerSample),
        (DutyMode::ToggledDcdc, TxMode::PerSample),
        (DutyMode::DutyCycledMuxOp, TxMode::Batched15s),
    ];
    let mut rows = Vec::new();
    let mut configured_timeline = None;
    for (duty_mode, tx_mode) in modes {
        let engine = EngineConfig {
            duty_mode,
            tx_mode,
            ..r.engine.clone()
        };
        let acq = acquire(cfg, &trace, &engine)?;
        let (summary, timeline) =
            simulate_power(&acq.log, acq.duration_ms, &r.power.model).map_err(CliError::invalid)?;
        if duty_mode == r.engine.duty_mode && tx_mode == r.engine.tx_mode {
            configured_timeline = Some(timeline);
        }
        let battery_life_h =
            battery_life(r.power.battery_mah, summary.average_ma).map_err(CliError::invalid)?;
        rows.push(PowerRow {
            duty_mode,
            tx_mode,
            summary,
            battery_life_h,
        });
    }
    let mut lines =
        b"duty_mode,tx_mode,baseline_ma,average_ma,peak_ma,total_charge_mah,average_power_mw,battery_life_h\n"
            .to_vec();
    let f = |x: f64| edasim::scalar::fmt_sig(x, 9);
    for row in &rows {
        let line = format!(
            "{},{},{},{},{},{},{},{}\n",
            variant_name(&row.duty_mode),
            variant_name(&row.tx_mode),
            f(row.summary.baseline_ma),
            f(row.summary.average_ma),
            f(row.summary.peak_ma),
            f(row.summary.total_charge_mah),
            f(row.summary.average_power_mw),
            f(row.battery_life_h),
        );
        lines.extend(line.bytes());
    }
    out.write("power_summary.csv", &lines)?;
    if let Some(tl) = configured_timeline {
        out.csv("power_timeline.csv", |b| tl.write_csv(b).map_err(s))?;
    }
    let savings_ua = (rows[1].summary.average_ma - rows[3].summary.average_ma) * 1e3;
    out.json(
        "summary.json",
        &json!({
            "duration_s": r.power.duration_s,
            "modes": rows,
            "batching_savings_ua": savings_ua,
        }),
    )
}

/// The snake_case serde name of a unit enum variant.
fn variant_name<S: Serialize>(v: &S) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn fig2(cfg: &Loaded, out: &Output) -> Result<(), CliError> {
    let r = &cfg.run;
    let f = &r.fig2;
    let params = SynthParams::ramp(f.from_us, f.to_us, f.duration_s, r.signal.sample_rate_hz);
    let trace = synthesize_eda(&params).map_err(CliError::invalid)?;
    let acq = acquire(cfg, &trace, &r.engine)?;
    let report = fig2_report(&trace, &acq, &r.afe, &cfg.ladder);
    out.csv("fig2.csv", |b| {
        analysis::write_fig2_csv(&report, b).map_err(s)
    })?;
    let transitions: Vec<_> = report
        .transitions
        .iter()
        .map(|t| {
            json!({
                "transition": t,
                "drop_factor": t.drop_factor(),
            })
        })
        .collect();
    out.json(
        "summary.json",
        &json!({
            "initial_setting": acq.initial_index,
            "transitions": transitions,
            "v_lsb": r.afe.v_lsb(),
        }),
    )
}

fn telemetry_encode(records: &Path, mode: TxMode, out: &Output) -> Result<(), CliError> {
    let file = fs::File::open(records).map_err(|e| io_err(records, e))?;
    let recs = read_records_csv::<f64, _>(file).map_err(CliError::invalid)?;
    let packets = packetize(&recs, 0, mode).map_err(CliError::invalid)?;
    let stream: Vec<u8> = packets.iter().flat_map(|p| p.to_bytes()).collect();
    out.write("packets.bin", &stream)?;
    println!("{} packets, {} bytes", packets.len(), stream.len());
    Ok(())
}

fn telemetry_decode(input: &Path) -> Result<(), CliError> {
    let bytes = fs::read(input).map_err(|e| io_err(input, e))?;
    let packets = decode_stream(&bytes).map_err(CliError::invalid)?;
    let mut stdout = std::io::stdout().lock();
    for p in &packets {
        let samples: Vec<_> = p
            .samples
            .iter()
            .map(|x| {
                json!({
                    "conductance_us": x.conductance_us(),
                    "setting_index": x.setting_index,
                })
            })
            .collect();
        let body = p.to_bytes();
        let crc = telemetry::crc16_ccitt_false(&body[..body.len() - telemetry::CRC_LEN]);
        let line = json!({
            "seq": p.seq,
            "t0_ms": p.t0_ms,
            "batched": p.is_batched(),
            "flags": p.flags,
            "crc": format!("0x{crc:04X}"),
            "samples": samples,
        });
        match writeln!(stdout, "{line}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r.map_err(CliError::invalid)?,
        }
    }
    Ok(())
}
