//! End-to-end checks across signal, AFE, controller, engine and analysis.

use edasim::analysis::{
    error_table, fig2_report, pearson, truth_at_records, Board, Quantization, BENCH_RESISTORS_OHM,
};
use edasim::controller::{Action, Thresholds};
use edasim::engine::{run_acquisition, EngineConfig};
use edasim::signal::{synthesize_eda, ScrEvent, SynthParams};
use edasim::{AfeConfig32, AfeConfig64, GainLadder32, GainLadder64, SynthParams64};

fn fidelity(params: &SynthParams64) -> f64 {
    let trace = synthesize_eda(params).unwrap();
    let cfg = AfeConfig64::default();
    let ladder = GainLadder64::default_ladder();
    let acq = run_acquisition(
        &trace,
        &cfg,
        &ladder,
        &Thresholds::default(),
        &EngineConfig::default(),
    )
    .unwrap();
    let truth = truth_at_records(&trace, &acq);
    let got: Vec<f64> = acq.records.iter().map(|r| r.conductance_us).collect();
    pearson(&truth, &got).unwrap()
}

#[test]
fn reconstruction_tracks_ground_truth_over_the_full_range() {
    let up = SynthParams64::ramp(0.5, 35.0, 240.0, 8.0);
    let down = SynthParams64::ramp(35.0, 0.5, 240.0, 8.0);
    let bursts = SynthParams64 {
        duration_s: 120.0,
        tonic_level_us: 0.5,
        scr_events: [5.0, 30.0, 60.0, 90.0]
            .iter()
            .zip([4.0, 12.0, 34.0, 20.0])
            .map(|(&onset_s, amplitude_us)| ScrEvent {
                onset_s,
                amplitude_us,
            })
            .collect(),
        ..Default::default()
    };
    for p in [up, down, bursts] {
        let r = fidelity(&p);
        assert!(r >= 0.99, "pearson {r}");
    }
}

#[test]
fn ascending_ramp_single_transition_with_lsb_accurate_drop() {
    let cfg = AfeConfig64::default();
    let ladder = GainLadder64::default_ladder();
    let trace = synthesize_eda(&SynthParams64::ramp(1.0, 6.0, 60.0, 8.0)).unwrap();
    let acq = run_acquisition(
        &trace,
        &cfg,
        &ladder,
        &Thresholds::default(),
        &EngineConfig::default(),
    )
    .unwrap();
    let rep = fig2_report(&trace, &acq, &cfg, &ladder);
    assert_eq!(rep.transitions.len(), 1);
    let t = &rep.transitions[0];
    assert_eq!(t.action, Action::StepToLowerVout);
    assert_eq!(t.ratio_before, Some(1.0));
    assert!((t.ratio_after.unwrap() - 1.8).abs() < 1e-9);
    let expected = t.pre_setting_vout_v.unwrap() / 1.8;
    assert!((expected - t.post_vout_v.unwrap()).abs() <= cfg.v_lsb());
    // conductance series is the ramp itself
    assert!(rep
        .rows
        .windows(2)
        .all(|w| w[1].conductance_us >= w[0].conductance_us));
}

#[test]
fn descending_ramp_single_step_up() {
    let cfg = AfeConfig64::default();
    let ladder = GainLadder64::default_ladder();
    let trace = synthesize_eda(&SynthParams64::ramp(6.0, 1.0, 60.0, 8.0)).unwrap();
    let acq = run_acquisition(
        &trace,
        &cfg,
        &ladder,
        &Thresholds::default(),
        &EngineConfig::default(),
    )
    .unwrap();
    assert_eq!(acq.switches.len(), 1);
    assert_eq!(acq.switches[0].1, Action::StepToHigherVout);
}

#[test]
fn mean_abs_error_grows_with_resistance() {
    // quantization phase makes single-board errors jump around; averaged over
    // boards the error should follow the resolution, within 2x
    let cfg = AfeConfig64::default();
    let ladder = GainLadder64::default_ladder();
    let th = Thresholds::default();
    let draws = 100;
    let mut mean = [0.0; 12];
    for seed in 0..draws {
        let board = Board::perturbed(&ladder, &cfg, 0.01, seed);
        let rows = error_table(
            &BENCH_RESISTORS_OHM,
            &cfg,
            &ladder,
            &th,
            &board,
            Quantization::Adc,
        )
        .unwrap();
        for (m, r) in mean.iter_mut().zip(&rows) {
            *m += r.abs_error_ohm / draws as f64;
        }
    }
    for i in 0..mean.len() {
        for j in i + 1..mean.len() {
            assert!(2.0 * mean[j] >= mean[i], "{mean:?}");
        }
    }
    assert!(mean[11] > 10.0 * mean[0]);
}

#[test]
fn single_precision_pipeline() {
    let cfg = AfeConfig32::default();
    let ladder = GainLadder32::default_ladder();
    let trace = synthesize_eda(&SynthParams::<f32>::ramp(1.0, 6.0, 60.0, 8.0)).unwrap();
    let acq = run_acquisition(
        &trace,
        &cfg,
        &ladder,
        &Thresholds::default(),
        &EngineConfig::default(),
    )
    .unwrap();
    assert_eq!(acq.switches.len(), 1);
    let truth = truth_at_records(&trace, &acq);
    let got: Vec<f32> = acq.records.iter().map(|r| r.conductance_us).collect();
    assert!(pearson(&truth, &got).unwrap() > 0.999);
}
