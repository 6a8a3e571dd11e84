//! Synthetic skin-conductance traces.
//!
//! A trace is a tonic level with linear drift, plus skin-conductance responses
//! (SCRs) shaped by a peak-normalized biexponential kernel, plus optional
//! seeded Gaussian noise. Conductance is in microsiemens throughout.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{fmt_sig, Scalar};

/// Lower end of the tonic skin-conductance range, µS.
pub const MIN_CONDUCTANCE_US: f64 = 0.01;
/// Upper end of the tonic skin-conductance range, µS.
pub const MAX_CONDUCTANCE_US: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("duration must be positive, got {0} s")]
    NonPositiveDuration(f64),
    #[error("sample rate must be positive, got {0} Hz")]
    NonPositiveRate(f64),
    #[error(
        "kernel time constants must satisfy decay > rise > 0 (rise {rise} s, decay {decay} s)"
    )]
    BadKernel { rise: f64, decay: f64 },
    #[error("noise sigma must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error("SCR event {index} invalid: onset must be >= 0 and amplitude > 0")]
    BadEvent { index: usize },
    #[error("sample {index} is {value} µS; conductance must stay positive and finite")]
    NonPositiveSample { index: usize, value: f64 },
    #[error("conductance must be positive, got {0}")]
    NonPositiveConductance(f64),
    #[error("resistance must be positive, got {0}")]
    NonPositiveResistance(f64),
    #[error("trace csv: {0}")]
    Csv(String),
}

/// Uniformly sampled skin conductance, µS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaTrace<T> {
    pub sample_rate_hz: T,
    pub samples: Vec<T>,
}

impl<T: Scalar> EdaTrace<T> {
    pub fn new(sample_rate_hz: T, samples: Vec<T>) -> Result<Self, SignalError> {
        if !(sample_rate_hz > T::zero()) || !sample_rate_hz.is_finite() {
            return Err(SignalError::NonPositiveRate(sample_rate_hz.to_f64_lossy()));
        }
        for (index, &g) in samples.iter().enumerate() {
            if !(g > T::zero()) || !g.is_finite() {
                return Err(SignalError::NonPositiveSample {
                    index,
                    value: g.to_f64_lossy(),
                });
            }
        }
        Ok(Self {
            sample_rate_hz,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> T {
        T::from_usize(self.samples.len()).unwrap() / self.sample_rate_hz
    }

    /// Time of sample `i`, seconds.
    pub fn time_of(&self, i: usize) -> T {
        T::from_usize(i).unwrap() / self.sample_rate_hz
    }

    /// Zero-order-hold value at `t_ms`: the latest sample at or before `t_ms`.
    pub fn hold_at_ms(&self, t_ms: u64) -> Option<T> {
        let pos = T::from_u64(t_ms).unwrap() * self.sample_rate_hz / T::lit(1000.0);
        // guard against 0.99999.. from the division
        let idx = (pos + T::lit(1e-9)).floor().to_usize()?;
        self.samples.get(idx).copied()
    }

    /// Write `t_s,conductance_us` CSV with 9 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SignalError> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| SignalError::Csv(e.to_string());
        wr.write_record(["t_s", "conductance_us"]).map_err(err)?;
        for (i, g) in self.samples.iter().enumerate() {
            wr.write_record([
                fmt_sig(self.time_of(i).to_f64_lossy(), 9),
                fmt_sig(g.to_f64_lossy(), 9),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| SignalError::Csv(e.to_string()))
    }

    /// Read a `t_s,conductance_us` CSV. The sample rate is recovered from the
    /// time column, which must be uniformly spaced.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, SignalError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd
            .headers()
            .map_err(|e| SignalError::Csv(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["t_s", "conductance_us"] {
            return Err(SignalError::Csv(format!(
                "expected header t_s,conductance_us, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| SignalError::Csv(e.to_string()))?;
            let parse = |k: usize| -> Result<f64, SignalError> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| SignalError::Csv(format!("row {}: bad column {k}", line + 1)))
            };
            times.push(parse(0)?);
            samples.push(T::lit(parse(1)?));
        }
        if times.len() < 2 {
            return Err(SignalError::Csv(
                "need at least two rows to infer the rate".into(),
            ));
        }
        let span = times[times.len() - 1] - times[0];
        let dt = span / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(SignalError::Csv("time column must increase".into()));
        }
        for (k, pair) in times.windows(2).enumerate() {
            if ((pair[1] - pair[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(SignalError::Csv(format!(
                    "row {}: non-uniform spacing",
                    k + 2
                )));
            }
        }
        Self::new(T::lit(1.0 / dt), samples)
    }
}

/// One skin-conductance response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrEvent<T> {
    pub onset_s: T,
    pub amplitude_us: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams<T> {
    pub duration_s: T,
    pub sample_rate_hz: T,
    pub tonic_level_us: T,
    pub tonic_drift_us_per_s: T,
    pub scr_events: Vec<ScrEvent<T>>,
    pub kernel_rise_s: T,
    pub kernel_decay_s: T,
    pub noise_sigma_us: T,
    pub rng_seed: u64,
}

impl<T: Scalar> Default for SynthParams<T> {
    fn default() -> Self {
        Self {
            duration_s: T::lit(60.0),
            sample_rate_hz: T::lit(8.0),
            tonic_level_us: T::lit(2.0),
            tonic_drift_us_per_s: T::zero(),
            scr_events: Vec::new(),
            kernel_rise_s: T::lit(0.75),
            kernel_decay_s: T::lit(2.0),
            noise_sigma_us: T::zero(),
            rng_seed: 0x45_44_41,
        }
    }
}

impl<T: Scalar> SynthParams<T> {
    /// Linear ramp from `from_us` at the first sample to `to_us` at the last.
    pub fn ramp(from_us: T, to_us: T, duration_s: T, sample_rate_hz: T) -> Self {
        let n = (duration_s * sample_rate_hz).round();
        let last_t = (n - T::one()) / sample_rate_hz;
        Self {
            duration_s,
            sample_rate_hz,
            tonic_level_us: from_us,
            tonic_drift_us_per_s: (to_us - from_us) / last_t,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.duration_s > T::zero()) {
            return Err(SignalError::NonPositiveDuration(
                self.duration_s.to_f64_lossy(),
            ));
        }
        if !(self.sample_rate_hz > T::zero()) {
            return Err(SignalError::NonPositiveRate(
                self.sample_rate_hz.to_f64_lossy(),
            ));
        }
        if !(self.kernel_rise_s > T::zero() && self.kernel_decay_s > self.kernel_rise_s) {
            return Err(SignalError::BadKernel {
                rise: self.kernel_rise_s.to_f64_lossy(),
                decay: self.kernel_decay_s.to_f64_lossy(),
            });
        }
        if !(self.noise_sigma_us >= T::zero()) {
            return Err(SignalError::NegativeNoise(
                self.noise_sigma_us.to_f64_lossy(),
            ));
        }
        for (index, ev) in self.scr_events.iter().enumerate() {
            if !(ev.onset_s >= T::zero() && ev.amplitude_us > T::zero()) {
                return Err(SignalError::BadEvent { index });
            }
        }
        Ok(())
    }
}

/// Peak-normalized biexponential SCR kernel `c·(e^(-t/τd) − e^(-t/τr))`,
/// zero for `t < 0`, with `c` chosen so the maximum is exactly 1.
#[derive(Debug, Clone, Copy)]
pub struct ScrKernel<T> {
    rise_s: T,
    decay_s: T,
    norm: T,
}

impl<T: Scalar> ScrKernel<T> {
    pub fn new(rise_s: T, decay_s: T) -> Result<Self, SignalError> {
        if !(rise_s > T::zero() && decay_s > rise_s) {
            return Err(SignalError::BadKernel {
                rise: rise_s.to_f64_lossy(),
                decay: decay_s.to_f64_lossy(),
            });
        }
        let t_peak = Self::peak_time_of(rise_s, decay_s);
        let raw = (-t_peak / decay_s).exp() - (-t_peak / rise_s).exp();
        Ok(Self {
            rise_s,
            decay_s,
            norm: T::one() / raw,
        })
    }

    fn peak_time_of(rise: T, decay: T) -> T {
        (decay / rise).ln() * decay * rise / (decay - rise)
    }

    /// Time of the kernel maximum after onset.
    pub fn peak_time(&self) -> T {
        Self::peak_time_of(self.rise_s, self.decay_s)
    }

    pub fn eval(&self, t: T) -> T {
        if t < T::zero() {
            return T::zero();
        }
        self.norm * ((-t / self.decay_s).exp() - (-t / self.rise_s).exp())
    }
}

/// Render `params` into a trace. Deterministic for a fixed seed; noise is
/// skipped entirely (no RNG draws) when `noise_sigma_us == 0`.
pub fn synthesize_eda<T: Scalar>(params: &SynthParams<T>) -> Result<EdaTrace<T>, SignalError> {
    params.validate()?;
    let kernel = ScrKernel::new(params.kernel_rise_s, params.kernel_decay_s)?;
    let n = (params.duration_s * params.sample_rate_hz)
        .round()
        .to_usize()
        .unwrap_or(0);
    if n == 0 {
        return Err(SignalError::NonPositiveDuration(
            params.duration_s.to_f64_lossy(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let noisy = params.noise_sigma_us > T::zero();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = T::from_usize(i).unwrap() / params.sample_rate_hz;
        let mut g = params.tonic_level_us + params.tonic_drift_us_per_s * t;
        for ev in &params.scr_events {
            g = g + ev.amplitude_us * kernel.eval(t - ev.onset_s);
        }
        if noisy {
            let z: f64 = StandardNormal.sample(&mut rng);
            g = g + params.noise_sigma_us * T::lit(z);
        }
        samples.push(g);
    }
    EdaTrace::new(params.sample_rate_hz, samples)
}

/// Conductance (µS) to resistance (Ω).
pub fn conductance_to_resistance<T: Scalar>(g_us: T) -> Result<T, SignalError> {
    if !(g_us > T::zero()) {
        return Err(SignalError::NonPositiveConductance(g_us.to_f64_lossy()));
    }
    Ok(T::lit(1e6) / g_us)
}

/// Resistance (Ω) to conductance (µS).
pub fn resistance_to_conductance<T: Scalar>(r_ohm: T) -> Result<T, SignalError> {
    if !(r_ohm > T::zero()) {
        return Err(SignalError::NonPositiveResistance(r_ohm.to_f64_lossy()));
    }
    Ok(T::lit(1e6) / r_ohm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(tonic: f64) -> SynthParams<f64> {
        SynthParams {
            duration_s: 10.0,
            tonic_level_us: tonic,
            ..Default::default()
        }
    }

    #[test]
    fn flat_trace_is_exact() {
        let tr = synthesize_eda(&flat(2.0)).unwrap();
        assert_eq!(tr.len(), 80);
        assert!(tr.samples.iter().all(|&g| g == 2.0));
    }

    #[test]
    fn ramp_one_to_six() {
        let tr = synthesize_eda(&SynthParams::<f64>::ramp(1.0, 6.0, 60.0, 8.0)).unwrap();
        assert_eq!(tr.len(), 480);
        assert_eq!(tr.samples[0], 1.0);
        assert!((tr.samples[479] - 6.0).abs() < 1e-12);
        assert!(tr.samples.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn single_scr_peak_height() {
        // Analytic oracle: the peak-normalized kernel reaches exactly 1 at
        // t* = ln(τd/τr)·τdτr/(τd−τr); 0.75/2.0 gives t* ≈ 1.1770 s.
        let (tr_s, td_s) = (0.75f64, 2.0f64);
        let t_star = (td_s / tr_s).ln() * td_s * tr_s / (td_s - tr_s);
        assert!((t_star - 1.176_995_1).abs() < 1e-6);
        let p = SynthParams {
            duration_s: 20.0,
            tonic_level_us: 2.0,
            scr_events: vec![ScrEvent {
                onset_s: 5.0,
                amplitude_us: 1.0,
            }],
            ..Default::default()
        };
        let tr = synthesize_eda(&p).unwrap();
        let max = tr.samples.iter().cloned().fold(f64::MIN, f64::max);
        // sample grid is 0.125 s; the kernel's curvature near its peak bounds
        // the miss by well under 1%
        assert!(max <= 3.0 + 1e-12);
        assert!(max > 3.0 - 0.01, "max {max}");

        let k = ScrKernel::new(tr_s, td_s).unwrap();
        assert!((k.eval(t_star) - 1.0).abs() < 1e-12);
        assert!(k.eval(t_star - 0.01) < 1.0 && k.eval(t_star + 0.01) < 1.0);
    }

    #[test]
    fn reciprocal_examples() {
        assert!((conductance_to_resistance(40.0f64).unwrap() - 25_000.0).abs() < 1e-9);
        assert!((conductance_to_resistance(0.1f64).unwrap() - 10e6).abs() < 1e-6);
        assert_eq!(conductance_to_resistance(1.0).unwrap(), 1e6);
        assert!(conductance_to_resistance(0.0).is_err());
        assert!(conductance_to_resistance(-1.0).is_err());
        assert!(resistance_to_conductance(0.0).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = flat(2.0);
        p.duration_s = 0.0;
        assert!(matches!(
            synthesize_eda(&p),
            Err(SignalError::NonPositiveDuration(_))
        ));
        let mut p = flat(2.0);
        p.sample_rate_hz = -8.0;
        assert!(matches!(
            synthesize_eda(&p),
            Err(SignalError::NonPositiveRate(_))
        ));
        let mut p = flat(2.0);
        p.kernel_rise_s = 3.0;
        assert!(matches!(
            synthesize_eda(&p),
            Err(SignalError::BadKernel { .. })
        ));
        let mut p = flat(2.0);
        p.tonic_drift_us_per_s = -1.0;
        assert!(matches!(
            synthesize_eda(&p),
            Err(SignalError::NonPositiveSample { .. })
        ));
    }

    #[test]
    fn noise_is_seeded() {
        let mut p = flat(5.0);
        p.noise_sigma_us = 0.05;
        let a = synthesize_eda(&p).unwrap();
        let b = synthesize_eda(&p).unwrap();
        assert_eq!(a, b);
        p.rng_seed += 1;
        let c = synthesize_eda(&p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_round_trip() {
        let p = SynthParams {
            scr_events: vec![ScrEvent {
                onset_s: 1.0,
                amplitude_us: 0.7,
            }],
            ..flat(3.0)
        };
        let tr = synthesize_eda(&p).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,conductance_us\n0,3\n0.125,"));
        let back = EdaTrace::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.sample_rate_hz, 8.0);
        for (a, b) in tr.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1e-8 * a);
        }
    }

    #[test]
    fn hold_at_cycle_start() {
        let tr = EdaTrace::new(16.0, (1..=32).map(f64::from).collect()).unwrap();
        assert_eq!(tr.hold_at_ms(0), Some(1.0));
        assert_eq!(tr.hold_at_ms(125), Some(3.0));
        assert_eq!(tr.hold_at_ms(1999), Some(32.0));
        assert_eq!(tr.hold_at_ms(2000), None);
    }

    #[test]
    fn f32_synthesis() {
        let p = SynthParams::<f32> {
            duration_s: 10.0,
            ..Default::default()
        };
        let tr = synthesize_eda(&p).unwrap();
        assert_eq!(tr.len(), 80);
        assert!(tr.samples.iter().all(|&g| g == 2.0));
    }

    fn events() -> impl Strategy<Value = Vec<ScrEvent<f64>>> {
        prop::collection::vec(
            (0.0f64..30.0, 0.01f64..5.0).prop_map(|(onset_s, amplitude_us)| ScrEvent {
                onset_s,
                amplitude_us,
            }),
            0..6,
        )
    }

    proptest! {
        #[test]
        fn round_trip_g_r_g(g in 0.001f64..1000.0) {
            let r = conductance_to_resistance(g).unwrap();
            let back = resistance_to_conductance(r).unwrap();
            prop_assert!(((back - g) / g).abs() <= 1e-12);
        }

        #[test]
        fn superposition(tonic in 0.1f64..20.0, drift in 0.0f64..0.1, evs in events()) {
            let base = SynthParams { duration_s: 30.0, tonic_level_us: tonic,
                tonic_drift_us_per_s: drift, ..Default::default() };
            let with = SynthParams { scr_events: evs.clone(), ..base.clone() };
            let a = synthesize_eda(&base).unwrap();
            let b = synthesize_eda(&with).unwrap();
            let k = ScrKernel::new(0.75, 2.0).unwrap();
            for i in 0..a.len() {
                let t = a.time_of(i);
                let scr: f64 = evs.iter().map(|e| e.amplitude_us * k.eval(t - e.onset_s)).sum();
                prop_assert!((b.samples[i] - a.samples[i] - scr).abs() < 1e-9);
            }
        }

        #[test]
        fn within_tonic_bounds(tonic in 0.01f64..30.0, evs in events()) {
            // keep the peak-summed phasic load inside the 40 µS ceiling
            let total: f64 = evs.iter().map(|e| e.amplitude_us).sum();
            prop_assume!(tonic + total <= MAX_CONDUCTANCE_US);
            let p = SynthParams { duration_s: 30.0, tonic_level_us: tonic,
                scr_events: evs, ..Default::default() };
            let tr = synthesize_eda(&p).unwrap();
            prop_assert!(tr.samples.iter().all(|&g| g > 0.0 && g <= MAX_CONDUCTANCE_US));
        }
    }
}
