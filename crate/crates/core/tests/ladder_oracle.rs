//! Independent re-derivation of the shipped gain ladder and the fitted fixed
//! divider. Nothing here calls the crate's transfer or controller code; the
//! search below is a from-scratch model that is only compared against the
//! shipped configuration at the end.

use edasim::afe::{AfeConfig, FITTED_R_REF_OHM};
use edasim::GainLadder64;

const E24: [f64; 24] = [
    1.0, 1.1, 1.2, 1.3, 1.5, 1.6, 1.8, 2.0, 2.2, 2.4, 2.7, 3.0, 3.3, 3.6, 3.9, 4.3, 4.7, 5.1, 5.6,
    6.2, 6.8, 7.5, 8.2, 9.1,
];
const N: f64 = 4096.0;
const SAT: u32 = 4094;
const LOW: u32 = 1024;
const V: f64 = 1.8;

type Setting = (f64, f64); // (r1, K)

fn vout(r: f64, s: Setting) -> f64 {
    V * s.0 / (r + s.0) * s.1
}

fn code(v: f64) -> u32 {
    (v / V * N).floor().clamp(0.0, N - 1.0) as u32
}

fn res(r: f64, s: Setting) -> f64 {
    V / N * (r + s.0).powi(2) / (V * s.0 * s.1)
}

fn ctrl(i: usize, c: u32, n: usize) -> usize {
    if c >= SAT && i + 1 < n {
        i + 1
    } else if c <= LOW && i > 0 {
        i - 1
    } else {
        i
    }
}

fn autorange(r: f64, lad: &[Setting], start: usize) -> Option<usize> {
    let mut i = start;
    for _ in 0..lad.len() + 2 {
        let j = ctrl(i, code(vout(r, lad[i])), lad.len());
        if j == i {
            return Some(i);
        }
        i = j;
    }
    None
}

fn ramp_transitions(g0: f64, g1: f64, lad: &[Setting]) -> usize {
    let n = 480;
    let mut i = autorange(1e6 / g0, lad, lad.len() - 1).unwrap();
    let mut count = 0;
    for k in 0..n {
        let g = g0 + (g1 - g0) * k as f64 / (n - 1) as f64;
        let j = ctrl(i, code(vout(1e6 / g, lad[i])), lad.len());
        if j != i {
            count += 1;
        }
        i = j;
    }
    count
}

fn grid() -> Vec<f64> {
    (0..512)
        .map(|i| 25e3 * (10e6f64 / 25e3).powf(i as f64 / 511.0))
        .collect()
}

/// (worst resolution, resolution at 25 kΩ, settings) or `None` if any
/// constraint fails.
fn evaluate(lad: &[Setting], grid: &[f64]) -> Option<(f64, f64, usize)> {
    for &r in grid {
        let vs: Vec<f64> = lad.iter().map(|&s| vout(r, s)).collect();
        if !vs.iter().any(|&v| (0.05 * V..=0.98 * V).contains(&v)) {
            return None;
        }
        if vs
            .windows(2)
            .any(|w| !(w[0] / w[1] > 1.0 && w[0] / w[1] < 3.9))
        {
            return None;
        }
    }
    let mut best = Vec::with_capacity(grid.len());
    for &r in grid {
        best.push(res(r, lad[autorange(r, lad, 0)?]));
    }
    if best[0] > 31.0 * 1.15 || best[best.len() - 1] > 4600.0 * 1.15 {
        return None;
    }
    let rref = 80.4e3;
    for (&r, &b) in grid.iter().zip(&best) {
        if r > 300e3 && b > (r + rref).powi(2) / (N * rref) {
            return None;
        }
    }
    if ramp_transitions(1.0, 6.0, lad) != 1 || ramp_transitions(6.0, 1.0, lad) != 1 {
        return None;
    }
    Some((best.iter().cloned().fold(0.0, f64::max), best[0], lad.len()))
}

#[test]
fn shipped_ladder_is_top_ranked_candidate() {
    let mut vals: Vec<f64> = (4..8)
        .flat_map(|d| E24.iter().map(move |m| (m * 10f64.powi(d)).round()))
        .filter(|v| (25e3..=10e6).contains(v))
        .collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let ks: Vec<f64> = (0..8).map(|j| 1.8f64.powi(j)).collect();
    let g = grid();

    let mut ranked: Vec<((f64, f64, usize), Vec<Setting>)> = Vec::new();
    for &a in &vals {
        for &b in vals.iter().filter(|&&b| b > a) {
            for p in 0..8 {
                for q in 0..8 {
                    // upper block on r1 = b, lower block on r1 = a
                    let mut lad: Vec<Setting> = (q..8).rev().map(|j| (b, ks[j])).collect();
                    lad.extend((0..=p).rev().map(|j| (a, ks[j])));
                    if let Some(score) = evaluate(&lad, &g) {
                        ranked.push((score, lad));
                    }
                }
            }
        }
    }
    ranked.sort_by(|x, y| {
        x.0 .0
            .total_cmp(&y.0 .0)
            .then(x.0 .1.total_cmp(&y.0 .1))
            .then(x.0 .2.cmp(&y.0 .2))
    });
    let (score, winner) = ranked.first().expect("at least one feasible ladder");

    let shipped = GainLadder64::default_ladder();
    assert_eq!(shipped.len(), winner.len());
    for (s, w) in shipped.settings.iter().zip(winner) {
        assert_eq!(s.r1_ohm, w.0);
        assert!((s.amp_factor - w.1).abs() < 1e-9 * w.1, "{s:?} vs {w:?}");
        assert!((s.r2_ohm - (w.1 - 1.0) * 100e3).abs() < 1e-6 * w.1 * 100e3);
    }
    // frozen from this search
    assert!((score.0 - 3705.46).abs() < 0.01, "{score:?}");
    assert!((score.1 - 27.650).abs() < 0.001, "{score:?}");
}

#[test]
fn fixed_divider_hits_both_endpoint_targets() {
    // resolution at the endpoints is V_LSB·(R + x)²/(V·x); their ratio only
    // depends on x, so solve ((10M + x)/(25k + x))² = 311k/34 by bisection
    let target = 311_000.0 / 34.0;
    let f = |x: f64| ((10e6 + x) / (25e3 + x)).powi(2) - target;
    let (mut lo, mut hi) = (1e3, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    assert!((x - 80_399.12).abs() < 0.01, "{x}");
    assert_eq!(FITTED_R_REF_OHM, x.round());

    let cfg = AfeConfig::<f64>::default();
    assert_eq!(cfg.fixed_divider.r_ref_ohm, FITTED_R_REF_OHM);
    let r = |rs: f64| V / N * (rs + x).powi(2) / (V * x);
    assert!((r(25e3) / 34.0 - 1.0).abs() < 0.01);
    assert!((r(10e6) / 311e3 - 1.0).abs() < 0.01);
}
