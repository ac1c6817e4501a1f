//! Detector checks against closed-form false-alarm rates and simple physical
//! orderings.

use pcs_isac::detection::{
    calibrate_so_cfar, empirical_pfa, pd_curve, pd_curve_with_alpha, simulate_profile, CfarWindow,
    DetectionScenario,
};
use pcs_isac::pcs_heuristic::solve_heuristic;
use pcs_isac::{Constellation, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp1};

/// Binomial coefficient as a float.
fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Cell-averaging false-alarm rate with `n` exponential reference cells and
/// threshold `alpha * mean`.
fn pfa_ca(alpha: f64, n: usize) -> f64 {
    (1.0 + alpha / n as f64).powi(-(n as i32))
}

/// Smallest-of false-alarm rate with two sides of `n` cells each.
fn pfa_so(alpha: f64, n: usize) -> f64 {
    let t = 2.0 + alpha / n as f64;
    let tail: f64 = (0..n as u64).map(|k| choose(n as u64 - 1 + k, k) * t.powi(-(k as i32))).sum();
    2.0 * t.powi(-(n as i32)) * tail
}

/// Pooled rate over a profile of `len` cells, where cells near either edge
/// only have one complete side.
fn pooled_pfa(alpha: f64, len: usize, w: CfarWindow) -> f64 {
    let span = w.reference + w.guard;
    let two_sided = (0..len).filter(|k| *k >= span && k + span < len).count();
    let one_sided = len - two_sided;
    (one_sided as f64 * pfa_ca(alpha, w.reference) + two_sided as f64 * pfa_so(alpha, w.reference)) / len as f64
}

fn qam64() -> (Constellation, Distribution) {
    let c = Constellation::qam(64).unwrap();
    let d = Distribution::uniform(&c);
    (c, d)
}

fn psk64() -> (Constellation, Distribution) {
    let c = Constellation::psk(64).unwrap();
    let d = Distribution::uniform(&c);
    (c, d)
}

#[test]
fn closed_forms_reduce_to_one_at_zero_threshold() {
    assert!((pfa_so(0.0, 16) - 1.0).abs() < 1e-12);
    assert!((pfa_ca(0.0, 16) - 1.0).abs() < 1e-12);
}

#[test]
fn calibrated_threshold_matches_closed_form() {
    let (c, d) = qam64();
    let sc = DetectionScenario::new(&c, &d).unwrap();
    let alpha = calibrate_so_cfar(&sc, 2_000_000, 3).unwrap();
    let exact = pooled_pfa(alpha, sc.ofdm.l, sc.window);
    assert!((exact - sc.pfa).abs() <= 0.25 * sc.pfa, "alpha {alpha}: closed form {exact}");
}

#[test]
fn fresh_noise_false_alarms_stay_in_band() {
    let (c, d) = qam64();
    let sc = DetectionScenario::new(&c, &d).unwrap();
    let alpha = calibrate_so_cfar(&sc, 2_000_000, 3).unwrap();

    let lib = empirical_pfa(64, sc.window, alpha, 1_000_000, 991).unwrap();
    assert!((5e-5..=2e-4).contains(&lib), "{lib}");

    // Same test on exponential cells drawn here, with the statistic spelled out.
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (n, g) = (sc.window.reference, sc.window.guard);
    let mut hits = 0usize;
    let mut cells = 0usize;
    while cells < 1_000_000 {
        let p: Vec<f64> = (0..64).map(|_| Exp1.sample(&mut rng)).collect();
        for k in 0..64usize {
            let lead = (k >= n + g).then(|| p[k - n - g..k - g].iter().sum::<f64>() / n as f64);
            let lag = (k + n + g < 64).then(|| p[k + g + 1..k + g + 1 + n].iter().sum::<f64>() / n as f64);
            let z = match (lead, lag) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!(),
            };
            hits += usize::from(p[k] > alpha * z);
            cells += 1;
        }
    }
    let rate = hits as f64 / cells as f64;
    assert!((5e-5..=2e-4).contains(&rate), "{rate}");
}

/// Mean power at cells `1..=8` with a strong return at cell 0 and no target.
fn near_sidelobes(c: &Constellation, d: &Distribution) -> f64 {
    let mut sc = DetectionScenario::new(c, d).unwrap();
    sc.si_db = Some(30.0);
    sc.snr_db = f64::NEG_INFINITY;
    let trials = 2000;
    let mut acc = 0.0;
    for t in 0..trials {
        let p = simulate_profile(&sc, 10_000 + t).unwrap();
        acc += p.power[1..=8].iter().sum::<f64>() / 8.0;
    }
    acc / trials as f64
}

#[test]
fn qam_sidelobe_excess_matches_fourth_moment() {
    let (qc, qd) = qam64();
    let (pc, pd) = psk64();
    let q = near_sidelobes(&qc, &qd);
    let p = near_sidelobes(&pc, &pd);
    // The cross terms and noise are law-independent, so the gap is the
    // self-term: si * (1 - k/L)^2 (E|x|^4 - 1) / L at lag k.
    let m4 = 1.380952380952381;
    let expected: f64 = (1..=8).map(|k| 1000.0 * (1.0 - k as f64 / 64.0).powi(2) * (m4 - 1.0) / 64.0).sum::<f64>() / 8.0;
    assert!(((q - p) - expected).abs() <= 0.1 * expected, "qam {q} psk {p}, expected gap {expected}");
}

#[test]
fn self_interference_barely_moves_psk() {
    let (c, d) = psk64();
    let mut sc = DetectionScenario::new(&c, &d).unwrap();
    sc.n_mc = 3000;
    let alpha = calibrate_so_cfar(&sc, 2_000_000, 5).unwrap();
    let on = pd_curve_with_alpha(&sc, &[15.0], alpha, 6).unwrap()[0].pd;
    sc.si_db = None;
    let off = pd_curve_with_alpha(&sc, &[15.0], alpha, 6).unwrap()[0].pd;
    assert!((on - off).abs() <= 0.05, "on {on} off {off}");
}

#[test]
fn detection_rises_with_snr() {
    let (c, d) = qam64();
    let mut sc = DetectionScenario::new(&c, &d).unwrap();
    sc.n_mc = 2000;
    let snr: Vec<f64> = (0..=5).map(|i| 6.0 + 2.0 * i as f64).collect();
    let pts = pd_curve(&sc, &snr, 7).unwrap();
    for w in pts.windows(2) {
        assert!(w[1].ci_hi >= w[0].ci_lo, "{:?}", w);
    }
    assert!(pts.last().unwrap().pd > pts[0].pd + 0.3);
}

#[test]
fn seeded_runs_repeat_exactly() {
    let (c, d) = qam64();
    let mut sc = DetectionScenario::new(&c, &d).unwrap();
    sc.n_mc = 500;
    let a = pd_curve(&sc, &[10.0, 12.0], 8).unwrap();
    let b = pd_curve(&sc, &[10.0, 12.0], 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(simulate_profile(&sc, 3).unwrap(), simulate_profile(&sc, 3).unwrap());
    assert_ne!(simulate_profile(&sc, 3).unwrap().power, simulate_profile(&sc, 4).unwrap().power);
}

#[test]
fn lower_fourth_moment_detects_more() {
    let c = Constellation::qam(64).unwrap();
    let mut sc = DetectionScenario::new(&c, &Distribution::uniform(&c)).unwrap();
    sc.n_mc = 3000;
    let alpha = calibrate_so_cfar(&sc, 2_000_000, 9).unwrap();
    let pd: Vec<_> = [1.0363, 1.2, 1.3805]
        .iter()
        .map(|&c0| {
            sc.distribution = solve_heuristic(&c, c0).unwrap().distribution;
            pd_curve_with_alpha(&sc, &[12.0], alpha, 10).unwrap()[0]
        })
        .collect();
    for w in pd.windows(2) {
        assert!(w[0].ci_hi >= w[1].ci_lo, "{pd:?}");
    }
    assert!(pd[0].ci_lo > pd[2].ci_hi, "{pd:?}");
}
