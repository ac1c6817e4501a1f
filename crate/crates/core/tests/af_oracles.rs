//! Ambiguity-function values checked against direct numerical integration of
//! the time-domain waveform.

use std::f64::consts::PI;

use num_complex::Complex64;
use pcs_isac::ofdm_af::{af_sequence, af_single, sample_symbols, OfdmConfig};
use pcs_isac::{Constellation, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One OFDM symbol `sum_l X_l exp(j 2 pi l df t)` on `[0, T)`, zero elsewhere.
fn symbol(x: &[Complex64], df: f64, t_p: f64, t: f64) -> Complex64 {
    if !(0.0..t_p).contains(&t) {
        return Complex64::new(0.0, 0.0);
    }
    x.iter()
        .enumerate()
        .map(|(l, v)| v * Complex64::from_polar(1.0, 2.0 * PI * l as f64 * df * t))
        .sum()
}

fn train(rows: &[&[Complex64]], df: f64, t_p: f64, t: f64) -> Complex64 {
    let n = (t / t_p).floor();
    if n < 0.0 || n as usize >= rows.len() {
        return Complex64::new(0.0, 0.0);
    }
    symbol(rows[n as usize], df, t_p, t - n * t_p)
}

/// Composite Simpson on `[a, b]` with `panels` (even) subintervals.
fn simpson(f: impl Fn(f64) -> Complex64, a: f64, b: f64, panels: usize) -> Complex64 {
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// `int s(t) s*(t - tau) exp(-j 2 pi nu t) dt`, integrated piecewise between
/// the symbol boundaries of both copies so the integrand is smooth on each piece.
fn quadrature(rows: &[&[Complex64]], cfg: &OfdmConfig, tau: f64, nu: f64) -> Complex64 {
    let len = rows.len() as f64 * cfg.t_p;
    let mut cuts: Vec<f64> = (0..=rows.len()).flat_map(|n| [n as f64 * cfg.t_p, n as f64 * cfg.t_p + tau]).collect();
    cuts.retain(|c| (0.0..=len).contains(c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let f = |t: f64| {
        train(rows, cfg.delta_f, cfg.t_p, t) * train(rows, cfg.delta_f, cfg.t_p, t - tau).conj()
            * Complex64::from_polar(1.0, -2.0 * PI * nu * t)
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 1e-14 {
            continue;
        }
        // Nudge inwards so the half-open symbol support is sampled from inside.
        let eps = 1e-13;
        acc += simpson(f, a + eps, b - eps, 2000);
    }
    acc
}

#[test]
fn single_symbol_matches_quadrature() {
    let c = Constellation::qam(16).unwrap();
    let cfg = OfdmConfig::new(8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let m = sample_symbols(&c, &Distribution::uniform(&c), &cfg, 1000 + trial).unwrap();
        let tau = rng.random_range(-0.999..0.999);
        let nu = rng.random_range(-4.0..4.0);
        let fast = af_single(m.row(0), &cfg, tau, nu).unwrap();
        let slow = quadrature(&[m.row(0)], &cfg, tau, nu);
        assert!((fast - slow).norm() < 1e-7 * (1.0 + slow.norm()), "tau {tau} nu {nu}: {fast} vs {slow}");
    }
}

#[test]
fn sequence_matches_quadrature() {
    let c = Constellation::psk(8).unwrap();
    let cfg = OfdmConfig::new(6, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..20 {
        let m = sample_symbols(&c, &Distribution::uniform(&c), &cfg, 2000 + trial).unwrap();
        let rows: Vec<&[Complex64]> = (0..cfg.n).map(|n| m.row(n)).collect();
        let tau = rng.random_range(-2.9..2.9);
        let nu = rng.random_range(-1.5..1.5);
        let fast = af_sequence(&m, &cfg, tau, nu).unwrap();
        let slow = quadrature(&rows, &cfg, tau, nu);
        assert!((fast - slow).norm() < 1e-7 * (1.0 + slow.norm()), "tau {tau} nu {nu}: {fast} vs {slow}");
    }
}

#[test]
fn non_unit_spacing_matches_quadrature() {
    let c = Constellation::qam(4).unwrap();
    let cfg = OfdmConfig::with_spacing(5, 1, 2.0, 0.5).unwrap();
    let m = sample_symbols(&c, &Distribution::uniform(&c), &cfg, 3).unwrap();
    for (tau, nu) in [(0.1, 0.3), (-0.2, 1.7), (0.37, -2.2)] {
        let fast = af_single(m.row(0), &cfg, tau, nu).unwrap();
        let slow = quadrature(&[m.row(0)], &cfg, tau, nu);
        assert!((fast - slow).norm() < 1e-7 * (1.0 + slow.norm()));
    }
}
