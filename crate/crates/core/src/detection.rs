//! Weak-target detection next to a strong self-interferer with a
//! smallest-of CFAR detector on the zero-Doppler range profile.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::constellation::{Constellation, Distribution};
use crate::error::{Error, Result};
use crate::numfmt::csv_row;
use crate::ofdm_af::{OfdmConfig, SymbolSampler, ZeroDopplerKernel};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CfarWindow {
    pub reference: usize,
    pub guard: usize,
}

impl Default for CfarWindow {
    fn default() -> Self {
        CfarWindow { reference: 16, guard: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct DetectionScenario {
    pub target_cell: usize,
    /// Post-matched-filter target power over noise power; `-inf` removes the target.
    pub snr_db: f64,
    pub si_cell: usize,
    /// Self-interference power over noise power; `None` removes it.
    pub si_db: Option<f64>,
    pub pfa: f64,
    pub ofdm: OfdmConfig,
    pub constellation: Constellation,
    pub distribution: Distribution,
    pub n_mc: usize,
    pub window: CfarWindow,
}

impl DetectionScenario {
    pub fn new(c: &Constellation, d: &Distribution) -> Result<Self> {
        Ok(DetectionScenario {
            target_cell: 8,
            snr_db: 10.0,
            si_cell: 0,
            si_db: Some(10.0),
            pfa: 1e-4,
            ofdm: OfdmConfig::new(64, 1)?,
            constellation: c.clone(),
            distribution: d.clone(),
            n_mc: 5000,
            window: CfarWindow::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        let l = self.ofdm.l;
        if self.target_cell == self.si_cell {
            return Err(Error::InvalidArgument("target and self-interference share a cell".into()));
        }
        if self.target_cell >= l || self.si_cell >= l {
            return Err(Error::InvalidArgument(format!("range cells must be below {l}")));
        }
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::InvalidArgument(format!("false-alarm rate {} outside (0, 1)", self.pfa)));
        }
        if self.snr_db.is_nan() || self.si_db.is_some_and(|v| !v.is_finite()) {
            return Err(Error::NonFinite("power ratio"));
        }
        if self.distribution.len() != self.constellation.order() {
            return Err(Error::DimensionMismatch { expected: self.constellation.order(), got: self.distribution.len() });
        }
        if self.n_mc == 0 {
            return Err(Error::InvalidArgument("n_mc must be positive".into()));
        }
        check_window(l, self.window)
    }
}

/// Every cell must have at least one complete reference side.
fn check_window(len: usize, w: CfarWindow) -> Result<()> {
    if w.reference == 0 || len < 2 * (w.reference + w.guard) {
        return Err(Error::InvalidArgument(format!(
            "window of {} reference and {} guard cells per side does not fit {len} cells",
            w.reference, w.guard
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfile {
    pub power: Vec<f64>,
    pub seed: u64,
}

fn cn(rng: &mut seeds::Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * FRAC_1_SQRT_2
}

fn amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// One trial split into its parts, so the target amplitude can be swept.
struct TrialParts {
    /// Self-interference plus noise per cell.
    base: Vec<Complex64>,
    /// Unit-amplitude target echo per cell.
    target: Vec<Complex64>,
}

struct Simulator {
    kernel: ZeroDopplerKernel,
    sampler: SymbolSampler,
    scale: f64,
}

impl Simulator {
    fn new(sc: &DetectionScenario) -> Result<Self> {
        sc.validate()?;
        Ok(Simulator {
            kernel: ZeroDopplerKernel::new(&sc.ofdm)?,
            sampler: SymbolSampler::new(&sc.constellation, &sc.distribution)?,
            scale: 1.0 / (sc.ofdm.l as f64 * sc.ofdm.t_p),
        })
    }

    fn parts(&self, sc: &DetectionScenario, seed: u64) -> Result<TrialParts> {
        let l = sc.ofdm.l;
        let mut rng = seeds::rng(seed);
        let mut row = vec![Complex64::new(0.0, 0.0); l];
        self.sampler.fill(&mut rng, &mut row);
        let si_phase = Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>());
        let target_phase = Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>());
        let af = self.kernel.evaluate(&row)?;
        // af[i] holds the lag i - (L - 1) in cells.
        let at = |lag: isize| af[(lag + l as isize - 1) as usize] * self.scale;
        let si_amp = sc.si_db.map_or(0.0, amplitude);
        let mut base = Vec::with_capacity(l);
        let mut target = Vec::with_capacity(l);
        for k in 0..l as isize {
            let si = at(k - sc.si_cell as isize) * si_phase * si_amp;
            base.push(si + cn(&mut rng));
            target.push(at(k - sc.target_cell as isize) * target_phase);
        }
        Ok(TrialParts { base, target })
    }
}

fn powers(parts: &TrialParts, snr_db: f64) -> Vec<f64> {
    let a = if snr_db == f64::NEG_INFINITY { 0.0 } else { amplitude(snr_db) };
    parts.base.iter().zip(&parts.target).map(|(b, t)| (b + t * a).norm_sqr()).collect()
}

/// Matched-filter power per delay cell for one OFDM symbol.
pub fn simulate_profile(sc: &DetectionScenario, seed: u64) -> Result<RangeProfile> {
    let sim = Simulator::new(sc)?;
    let parts = sim.parts(sc, seed)?;
    Ok(RangeProfile { power: powers(&parts, sc.snr_db), seed })
}

/// Smallest-of reference level for cell `k`. A side cut short by the profile
/// edge is ignored.
pub fn so_cfar_statistic(profile: &[f64], k: usize, w: CfarWindow) -> Result<f64> {
    check_window(profile.len(), w)?;
    let span = w.reference + w.guard;
    let mean = |r: std::ops::Range<usize>| profile[r].iter().sum::<f64>() / w.reference as f64;
    let lead = (k >= span).then(|| mean(k - span..k - w.guard));
    let lag = (k + span < profile.len()).then(|| mean(k + w.guard + 1..k + span + 1));
    match (lead, lag) {
        (Some(a), Some(b)) => Ok(a.min(b)),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => unreachable!("checked by check_window"),
    }
}

pub fn so_cfar_detect(profile: &[f64], alpha: f64, w: CfarWindow) -> Result<Vec<bool>> {
    (0..profile.len())
        .map(|k| Ok(profile[k] > alpha * so_cfar_statistic(profile, k, w)?))
        .collect()
}

fn noise_profile(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed);
    (0..len).map(|_| cn(&mut rng).norm_sqr()).collect()
}

/// Empirical `cell / statistic` ratios on noise-only profiles.
fn noise_ratios(len: usize, w: CfarWindow, profiles: usize, seed: u64) -> Result<Vec<f64>> {
    let per: Vec<Result<Vec<f64>>> = (0..profiles)
        .into_par_iter()
        .map(|i| {
            let p = noise_profile(len, seeds::trial(seed, i as u64));
            (0..len).map(|k| Ok(p[k] / so_cfar_statistic(&p, k, w)?)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(profiles * len);
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// Threshold factor whose false-alarm rate on noise-only profiles equals
/// `sc.pfa`, pooled over all cells. Needs `n_cal >= 10 / pfa` cell tests.
pub fn calibrate_so_cfar(sc: &DetectionScenario, n_cal: usize, seed: u64) -> Result<f64> {
    sc.validate()?;
    let needed = (10.0 / sc.pfa).ceil() as usize;
    if n_cal < needed {
        return Err(Error::InvalidArgument(format!("calibration needs at least {needed} cell tests, got {n_cal}")));
    }
    let len = sc.ofdm.l;
    let mut ratios = noise_ratios(len, sc.window, n_cal.div_ceil(len), seeds::derive(seed, "cfar-calibration"))?;
    let n = ratios.len();
    let exceed = ((sc.pfa * n as f64).floor() as usize).min(n - 1);
    let idx = n - 1 - exceed;
    let (_, alpha, _) = ratios.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*alpha)
}

/// Fraction of noise-only cell tests above the threshold.
pub fn empirical_pfa(len: usize, w: CfarWindow, alpha: f64, cells: usize, seed: u64) -> Result<f64> {
    let ratios = noise_ratios(len, w, cells.div_ceil(len), seed)?;
    Ok(ratios.iter().filter(|r| **r > alpha).count() as f64 / ratios.len() as f64)
}

/// Calibration size used by [`pd_curve`].
pub const DEFAULT_CALIBRATION_CELLS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdPoint {
    pub snr_db: f64,
    pub pd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub detections: usize,
    pub trials: usize,
}

/// 95% Wilson score interval.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    const Z: f64 = 1.959_963_984_540_054;
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Detection probability at the target cell over an SNR grid, calibrating the
/// threshold first.
pub fn pd_curve(sc: &DetectionScenario, snr_db: &[f64], seed: u64) -> Result<Vec<PdPoint>> {
    let cal = DEFAULT_CALIBRATION_CELLS.max((100.0 / sc.pfa).ceil() as usize);
    let alpha = calibrate_so_cfar(sc, cal, seed)?;
    pd_curve_with_alpha(sc, snr_db, alpha, seed)
}

/// Trials share their symbols, phases and noise across the SNR grid.
pub fn pd_curve_with_alpha(sc: &DetectionScenario, snr_db: &[f64], alpha: f64, seed: u64) -> Result<Vec<PdPoint>> {
    if snr_db.is_empty() || snr_db.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("SNR grid must be nonempty and free of NaN".into()));
    }
    let sim = Simulator::new(sc)?;
    let base = seeds::derive(seed, "detection-trials");
    let hits: Vec<Result<Vec<bool>>> = (0..sc.n_mc)
        .into_par_iter()
        .map(|i| {
            let parts = sim.parts(sc, seeds::trial(base, i as u64))?;
            snr_db
                .iter()
                .map(|&s| {
                    let p = powers(&parts, s);
                    let k = sc.target_cell;
                    Ok(p[k] > alpha * so_cfar_statistic(&p, k, sc.window)?)
                })
                .collect()
        })
        .collect();
    let mut counts = vec![0usize; snr_db.len()];
    for h in hits {
        for (c, d) in counts.iter_mut().zip(h?) {
            *c += usize::from(d);
        }
    }
    Ok(snr_db
        .iter()
        .zip(counts)
        .map(|(&s, d)| {
            let (ci_lo, ci_hi) = wilson_interval(d, sc.n_mc);
            PdPoint { snr_db: s, pd: d as f64 / sc.n_mc as f64, ci_lo, ci_hi, detections: d, trials: sc.n_mc }
        })
        .collect())
}

pub fn pd_curve_csv(points: &[PdPoint]) -> String {
    let mut out = String::from("snr_db,pd,ci_lo,ci_hi\n");
    for p in points {
        out.push_str(&csv_row(&[p.snr_db, p.pd, p.ci_lo, p.ci_hi]));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(c: &Constellation) -> DetectionScenario {
        DetectionScenario::new(c, &Distribution::uniform(c)).unwrap()
    }

    #[test]
    fn flat_profile_has_no_detections() {
        let d = so_cfar_detect(&[1.0; 64], 2.0, CfarWindow::default()).unwrap();
        assert!(d.iter().all(|v| !v));
    }

    #[test]
    fn single_spike_is_detected() {
        let mut p = noise_profile(64, 3);
        p[30] = 1e6;
        let d = so_cfar_detect(&p, 20.0, CfarWindow::default()).unwrap();
        assert!(d[30]);
    }

    #[test]
    fn window_must_fit() {
        assert!(so_cfar_detect(&[1.0; 20], 2.0, CfarWindow::default()).is_err());
        let c = Constellation::psk(8).unwrap();
        let mut sc = scenario(&c);
        sc.target_cell = 0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn statistic_uses_complete_sides() {
        let mut p = vec![1.0; 64];
        p[0] = 1000.0;
        // Cell 8 sees only its lagging side, so the spike at 0 does not enter.
        assert_eq!(so_cfar_statistic(&p, 8, CfarWindow::default()).unwrap(), 1.0);
        for v in p[33..].iter_mut() {
            *v = 0.5;
        }
        assert_eq!(so_cfar_statistic(&p, 30, CfarWindow::default()).unwrap(), 0.5);
    }

    #[test]
    fn noise_floor_is_unit() {
        let c = Constellation::qam(16).unwrap();
        let mut sc = scenario(&c);
        sc.snr_db = f64::NEG_INFINITY;
        sc.si_db = None;
        let mut sum = 0.0;
        let trials = 400;
        for i in 0..trials {
            sum += simulate_profile(&sc, i).unwrap().power.iter().sum::<f64>();
        }
        let mean = sum / (trials as f64 * 64.0);
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn strong_target_dominates() {
        let c = Constellation::qam(64).unwrap();
        let mut sc = scenario(&c);
        sc.snr_db = 40.0;
        let trials = 300;
        let mut hits = 0;
        for i in 0..trials {
            let p = simulate_profile(&sc, i).unwrap().power;
            let arg = (1..64).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            hits += usize::from(arg == 8);
        }
        assert!(hits as f64 >= 0.99 * trials as f64);
    }

    #[test]
    fn calibration_basics() {
        let c = Constellation::psk(8).unwrap();
        let mut sc = scenario(&c);
        sc.pfa = 0.5;
        let a = calibrate_so_cfar(&sc, 20_000, 1).unwrap();
        assert!(a > 0.3 && a < 3.0, "{a}");
        sc.pfa = 1e-2;
        assert!(calibrate_so_cfar(&sc, 999, 1).is_err());
        let mut last = 0.0;
        for pfa in [1e-2, 1e-3, 1e-4] {
            sc.pfa = pfa;
            let a = calibrate_so_cfar(&sc, 400_000, 1).unwrap();
            assert!(a > last);
            last = a;
        }
        assert_eq!(calibrate_so_cfar(&sc, 400_000, 1).unwrap(), last);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        assert_eq!(wilson_interval(0, 10).0, 0.0);
        assert!(wilson_interval(10, 10).1 > 1.0 - 1e-12);
    }

    #[test]
    fn curve_is_reproducible() {
        let c = Constellation::qam(16).unwrap();
        let mut sc = scenario(&c);
        sc.n_mc = 200;
        let a = pd_curve_with_alpha(&sc, &[5.0, 15.0], 20.0, 4).unwrap();
        let b = pd_curve_with_alpha(&sc, &[5.0, 15.0], 20.0, 4).unwrap();
        assert_eq!(a, b);
        assert!(a[0].pd <= a[1].pd);
        assert!(pd_curve_csv(&a).starts_with("snr_db,pd,ci_lo,ci_hi\n5,"));
    }
}
