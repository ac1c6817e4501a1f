//! Ambiguity function of random OFDM symbols.
//!
//! A symbol carries `L` subcarriers `X_l e^{j 2 pi l df t}` on `[0, T_p)`.
//! The ambiguity function is `Lambda(tau, nu) = int s(t) s*(t - tau) e^{-j 2 pi nu t} dt`
//! and is evaluated in closed form as a double sum over subcarrier pairs.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::constellation::{moment, Constellation, Distribution};
use crate::error::{ensure_finite, Error, Result};
use crate::numfmt::sig9;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmConfig {
    /// Number of subcarriers.
    pub l: usize,
    /// Subcarrier spacing.
    pub delta_f: f64,
    /// Symbol duration.
    pub t_p: f64,
    /// Symbols per train.
    pub n: usize,
}

impl OfdmConfig {
    /// Normalized configuration with `delta_f = T_p = 1`.
    pub fn new(l: usize, n: usize) -> Result<Self> {
        Self::with_spacing(l, n, 1.0, 1.0)
    }

    pub fn with_spacing(l: usize, n: usize, delta_f: f64, t_p: f64) -> Result<Self> {
        let cfg = OfdmConfig { l, delta_f, t_p, n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("L and N must be positive".into()));
        }
        if !(self.delta_f > 0.0 && self.t_p > 0.0 && self.delta_f.is_finite() && self.t_p.is_finite()) {
            return Err(Error::InvalidArgument("delta_f and T_p must be positive and finite".into()));
        }
        if (self.delta_f * self.t_p - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "delta_f * T_p must equal 1 (got {})",
                self.delta_f * self.t_p
            )));
        }
        Ok(())
    }
}

/// `sin(pi x) / (pi x)` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Overlap `[max(0, tau), min(T_p, T_p + tau)]` as `(T_diff, T_avg)`, or `None` if empty.
pub fn overlap(tau: f64, t_p: f64) -> Option<(f64, f64)> {
    let t_min = tau.max(0.0);
    let t_max = t_p.min(t_p + tau);
    (t_max > t_min).then_some((t_max - t_min, 0.5 * (t_max + t_min)))
}

/// `N x L` matrix of transmitted symbols, row `n` being the `n`-th OFDM symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix {
    pub n: usize,
    pub l: usize,
    /// Row-major symbol values.
    pub data: Vec<Complex64>,
    /// Constellation point index of each entry.
    pub indices: Vec<usize>,
    pub seed: u64,
    pub constellation_id: String,
    pub distribution_id: String,
}

impl SymbolMatrix {
    pub fn row(&self, n: usize) -> &[Complex64] {
        &self.data[n * self.l..(n + 1) * self.l]
    }
}

/// Draws i.i.d. constellation points with a fixed law.
#[derive(Debug, Clone)]
pub struct SymbolSampler {
    points: Vec<Complex64>,
    law: WeightedIndex<f64>,
}

impl SymbolSampler {
    pub fn new(c: &Constellation, d: &Distribution) -> Result<Self> {
        if d.len() != c.order() {
            return Err(Error::DimensionMismatch { expected: c.order(), got: d.len() });
        }
        let law = WeightedIndex::new(d.per_point().iter().copied())
            .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        Ok(SymbolSampler { points: c.points(), law })
    }

    pub fn draw_index(&self, rng: &mut seeds::Rng) -> usize {
        self.law.sample(rng)
    }

    pub fn fill(&self, rng: &mut seeds::Rng, out: &mut [Complex64]) {
        for x in out.iter_mut() {
            *x = self.points[self.law.sample(rng)];
        }
    }
}

pub fn sample_symbols(c: &Constellation, d: &Distribution, cfg: &OfdmConfig, seed: u64) -> Result<SymbolMatrix> {
    cfg.validate()?;
    let sampler = SymbolSampler::new(c, d)?;
    let mut rng = seeds::rng(seed);
    let indices: Vec<usize> = (0..cfg.n * cfg.l).map(|_| sampler.draw_index(&mut rng)).collect();
    let data = indices.iter().map(|&q| sampler.points[q]).collect();
    Ok(SymbolMatrix {
        n: cfg.n,
        l: cfg.l,
        data,
        indices,
        seed,
        constellation_id: c.id(),
        distribution_id: d.id(),
    })
}

fn check_row(row: &[Complex64], cfg: &OfdmConfig) -> Result<()> {
    if row.len() != cfg.l {
        return Err(Error::DimensionMismatch { expected: cfg.l, got: row.len() });
    }
    if row.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::NonFinite("symbol"));
    }
    Ok(())
}

/// Cross ambiguity `int s1(t) s2*(t - tau) e^{-j 2 pi nu t} dt` of two symbols
/// sharing the window `[0, T_p)`, by the direct double sum.
fn cross_direct(x1: &[Complex64], x2: &[Complex64], cfg: &OfdmConfig, tau: f64, nu: f64) -> Complex64 {
    let Some((t_diff, t_avg)) = overlap(tau, cfg.t_p) else {
        return Complex64::new(0.0, 0.0);
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for (l1, a) in x1.iter().enumerate() {
        for (l2, b) in x2.iter().enumerate() {
            let f = (l1 as f64 - l2 as f64) * cfg.delta_f - nu;
            let coef = t_diff * sinc(f * t_diff);
            let phase = 2.0 * PI * (f * t_avg + l2 as f64 * cfg.delta_f * tau);
            acc += a * b.conj() * Complex64::from_polar(coef, phase);
        }
    }
    acc
}

/// Single-symbol ambiguity function. Zero for `|tau| >= T_p`.
pub fn af_single(row: &[Complex64], cfg: &OfdmConfig, tau: f64, nu: f64) -> Result<Complex64> {
    ensure_finite(tau, "tau")?;
    ensure_finite(nu, "nu")?;
    check_row(row, cfg)?;
    Ok(cross_direct(row, row, cfg, tau, nu))
}

/// Ambiguity function of the `N`-symbol train `sum_n s_n(t - n T_p)`.
pub fn af_sequence(m: &SymbolMatrix, cfg: &OfdmConfig, tau: f64, nu: f64) -> Result<Complex64> {
    ensure_finite(tau, "tau")?;
    ensure_finite(nu, "nu")?;
    if m.n != cfg.n || m.l != cfg.l {
        return Err(Error::DimensionMismatch { expected: cfg.n * cfg.l, got: m.n * m.l });
    }
    if m.data.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::NonFinite("symbol"));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for n1 in 0..m.n {
        for n2 in 0..m.n {
            let shifted = tau + (n2 as f64 - n1 as f64) * cfg.t_p;
            if overlap(shifted, cfg.t_p).is_none() {
                continue;
            }
            let term = cross_direct(m.row(n1), m.row(n2), cfg, shifted, nu);
            acc += if n1 == 0 {
                term
            } else {
                term * Complex64::from_polar(1.0, -2.0 * PI * n1 as f64 * nu * cfg.t_p)
            };
        }
    }
    Ok(acc)
}

/// Cross ambiguity of two symbols at one delay and many Dopplers.
///
/// Uses `C_m(tau) = sum_l x1[l + m] x2*[l] e^{j 2 pi l df tau}`, computed once per
/// delay, so that each Doppler costs `O(L)`.
pub fn cross_af_row(x1: &[Complex64], x2: &[Complex64], cfg: &OfdmConfig, tau: f64, nus: &[f64]) -> Result<Vec<Complex64>> {
    ensure_finite(tau, "tau")?;
    check_row(x1, cfg)?;
    check_row(x2, cfg)?;
    for &nu in nus {
        ensure_finite(nu, "nu")?;
    }
    let Some((t_diff, t_avg)) = overlap(tau, cfg.t_p) else {
        return Ok(vec![Complex64::new(0.0, 0.0); nus.len()]);
    };
    let l = cfg.l as isize;
    let rot: Vec<Complex64> =
        (0..cfg.l).map(|l2| Complex64::from_polar(1.0, 2.0 * PI * l2 as f64 * cfg.delta_f * tau)).collect();
    let corr: Vec<Complex64> = (-(l - 1)..l)
        .map(|m| {
            let lo = (-m).max(0) as usize;
            let hi = (l - m.max(0)) as usize;
            (lo..hi).map(|l2| x1[(l2 as isize + m) as usize] * x2[l2].conj() * rot[l2]).sum()
        })
        .collect();
    Ok(nus
        .iter()
        .map(|&nu| {
            corr.iter()
                .enumerate()
                .map(|(i, c)| {
                    let f = (i as isize - (l - 1)) as f64 * cfg.delta_f - nu;
                    c * Complex64::from_polar(t_diff * sinc(f * t_diff), 2.0 * PI * f * t_avg)
                })
                .sum()
        })
        .collect())
}

/// Single-symbol ambiguity function along a Doppler row.
pub fn af_row(row: &[Complex64], cfg: &OfdmConfig, tau: f64, nus: &[f64]) -> Result<Vec<Complex64>> {
    cross_af_row(row, row, cfg, tau, nus)
}

/// Train ambiguity function along a Doppler row.
pub fn af_sequence_row(m: &SymbolMatrix, cfg: &OfdmConfig, tau: f64, nus: &[f64]) -> Result<Vec<Complex64>> {
    let mut out = vec![Complex64::new(0.0, 0.0); nus.len()];
    for n1 in 0..m.n {
        for n2 in 0..m.n {
            let shifted = tau + (n2 as f64 - n1 as f64) * cfg.t_p;
            if overlap(shifted, cfg.t_p).is_none() {
                continue;
            }
            let part = cross_af_row(m.row(n1), m.row(n2), cfg, shifted, nus)?;
            for ((o, p), &nu) in out.iter_mut().zip(part).zip(nus) {
                *o += if n1 == 0 { p } else { p * Complex64::from_polar(1.0, -2.0 * PI * n1 as f64 * nu * cfg.t_p) };
            }
        }
    }
    Ok(out)
}

/// Zero-Doppler ambiguity function of one symbol at the delays `k T_p / L`,
/// `k = -(L-1) ..= L-1`, via one length-`L` FFT per subcarrier offset.
pub struct ZeroDopplerKernel {
    cfg: OfdmConfig,
    fft: Arc<dyn Fft<f64>>,
    /// `coef[k * (2L-1) + (m + L - 1)]` for `k >= 0`.
    coef: Vec<Complex64>,
}

impl ZeroDopplerKernel {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let l = cfg.l;
        let fft = FftPlanner::new().plan_fft_inverse(l);
        let width = 2 * l - 1;
        let mut coef = vec![Complex64::new(0.0, 0.0); l * width];
        for k in 0..l {
            let tau = k as f64 * cfg.t_p / l as f64;
            let (t_diff, t_avg) = overlap(tau, cfg.t_p).expect("k < L");
            for i in 0..width {
                let f = (i as f64 - (l as f64 - 1.0)) * cfg.delta_f;
                coef[k * width + i] = Complex64::from_polar(t_diff * sinc(f * t_diff), 2.0 * PI * f * t_avg);
            }
        }
        Ok(ZeroDopplerKernel { cfg: *cfg, fft, coef })
    }

    /// Delays `k T_p / L` for `k = -(L-1) ..= L-1`.
    pub fn lags(&self) -> Vec<f64> {
        let l = self.cfg.l as isize;
        (-(l - 1)..l).map(|k| k as f64 * self.cfg.t_p / l as f64).collect()
    }

    /// Values at [`lags`](Self::lags); negative delays use `Lambda(-tau, 0) = conj Lambda(tau, 0)`.
    pub fn evaluate(&self, row: &[Complex64]) -> Result<Vec<Complex64>> {
        check_row(row, &self.cfg)?;
        let l = self.cfg.l;
        let width = 2 * l - 1;
        let mut positive = vec![Complex64::new(0.0, 0.0); l];
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for i in 0..width {
            let m = i as isize - (l as isize - 1);
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            let lo = (-m).max(0) as usize;
            let hi = (l as isize - m.max(0)) as usize;
            for l2 in lo..hi {
                buf[l2] = row[(l2 as isize + m) as usize] * row[l2].conj();
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in positive.iter_mut().enumerate() {
                *v += self.coef[k * width + i] * buf[k];
            }
        }
        let mut out = Vec::with_capacity(width);
        out.extend(positive[1..].iter().rev().map(|v| v.conj()));
        out.extend_from_slice(&positive);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Linear,
    Db,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AfValues {
    Complex(Vec<Complex64>),
    Power(Vec<f64>),
}

/// Values on a delay-Doppler grid, stored delay-major: `values[i_tau * nu_axis.len() + i_nu]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AfGrid {
    pub tau_axis: Vec<f64>,
    pub nu_axis: Vec<f64>,
    pub values: AfValues,
    pub units: Units,
}

fn check_axis(axis: &[f64], name: &'static str) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidArgument(format!("empty {name} axis")));
    }
    for v in axis {
        ensure_finite(*v, name)?;
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

impl AfGrid {
    pub fn power(&self) -> Option<&[f64]> {
        match &self.values {
            AfValues::Power(p) => Some(p),
            AfValues::Complex(_) => None,
        }
    }

    pub fn at(&self, i_tau: usize, i_nu: usize) -> usize {
        i_tau * self.nu_axis.len() + i_nu
    }

    /// CSV with header `tau,nu,value_db` (or `value` / `re,im`).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match (&self.values, self.units) {
            (AfValues::Power(_), Units::Db) => out.push_str("tau,nu,value_db\n"),
            (AfValues::Power(_), Units::Linear) => out.push_str("tau,nu,value\n"),
            (AfValues::Complex(_), _) => out.push_str("tau,nu,re,im\n"),
        }
        for (i, tau) in self.tau_axis.iter().enumerate() {
            for (j, nu) in self.nu_axis.iter().enumerate() {
                let k = self.at(i, j);
                match &self.values {
                    AfValues::Power(p) => {
                        let _ = writeln!(out, "{},{},{}", sig9(*tau), sig9(*nu), sig9(p[k]));
                    }
                    AfValues::Complex(c) => {
                        let _ = writeln!(out, "{},{},{},{}", sig9(*tau), sig9(*nu), sig9(c[k].re), sig9(c[k].im));
                    }
                }
            }
        }
        out
    }
}

/// Trials are summed in fixed-size chunks, then chunk sums in order, so the
/// result does not depend on the thread count.
const CHUNK: usize = 64;

fn mc_mean_power<F>(cells: usize, n_mc: usize, trial_fn: F) -> Result<Vec<f64>>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<Result<Vec<f64>>> = (0..n_mc.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; cells];
            for t in c * CHUNK..((c + 1) * CHUNK).min(n_mc) {
                trial_fn(t as u64, &mut sum)?;
            }
            Ok(sum)
        })
        .collect();
    let mut total = vec![0.0; cells];
    for chunk in chunks {
        for (t, v) in total.iter_mut().zip(chunk?) {
            *t += v;
        }
    }
    total.iter_mut().for_each(|v| *v /= n_mc as f64);
    Ok(total)
}

fn to_db(mut mean: Vec<f64>, normalize: bool) -> Vec<f64> {
    let peak = if normalize { mean.iter().cloned().fold(0.0, f64::max) } else { 1.0 };
    for v in mean.iter_mut() {
        *v = 10.0 * (*v / peak).log10();
    }
    mean
}

/// Average ambiguity power `10 log10 mean |Lambda|^2` over `n_mc` independent
/// symbol trains, optionally normalized to its peak.
#[allow(clippy::too_many_arguments)]
pub fn average_af(
    c: &Constellation,
    d: &Distribution,
    cfg: &OfdmConfig,
    tau_axis: &[f64],
    nu_axis: &[f64],
    n_mc: usize,
    seed: u64,
    normalize: bool,
) -> Result<AfGrid> {
    cfg.validate()?;
    check_axis(tau_axis, "tau")?;
    check_axis(nu_axis, "nu")?;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let sampler = SymbolSampler::new(c, d)?;
    let cells = tau_axis.len() * nu_axis.len();
    let mean = mc_mean_power(cells, n_mc, |t, sum| {
        let mut rng = seeds::rng(seeds::trial(seed, t));
        let mut data = vec![Complex64::new(0.0, 0.0); cfg.n * cfg.l];
        sampler.fill(&mut rng, &mut data);
        let m = SymbolMatrix {
            n: cfg.n,
            l: cfg.l,
            data,
            indices: Vec::new(),
            seed: t,
            constellation_id: String::new(),
            distribution_id: String::new(),
        };
        for (i, &tau) in tau_axis.iter().enumerate() {
            let row = af_sequence_row(&m, cfg, tau, nu_axis)?;
            for (j, v) in row.iter().enumerate() {
                sum[i * nu_axis.len() + j] += v.norm_sqr();
            }
        }
        Ok(())
    })?;
    Ok(AfGrid {
        tau_axis: tau_axis.to_vec(),
        nu_axis: nu_axis.to_vec(),
        values: AfValues::Power(to_db(mean, normalize)),
        units: Units::Db,
    })
}

/// Average zero-Doppler slice of a single symbol at the delays `k T_p / L`.
pub fn average_zero_doppler(
    c: &Constellation,
    d: &Distribution,
    cfg: &OfdmConfig,
    n_mc: usize,
    seed: u64,
    normalize: bool,
) -> Result<AfGrid> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let kernel = ZeroDopplerKernel::new(cfg)?;
    let sampler = SymbolSampler::new(c, d)?;
    let lags = kernel.lags();
    let mean = mc_mean_power(lags.len(), n_mc, |t, sum| {
        let mut rng = seeds::rng(seeds::trial(seed, t));
        let mut row = vec![Complex64::new(0.0, 0.0); cfg.l];
        sampler.fill(&mut rng, &mut row);
        for (s, v) in sum.iter_mut().zip(kernel.evaluate(&row)?) {
            *s += v.norm_sqr();
        }
        Ok(())
    })?;
    Ok(AfGrid {
        tau_axis: lags,
        nu_axis: vec![0.0],
        values: AfValues::Power(to_db(mean, normalize)),
        units: Units::Db,
    })
}

/// Argument convention inside the sinc of the cross-term variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SincConvention {
    /// `sinc([(l1 - l2) df - nu] T_diff)`, as produced by the defining integral.
    #[default]
    Integral,
    /// `sinc(2 pi [(l1 - l2) df - nu] T_diff)`.
    TwoPi,
}

impl SincConvention {
    fn scale(self) -> f64 {
        match self {
            SincConvention::Integral => 1.0,
            SincConvention::TwoPi => 2.0 * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticMoments {
    /// `E[Lambda_S]`, which is also `E[Lambda]`.
    pub mean_lambda_s: Complex64,
    pub var_s: f64,
    pub var_c: f64,
    /// Self-term variance of the `N`-symbol train.
    pub var_s_seq: f64,
    /// Cross-term variance of the `N`-symbol train.
    pub var_c_seq: f64,
}

/// `sum_{l1, l2} T^2 sinc^2(s [(l1 - l2) df - nu] T)`, skipping `l1 = l2` if asked.
fn pair_sinc_sum(cfg: &OfdmConfig, tau: f64, nu: f64, skip_diagonal: bool, conv: SincConvention) -> f64 {
    let Some((t_diff, _)) = overlap(tau, cfg.t_p) else {
        return 0.0;
    };
    let l = cfg.l as isize;
    let mut acc = 0.0;
    for m in -(l - 1)..l {
        if skip_diagonal && m == 0 {
            continue;
        }
        let mult = (l - m.abs()) as f64;
        let s = sinc(conv.scale() * (m as f64 * cfg.delta_f - nu) * t_diff);
        acc += mult * s * s;
    }
    t_diff * t_diff * acc
}

/// Closed-form mean and variance decomposition of the ambiguity function.
///
/// The variance formulas assume `E[x] = 0` and `E[x^2] = 0`, which hold for QAM
/// and for PSK of order at least 3. The cross-term variances take no
/// distribution argument.
pub fn analytic_moments(
    c: &Constellation,
    d: &Distribution,
    cfg: &OfdmConfig,
    tau: f64,
    nu: f64,
    conv: SincConvention,
) -> Result<AnalyticMoments> {
    ensure_finite(tau, "tau")?;
    ensure_finite(nu, "nu")?;
    cfg.validate()?;
    let m2 = moment(c, d, 2)?;
    if (m2 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("mean power must be 1 (got {m2})")));
    }
    let m4 = moment(c, d, 4)?;

    let (mean_lambda_s, var_s) = match overlap(tau, cfg.t_p) {
        Some((t_diff, t_avg)) => {
            let s = sinc(-nu * t_diff);
            let carriers: Complex64 =
                (0..cfg.l).map(|l| Complex64::from_polar(1.0, 2.0 * PI * l as f64 * cfg.delta_f * tau)).sum();
            let mean = Complex64::from_polar(t_diff * s, -2.0 * PI * nu * t_avg) * carriers;
            (mean, t_diff * t_diff * s * s * cfg.l as f64 * (m4 - 1.0))
        }
        None => (Complex64::new(0.0, 0.0), 0.0),
    };

    let var_c = pair_sinc_sum(cfg, tau, nu, true, conv);
    let n = cfg.n as isize;
    let mut var_c_seq = 0.0;
    for lag in -(n - 1)..n {
        let shifted = tau + lag as f64 * cfg.t_p;
        var_c_seq += (n - lag.abs()) as f64 * pair_sinc_sum(cfg, shifted, nu, lag == 0, conv);
    }

    Ok(AnalyticMoments { mean_lambda_s, var_s, var_c, var_s_seq: cfg.n as f64 * var_s, var_c_seq })
}
