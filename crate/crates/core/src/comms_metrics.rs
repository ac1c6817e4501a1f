//! Mutual information of a discrete constellation over complex AWGN.

use std::f64::consts::{LN_2, PI};
use std::fmt::Write as _;

use num_complex::Complex64;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::constellation::{entropy_bits, Constellation, Distribution};
use crate::error::{ensure_finite, Error, Result};
use crate::numfmt::sig9;
use crate::ofdm_af::OfdmConfig;
use crate::seeds;

/// Circular complex AWGN with total variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelSpec {
    pub sigma2: f64,
}

impl ChannelSpec {
    pub fn new(sigma2: f64) -> Result<Self> {
        ensure_finite(sigma2, "sigma2")?;
        if sigma2 <= 0.0 {
            return Err(Error::InvalidArgument(format!("noise power must be positive, got {sigma2}")));
        }
        Ok(ChannelSpec { sigma2 })
    }

    /// Noise power for unit signal power at the given SNR.
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        Self::new(10f64.powf(-snr_db / 10.0))
    }

    pub fn snr_db(&self) -> f64 {
        -10.0 * self.sigma2.log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiEstimate {
    pub mi_bits: f64,
    pub std_error: f64,
    pub n_mc: usize,
    pub sigma2: f64,
}

/// `ln p(y | x)` for complex AWGN.
pub fn log_likelihood(y: Complex64, x: Complex64, sigma2: f64) -> f64 {
    -(y - x).norm_sqr() / sigma2 - (PI * sigma2).ln()
}

/// `ln sum_i exp(v_i)` over the given values, shifted by their maximum.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn support(c: &Constellation, d: &Distribution) -> Result<Vec<(Complex64, f64)>> {
    if d.len() != c.order() {
        return Err(Error::DimensionMismatch { expected: c.order(), got: d.len() });
    }
    let s: Vec<(Complex64, f64)> = (0..c.order())
        .filter(|&q| d.per_point()[q] > 0.0)
        .map(|q| (c.point(q), d.per_point()[q]))
        .collect();
    if s.is_empty() {
        return Err(Error::InvalidDistribution("all probabilities are zero".into()));
    }
    Ok(s)
}

fn mixture_log_pdf(y: Complex64, support: &[(Complex64, f64)], sigma2: f64) -> f64 {
    log_sum_exp(support.iter().map(|(x, p)| p.ln() + log_likelihood(y, *x, sigma2)))
}

/// `ln sum_x p(x) p(y | x)`, the output density of the channel.
pub fn gm_log_pdf(y: Complex64, c: &Constellation, d: &Distribution, spec: &ChannelSpec) -> Result<f64> {
    ensure_finite(y.re, "y")?;
    ensure_finite(y.im, "y")?;
    Ok(mixture_log_pdf(y, &support(c, d)?, spec.sigma2))
}

/// `n` draws of standard circular complex Gaussian noise (unit total variance).
pub fn standard_noise(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = seeds::rng(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * scale, im * scale)
        })
        .collect()
}

/// Per-draw terms `T_m = sum_x p(x) [ln p(x + n_m | x) - ln p(x + n_m)]` in nats.
fn mi_terms(support: &[(Complex64, f64)], noise: &[Complex64], sigma2: f64) -> Vec<f64> {
    let sigma = sigma2.sqrt();
    noise
        .par_iter()
        .map(|z| {
            let n = z * sigma;
            support
                .iter()
                .map(|(x, p)| {
                    let y = x + n;
                    p * (log_likelihood(y, *x, sigma2) - mixture_log_pdf(y, support, sigma2))
                })
                .sum()
        })
        .collect()
}

/// Monte-Carlo mutual information in bits.
///
/// The expectation over the input is taken exactly and the expectation over
/// the noise by `n_mc` draws shared by all inputs; this estimates the same
/// `H(Y) - ln(pi e sigma^2)` as sampling `(x, y)` pairs, with a lower variance.
/// Negative estimates (possible only when the true value is within noise of
/// zero) are reported as 0.
pub fn mutual_information(
    c: &Constellation,
    d: &Distribution,
    spec: &ChannelSpec,
    n_mc: usize,
    seed: u64,
) -> Result<MiEstimate> {
    if n_mc < 1000 {
        return Err(Error::InvalidArgument(format!("n_mc must be at least 1000, got {n_mc}")));
    }
    let supp = support(c, d)?;
    let noise = standard_noise(n_mc, seeds::derive(seed, "mi-noise"));
    let terms = mi_terms(&supp, &noise, spec.sigma2);
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MiEstimate {
        mi_bits: (mean / LN_2).max(0.0),
        std_error: (var / n).sqrt() / LN_2,
        n_mc,
        sigma2: spec.sigma2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AirTotal {
    /// Bits per OFDM symbol.
    pub bits_per_symbol: f64,
    /// Per-subcarrier rate in bits/s/Hz.
    pub per_subcarrier: MiEstimate,
}

/// `L` times the per-subcarrier mutual information.
pub fn air_total(
    c: &Constellation,
    d: &Distribution,
    spec: &ChannelSpec,
    cfg: &OfdmConfig,
    n_mc: usize,
    seed: u64,
) -> Result<AirTotal> {
    cfg.validate()?;
    let mi = mutual_information(c, d, spec, n_mc, seed)?;
    Ok(AirTotal { bits_per_symbol: cfg.l as f64 * mi.mi_bits, per_subcarrier: mi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub snr_db: f64,
    pub mi_bits: f64,
    pub std_err: f64,
}

/// Mutual information over an SNR ladder, all points on the same noise draws.
pub fn rate_curve(c: &Constellation, d: &Distribution, snr_db: &[f64], n_mc: usize, seed: u64) -> Result<Vec<RatePoint>> {
    snr_db
        .iter()
        .map(|&s| {
            let mi = mutual_information(c, d, &ChannelSpec::from_snr_db(s)?, n_mc, seed)?;
            Ok(RatePoint { snr_db: s, mi_bits: mi.mi_bits, std_err: mi.std_error })
        })
        .collect()
}

pub fn rate_curve_csv(points: &[RatePoint]) -> String {
    let mut out = String::from("snr_db,mi_bits,std_err\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", sig9(p.snr_db), sig9(p.mi_bits), sig9(p.std_err));
    }
    out
}

/// Upper bound `min(H(p), log2(1 + 1/sigma^2))` on the mutual information.
pub fn mi_upper_bound(d: &Distribution, spec: &ChannelSpec) -> f64 {
    entropy_bits(d).min((1.0 + 1.0 / spec.sigma2).log2())
}
