//! Modified Blahut-Arimoto shaping under second- and fourth-moment constraints.
//!
//! Each outer iteration draws a Monte-Carlo output set from the current input
//! law, forms the reverse channel `q(x|y)`, estimates the per-point integrals
//! `s(x) = E[log q(x|y) | x]` by importance sampling, and updates
//! `p(x) ∝ exp(s(x) - l1 A^4 - l2 A^2)` with the multipliers chosen to meet
//! both moment constraints.
//!
//! Iterates are kept uniform within each ring: the integrals are averaged over
//! the points of a ring before the update, which makes the update the exact
//! maximizer over ring-uniform laws.

use num_complex::Complex64;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::comms_metrics::{log_likelihood, log_sum_exp, mutual_information, ChannelSpec, MiEstimate};
use crate::constellation::{expand_ring_mass, Constellation, Distribution};
use crate::error::{ensure_finite, Error, Result};
use crate::pcs_heuristic::{feasible_extremes, HeuristicSolution};
use crate::seeds;

/// Square grid used to seed the multiplier solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { lo: -20.0, hi: 20.0, step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbaConfig {
    pub c0: f64,
    pub sigma2: f64,
    /// Output samples per outer iteration.
    pub n_mc: usize,
    /// Minimum samples drawn around every constellation point.
    pub min_samples_per_point: usize,
    /// Outer tolerance on `||p_{k+1} - p_k||^2` and on the relative objective change.
    pub eps: f64,
    pub max_iter: usize,
    /// Tolerance on `||dl||^2` between Newton iterates.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub grid: GridSpec,
    /// Refinement factor of the second grid pass around the coarse minimizer.
    pub grid_refine: usize,
    /// Draws used for the reported rate at the solution.
    pub report_n_mc: usize,
    /// Iterate on ring masses instead of point probabilities.
    pub collapse_rings: bool,
}

impl MbaConfig {
    pub fn new(c0: f64, sigma2: f64) -> Self {
        MbaConfig {
            c0,
            sigma2,
            n_mc: 10_000,
            min_samples_per_point: 16,
            eps: 1e-5,
            max_iter: 200,
            newton_tol: 1e-18,
            newton_max_iter: 100,
            grid: GridSpec::default(),
            grid_refine: 10,
            report_n_mc: 100_000,
            collapse_rings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.c0, "c0")?;
        ChannelSpec::new(self.sigma2)?;
        if self.n_mc == 0 || self.max_iter == 0 || self.newton_max_iter == 0 || self.grid_refine == 0 {
            return Err(Error::InvalidArgument("sample and iteration counts must be positive".into()));
        }
        if !(self.eps > 0.0 && self.newton_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.grid.step > 0.0 && self.grid.hi > self.grid.lo) || !self.grid.lo.is_finite() || !self.grid.hi.is_finite() {
            return Err(Error::InvalidArgument("grid range must be finite and nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Optimal,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PcsResult {
    pub c0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<[f64; 2]>,
    pub ring_mass: Vec<f64>,
    pub air_bits: f64,
    pub air_std_err: f64,
    pub converged: bool,
    pub iters: usize,
    /// Objective `F(p, q)` in nats after each outer iteration.
    pub trace: Vec<f64>,
    pub method: Method,
    /// `(F(p_k, q_k), F(p_{k+1}, q_{k+1}))` on the sample set of iteration `k`.
    #[serde(skip)]
    pub ascent: Vec<(f64, f64)>,
    #[serde(skip)]
    pub c0_requested: f64,
    #[serde(skip)]
    pub clamped: bool,
    #[serde(skip)]
    pub fourth_moment: f64,
    /// `(sum p A^4 - c0, sum p A^2 - 1, sum p - 1)` at exit.
    #[serde(skip)]
    pub residuals: [f64; 3],
    /// Multiplier solves that needed the convex dual fallback.
    #[serde(skip)]
    pub fallbacks: usize,
    /// Ring exponents `h_w` that produced `lambda`.
    #[serde(skip)]
    pub last_integrals: Vec<f64>,
}

impl PcsResult {
    pub fn from_heuristic(sol: &HeuristicSolution, air: &MiEstimate, c: &Constellation) -> Self {
        let sys = crate::pcs_heuristic::RingSystem::new(c);
        PcsResult {
            c0: sol.c0_used,
            lambda: None,
            ring_mass: sol.ring_mass.clone(),
            air_bits: air.mi_bits,
            air_std_err: air.std_error,
            converged: true,
            iters: 0,
            trace: Vec::new(),
            method: Method::Heuristic,
            ascent: Vec::new(),
            c0_requested: sol.c0_requested,
            clamped: sol.clamped,
            fourth_moment: sol.fourth_moment,
            residuals: sys.residuals(&sol.ring_mass, sol.c0_used),
            fallbacks: 0,
            last_integrals: Vec::new(),
        }
    }

    pub fn distribution(&self, c: &Constellation) -> Result<Distribution> {
        expand_ring_mass(c, &self.ring_mass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Monte-Carlo output samples with their likelihood table.
#[derive(Debug, Clone)]
pub struct McSamples {
    pub y: Vec<Complex64>,
    /// `loglik[m * Q + x] = ln p(y_m | x)`.
    pub loglik: Vec<f64>,
    /// Log density of the law the samples were drawn from.
    pub log_proposal: Vec<f64>,
    pub q: usize,
}

impl McSamples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Samples drawn from the proposal `sum_x w_x p(y|x)`: `counts[x]` outputs
    /// around point `x`, each from its own noise stream. The proposal weights
    /// are `counts / total`.
    pub fn stratified(c: &Constellation, counts: &[usize], sigma2: f64, seed: u64) -> Result<Self> {
        if counts.len() != c.order() {
            return Err(Error::DimensionMismatch { expected: c.order(), got: counts.len() });
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("no samples requested".into()));
        }
        let sigma = (sigma2 / 2.0).sqrt();
        let mut y = Vec::with_capacity(total);
        for (x, &n) in counts.iter().enumerate() {
            let mut rng = seeds::rng(seeds::trial(seed, x as u64));
            let centre = c.point(x);
            for _ in 0..n {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                y.push(centre + Complex64::new(re, im) * sigma);
            }
        }
        let log_w: Vec<f64> = counts.iter().map(|&n| (n as f64 / total as f64).ln()).collect();
        Self::with_proposal(c, y, &log_w, sigma2)
    }

    /// Table for given outputs, with proposal `sum_x exp(log_w[x]) p(y|x)`.
    pub fn with_proposal(c: &Constellation, y: Vec<Complex64>, log_w: &[f64], sigma2: f64) -> Result<Self> {
        let q = c.order();
        if log_w.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: log_w.len() });
        }
        let points = c.points();
        let mut loglik = Vec::with_capacity(y.len() * q);
        let mut log_proposal = Vec::with_capacity(y.len());
        for &ym in &y {
            let start = loglik.len();
            loglik.extend(points.iter().map(|&x| log_likelihood(ym, x, sigma2)));
            let row = &loglik[start..];
            log_proposal.push(log_sum_exp(row.iter().zip(log_w).map(|(l, w)| l + w)));
        }
        Ok(McSamples { y, loglik, log_proposal, q })
    }

    fn row(&self, m: usize) -> &[f64] {
        &self.loglik[m * self.q..(m + 1) * self.q]
    }
}

/// Reverse channel `ln q(x | y_m)`, stored `[m * Q + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub log_q: Vec<f64>,
    pub q: usize,
}

impl QTable {
    pub fn get(&self, m: usize, x: usize) -> f64 {
        self.log_q[m * self.q + x]
    }
}

/// Bayes posterior `q(x|y) = p(x) p(y|x) / sum_x' p(x') p(y|x')` on every sample.
pub fn q_update(p: &[f64], samples: &McSamples) -> Result<QTable> {
    if p.len() != samples.q {
        return Err(Error::DimensionMismatch { expected: samples.q, got: p.len() });
    }
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let mut log_q = Vec::with_capacity(samples.loglik.len());
    for m in 0..samples.len() {
        let row = samples.row(m);
        let joint: Vec<f64> = row.iter().zip(&log_p).map(|(l, lp)| l + lp).collect();
        let norm = log_sum_exp(joint.iter().copied());
        if !norm.is_finite() {
            return Err(Error::InvalidDistribution(format!("zero output density at sample {m}")));
        }
        log_q.extend(joint.iter().map(|j| j - norm));
    }
    Ok(QTable { log_q, q: samples.q })
}

/// Importance-sampled `int p(y|x) ln q(x|y) dy` with its standard error.
///
/// Returns `-inf` for a point the reverse channel assigns zero probability.
pub fn mc_integral_with_error(x: usize, table: &QTable, samples: &McSamples) -> Result<(f64, f64)> {
    if table.q != samples.q || table.log_q.len() != samples.loglik.len() {
        return Err(Error::DimensionMismatch { expected: samples.loglik.len(), got: table.log_q.len() });
    }
    if x >= samples.q {
        return Err(Error::InvalidArgument(format!("point index {x} out of range")));
    }
    let n = samples.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for m in 0..samples.len() {
        let lq = table.get(m, x);
        let w = (samples.loglik[m * samples.q + x] - samples.log_proposal[m]).exp();
        let t = if w == 0.0 { 0.0 } else { w * lq };
        sum += t;
        sum_sq += t * t;
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

pub fn mc_integral(x: usize, table: &QTable, samples: &McSamples) -> Result<f64> {
    Ok(mc_integral_with_error(x, table, samples)?.0)
}

/// Multiplier equations and their Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `(sum (a - 1) g, sum (a^2 - c0) g)`.
    pub f: [f64; 2],
    /// `jac[i][j] = d f_i / d lambda_j`.
    pub jac: [[f64; 2]; 2],
    /// `sum g`.
    pub mass: f64,
    /// Exponent shift applied to every `g`.
    pub shift: f64,
}

fn exponent(h: f64, a: f64, lambda: [f64; 2]) -> f64 {
    h - lambda[0] * a * a - lambda[1] * a
}

/// Residuals with `g_x = exp(h_x - l1 a_x^2 - l2 a_x - shift)` and `a_x = A_x^2`,
/// shifting by the largest exponent.
pub fn multiplier_residuals(lambda: [f64; 2], h: &[f64], amp2: &[f64], c0: f64) -> Result<Residuals> {
    let shift = h
        .iter()
        .zip(amp2)
        .map(|(hx, a)| exponent(*hx, *a, lambda))
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::Overflow(lambda[0], lambda[1]));
    }
    multiplier_residuals_shifted(lambda, h, amp2, c0, shift)
}

/// As [`multiplier_residuals`] with a caller-chosen shift.
pub fn multiplier_residuals_shifted(lambda: [f64; 2], h: &[f64], amp2: &[f64], c0: f64, shift: f64) -> Result<Residuals> {
    if h.len() != amp2.len() {
        return Err(Error::DimensionMismatch { expected: amp2.len(), got: h.len() });
    }
    let mut f = [0.0; 2];
    let mut jac = [[0.0; 2]; 2];
    let mut mass = 0.0;
    for (hx, &a) in h.iter().zip(amp2) {
        let g = (exponent(*hx, a, lambda) - shift).exp();
        if g == 0.0 {
            continue;
        }
        let (u, v) = (a - 1.0, a * a - c0);
        f[0] += u * g;
        f[1] += v * g;
        jac[0][0] -= u * a * a * g;
        jac[0][1] -= u * a * g;
        jac[1][0] -= v * a * a * g;
        jac[1][1] -= v * a * g;
        mass += g;
    }
    let finite = f.iter().chain(jac.iter().flatten()).all(|v| v.is_finite()) && mass.is_finite();
    if !finite {
        return Err(Error::Overflow(lambda[0], lambda[1]));
    }
    Ok(Residuals { f, jac, mass, shift })
}

/// Residuals divided by `sum g`, which removes the dependence on the shift.
fn normalized(r: &Residuals) -> ([f64; 2], [[f64; 2]; 2]) {
    let s = 1.0 / r.mass;
    (
        [r.f[0] * s, r.f[1] * s],
        [[r.jac[0][0] * s, r.jac[0][1] * s], [r.jac[1][0] * s, r.jac[1][1] * s]],
    )
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResult {
    pub lambda: [f64; 2],
    pub norm: f64,
}

/// Scan `[lo1, hi1] x [lo2, hi2]` with the given step (lambda_1 outer) and return
/// the first point attaining the smallest residual norm. Points where the
/// residual function fails are skipped.
pub fn grid_init<F>(mut f: F, range1: (f64, f64), range2: (f64, f64), step: f64) -> Result<GridResult>
where
    F: FnMut([f64; 2]) -> Result<[f64; 2]>,
{
    for v in [range1.0, range1.1, range2.0, range2.1, step] {
        ensure_finite(v, "grid")?;
    }
    if step <= 0.0 {
        return Err(Error::InvalidArgument("grid step must be positive".into()));
    }
    let n1 = ((range1.1 - range1.0) / step + 1e-9).floor() as usize + 1;
    let n2 = ((range2.1 - range2.0) / step + 1e-9).floor() as usize + 1;
    let mut best: Option<GridResult> = None;
    for i in 0..n1 {
        for j in 0..n2 {
            let lambda = [range1.0 + i as f64 * step, range2.0 + j as f64 * step];
            let Ok(r) = f(lambda) else { continue };
            let norm = norm2(r);
            if norm.is_finite() && best.is_none_or(|b| norm < b.norm) {
                best = Some(GridResult { lambda, norm });
            }
        }
    }
    best.ok_or_else(|| Error::NonConvergence("residual undefined on the whole grid".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOutcome {
    pub lambda: [f64; 2],
    pub converged: bool,
    pub iters: usize,
    /// Steps that were halved before the residual norm decreased.
    pub damped_steps: usize,
    /// Steps taken with a regularized Jacobian because its condition number exceeded 1e12.
    pub ill_conditioned: usize,
    pub residual_norm: f64,
}

/// Residual norm below which an iterate is accepted outright.
const F_TOL: f64 = 1e-14;

fn solve2(j: [[f64; 2]; 2], f: [f64; 2]) -> Option<[f64; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([(j[1][1] * f[0] - j[0][1] * f[1]) / det, (j[0][0] * f[1] - j[1][0] * f[0]) / det])
}

fn condition(j: [[f64; 2]; 2]) -> f64 {
    let m = nalgebra::Matrix2::new(j[0][0], j[0][1], j[1][0], j[1][1]);
    let sv = m.singular_values();
    if sv[1] == 0.0 {
        f64::INFINITY
    } else {
        sv[0] / sv[1]
    }
}

/// Newton iteration `l <- l - J^{-1} F` for a 2x2 system.
///
/// A step that does not reduce `||F||` is halved up to 30 times. When the
/// Jacobian's condition number exceeds 1e12 the step uses `J^T J + mu I`.
/// Stops when `||dl||^2 <= tol` or `||F|| <= 1e-14`.
pub fn newton_solve<F>(mut f: F, lambda0: [f64; 2], tol: f64, max_iter: usize) -> Result<NewtonOutcome>
where
    F: FnMut([f64; 2]) -> Result<([f64; 2], [[f64; 2]; 2])>,
{
    let mut lambda = lambda0;
    let (mut fv, mut jac) = f(lambda)?;
    let mut out = NewtonOutcome {
        lambda,
        converged: norm2(fv) <= F_TOL,
        iters: 0,
        damped_steps: 0,
        ill_conditioned: 0,
        residual_norm: norm2(fv),
    };
    if out.converged {
        return Ok(out);
    }
    for it in 1..=max_iter {
        out.iters = it;
        let step = if condition(jac) > 1e12 {
            out.ill_conditioned += 1;
            let jtj = [
                [jac[0][0].powi(2) + jac[1][0].powi(2), jac[0][0] * jac[0][1] + jac[1][0] * jac[1][1]],
                [jac[0][0] * jac[0][1] + jac[1][0] * jac[1][1], jac[0][1].powi(2) + jac[1][1].powi(2)],
            ];
            let mu = 1e-10 * (jtj[0][0] + jtj[1][1]).max(f64::MIN_POSITIVE);
            let jtf = [jac[0][0] * fv[0] + jac[1][0] * fv[1], jac[0][1] * fv[0] + jac[1][1] * fv[1]];
            solve2([[jtj[0][0] + mu, jtj[0][1]], [jtj[1][0], jtj[1][1] + mu]], jtf)
        } else {
            solve2(jac, fv)
        };
        let Some(step) = step else {
            break;
        };
        let current = norm2(fv);
        let mut scale = 1.0;
        let mut accepted = None;
        for halving in 0..=30 {
            let trial = [lambda[0] - scale * step[0], lambda[1] - scale * step[1]];
            if let Ok((ft, jt)) = f(trial) {
                if norm2(ft) < current || norm2(ft) <= F_TOL {
                    if halving > 0 {
                        out.damped_steps += 1;
                    }
                    accepted = Some((trial, ft, jt));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((next, ft, jt)) = accepted else {
            break;
        };
        let moved = (next[0] - lambda[0]).powi(2) + (next[1] - lambda[1]).powi(2);
        lambda = next;
        fv = ft;
        jac = jt;
        out.lambda = lambda;
        out.residual_norm = norm2(fv);
        if moved <= tol || out.residual_norm <= F_TOL {
            out.converged = true;
            break;
        }
    }
    Ok(out)
}

/// Minimize the convex `ln sum exp(h - l1 (a^2 - c0) - l2 (a - 1))` by damped
/// Newton. Its stationary point solves the multiplier equations.
fn dual_newton(h: &[f64], amp2: &[f64], c0: f64, start: [f64; 2]) -> Option<[f64; 2]> {
    let phi = |l: [f64; 2]| -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let e: Vec<f64> = h
            .iter()
            .zip(amp2)
            .map(|(hx, a)| hx - l[0] * (a * a - c0) - l[1] * (a - 1.0))
            .collect();
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = w.iter().sum();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (wx, a) in w.iter().zip(amp2) {
            m1 += wx * (a * a - c0);
            m2 += wx * (a - 1.0);
        }
        m1 /= s;
        m2 /= s;
        let mut cov = [[0.0; 2]; 2];
        for (wx, a) in w.iter().zip(amp2) {
            let (u, v) = (a * a - c0 - m1, a - 1.0 - m2);
            cov[0][0] += wx * u * u;
            cov[0][1] += wx * u * v;
            cov[1][1] += wx * v * v;
        }
        for r in cov.iter_mut() {
            for v in r.iter_mut() {
                *v /= s;
            }
        }
        cov[1][0] = cov[0][1];
        (max + s.ln(), [-m1, -m2], cov)
    };
    let mut l = start;
    for _ in 0..500 {
        let (val, grad, hess) = phi(l);
        if !val.is_finite() {
            return None;
        }
        if norm2(grad) <= 1e-13 {
            return Some(l);
        }
        let ridge = 1e-14 * (hess[0][0] + hess[1][1]);
        let d = solve2([[hess[0][0] + ridge, hess[0][1]], [hess[1][0], hess[1][1] + ridge]], grad)?;
        let slope = -(grad[0] * d[0] + grad[1] * d[1]);
        let mut t = 1.0;
        loop {
            let trial = [l[0] - t * d[0], l[1] - t * d[1]];
            let (v, _, _) = phi(trial);
            if v.is_finite() && v <= val + 1e-4 * t * slope {
                l = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return (norm2(grad) <= 1e-10).then_some(l);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierSolution {
    pub lambda: [f64; 2],
    pub residual_norm: f64,
    pub used_fallback: bool,
}

/// Normalized residual norm accepted for a multiplier solve.
const MULTIPLIER_TOL: f64 = 1e-10;

/// Residual vector and Jacobian at a multiplier pair.
type Eval = Result<([f64; 2], [[f64; 2]; 2])>;

fn normalized_eval<'a>(h: &'a [f64], amp2: &'a [f64], c0: f64) -> impl Fn([f64; 2]) -> Eval + 'a {
    move |l| multiplier_residuals(l, h, amp2, c0).map(|r| normalized(&r))
}

/// Coarse grid, refined grid, Newton; then Newton from the warm start; then the dual fallback.
pub fn solve_multipliers(h: &[f64], amp2: &[f64], c0: f64, cfg: &MbaConfig, warm: Option<[f64; 2]>) -> Result<MultiplierSolution> {
    let eval = normalized_eval(h, amp2, c0);
    let g = cfg.grid;
    let coarse = grid_init(|l| eval(l).map(|r| r.0), (g.lo, g.hi), (g.lo, g.hi), g.step)?;
    let fine_step = g.step / cfg.grid_refine as f64;
    let c = coarse.lambda;
    let fine = grid_init(
        |l| eval(l).map(|r| r.0),
        (c[0] - g.step, c[0] + g.step),
        (c[1] - g.step, c[1] + g.step),
        fine_step,
    )?;
    let mut starts = vec![fine.lambda];
    starts.extend(warm);
    for s in starts {
        let out = newton_solve(&eval, s, cfg.newton_tol, cfg.newton_max_iter)?;
        if out.residual_norm <= MULTIPLIER_TOL {
            return Ok(MultiplierSolution { lambda: out.lambda, residual_norm: out.residual_norm, used_fallback: false });
        }
    }
    let start = warm.unwrap_or(fine.lambda);
    if let Some(l) = dual_newton(h, amp2, c0, start) {
        let norm = norm2(eval(l)?.0);
        if norm <= MULTIPLIER_TOL {
            return Ok(MultiplierSolution { lambda: l, residual_norm: norm, used_fallback: true });
        }
    }
    Err(Error::NonConvergence(format!("multiplier equations unsolved at c0 = {c0}")))
}

/// Per-point integrals `s(x)` for law `p` on a fixed sample set.
fn point_integrals(p: &[f64], samples: &McSamples) -> Result<Vec<f64>> {
    let table = q_update(p, samples)?;
    (0..samples.q)
        .map(|x| if p[x] > 0.0 { mc_integral(x, &table, samples) } else { Ok(f64::NEG_INFINITY) })
        .collect()
}

fn ring_means(c: &Constellation, s: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; c.num_rings()];
    for (x, v) in s.iter().enumerate() {
        sum[c.ring_index()[x]] += v;
    }
    sum.iter().zip(c.ring_counts()).map(|(v, n)| v / *n as f64).collect()
}

/// `F(p, q_p) = sum_w m_w s_w - sum_w m_w ln(m_w / n_w)` for ring masses `m`.
fn objective(c: &Constellation, ring_mass: &[f64], s_ring: &[f64]) -> f64 {
    ring_mass
        .iter()
        .zip(s_ring)
        .zip(c.ring_counts())
        .filter(|((m, _), _)| **m > 0.0)
        .map(|((m, s), n)| m * s - m * (m / *n as f64).ln())
        .sum()
}

/// Samples per point: largest-remainder allocation of `n_mc` by `p`, raised to the floor.
fn allocate(p: &[f64], n_mc: usize, floor: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|v| v * n_mc as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| (raw[j] - raw[j].floor()).total_cmp(&(raw[i] - raw[i].floor())).then(i.cmp(&j)));
    for &i in order.iter().take(n_mc.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts.iter().map(|n| (*n).max(floor)).collect()
}

/// Ring integrals `s_w` at ring masses `ring_mass`, on the sample set the
/// solver draws for that law.
pub fn ring_integrals(c: &Constellation, cfg: &MbaConfig, ring_mass: &[f64], seed: u64) -> Result<Vec<f64>> {
    let d = expand_ring_mass(c, ring_mass)?;
    let samples = draw(c, cfg, d.per_point(), seed)?;
    Ok(ring_means(c, &point_integrals(d.per_point(), &samples)?))
}

/// Every iteration reuses the same per-point noise streams.
fn draw(c: &Constellation, cfg: &MbaConfig, p: &[f64], seed: u64) -> Result<McSamples> {
    let counts = allocate(p, cfg.n_mc, cfg.min_samples_per_point);
    McSamples::stratified(c, &counts, cfg.sigma2, seeds::derive(seed, "mba-noise"))
}

fn per_point_update(c: &Constellation, h_ring: &[f64], lambda: [f64; 2], collapse: bool) -> Vec<f64> {
    let amp2 = c.ring_amp2();
    if collapse {
        let e: Vec<f64> = h_ring.iter().zip(amp2).map(|(h, a)| exponent(*h, *a, lambda)).collect();
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let g: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = g.iter().sum();
        g.iter().map(|v| v / s).collect()
    } else {
        let e: Vec<f64> = (0..c.order())
            .map(|x| {
                let w = c.ring_index()[x];
                exponent(h_ring[w] - (c.ring_counts()[w] as f64).ln(), amp2[w], lambda)
            })
            .collect();
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let g: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = g.iter().sum();
        let mut ring = vec![0.0; c.num_rings()];
        for (x, v) in g.iter().enumerate() {
            ring[c.ring_index()[x]] += v / s;
        }
        ring
    }
}

/// Solve the multipliers on rings or on points; both give the same ring masses.
fn update_multipliers(
    c: &Constellation,
    h_ring: &[f64],
    cfg: &MbaConfig,
    c0: f64,
    warm: Option<[f64; 2]>,
) -> Result<MultiplierSolution> {
    if cfg.collapse_rings {
        solve_multipliers(h_ring, c.ring_amp2(), c0, cfg, warm)
    } else {
        let h: Vec<f64> = (0..c.order())
            .map(|x| {
                let w = c.ring_index()[x];
                h_ring[w] - (c.ring_counts()[w] as f64).ln()
            })
            .collect();
        let amp2: Vec<f64> = (0..c.order()).map(|x| c.amp2(x)).collect();
        solve_multipliers(&h, &amp2, c0, cfg, warm)
    }
}

/// Run the alternating maximization from the uniform law.
///
/// `c0` must lie in the feasible range. At an endpoint of the range the
/// feasible set is a single law, which is returned without iterating. Without
/// convergence the iterate with the largest objective is returned.
pub fn run_mba(c: &Constellation, cfg: &MbaConfig, seed: u64) -> Result<PcsResult> {
    cfg.validate()?;
    let range = feasible_extremes(c)?;
    if cfg.c0 < range.c0_min - 1e-12 || cfg.c0 > range.c0_max + 1e-12 {
        return Err(Error::Infeasible(format!(
            "c0 = {} outside the feasible range [{}, {}]",
            cfg.c0, range.c0_min, range.c0_max
        )));
    }
    let c0 = cfg.c0.clamp(range.c0_min, range.c0_max);
    let sys = crate::pcs_heuristic::RingSystem::new(c);
    let spec = ChannelSpec::new(cfg.sigma2)?;

    let endpoint = if (c0 - range.c0_min).abs() <= 1e-12 {
        Some(range.argmin.clone())
    } else if (c0 - range.c0_max).abs() <= 1e-12 {
        Some(range.argmax.clone())
    } else {
        None
    };

    let mut result = PcsResult {
        c0,
        c0_requested: cfg.c0,
        method: Method::Optimal,
        ..Default::default()
    };

    let ring_mass = if let Some(v) = endpoint {
        result.converged = true;
        v
    } else {
        let n = c.order() as f64;
        let mut x: Vec<f64> = c.ring_counts().iter().map(|k| *k as f64 / n).collect();
        let mut lambda: Option<[f64; 2]> = None;
        // (objective, ring masses, multipliers, ring exponents)
        #[allow(clippy::type_complexity)]
        let mut best: Option<(f64, Vec<f64>, [f64; 2], Vec<f64>)> = None;
        for k in 0..cfg.max_iter {
            let d = expand_ring_mass(c, &x)?;
            let samples = draw(c, cfg, d.per_point(), seed)?;
            let s_before = ring_means(c, &point_integrals(d.per_point(), &samples)?);
            let before = objective(c, &x, &s_before);

            let h: Vec<f64> = s_before.iter().zip(c.ring_counts()).map(|(s, n)| s + (*n as f64).ln()).collect();
            let sol = update_multipliers(c, &h, cfg, c0, lambda)?;
            if sol.used_fallback {
                result.fallbacks += 1;
            }
            lambda = Some(sol.lambda);
            let next = per_point_update(c, &h, sol.lambda, cfg.collapse_rings);

            let d_next = expand_ring_mass(c, &next)?;
            let s_after = ring_means(c, &point_integrals(d_next.per_point(), &samples)?);
            let after = objective(c, &next, &s_after);
            result.ascent.push((before, after));
            result.trace.push(after);
            result.iters = k + 1;

            let moved: f64 = d
                .per_point()
                .iter()
                .zip(d_next.per_point())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if best.as_ref().is_none_or(|b| after > b.0) {
                best = Some((after, next.clone(), sol.lambda, h.clone()));
            }
            result.last_integrals = h;
            x = next;
            // The first step projects the uniform start onto the constraints.
            if k > 0 && (moved <= cfg.eps || (after - before).abs() <= cfg.eps * before.abs()) {
                result.converged = true;
                break;
            }
        }
        if !result.converged {
            if let Some((_, v, l, h)) = best {
                x = v;
                lambda = Some(l);
                result.last_integrals = h;
            }
        }
        result.lambda = lambda;
        x
    };

    let d = expand_ring_mass(c, &ring_mass)?;
    let air = mutual_information(c, &d, &spec, cfg.report_n_mc, seeds::derive(seed, "report"))?;
    result.air_bits = air.mi_bits;
    result.air_std_err = air.std_error;
    result.fourth_moment = sys.fourth_moment(&ring_mass);
    result.residuals = sys.residuals(&ring_mass, c0);
    result.ring_mass = ring_mass;
    Ok(result)
}
