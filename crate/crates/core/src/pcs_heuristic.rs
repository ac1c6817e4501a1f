//! Fourth-moment matching over ring masses.
//!
//! With `a_w = A_w^2` the ring squared amplitudes and `x_w` the aggregate ring
//! masses, the constraints are
//!
//! ```text
//! sum_w x_w a_w^2 = c0,   sum_w x_w a_w = 1,   sum_w x_w = 1,   x >= 0.
//! ```
//!
//! Three rings give a square system with a unique solution. With more rings
//! the solution set is a polytope; the returned point is the one closest to
//! the uniform distribution (per-point Euclidean distance), found by a primal
//! active-set method in the null space of the equality constraints.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::constellation::{expand_ring_mass, Constellation, Distribution};
use crate::error::{ensure_finite, Error, Result};

/// Tolerance on `c0` for snapping onto an endpoint of the feasible range.
const ENDPOINT_TOL: f64 = 1e-12;

/// The ring-mass constraint matrix with rows `(a_w^2)`, `(a_w)`, `(1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingSystem {
    pub amp2: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RingSystem {
    pub fn new(c: &Constellation) -> Self {
        RingSystem { amp2: c.ring_amp2().to_vec(), counts: c.ring_counts().to_vec() }
    }

    pub fn num_rings(&self) -> usize {
        self.amp2.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let w = self.num_rings();
        DMatrix::from_fn(3, w, |r, k| match r {
            0 => self.amp2[k] * self.amp2[k],
            1 => self.amp2[k],
            _ => 1.0,
        })
    }

    /// `(sum x a^2 - c0, sum x a - 1, sum x - 1)`.
    pub fn residuals(&self, x: &[f64], c0: f64) -> [f64; 3] {
        let mut r = [-c0, -1.0, -1.0];
        for (xi, a) in x.iter().zip(&self.amp2) {
            r[0] += xi * a * a;
            r[1] += xi * a;
            r[2] += xi;
        }
        r
    }

    pub fn fourth_moment(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.amp2).map(|(xi, a)| xi * a * a).sum()
    }
}

/// Extremes of the fourth moment over the feasible ring masses.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRange {
    pub c0_min: f64,
    pub c0_max: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
}

/// Two-ring mixture with unit mean power.
fn bracket(sys: &RingSystem, i: usize, j: usize) -> Vec<f64> {
    let (ai, aj) = (sys.amp2[i], sys.amp2[j]);
    let mut x = vec![0.0; sys.num_rings()];
    x[i] = (aj - 1.0) / (aj - ai);
    x[j] = (1.0 - ai) / (aj - ai);
    x
}

/// Minimum and maximum of `sum x a^2` subject to unit power.
///
/// Over a pair of rings `a_i < 1 < a_j` the unit-power mixture has fourth
/// moment `1 + (1 - a_i)(a_j - 1)`, so the minimum uses the two rings adjacent
/// to unit power (or a ring of exactly unit power) and the maximum uses the
/// innermost and outermost rings.
pub fn feasible_extremes(c: &Constellation) -> Result<FeasibleRange> {
    let sys = RingSystem::new(c);
    let w = sys.num_rings();
    if let Some(k) = sys.amp2.iter().position(|a| (a - 1.0).abs() <= ENDPOINT_TOL) {
        let mut x = vec![0.0; w];
        x[k] = 1.0;
        let (c0_max, argmax) = if w > 1 && sys.amp2[0] < 1.0 && sys.amp2[w - 1] > 1.0 {
            let v = bracket(&sys, 0, w - 1);
            (sys.fourth_moment(&v), v)
        } else {
            (sys.fourth_moment(&x), x.clone())
        };
        return Ok(FeasibleRange { c0_min: sys.fourth_moment(&x), c0_max, argmin: x, argmax });
    }
    let below = sys.amp2.iter().rposition(|&a| a < 1.0);
    let above = sys.amp2.iter().position(|&a| a > 1.0);
    let (Some(i), Some(j)) = (below, above) else {
        return Err(Error::Infeasible("no mixture of ring powers equals 1".into()));
    };
    let argmin = bracket(&sys, i, j);
    let argmax = bracket(&sys, 0, w - 1);
    Ok(FeasibleRange {
        c0_min: sys.fourth_moment(&argmin),
        c0_max: sys.fourth_moment(&argmax),
        argmin,
        argmax,
    })
}

pub fn feasible_c0_range(c: &Constellation) -> Result<(f64, f64)> {
    let r = feasible_extremes(c)?;
    Ok((r.c0_min, r.c0_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicSolution {
    pub ring_mass: Vec<f64>,
    pub distribution: Distribution,
    pub c0_requested: f64,
    /// Target after clamping into the feasible range.
    pub c0_used: f64,
    pub clamped: bool,
    pub fourth_moment: f64,
}

/// Match the fourth moment to `c0`, clamping `c0` into the feasible range.
pub fn solve_heuristic(c: &Constellation, c0: f64) -> Result<HeuristicSolution> {
    solve_with_start(c, c0, None)
}

/// As [`solve_heuristic`], starting the convex solver from the given feasible
/// ring masses (ignored when the solution is unique).
pub fn solve_heuristic_from(c: &Constellation, c0: f64, start: &[f64]) -> Result<HeuristicSolution> {
    solve_with_start(c, c0, Some(start))
}

fn solve_with_start(c: &Constellation, c0: f64, start: Option<&[f64]>) -> Result<HeuristicSolution> {
    ensure_finite(c0, "c0")?;
    let sys = RingSystem::new(c);
    let range = feasible_extremes(c)?;
    let c0_used = c0.clamp(range.c0_min, range.c0_max);
    let clamped = c0_used != c0;

    let x = if (c0_used - range.c0_min).abs() <= ENDPOINT_TOL {
        range.argmin.clone()
    } else if (c0_used - range.c0_max).abs() <= ENDPOINT_TOL {
        range.argmax.clone()
    } else if sys.num_rings() == 3 {
        match exact_three_ring(&sys, c0_used) {
            Ok(x) => x,
            Err(_) => active_set(&sys, &default_start(&range, c0_used))?,
        }
    } else {
        let x0 = match start {
            Some(s) => {
                check_start(&sys, s, c0_used)?;
                s.to_vec()
            }
            None => default_start(&range, c0_used),
        };
        active_set(&sys, &x0)?
    };

    let distribution = expand_ring_mass(c, &x)?;
    Ok(HeuristicSolution {
        fourth_moment: sys.fourth_moment(&x),
        ring_mass: x,
        distribution,
        c0_requested: c0,
        c0_used,
        clamped,
    })
}

fn check_start(sys: &RingSystem, x: &[f64], c0: f64) -> Result<()> {
    if x.len() != sys.num_rings() {
        return Err(Error::DimensionMismatch { expected: sys.num_rings(), got: x.len() });
    }
    let r = sys.residuals(x, c0);
    if x.iter().any(|v| *v < 0.0) || r.iter().any(|v| v.abs() > 1e-9) {
        return Err(Error::InvalidArgument("start point is not feasible".into()));
    }
    Ok(())
}

/// Convex combination of the two extreme vertices hitting `c0`.
fn default_start(range: &FeasibleRange, c0: f64) -> Vec<f64> {
    let theta = (range.c0_max - c0) / (range.c0_max - range.c0_min);
    range.argmin.iter().zip(&range.argmax).map(|(lo, hi)| theta * lo + (1.0 - theta) * hi).collect()
}

fn exact_three_ring(sys: &RingSystem, c0: f64) -> Result<Vec<f64>> {
    let a = &sys.amp2;
    let m = Matrix3::new(a[0] * a[0], a[1] * a[1], a[2] * a[2], a[0], a[1], a[2], 1.0, 1.0, 1.0);
    let x = m
        .lu()
        .solve(&Vector3::new(c0, 1.0, 1.0))
        .ok_or_else(|| Error::Infeasible("ring system is singular".into()))?;
    if let Some(k) = (0..3).find(|&k| x[k] < -1e-12) {
        return Err(Error::Infeasible(format!("ring {k} receives negative mass {}", x[k])));
    }
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

/// Minimize `sum_w (x_w - n_w/Q)^2 / n_w` subject to the ring system and `x >= 0`.
fn active_set(sys: &RingSystem, x0: &[f64]) -> Result<Vec<f64>> {
    let w = sys.num_rings();
    let q: usize = sys.counts.iter().sum();
    let target = DVector::from_fn(w, |k, _| sys.counts[k] as f64 / q as f64);
    let weight = DVector::from_fn(w, |k, _| 1.0 / sys.counts[k] as f64);

    // Null space of the constraint matrix from the eigenvectors of A^T A.
    let a = sys.matrix();
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let mut order: Vec<usize> = (0..w).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let dim = w - 3;
    let z = DMatrix::from_fn(w, dim, |r, k| eig.eigenvectors[(r, order[k])]);

    let mut x = DVector::from_column_slice(x0);
    let mut working: Vec<usize> = Vec::new();
    let h = 2.0 * z.transpose() * DMatrix::from_diagonal(&weight) * &z;

    for _ in 0..50 * (w + 1) {
        let grad = 2.0 * z.transpose() * (weight.component_mul(&(&x - &target)));
        let m = working.len();
        let mut kkt = DMatrix::zeros(dim + m, dim + m);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
        for (j, &i) in working.iter().enumerate() {
            for k in 0..dim {
                kkt[(k, dim + j)] = -z[(i, k)];
                kkt[(dim + j, k)] = z[(i, k)];
            }
        }
        let mut rhs = DVector::zeros(dim + m);
        rhs.rows_mut(0, dim).copy_from(&(-&grad));
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonConvergence("singular KKT system in ring solver".into()))?;
        let y = sol.rows(0, dim).into_owned();
        let step = &z * &y;

        if step.amax() <= 1e-14 {
            let worst = (0..m).min_by(|&i, &j| sol[dim + i].total_cmp(&sol[dim + j]));
            match worst {
                Some(j) if sol[dim + j] < -1e-12 => {
                    working.remove(j);
                    continue;
                }
                _ => return Ok(finish(x)),
            }
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..w {
            if !working.contains(&i) && step[i] < 0.0 {
                let t = -x[i] / step[i];
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        x += alpha * &step;
        if let Some(i) = blocking {
            x[i] = 0.0;
            working.push(i);
        }
    }
    Err(Error::NonConvergence("ring solver exceeded its iteration budget".into()))
}

fn finish(x: DVector<f64>) -> Vec<f64> {
    x.iter().map(|v| if *v < 0.0 && *v > -1e-12 { 0.0 } else { *v }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qam16_range() {
        let c = Constellation::qam(16).unwrap();
        let (lo, hi) = feasible_c0_range(&c).unwrap();
        assert!((lo - 1.0).abs() < 1e-15);
        assert!((hi - 1.64).abs() < 1e-12);
    }

    #[test]
    fn qam64_lower_endpoint() {
        let c = Constellation::qam(64).unwrap();
        let r = feasible_extremes(&c).unwrap();
        assert!((r.c0_min - 1828.0 / 1764.0).abs() < 1e-12);
        assert!((r.c0_min - 1.0363).abs() < 1e-4);
        assert!((r.argmin[4] - 0.5).abs() < 1e-12 && (r.argmin[5] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn psk_range_is_a_point() {
        let c = Constellation::psk(64).unwrap();
        assert_eq!(feasible_c0_range(&c).unwrap(), (1.0, 1.0));
        let s = solve_heuristic(&c, 1.3).unwrap();
        assert!(s.clamped);
        assert_eq!(s.ring_mass, vec![1.0]);
    }

    #[test]
    fn qam16_examples() {
        let c = Constellation::qam(16).unwrap();
        let s = solve_heuristic(&c, 1.2).unwrap();
        for (x, e) in s.ring_mass.iter().zip([0.15625, 0.6875, 0.15625]) {
            assert!((x - e).abs() < 1e-12);
        }
        let s = solve_heuristic(&c, 1.0).unwrap();
        assert_eq!(s.ring_mass, vec![0.0, 1.0, 0.0]);
        let s = solve_heuristic(&c, 1.32).unwrap();
        for (x, e) in s.ring_mass.iter().zip([0.25, 0.5, 0.25]) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn clamps_outside_range() {
        let c = Constellation::qam(16).unwrap();
        let s = solve_heuristic(&c, 2.0).unwrap();
        assert!(s.clamped);
        assert!((s.fourth_moment - 1.64).abs() < 1e-12);
        let s = solve_heuristic(&c, 0.5).unwrap();
        assert!(s.clamped);
        assert_eq!(s.ring_mass, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn qam64_interior_residuals() {
        let c = Constellation::qam(64).unwrap();
        let sys = RingSystem::new(&c);
        for c0 in [1.04, 1.1, 1.2, 1.3, 1.38, 1.5, 1.9] {
            let s = solve_heuristic(&c, c0).unwrap();
            let r = sys.residuals(&s.ring_mass, c0);
            assert!(r[0].abs() < 1e-10 && r[1].abs() < 1e-10 && r[2].abs() < 1e-10, "{c0}: {r:?}");
            assert!(s.ring_mass.iter().all(|x| *x >= -1e-12));
        }
    }

    #[test]
    fn uniform_is_returned_at_its_own_moment() {
        let c = Constellation::qam(64).unwrap();
        let s = solve_heuristic(&c, 2436.0 / 1764.0).unwrap();
        for (x, n) in s.ring_mass.iter().zip(c.ring_counts()) {
            assert!((x - *n as f64 / 64.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_infeasible_start() {
        let c = Constellation::qam(64).unwrap();
        assert!(solve_heuristic_from(&c, 1.2, &[1.0 / 9.0; 9]).is_err());
    }
}
