//! Constellations with a concentric-ring structure and input distributions
//! that are uniform within each ring.
//!
//! Every constellation is symmetric about the origin and every ring holds
//! points of one amplitude. A distribution that is constant within each ring
//! therefore gives a zero-mean symbol, which the ambiguity-function statistics
//! rely on.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance applied when building constellations and distributions.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance applied by [`validate`].
pub const VALIDATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Qam,
    Psk,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Qam => "qam",
            Family::Psk => "psk",
            Family::Custom => "custom",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qam" => Ok(Family::Qam),
            "psk" => Ok(Family::Psk),
            "custom" => Ok(Family::Custom),
            other => Err(Error::UnsupportedConstellation(format!(
                "unknown family '{other}' (expected qam, psk or custom)"
            ))),
        }
    }
}

/// One ring of a custom constellation: `count` equally spaced points of
/// squared amplitude `amp2`, rotated by `phase_offset` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSpec {
    pub amp2: f64,
    pub count: usize,
    pub phase_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    family: Family,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
    ring_index: Vec<usize>,
    ring_amp2: Vec<f64>,
    ring_counts: Vec<usize>,
    ring_phase_offset: Vec<f64>,
}

impl Constellation {
    /// Build a QAM or PSK constellation of the given order.
    pub fn new(family: Family, order: usize) -> Result<Self> {
        match family {
            Family::Qam => Self::qam(order),
            Family::Psk => Self::psk(order),
            Family::Custom => Err(Error::UnsupportedConstellation(
                "custom constellations are built from ring lists".into(),
            )),
        }
    }

    /// Square-lattice QAM, normalized to unit mean power.
    pub fn qam(order: usize) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if order < 4 || side * side != order {
            return Err(Error::UnsupportedConstellation(format!(
                "QAM order must be a perfect square >= 4 (square I/Q lattice), got {order}"
            )));
        }
        // Lattice coordinates are odd (even side) or even (odd side) integers
        // in [-(side-1), side-1]; mean power of the lattice is 2(M-1)/3.
        let coords: Vec<i64> = (0..side as i64).map(|k| 2 * k - (side as i64 - 1)).collect();
        let energy = 2.0 * (order as f64 - 1.0) / 3.0;

        let mut by_radius: BTreeMap<i64, Vec<(i64, i64)>> = BTreeMap::new();
        for &i in &coords {
            for &q in &coords {
                by_radius.entry(i * i + q * q).or_default().push((i, q));
            }
        }

        let mut c = Constellation {
            family: Family::Qam,
            amplitude: Vec::with_capacity(order),
            phase: Vec::with_capacity(order),
            ring_index: Vec::with_capacity(order),
            ring_amp2: Vec::with_capacity(by_radius.len()),
            ring_counts: Vec::with_capacity(by_radius.len()),
            ring_phase_offset: Vec::with_capacity(by_radius.len()),
        };
        for (w, (r2, pts)) in by_radius.iter().enumerate() {
            let amp2 = *r2 as f64 / energy;
            let amp = amp2.sqrt();
            c.ring_amp2.push(amp2);
            c.ring_counts.push(pts.len());
            c.ring_phase_offset.push(0.0);
            for &(i, q) in pts {
                c.amplitude.push(amp);
                c.phase.push((q as f64).atan2(i as f64));
                c.ring_index.push(w);
            }
        }
        Ok(c)
    }

    /// Unit-circle PSK with points at `2 pi k / order`.
    pub fn psk(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::UnsupportedConstellation(format!(
                "PSK order must be at least 2, got {order}"
            )));
        }
        Ok(Constellation {
            family: Family::Psk,
            amplitude: vec![1.0; order],
            phase: (0..order).map(|k| 2.0 * PI * k as f64 / order as f64).collect(),
            ring_index: vec![0; order],
            ring_amp2: vec![1.0],
            ring_counts: vec![order],
            ring_phase_offset: vec![0.0],
        })
    }

    /// Custom constellation from a list of rings. Rings must have strictly
    /// increasing squared amplitude, and the uniform distribution must have unit
    /// mean power.
    pub fn from_rings(rings: &[RingSpec]) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::UnsupportedConstellation("empty ring list".into()));
        }
        for (w, r) in rings.iter().enumerate() {
            if !(r.amp2.is_finite() && r.amp2 >= 0.0 && r.phase_offset.is_finite()) {
                return Err(Error::UnsupportedConstellation(format!(
                    "ring {w}: squared amplitude must be finite and nonnegative"
                )));
            }
            if r.count == 0 {
                return Err(Error::UnsupportedConstellation(format!("ring {w}: empty ring")));
            }
            if r.count == 1 && r.amp2 > 0.0 {
                return Err(Error::UnsupportedConstellation(format!(
                    "ring {w}: a single point off the origin breaks central symmetry"
                )));
            }
            if w > 0 && r.amp2 <= rings[w - 1].amp2 {
                return Err(Error::UnsupportedConstellation(
                    "ring squared amplitudes must be strictly increasing".into(),
                ));
            }
        }
        let order: usize = rings.iter().map(|r| r.count).sum();
        let power: f64 = rings.iter().map(|r| r.amp2 * r.count as f64).sum::<f64>() / order as f64;
        if (power - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::UnsupportedConstellation(format!(
                "uniform mean power must be 1 (got {power})"
            )));
        }
        let mut c = Constellation {
            family: Family::Custom,
            amplitude: Vec::with_capacity(order),
            phase: Vec::with_capacity(order),
            ring_index: Vec::with_capacity(order),
            ring_amp2: rings.iter().map(|r| r.amp2).collect(),
            ring_counts: rings.iter().map(|r| r.count).collect(),
            ring_phase_offset: rings.iter().map(|r| r.phase_offset).collect(),
        };
        for (w, r) in rings.iter().enumerate() {
            let amp = r.amp2.sqrt();
            for k in 0..r.count {
                c.amplitude.push(amp);
                c.phase.push(r.phase_offset + 2.0 * PI * k as f64 / r.count as f64);
                c.ring_index.push(w);
            }
        }
        Ok(c)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Number of points `Q`.
    pub fn order(&self) -> usize {
        self.amplitude.len()
    }

    /// Number of rings `W`.
    pub fn num_rings(&self) -> usize {
        self.ring_amp2.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phases(&self) -> &[f64] {
        &self.phase
    }

    pub fn ring_index(&self) -> &[usize] {
        &self.ring_index
    }

    pub fn ring_amp2(&self) -> &[f64] {
        &self.ring_amp2
    }

    pub fn ring_amplitudes(&self) -> Vec<f64> {
        self.ring_amp2.iter().map(|a| a.sqrt()).collect()
    }

    pub fn ring_counts(&self) -> &[usize] {
        &self.ring_counts
    }

    pub fn ring_phase_offsets(&self) -> &[f64] {
        &self.ring_phase_offset
    }

    /// Squared amplitude of point `q`.
    pub fn amp2(&self, q: usize) -> f64 {
        self.ring_amp2[self.ring_index[q]]
    }

    pub fn point(&self, q: usize) -> Complex64 {
        Complex64::from_polar(self.amplitude[q], self.phase[q])
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.order()).map(|q| self.point(q)).collect()
    }

    /// Short identifier such as `qam16`.
    pub fn id(&self) -> String {
        format!("{}{}", self.family, self.order())
    }
}

/// Probability vector over the points of a constellation together with its
/// per-ring aggregate masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    per_point: Vec<f64>,
    ring_mass: Vec<f64>,
}

impl Distribution {
    pub fn uniform(c: &Constellation) -> Self {
        let q = c.order() as f64;
        Distribution {
            per_point: vec![1.0 / q; c.order()],
            ring_mass: c.ring_counts().iter().map(|&n| n as f64 / q).collect(),
        }
    }

    /// Wrap an arbitrary per-point vector. No invariant is enforced beyond the
    /// length; use [`validate`] to check it.
    pub fn from_per_point(c: &Constellation, per_point: Vec<f64>) -> Result<Self> {
        if per_point.len() != c.order() {
            return Err(Error::DimensionMismatch { expected: c.order(), got: per_point.len() });
        }
        let mut ring_mass = vec![0.0; c.num_rings()];
        for (q, p) in per_point.iter().enumerate() {
            ring_mass[c.ring_index()[q]] += p;
        }
        Ok(Distribution { per_point, ring_mass })
    }

    pub fn per_point(&self) -> &[f64] {
        &self.per_point
    }

    pub fn ring_mass(&self) -> &[f64] {
        &self.ring_mass
    }

    pub fn len(&self) -> usize {
        self.per_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_point.is_empty()
    }

    /// Short identifier built from the ring masses.
    pub fn id(&self) -> String {
        let masses: Vec<String> = self.ring_mass.iter().map(|m| format!("{m:.6}")).collect();
        format!("rings[{}]", masses.join(","))
    }
}

/// Spread ring masses uniformly over the points of each ring.
pub fn expand_ring_mass(c: &Constellation, masses: &[f64]) -> Result<Distribution> {
    if masses.len() != c.num_rings() {
        return Err(Error::DimensionMismatch { expected: c.num_rings(), got: masses.len() });
    }
    if let Some((w, m)) = masses.iter().enumerate().find(|(_, m)| !m.is_finite() || **m < 0.0) {
        return Err(Error::InvalidDistribution(format!("ring {w} has invalid mass {m}")));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > VALIDATION_TOL {
        return Err(Error::InvalidDistribution(format!("ring masses sum to {total}, not 1")));
    }
    let per_point = c
        .ring_index()
        .iter()
        .map(|&w| masses[w] / c.ring_counts()[w] as f64)
        .collect();
    Ok(Distribution { per_point, ring_mass: masses.to_vec() })
}

fn check_dims(c: &Constellation, d: &Distribution) -> Result<()> {
    if d.len() != c.order() {
        return Err(Error::DimensionMismatch { expected: c.order(), got: d.len() });
    }
    Ok(())
}

/// `sum_q p_q A_q^order`.
pub fn moment(c: &Constellation, d: &Distribution, order: u32) -> Result<f64> {
    check_dims(c, d)?;
    let value = if order.is_multiple_of(2) {
        let half = (order / 2) as i32;
        d.per_point().iter().enumerate().map(|(q, p)| p * c.amp2(q).powi(half)).sum()
    } else {
        d.per_point()
            .iter()
            .zip(c.amplitudes())
            .map(|(p, a)| p * a.powi(order as i32))
            .sum()
    };
    Ok(value)
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy_bits(d: &Distribution) -> f64 {
    -d.per_point()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub checks: Vec<Check>,
}

impl Diagnostics {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, residual: f64, tol: f64, detail: String) {
        self.checks.push(Check { name, residual, passed: residual <= tol, detail });
    }
}

/// Check the constellation and distribution invariants. Never fails; every
/// violation is reported with its measured residual.
pub fn validate(c: &Constellation, d: &Distribution) -> Diagnostics {
    let mut diag = Diagnostics::default();

    if d.len() != c.order() {
        diag.push(
            "dimension",
            (d.len() as f64 - c.order() as f64).abs(),
            0.0,
            format!("distribution has {} entries, constellation {}", d.len(), c.order()),
        );
        return diag;
    }

    let uniform_power = c.ring_amp2().iter().zip(c.ring_counts()).map(|(a, n)| a * *n as f64).sum::<f64>()
        / c.order() as f64;
    diag.push("unit_power", (uniform_power - 1.0).abs(), VALIDATION_TOL, String::new());

    let counted: usize = c.ring_counts().iter().sum();
    diag.push("ring_counts", (counted as f64 - c.order() as f64).abs(), 0.0, String::new());

    let min = d.per_point().iter().cloned().fold(f64::INFINITY, f64::min);
    diag.push("nonnegative", (-min).max(0.0), 0.0, format!("min entry {min}"));

    let total: f64 = d.per_point().iter().sum();
    diag.push("sum_to_one", (total - 1.0).abs(), VALIDATION_TOL, format!("sum {total}"));

    let mut worst = 0.0f64;
    let mut worst_ring = None;
    for w in 0..c.num_rings() {
        let vals: Vec<f64> = (0..c.order())
            .filter(|&q| c.ring_index()[q] == w)
            .map(|q| d.per_point()[q])
            .collect();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi - lo > worst {
            worst = hi - lo;
            worst_ring = Some(w);
        }
    }
    diag.push(
        "ring_uniform",
        worst,
        VALIDATION_TOL,
        worst_ring.map(|w| format!("ring {w} is not uniform")).unwrap_or_default(),
    );

    let mut mass_err = 0.0f64;
    for w in 0..c.num_rings() {
        let sum: f64 = (0..c.order()).filter(|&q| c.ring_index()[q] == w).map(|q| d.per_point()[q]).sum();
        mass_err = mass_err.max((sum - d.ring_mass()[w]).abs());
    }
    diag.push("ring_mass_consistent", mass_err, VALIDATION_TOL, String::new());

    let mean: Complex64 = (0..c.order()).map(|q| c.point(q) * d.per_point()[q]).sum();
    diag.push("zero_mean", mean.norm(), VALIDATION_TOL, format!("mean {mean}"));

    diag
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingDoc {
    pub amp2: f64,
    pub count: usize,
    pub mass: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub phase_offset: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// JSON document describing a constellation and a ring-uniform distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationDoc {
    pub family: Family,
    pub order: usize,
    pub rings: Vec<RingDoc>,
}

impl ConstellationDoc {
    pub fn new(c: &Constellation, d: &Distribution) -> Result<Self> {
        check_dims(c, d)?;
        let rings = (0..c.num_rings())
            .map(|w| RingDoc {
                amp2: c.ring_amp2()[w],
                count: c.ring_counts()[w],
                mass: d.ring_mass()[w],
                phase_offset: c.ring_phase_offsets()[w],
            })
            .collect();
        Ok(ConstellationDoc { family: c.family(), order: c.order(), rings })
    }

    /// Rebuild the constellation and distribution. QAM and PSK documents are
    /// rebuilt from (family, order) and must agree with the listed rings.
    pub fn build(&self) -> Result<(Constellation, Distribution)> {
        let c = match self.family {
            Family::Custom => {
                let specs: Vec<RingSpec> = self
                    .rings
                    .iter()
                    .map(|r| RingSpec { amp2: r.amp2, count: r.count, phase_offset: r.phase_offset })
                    .collect();
                Constellation::from_rings(&specs)?
            }
            fam => Constellation::new(fam, self.order)?,
        };
        if c.order() != self.order || c.num_rings() != self.rings.len() {
            return Err(Error::UnsupportedConstellation(format!(
                "document lists {} rings / order {}, expected {} / {}",
                self.rings.len(),
                self.order,
                c.num_rings(),
                c.order()
            )));
        }
        for (w, r) in self.rings.iter().enumerate() {
            if r.count != c.ring_counts()[w] || (r.amp2 - c.ring_amp2()[w]).abs() > CONSTRUCTION_TOL {
                return Err(Error::UnsupportedConstellation(format!("ring {w} does not match {}", c.id())));
            }
        }
        let masses: Vec<f64> = self.rings.iter().map(|r| r.mass).collect();
        let d = expand_ring_mass(&c, &masses)?;
        Ok((c, d))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn qam16_rings() {
        let c = Constellation::qam(16).unwrap();
        assert_eq!(c.num_rings(), 3);
        assert_eq!(c.ring_counts(), &[4, 8, 4]);
        let expected = [0.2, 1.0, 1.8];
        for (a, e) in c.ring_amp2().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn qam64_rings() {
        let c = Constellation::qam(64).unwrap();
        assert_eq!(c.num_rings(), 9);
        assert_eq!(c.ring_counts().iter().sum::<usize>(), 64);
        // Squared radii of the odd lattice scaled by 42.
        let r2 = [2.0, 10.0, 18.0, 26.0, 34.0, 50.0, 58.0, 74.0, 98.0];
        for (a, r) in c.ring_amp2().iter().zip(r2) {
            assert!((a - r / 42.0).abs() < 1e-15);
        }
        assert_eq!(c.ring_counts(), &[4, 8, 4, 8, 8, 12, 8, 8, 4]);
    }

    #[test]
    fn psk64_single_ring() {
        let c = Constellation::psk(64).unwrap();
        assert_eq!(c.num_rings(), 1);
        assert_eq!(c.ring_amp2(), &[1.0]);
        assert_eq!(c.ring_counts(), &[64]);
    }

    #[test]
    fn unsupported_orders() {
        let err = Constellation::qam(8).unwrap_err().to_string();
        assert!(err.contains("perfect square"), "{err}");
        assert!(Constellation::qam(1).is_err());
        assert!(Constellation::psk(1).unwrap_err().to_string().contains("at least 2"));
        assert!(Constellation::new(Family::Custom, 4).is_err());
    }

    #[test]
    fn odd_side_qam_has_origin_ring() {
        let c = Constellation::qam(9).unwrap();
        assert_eq!(c.ring_amp2()[0], 0.0);
        assert!(validate(&c, &Distribution::uniform(&c)).passed());
    }

    #[test]
    fn point_amplitudes_match_rings_exactly() {
        for c in [Constellation::qam(16).unwrap(), Constellation::qam(64).unwrap(), Constellation::psk(8).unwrap()] {
            let amps = c.ring_amplitudes();
            for q in 0..c.order() {
                assert_eq!(c.amplitudes()[q], amps[c.ring_index()[q]]);
            }
        }
    }

    #[test]
    fn uniform_moments() {
        let c16 = Constellation::qam(16).unwrap();
        let u16 = Distribution::uniform(&c16);
        assert!((moment(&c16, &u16, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((moment(&c16, &u16, 4).unwrap() - 1.32).abs() < 1e-12);

        let c64 = Constellation::qam(64).unwrap();
        let u64_ = Distribution::uniform(&c64);
        assert!((moment(&c64, &u64_, 4).unwrap() - 2436.0 / 1764.0).abs() < 1e-12);

        let psk = Constellation::psk(32).unwrap();
        let d = Distribution::from_per_point(&psk, (0..32).map(|k| (k + 1) as f64 / 528.0).collect()).unwrap();
        assert!((moment(&psk, &d, 4).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_dimension_mismatch() {
        let c16 = Constellation::qam(16).unwrap();
        let c64 = Constellation::qam(64).unwrap();
        let err = moment(&c16, &Distribution::uniform(&c64), 4).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 16, got: 64 }));
    }

    #[test]
    fn entropy_examples() {
        let c64 = Constellation::qam(64).unwrap();
        assert!((entropy_bits(&Distribution::uniform(&c64)) - 6.0).abs() < 1e-12);
        let c16 = Constellation::qam(16).unwrap();
        assert!((entropy_bits(&Distribution::uniform(&c16)) - 4.0).abs() < 1e-12);
        let mut p = vec![0.0; 16];
        p[3] = 1.0;
        assert_eq!(entropy_bits(&Distribution::from_per_point(&c16, p).unwrap()), 0.0);
    }

    #[test]
    fn expand_examples() {
        let c16 = Constellation::qam(16).unwrap();
        let d = expand_ring_mass(&c16, &[0.0, 1.0, 0.0]).unwrap();
        for q in 0..16 {
            let expected = if c16.ring_index()[q] == 1 { 0.125 } else { 0.0 };
            assert_eq!(d.per_point()[q], expected);
        }
        let d = expand_ring_mass(&c16, &[0.25, 0.5, 0.25]).unwrap();
        assert!(d.per_point().iter().all(|p| *p == 1.0 / 16.0));

        let psk = Constellation::psk(64).unwrap();
        let d = expand_ring_mass(&psk, &[1.0]).unwrap();
        assert!(d.per_point().iter().all(|p| *p == 1.0 / 64.0));
    }

    #[test]
    fn expand_rejects_bad_masses() {
        let c16 = Constellation::qam(16).unwrap();
        assert!(matches!(expand_ring_mass(&c16, &[-0.1, 1.0, 0.1]), Err(Error::InvalidDistribution(_))));
        assert!(matches!(expand_ring_mass(&c16, &[0.2, 0.5, 0.2]), Err(Error::InvalidDistribution(_))));
        assert!(matches!(expand_ring_mass(&c16, &[0.5, 0.5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn validate_examples() {
        let c16 = Constellation::qam(16).unwrap();
        assert!(validate(&c16, &Distribution::uniform(&c16)).passed());

        let short = Distribution::from_per_point(&c16, vec![0.9 / 16.0; 16]).unwrap();
        let diag = validate(&c16, &short);
        assert!(!diag.passed());
        let sum = diag.get("sum_to_one").unwrap();
        assert!(!sum.passed);
        assert!((sum.residual - 0.1).abs() < 1e-12);

        let mut p = vec![1.0 / 16.0; 16];
        let ring2: Vec<usize> = (0..16).filter(|&q| c16.ring_index()[q] == 2).collect();
        p[ring2[0]] += 0.01;
        p[ring2[1]] -= 0.01;
        let diag = validate(&c16, &Distribution::from_per_point(&c16, p).unwrap());
        let ring = diag.get("ring_uniform").unwrap();
        assert!(!ring.passed);
        assert!(ring.detail.contains("ring 2"), "{}", ring.detail);
    }

    #[test]
    fn custom_rings() {
        // Two rings, 4 + 4 points, powers 0.5 and 1.5.
        let c = Constellation::from_rings(&[
            RingSpec { amp2: 0.5, count: 4, phase_offset: 0.0 },
            RingSpec { amp2: 1.5, count: 4, phase_offset: PI / 4.0 },
        ])
        .unwrap();
        assert_eq!(c.family(), Family::Custom);
        assert!(validate(&c, &Distribution::uniform(&c)).passed());

        let bad = Constellation::from_rings(&[RingSpec { amp2: 2.0, count: 4, phase_offset: 0.0 }]);
        assert!(bad.unwrap_err().to_string().contains("mean power"));
        let unsorted = Constellation::from_rings(&[
            RingSpec { amp2: 1.5, count: 4, phase_offset: 0.0 },
            RingSpec { amp2: 0.5, count: 4, phase_offset: 0.0 },
        ]);
        assert!(unsorted.is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = Constellation::qam(64).unwrap();
        let masses = [0.1, 0.05, 0.05, 0.1, 0.2, 0.2, 0.1, 0.1, 0.1];
        let d = expand_ring_mass(&c, &masses).unwrap();
        let doc = ConstellationDoc::new(&c, &d).unwrap();
        let text = doc.to_json().unwrap();
        let back = ConstellationDoc::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json().unwrap(), text);
        let (c2, d2) = back.build().unwrap();
        assert_eq!(c2, c);
        assert_eq!(d2, d);
        assert!(text.contains("\"family\": \"qam\""));
    }

    #[test]
    fn json_custom_round_trip() {
        let c = Constellation::from_rings(&[
            RingSpec { amp2: 0.5, count: 4, phase_offset: 0.0 },
            RingSpec { amp2: 1.5, count: 4, phase_offset: 0.3 },
        ])
        .unwrap();
        let d = Distribution::uniform(&c);
        let doc = ConstellationDoc::new(&c, &d).unwrap();
        let (c2, d2) = ConstellationDoc::from_json(&doc.to_json().unwrap()).unwrap().build().unwrap();
        assert_eq!(c2, c);
        assert_eq!(d2, d);
    }

    fn ring_masses(w: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, w).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn fourth_moment_dominates_squared_power(masses in ring_masses(9)) {
            let c = Constellation::qam(64).unwrap();
            let d = expand_ring_mass(&c, &masses).unwrap();
            let m2 = moment(&c, &d, 2).unwrap();
            let m4 = moment(&c, &d, 4).unwrap();
            prop_assert!(m4 >= m2 * m2 - 1e-12);
            // Equality only for constant-modulus support; no 64-QAM ring has unit power.
            prop_assert!(m4 - m2 * m2 > 1e-6);
        }

        #[test]
        fn ring_mass_round_trip(masses in ring_masses(3)) {
            let c = Constellation::qam(16).unwrap();
            let d = expand_ring_mass(&c, &masses).unwrap();
            let again = expand_ring_mass(&c, d.ring_mass()).unwrap();
            prop_assert_eq!(&again, &d);
            prop_assert!(validate(&c, &d).passed());
        }

        #[test]
        fn zero_mean_under_ring_uniform(masses in ring_masses(9), order_idx in 0usize..4) {
            let c = [
                Constellation::qam(64).unwrap(),
                Constellation::qam(36).unwrap(),
                Constellation::qam(256).unwrap(),
                Constellation::psk(8).unwrap(),
            ][order_idx].clone();
            let masses: Vec<f64> = masses.iter().cycle().take(c.num_rings()).cloned().collect();
            let s: f64 = masses.iter().sum();
            let masses: Vec<f64> = masses.iter().map(|m| m / s).collect();
            let d = expand_ring_mass(&c, &masses).unwrap();
            let mean: Complex64 = (0..c.order()).map(|q| c.point(q) * d.per_point()[q]).sum();
            prop_assert!(mean.norm() < 1e-12);
        }
    }

    #[test]
    fn constant_modulus_attains_bound() {
        let c16 = Constellation::qam(16).unwrap();
        let d = expand_ring_mass(&c16, &[0.0, 1.0, 0.0]).unwrap();
        assert!((moment(&c16, &d, 4).unwrap() - 1.0).abs() < 1e-15);
    }
}
