use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pcs_isac::comms_metrics::{self, ChannelSpec};
use pcs_isac::constellation::{self, expand_ring_mass};
use pcs_isac::detection::{self, DetectionScenario};
use pcs_isac::ofdm_af::{self, OfdmConfig};
use pcs_isac::pcs_heuristic;
use pcs_isac::pcs_optimal::{self, MbaConfig, PcsResult};
use pcs_isac::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonConvergence(_) | Error::Overflow(_, _) => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Constellation", module = "pcs_isac_py", frozen)]
struct PyConstellation {
    inner: pcs_isac::Constellation,
}

#[pymethods]
impl PyConstellation {
    #[staticmethod]
    fn qam(order: usize) -> PyResult<Self> {
        Ok(PyConstellation { inner: pcs_isac::Constellation::qam(order).map_err(to_py)? })
    }

    #[staticmethod]
    fn psk(order: usize) -> PyResult<Self> {
        Ok(PyConstellation { inner: pcs_isac::Constellation::psk(order).map_err(to_py)? })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn num_rings(&self) -> usize {
        self.inner.num_rings()
    }

    #[getter]
    fn ring_amp2(&self) -> Vec<f64> {
        self.inner.ring_amp2().to_vec()
    }

    #[getter]
    fn ring_counts(&self) -> Vec<usize> {
        self.inner.ring_counts().to_vec()
    }

    fn points(&self) -> Vec<Complex64> {
        self.inner.points()
    }

    /// `(c0_min, c0_max)` over unit-power ring-uniform laws.
    fn feasible_range(&self) -> PyResult<(f64, f64)> {
        pcs_heuristic::feasible_c0_range(&self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Constellation('{}')", self.inner.id())
    }
}

#[pyclass(name = "Distribution", module = "pcs_isac_py", frozen)]
struct PyDistribution {
    inner: pcs_isac::Distribution,
}

#[pymethods]
impl PyDistribution {
    #[staticmethod]
    fn uniform(c: &PyConstellation) -> Self {
        PyDistribution { inner: pcs_isac::Distribution::uniform(&c.inner) }
    }

    #[staticmethod]
    fn from_ring_mass(c: &PyConstellation, ring_mass: Vec<f64>) -> PyResult<Self> {
        Ok(PyDistribution { inner: expand_ring_mass(&c.inner, &ring_mass).map_err(to_py)? })
    }

    #[getter]
    fn per_point(&self) -> Vec<f64> {
        self.inner.per_point().to_vec()
    }

    #[getter]
    fn ring_mass(&self) -> Vec<f64> {
        self.inner.ring_mass().to_vec()
    }

    fn moment(&self, c: &PyConstellation, order: u32) -> PyResult<f64> {
        constellation::moment(&c.inner, &self.inner, order).map_err(to_py)
    }

    fn entropy_bits(&self) -> f64 {
        constellation::entropy_bits(&self.inner)
    }
}

#[pyclass(name = "ShapeResult", module = "pcs_isac_py", frozen)]
struct PyShapeResult {
    inner: PcsResult,
}

#[pymethods]
impl PyShapeResult {
    #[getter]
    fn c0(&self) -> f64 {
        self.inner.c0
    }

    #[getter]
    fn ring_mass(&self) -> Vec<f64> {
        self.inner.ring_mass.clone()
    }

    #[getter]
    fn air_bits(&self) -> f64 {
        self.inner.air_bits
    }

    #[getter]
    fn air_std_err(&self) -> f64 {
        self.inner.air_std_err
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iters(&self) -> usize {
        self.inner.iters
    }

    /// Lagrange multipliers, or `None` when the law was fixed by the constraints.
    #[getter]
    fn multipliers(&self) -> Option<(f64, f64)> {
        self.inner.lambda.map(|l| (l[0], l[1]))
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.inner.trace.clone()
    }

    #[getter]
    fn fourth_moment(&self) -> f64 {
        self.inner.fourth_moment
    }

    fn distribution(&self, c: &PyConstellation) -> PyResult<PyDistribution> {
        Ok(PyDistribution { inner: self.inner.distribution(&c.inner).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }
}

/// Mutual information in bits and its standard error.
#[pyfunction]
#[pyo3(signature = (c, d, sigma2, n_mc = 100_000, seed = 1))]
fn mutual_information(c: &PyConstellation, d: &PyDistribution, sigma2: f64, n_mc: usize, seed: u64) -> PyResult<(f64, f64)> {
    let spec = ChannelSpec::new(sigma2).map_err(to_py)?;
    let mi = comms_metrics::mutual_information(&c.inner, &d.inner, &spec, n_mc, seed).map_err(to_py)?;
    Ok((mi.mi_bits, mi.std_error))
}

#[pyfunction]
#[pyo3(signature = (c, c0, sigma2 = 0.01, n_mc = 100_000, seed = 1))]
fn solve_heuristic(c: &PyConstellation, c0: f64, sigma2: f64, n_mc: usize, seed: u64) -> PyResult<PyShapeResult> {
    let sol = pcs_heuristic::solve_heuristic(&c.inner, c0).map_err(to_py)?;
    let spec = ChannelSpec::new(sigma2).map_err(to_py)?;
    let air = comms_metrics::mutual_information(&c.inner, &sol.distribution, &spec, n_mc, seed).map_err(to_py)?;
    Ok(PyShapeResult { inner: PcsResult::from_heuristic(&sol, &air, &c.inner) })
}

#[pyfunction]
#[pyo3(signature = (c, c0, sigma2 = 0.01, n_mc = 10_000, report_n_mc = 100_000, eps = 1e-5, max_iter = 200, seed = 1))]
#[allow(clippy::too_many_arguments)]
fn run_mba(
    py: Python<'_>,
    c: &PyConstellation,
    c0: f64,
    sigma2: f64,
    n_mc: usize,
    report_n_mc: usize,
    eps: f64,
    max_iter: usize,
    seed: u64,
) -> PyResult<PyShapeResult> {
    let mut cfg = MbaConfig::new(c0, sigma2);
    cfg.n_mc = n_mc;
    cfg.report_n_mc = report_n_mc;
    cfg.eps = eps;
    cfg.max_iter = max_iter;
    let inner = py.detach(|| pcs_optimal::run_mba(&c.inner, &cfg, seed)).map_err(to_py)?;
    Ok(PyShapeResult { inner })
}

/// Peak-normalized average zero-Doppler slice: `(lags, power_db)`.
#[pyfunction]
#[pyo3(signature = (c, d, subcarriers = 64, n_mc = 1000, seed = 1))]
fn zero_doppler_slice(
    py: Python<'_>,
    c: &PyConstellation,
    d: &PyDistribution,
    subcarriers: usize,
    n_mc: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = OfdmConfig::new(subcarriers, 1).map_err(to_py)?;
    let grid = py
        .detach(|| ofdm_af::average_zero_doppler(&c.inner, &d.inner, &cfg, n_mc, seed, true))
        .map_err(to_py)?;
    let power = grid.power().map(<[f64]>::to_vec).unwrap_or_default();
    Ok((grid.tau_axis, power))
}

/// Detection probability with Wilson bounds: one `(snr_db, pd, lo, hi)` per SNR.
#[pyfunction]
#[pyo3(signature = (c, d, snr_db, n_mc = 5000, pfa = 1e-4, si_db = Some(10.0), seed = 1))]
#[allow(clippy::too_many_arguments)]
fn pd_curve(
    py: Python<'_>,
    c: &PyConstellation,
    d: &PyDistribution,
    snr_db: Vec<f64>,
    n_mc: usize,
    pfa: f64,
    si_db: Option<f64>,
    seed: u64,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let mut sc = DetectionScenario::new(&c.inner, &d.inner).map_err(to_py)?;
    sc.n_mc = n_mc;
    sc.pfa = pfa;
    sc.si_db = si_db;
    let pts = py.detach(|| detection::pd_curve(&sc, &snr_db, seed)).map_err(to_py)?;
    Ok(pts.iter().map(|p| (p.snr_db, p.pd, p.ci_lo, p.ci_hi)).collect())
}

#[pymodule]
fn pcs_isac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConstellation>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyShapeResult>()?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(solve_heuristic, m)?)?;
    m.add_function(wrap_pyfunction!(run_mba, m)?)?;
    m.add_function(wrap_pyfunction!(zero_doppler_slice, m)?)?;
    m.add_function(wrap_pyfunction!(pd_curve, m)?)?;
    Ok(())
}
