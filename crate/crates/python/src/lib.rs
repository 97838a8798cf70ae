//! Python bindings: thin wrappers over the core types plus a few
//! experiment entry points that return plain dicts and lists.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use conewave_core::bilinear::{empirical_a_ratio, k_scaling_experiment, low_dispersion_l2_check};
use conewave_core::domain::TorusDomain;
use conewave_core::error::ConewaveError;
use conewave_core::geometry::{Cube, Disk};
use conewave_core::localization::{cutoff_report, project_disk, LocalizeParams};
use conewave_core::nullform::{check_exponent_conditions, toy_scan, ExponentTuple, Q};
use conewave_core::packets::{tube_decompose, PacketParams};
use conewave_core::wave::{make_wave, Color, FrequencyAtom, Wave};

fn err(e: ConewaveError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "TorusDomain", frozen)]
#[derive(Clone)]
struct PyTorusDomain {
    inner: TorusDomain,
}

#[pymethods]
impl PyTorusDomain {
    #[new]
    fn new(n: usize, period: f64, grid_points: usize) -> PyResult<Self> {
        Ok(PyTorusDomain {
            inner: TorusDomain::new(n, period, grid_points).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn period(&self) -> f64 {
        self.inner.period
    }

    #[getter]
    fn grid_points(&self) -> usize {
        self.inner.grid_points
    }

    fn __repr__(&self) -> String {
        format!(
            "TorusDomain(n={}, period={}, grid_points={})",
            self.inner.n, self.inner.period, self.inner.grid_points
        )
    }
}

#[pyclass(name = "Wave")]
#[derive(Clone)]
struct PyWave {
    inner: Wave,
}

#[pymethods]
impl PyWave {
    /// Build a validated wave from `[(xi, [amp_components...]), ...]` where
    /// each amplitude component is a complex number.
    #[new]
    fn new(
        domain: PyTorusDomain,
        color: &str,
        k: u32,
        hilbert_dim: usize,
        atoms: Vec<(Vec<f64>, Vec<Complex64>)>,
    ) -> PyResult<Self> {
        let color = match color {
            "red" => Color::Red,
            "blue" => Color::Blue,
            other => return Err(PyValueError::new_err(format!("color must be red or blue, got {other}"))),
        };
        let atoms = atoms
            .into_iter()
            .map(|(xi, amplitude)| FrequencyAtom { xi, amplitude })
            .collect();
        Ok(PyWave {
            inner: make_wave(domain.inner, color, k, hilbert_dim, atoms).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyWave {
            inner: Wave::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn color(&self) -> &'static str {
        match self.inner.color {
            Color::Red => "red",
            Color::Blue => "blue",
        }
    }

    #[getter]
    fn k(&self) -> u32 {
        self.inner.k
    }

    #[getter]
    fn hilbert_dim(&self) -> usize {
        self.inner.hilbert_dim
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.inner.atoms.len()
    }

    #[getter]
    fn domain(&self) -> PyTorusDomain {
        PyTorusDomain {
            inner: self.inner.domain,
        }
    }

    fn energy(&self) -> f64 {
        self.inner.energy()
    }

    fn margin(&self) -> PyResult<f64> {
        self.inner.margin().map_err(err)
    }

    fn angular_dispersion(&self) -> PyResult<f64> {
        self.inner.angular_dispersion().map_err(err)
    }

    /// Evaluate at spacetime points `[(x, t), ...]`; returns one list of
    /// complex component values per point.
    fn evaluate(&self, points: Vec<(Vec<f64>, f64)>) -> Vec<Vec<Complex64>> {
        self.inner.evaluate(&points)
    }

    fn time_reverse(&self) -> PyWave {
        PyWave {
            inner: self.inner.time_reverse(),
        }
    }

    fn normalized(&self) -> PyWave {
        PyWave {
            inner: self.inner.normalized(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Wave(color={}, k={}, hilbert_dim={}, atoms={}, energy={:.6})",
            self.color(),
            self.inner.k,
            self.inner.hilbert_dim,
            self.inner.atoms.len(),
            self.inner.energy()
        )
    }
}

/// Project a wave onto the disk of radius `r` about `(x, t)` and return the
/// localization report as a dict (including the projected wave energy).
#[pyfunction]
#[pyo3(signature = (wave, x, t, r))]
fn localize<'py>(
    py: Python<'py>,
    wave: &PyWave,
    x: Vec<f64>,
    t: f64,
    r: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let disk = Disk::new(x, t, r).map_err(err)?;
    let params = LocalizeParams::default();
    let projection = project_disk(&wave.inner, &disk, &params).map_err(err)?;
    let report = cutoff_report(&wave.inner, &disk, &params).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("energy", report.energy)?;
    out.set_item("energy_projected", report.energy_projected)?;
    out.set_item("energy_minor_ok", report.energy_minor_ok)?;
    out.set_item("local_energy_slack", report.local_energy_slack)?;
    out.set_item("nonlocal_energy_slack", report.nonlocal_energy_slack)?;
    out.set_item("vanish_ratio", report.vanish_ratio)?;
    out.set_item("concentration_ratio", report.concentration_ratio)?;
    out.set_item(
        "projected",
        PyWave {
            inner: projection.projected,
        }
        .into_py(py),
    )?;
    Ok(out)
}

/// Tube decomposition summary over the cube of side `side` about `(x, t)`:
/// reconstruction residual, scales, and per-tube energies.
#[pyfunction]
#[pyo3(signature = (wave, x, t, side, c))]
fn packets<'py>(
    py: Python<'py>,
    wave: &PyWave,
    x: Vec<f64>,
    t: f64,
    side: f64,
    c: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cube = Cube::new(x, t, side).map_err(err)?;
    let decomp = tube_decompose(&wave.inner, &cube, c, &PacketParams::default()).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("c", decomp.c)?;
    out.set_item("r", decomp.r)?;
    out.set_item("big_r", decomp.big_r)?;
    out.set_item("n_tubes", decomp.packets.len())?;
    out.set_item("reconstruction_residual", decomp.reconstruction_residual())?;
    let energies: Vec<f64> = decomp.packets.iter().map(|p| p.wave.energy()).collect();
    out.set_item("tube_energies", energies)?;
    Ok(out)
}

/// Fitted slope of the extremizer product norm against the frequency band.
#[pyfunction]
fn k_scaling_slope(domain: &PyTorusDomain, k_list: Vec<u32>, p: f64, g: usize, slices: usize) -> PyResult<f64> {
    Ok(k_scaling_experiment(&domain.inner, &k_list, p, g, slices)
        .map_err(err)?
        .slope)
}

/// Fitted slope of the focused narrow-against-generic product norm in the
/// angular scale r.
#[pyfunction]
fn low_dispersion_slope(
    domain: &PyTorusDomain,
    r_list: Vec<f64>,
    trials: usize,
    seed: u64,
    g: usize,
    slices: usize,
) -> PyResult<f64> {
    Ok(
        low_dispersion_l2_check(&domain.inner, &r_list, trials, seed, g, slices)
            .map_err(err)?
            .0
            .slope,
    )
}

/// Empirical product-norm ratio over normalized wave pairs on the cube of
/// side `big_r` centered mid-torus.
#[pyfunction]
fn a_ratio(
    pairs: Vec<(PyWave, PyWave)>,
    big_r: f64,
    p: f64,
    g: usize,
    slices: usize,
) -> PyResult<f64> {
    if pairs.is_empty() {
        return Err(PyValueError::new_err("need at least one wave pair"));
    }
    let domain = pairs[0].0.inner.domain;
    let q = Cube::new(vec![domain.period / 2.0; domain.n], 0.0, big_r).map_err(err)?;
    let family: Vec<(Wave, Wave)> = pairs
        .into_iter()
        .map(|(a, b)| (a.inner, b.inner))
        .collect();
    empirical_a_ratio(&family, &q, p, g, slices).map_err(err)
}

fn q_from(pair: (i64, i64)) -> PyResult<Q> {
    if pair.1 == 0 {
        return Err(PyValueError::new_err("zero denominator"));
    }
    Ok(Q::new(pair.0, pair.1))
}

/// Admissibility report for an exponent tuple; every rational is passed and
/// returned as a (numerator, denominator) pair.
#[pyfunction]
#[pyo3(signature = (n, p, beta0, beta_plus, beta_minus, alpha1, alpha2, allow_beta0_equality_at_p0 = true))]
#[allow(clippy::too_many_arguments)]
fn check_exponents<'py>(
    py: Python<'py>,
    n: i64,
    p: (i64, i64),
    beta0: (i64, i64),
    beta_plus: (i64, i64),
    beta_minus: (i64, i64),
    alpha1: (i64, i64),
    alpha2: (i64, i64),
    allow_beta0_equality_at_p0: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let tuple = ExponentTuple {
        n,
        p: q_from(p)?,
        beta0: q_from(beta0)?,
        beta_plus: q_from(beta_plus)?,
        beta_minus: q_from(beta_minus)?,
        alpha1: q_from(alpha1)?,
        alpha2: q_from(alpha2)?,
    };
    let report = check_exponent_conditions(&tuple, allow_beta0_equality_at_p0);
    let out = PyDict::new_bound(py);
    out.set_item("p_in_range", report.p_in_range)?;
    out.set_item("scaling", report.scaling)?;
    out.set_item("beta_minus", report.beta_minus)?;
    out.set_item("beta0", report.beta0)?;
    out.set_item("alpha1", report.alpha1)?;
    out.set_item("alpha2", report.alpha2)?;
    out.set_item("lin", report.lin)?;
    out.set_item("admissible", report.admissible)?;
    out.set_item("p0", (*report.p0.numer(), *report.p0.denom()))?;
    out.set_item(
        "lin_threshold",
        (*report.lin_threshold.numer(), *report.lin_threshold.denom()),
    )?;
    Ok(out)
}

/// Rescaling/band scan of normalized multiplier norms; returns a list of
/// dicts with keys l, k, value, normalizer, ratio.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn multiplier_scan<'py>(
    py: Python<'py>,
    domain: &PyTorusDomain,
    l_list: Vec<u32>,
    k_list: Vec<u32>,
    beta: f64,
    p: f64,
    eps: f64,
    g: usize,
    slices: usize,
) -> PyResult<Bound<'py, PyList>> {
    let rows = toy_scan(&domain.inner, &l_list, &k_list, beta, p, eps, g, slices).map_err(err)?;
    let out = PyList::empty_bound(py);
    for r in rows {
        let d = PyDict::new_bound(py);
        d.set_item("l", r.l)?;
        d.set_item("k", r.k)?;
        d.set_item("value", r.value)?;
        d.set_item("normalizer", r.normalizer)?;
        d.set_item("ratio", r.ratio)?;
        out.append(d)?;
    }
    Ok(out)
}

#[pymodule]
fn conewave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTorusDomain>()?;
    m.add_class::<PyWave>()?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(packets, m)?)?;
    m.add_function(wrap_pyfunction!(k_scaling_slope, m)?)?;
    m.add_function(wrap_pyfunction!(low_dispersion_slope, m)?)?;
    m.add_function(wrap_pyfunction!(a_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(check_exponents, m)?)?;
    m.add_function(wrap_pyfunction!(multiplier_scan, m)?)?;
    Ok(())
}
