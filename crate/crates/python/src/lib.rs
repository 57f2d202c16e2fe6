//! Python module `pyosculate`: geometries, osculating groups and the flow and
//! groupoid probes. Reports come back as plain dicts (the JSON report
//! shapes); group elements are flat lists `[h1, ..., hp, n1, ..., nq]`.

use std::path::PathBuf;

use osculate::config::{parse_tuple, Entry};
use osculate::expmaps::{verify_h_adapted, HandleDescriptor};
use osculate::expr::Expression;
use osculate::flows::{flow_commutator_probe, oracle_second_order, VectorField};
use osculate::geometry::{describe, osculating_b, Geometry};
use osculate::groupoid::{convergence_probe, transition_probe};
use osculate::nilpotent::{
    gb_bracket, gb_commutator, gb_dilate, gb_exp, gb_inv, gb_log, gb_mul, BilinearMap,
    GroupElement,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(pyosculate, OsculateError, PyException);

fn err(e: osculate::Error) -> PyErr {
    OsculateError::new_err(e.to_string())
}

/// Serializes through JSON so reports arrive as dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn element(v: &[f64], p: usize, q: usize) -> PyResult<GroupElement> {
    if v.len() != p + q {
        return Err(PyValueError::new_err(format!(
            "expected {} coordinates (p = {p}, q = {q}), got {}",
            p + q,
            v.len()
        )));
    }
    Ok(GroupElement::from_flat(v, p))
}

fn tuple(text: &str, vars: &[String]) -> PyResult<Vec<Expression>> {
    let entry = Entry {
        key: "arg".into(),
        value: text.trim().to_string(),
        line: 1,
        value_column: 1,
    };
    parse_tuple(&entry, vars).map_err(err)
}

fn handle_descriptor(text: &str) -> PyResult<HandleDescriptor> {
    text.parse().map_err(err)
}

/// `2^-3, ..., 2^-10`.
#[pyfunction]
fn dyadic_grid() -> Vec<f64> {
    osculate::flows::dyadic_grid()
}

/// A manifold chart with a distribution H given by an H-frame.
#[pyclass(name = "Geometry", frozen)]
struct PyGeometry {
    inner: Geometry,
}

impl PyGeometry {
    fn check_point(&self, point: &[f64]) -> PyResult<()> {
        if point.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "point has {} coordinates, geometry has dimension {}",
                point.len(),
                self.inner.dim()
            )));
        }
        Ok(())
    }

    fn field(&self, text: &str) -> PyResult<VectorField> {
        let text = text.trim();
        if self.inner.spec().frame_field(text).is_some() {
            return VectorField::named(&self.inner, text).map_err(err);
        }
        let mut vars = self.inner.spec().vars.clone();
        vars.push("t".into());
        VectorField::new(tuple(text, &vars)?, self.inner.dim()).map_err(err)
    }

    fn curve(&self, text: &str) -> PyResult<Vec<Expression>> {
        match self.inner.spec().curve(text.trim()) {
            Some(c) => Ok(c.to_vec()),
            None => tuple(text, &["t".to_string()]),
        }
    }
}

#[pymethods]
impl PyGeometry {
    /// Parses geometry file text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Geometry::parse(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }

    /// `coeffs[k][i][j]` of the osculating bilinear map at `point`.
    fn osculating_b(&self, point: Vec<f64>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        self.check_point(&point)?;
        Ok(osculating_b(&self.inner, &point).map_err(err)?.coeffs)
    }

    fn group(&self, point: Vec<f64>) -> PyResult<PyGroup> {
        self.check_point(&point)?;
        Ok(PyGroup {
            b: osculating_b(&self.inner, &point).map_err(err)?,
        })
    }

    fn describe<'py>(&self, py: Python<'py>, point: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        self.check_point(&point)?;
        to_py(py, &describe(&self.inner, &point).map_err(err)?)
    }

    /// Second-order flow composition probe; fields are frame field names or
    /// component tuples such as `"(1, 0, -y/2)"`.
    fn second_order<'py>(&self, py: Python<'py>, x: &str, y: &str, point: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        self.check_point(&point)?;
        let r = oracle_second_order(&self.field(x)?, &self.field(y)?, &point).map_err(err)?;
        to_py(py, &r)
    }

    /// Flow commutator against the osculating bracket.
    fn commutator<'py>(&self, py: Python<'py>, x: &str, y: &str, point: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        self.check_point(&point)?;
        let r = flow_commutator_probe(&self.inner, &self.field(x)?, &self.field(y)?, &point).map_err(err)?;
        to_py(py, &r)
    }

    /// H-adaptedness of an exponential map on `(point, arrow)` samples.
    fn verify_h_adapted<'py>(
        &self,
        py: Python<'py>,
        handle: &str,
        samples: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (p, q) = (self.inner.p(), self.inner.q());
        let mut arrows = Vec::with_capacity(samples.len());
        for (m, v) in samples {
            self.check_point(&m)?;
            arrows.push((m, element(&v, p, q)?));
        }
        let points: Vec<Vec<f64>> = arrows.iter().map(|(m, _)| m.clone()).collect();
        let h = handle_descriptor(handle)?.build(&self.inner, &points).map_err(err)?;
        to_py(py, &verify_h_adapted(&h, &arrows).map_err(err)?)
    }

    /// Transition between two exponential maps at `point` along `arrow`.
    #[pyo3(signature = (h1, h2, point, arrow, t_grid=None))]
    fn transition<'py>(
        &self,
        py: Python<'py>,
        h1: &str,
        h2: &str,
        point: Vec<f64>,
        arrow: Vec<f64>,
        t_grid: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        self.check_point(&point)?;
        let pts = std::slice::from_ref(&point);
        let a = handle_descriptor(h1)?.build(&self.inner, pts).map_err(err)?;
        let b = handle_descriptor(h2)?.build(&self.inner, pts).map_err(err)?;
        let v = element(&arrow, self.inner.p(), self.inner.q())?;
        let grid = t_grid.unwrap_or_else(dyadic_grid);
        to_py(py, &transition_probe(&a, &b, &point, &v, &grid).map_err(err)?)
    }

    /// Convergence of the chart inverse along curves `a`, `b` (names or
    /// tuples over `t`).
    #[pyo3(signature = (handle, a, b, t_grid=None))]
    fn convergence<'py>(
        &self,
        py: Python<'py>,
        handle: &str,
        a: &str,
        b: &str,
        t_grid: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (ca, cb) = (self.curve(a)?, self.curve(b)?);
        let start: Vec<f64> = ca.iter().map(|c| c.eval(&[0.0])).collect::<osculate::Result<_>>().map_err(err)?;
        let h = handle_descriptor(handle)?.build(&self.inner, &[start]).map_err(err)?;
        let grid = t_grid.unwrap_or_else(dyadic_grid);
        to_py(py, &convergence_probe(&h, &ca, &cb, &grid).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(name={:?}, dim={}, p={})",
            self.inner.name(),
            self.inner.dim(),
            self.inner.p()
        )
    }
}

/// The two-step nilpotent group `G_B` on `R^p x R^q`.
#[pyclass(name = "Group", frozen)]
struct PyGroup {
    b: BilinearMap,
}

impl PyGroup {
    fn el(&self, v: &[f64]) -> PyResult<GroupElement> {
        element(v, self.b.p, self.b.q)
    }
}

#[pymethods]
impl PyGroup {
    /// `coeffs[k][i][j] = B_{ij}^k`.
    #[new]
    fn new(coeffs: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        Ok(Self {
            b: BilinearMap::from_coeffs(coeffs).map_err(err)?,
        })
    }

    #[getter]
    fn p(&self) -> usize {
        self.b.p
    }

    #[getter]
    fn q(&self) -> usize {
        self.b.q
    }

    #[getter]
    fn coeffs(&self) -> Vec<Vec<Vec<f64>>> {
        self.b.coeffs.clone()
    }

    fn identity(&self) -> Vec<f64> {
        vec![0.0; self.b.p + self.b.q]
    }

    fn mul(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(gb_mul(&self.b, &self.el(&x)?, &self.el(&y)?).map_err(err)?.to_flat())
    }

    fn inv(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(gb_inv(&self.b, &self.el(&x)?).map_err(err)?.to_flat())
    }

    fn commutator(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(gb_commutator(&self.b, &self.el(&x)?, &self.el(&y)?).map_err(err)?.to_flat())
    }

    fn exp(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(gb_exp(&self.b, &self.el(&x)?).map_err(err)?.to_flat())
    }

    fn log(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(gb_log(&self.b, &self.el(&x)?).map_err(err)?.to_flat())
    }

    fn bracket(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(gb_bracket(&self.b, &self.el(&x)?, &self.el(&y)?).map_err(err)?.to_flat())
    }

    fn dilate(&self, x: Vec<f64>, s: f64) -> PyResult<Vec<f64>> {
        Ok(gb_dilate(&self.el(&x)?, s).map_err(err)?.to_flat())
    }

    fn skew_rank(&self) -> usize {
        self.b.skew_rank()
    }

    fn class_hint<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.b.class_hint())
    }

    fn __repr__(&self) -> String {
        format!("Group(p={}, q={}, coeffs={:?})", self.b.p, self.b.q, self.b.coeffs)
    }
}

#[pymodule]
fn pyosculate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeometry>()?;
    m.add_class::<PyGroup>()?;
    m.add("OsculateError", m.py().get_type::<OsculateError>())?;
    m.add_function(wrap_pyfunction!(dyadic_grid, m)?)?;
    Ok(())
}
