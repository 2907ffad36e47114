//! Python bindings: economies, equilibria, indices and the full check.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use eqindex::calculus::{index_of, index_via_images, model_jacobian};
use eqindex::economy::{build_ces_economy, verify_hypotheses, ExchangeEconomySpec, SharedModel};
use eqindex::fixtures::{fixture, FIXTURE_NAMES};
use eqindex::geometry::{self, PricePoint};
use eqindex::reference_field::eval_fq;
use eqindex::solver::{find_equilibria, SolverConfig};
use eqindex::verifier::{render_text, run_theorem_check, TheoremConfig};
use eqindex::Error;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn point(p: &[f64]) -> PyResult<PricePoint> {
    PricePoint::from_slice(p).map_err(py_err)
}

/// An excess-demand model: a built-in fixture or a CES exchange economy.
#[pyclass(name = "Economy", frozen)]
pub struct PyEconomy {
    model: SharedModel,
}

#[pymethods]
impl PyEconomy {
    /// Built-in model by name (see `fixture_names()`).
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        Ok(Self {
            model: fixture(name).map_err(py_err)?,
        })
    }

    /// CES exchange economy from JSON: `{"agents": [{"weights", "rho", "endowment"}, ...]}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: ExchangeEconomySpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            model: Arc::new(build_ces_economy(&spec).map_err(py_err)?),
        })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.model.dimension()
    }

    #[getter]
    fn label(&self) -> String {
        self.model.label().to_string()
    }

    fn excess_demand(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = self.model.eval(&DVector::from_vec(p)).map_err(py_err)?;
        Ok(f.iter().copied().collect())
    }

    fn jacobian(&self, p: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let j = model_jacobian(self.model.as_ref(), &DVector::from_vec(p)).map_err(py_err)?;
        Ok(matrix_to_rows(&j))
    }

    #[pyo3(signature = (sample_count = 1000, seed = 0))]
    fn check_hypotheses<'py>(&self, py: Python<'py>, sample_count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let report = verify_hypotheses(self.model.as_ref(), sample_count, seed).map_err(py_err)?;
        to_json(py, &report)
    }

    #[pyo3(signature = (epsilon = 1e-3, seed = 0, multistart_count = None))]
    fn equilibria<'py>(
        &self,
        py: Python<'py>,
        epsilon: f64,
        seed: u64,
        multistart_count: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = SolverConfig {
            seed,
            multistart_count,
            ..SolverConfig::default()
        };
        let records = find_equilibria(self.model.as_ref(), epsilon, &cfg).map_err(py_err)?;
        to_json(py, &records)
    }

    /// `(index_of, index_via_images)` at an equilibrium.
    fn index(&self, p: Vec<f64>) -> PyResult<(i32, i32)> {
        let p = point(&p)?;
        Ok((
            index_of(self.model.as_ref(), &p).map_err(py_err)?,
            index_via_images(self.model.as_ref(), &p).map_err(py_err)?,
        ))
    }

    /// Full pipeline; `config` is a JSON object of settings overrides.
    #[pyo3(signature = (config = None))]
    fn theorem_check<'py>(&self, py: Python<'py>, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let cfg: TheoremConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => TheoremConfig::default(),
        };
        let report = run_theorem_check(self.model.clone(), &cfg);
        to_json(py, &report)
    }

    #[pyo3(signature = (config = None))]
    fn theorem_text(&self, config: Option<&str>) -> PyResult<String> {
        let cfg: TheoremConfig = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => TheoremConfig::default(),
        };
        Ok(render_text(&run_theorem_check(self.model.clone(), &cfg)))
    }

    fn __repr__(&self) -> String {
        format!("Economy('{}', n={})", self.model.label(), self.model.dimension())
    }
}

#[pyfunction]
fn fixture_names() -> Vec<&'static str> {
    FIXTURE_NAMES.to_vec()
}

#[pyfunction]
fn project_to_sphere(x: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(geometry::project_to_sphere(&x).map_err(py_err)?.to_vec())
}

#[pyfunction]
fn spherical_distance(a: Vec<f64>, b: Vec<f64>) -> f64 {
    geometry::spherical_distance(&DVector::from_vec(a), &DVector::from_vec(b))
}

/// Positively oriented orthonormal basis of the tangent space at `p`.
#[pyfunction]
fn tangent_basis(p: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let frame = geometry::tangent_basis(&point(&p)?);
    Ok(frame.vectors.iter().map(|v| v.iter().copied().collect()).collect())
}

#[pyfunction]
fn bordered_determinant(a: Vec<Vec<f64>>, p: Vec<f64>) -> PyResult<f64> {
    geometry::bordered_determinant(&matrix_from_rows(&a)?, &DVector::from_vec(p)).map_err(py_err)
}

#[pyfunction]
fn oriented_sign(p: Vec<f64>, vs: Vec<Vec<f64>>) -> i32 {
    let vs: Vec<DVector<f64>> = vs.into_iter().map(DVector::from_vec).collect();
    geometry::oriented_sign(&DVector::from_vec(p), &vs)
}

/// `f^q(p)`
#[pyfunction]
fn reference_field(q: Vec<f64>, p: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(eval_fq(&point(&q)?, &DVector::from_vec(p)).iter().copied().collect())
}

#[pymodule]
#[pyo3(name = "eqindex")]
fn eqindex_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEconomy>()?;
    m.add_function(wrap_pyfunction!(fixture_names, m)?)?;
    m.add_function(wrap_pyfunction!(project_to_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_distance, m)?)?;
    m.add_function(wrap_pyfunction!(tangent_basis, m)?)?;
    m.add_function(wrap_pyfunction!(bordered_determinant, m)?)?;
    m.add_function(wrap_pyfunction!(oriented_sign, m)?)?;
    m.add_function(wrap_pyfunction!(reference_field, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let m = matrix_from_rows(&rows).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(matrix_to_rows(&m), rows);
    }
}
