use std::path::PathBuf;

use polarlab::conformal::{lift_catalog, willmore as willmore_energy};
use polarlab::job::{self, JobConfig};
use polarlab::surfaces::{SurfaceDef, CATALOG};
use polarlab::tolerances::Tolerances;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: polarlab::Error) -> PyErr {
    if job::is_config_error(&e) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

#[pyfunction]
fn report_schema_version() -> &'static str {
    job::report_schema_version()
}

#[pyfunction]
fn catalog() -> Vec<(&'static str, &'static str)> {
    CATALOG.to_vec()
}

/// Run a job given as JSON text. Returns (exit code, summary JSON).
#[pyfunction]
fn run(py: Python<'_>, config: &str, out_dir: &str) -> PyResult<(i32, String)> {
    let cfg = JobConfig::from_json(config).map_err(to_py)?;
    let dir = PathBuf::from(out_dir);
    let outcome = py.detach(|| job::run(&cfg, &dir)).map_err(to_py)?;
    let summary = serde_json::to_string(&outcome.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((outcome.exit_code(), summary))
}

/// Willmore energy of a catalog surface on an nu x nv grid.
#[pyfunction]
#[pyo3(signature = (surface, params = "{}", nu = 64, nv = 64))]
fn willmore(py: Python<'_>, surface: &str, params: &str, nu: usize, nv: usize) -> PyResult<f64> {
    let params: serde_json::Value = serde_json::from_str(params).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let def = SurfaceDef::from_config(surface, &params).map_err(to_py)?;
    py.detach(|| {
        let spec = def.grid(nu, nv)?;
        let (frame, inv) = lift_catalog(&def, &spec, &Tolerances::default())?;
        willmore_energy(&frame, &inv)
    })
    .map_err(to_py)
}

#[pymodule]
fn polarlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(report_schema_version, m)?)?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(willmore, m)?)?;
    Ok(())
}
