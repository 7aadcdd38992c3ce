//! Python bindings. Matrices cross the boundary as nested lists of complex
//! numbers (row-major); superoperators use the column-stacking convention.

use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dekohere::cp::{self, TripartiteCoefficients};
use dekohere::dephasing::{self, DephasingKind};
use dekohere::generators::{self, GeneratorSpec, QubitGeneratorForm};
use dekohere::harness::{self, RunOptions, Subcommand};
use dekohere::montecarlo::{self, TrajectoryModel};
use dekohere::operator::{self, CMatrix, DensityOperator, HermitianOperator, SpectralDecomposition, Superoperator};
use dekohere::scenario;

type Rows = Vec<Vec<Complex64>>;

fn err(e: dekohere::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &Rows) -> PyResult<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_rows(m: &CMatrix) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn real_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn superop(rows: &Rows) -> PyResult<Superoperator> {
    let m = to_matrix(rows)?;
    let d = (m.nrows() as f64).sqrt().round() as usize;
    Superoperator::from_matrix(d, m).map_err(err)
}

fn density(rows: &Rows) -> PyResult<DensityOperator> {
    DensityOperator::new(to_matrix(rows)?).map_err(err)
}

fn form(name: &str) -> PyResult<QubitGeneratorForm> {
    match name {
        "published" => Ok(QubitGeneratorForm::Published),
        "moment" => Ok(QubitGeneratorForm::Moment),
        other => Err(PyValueError::new_err(format!("unknown form {other:?}; expected \"published\" or \"moment\""))),
    }
}

/// `exp(A)` by scaling and squaring.
#[pyfunction]
fn expm(a: Rows) -> PyResult<Rows> {
    Ok(to_rows(&operator::expm(&to_matrix(&a)?)))
}

/// Distinct eigenvalues and orthogonal projectors of a Hermitian matrix.
#[pyfunction]
#[pyo3(signature = (h, degeneracy_tol = operator::DEFAULT_DEGENERACY_TOL))]
fn spectral_decompose(h: Rows, degeneracy_tol: f64) -> PyResult<(Vec<f64>, Vec<Rows>)> {
    let op = HermitianOperator::new(to_matrix(&h)?).map_err(err)?;
    let sd = operator::spectral_decompose(&op, degeneracy_tol);
    Ok((sd.eigenvalues().to_vec(), sd.projectors().iter().map(to_rows).collect()))
}

#[pyfunction]
fn partial_trace(m: Rows, dims: Vec<usize>, keep: Vec<usize>) -> PyResult<Rows> {
    Ok(to_rows(&operator::partial_trace_operator(&to_matrix(&m)?, &dims, &keep).map_err(err)?))
}

#[pyfunction]
fn choi_matrix(s: Rows) -> PyResult<Rows> {
    Ok(to_rows(&operator::choi_matrix(&superop(&s)?)))
}

/// Choi spectrum of a superoperator as a dict.
#[pyfunction]
#[pyo3(signature = (s, tol = cp::DEFAULT_CP_TOL))]
fn cp_check<'py>(py: Python<'py>, s: Rows, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = cp::cp_check(&superop(&s)?, tol);
    let d = PyDict::new(py);
    d.set_item("min_eigenvalue", r.min_eigenvalue)?;
    d.set_item("eigenvalues", r.eigenvalues)?;
    d.set_item("is_cp", r.is_cp)?;
    d.set_item("is_tp", r.is_tp)?;
    Ok(d)
}

#[pyfunction]
fn qubit_generator_moment(gamma_x: f64, gamma_y: f64, gamma_xy: f64) -> PyResult<Rows> {
    let g = generators::qubit_generator_moment(gamma_x, gamma_y, gamma_xy).map_err(err)?;
    Ok(to_rows(g.matrix()))
}

/// Sum `L_xy + L_+ + L_− + D_xy` of the published qubit generators.
#[pyfunction]
fn qubit_generator_published(gamma_x: f64, gamma_y: f64, gamma_xy: f64) -> PyResult<Rows> {
    let g = generators::qubit_generators(gamma_x, gamma_y, gamma_xy).map_err(err)?;
    Ok(to_rows(g.sum().matrix()))
}

/// Least-squares `c` with `a ≈ c·b` and the relative residual.
#[pyfunction]
fn scalar_ratio(a: Rows, b: Rows) -> PyResult<(f64, f64)> {
    Ok(generators::scalar_ratio(&superop(&a)?, &superop(&b)?))
}

#[pyfunction]
#[pyo3(signature = (t, gamma_x, gamma_y, gamma_xy = 0.0, omega0 = 0.0, form_name = "published"))]
fn qubit_propagator(t: f64, gamma_x: f64, gamma_y: f64, gamma_xy: f64, omega0: f64, form_name: &str) -> PyResult<Rows> {
    let spec = GeneratorSpec::qubit_xy(omega0, gamma_x, gamma_y, gamma_xy, form(form_name)?).map_err(err)?;
    Ok(to_rows(generators::propagator(&spec, t, 1).map_err(err)?.matrix()))
}

/// `exp(t·L)` for `dρ/dt = −i[H,ρ] − (γ/2)[H,[H,ρ]]`.
#[pyfunction]
fn pdme_propagator(h: Rows, gamma: f64, t: f64) -> PyResult<Rows> {
    let h = HermitianOperator::new(to_matrix(&h)?).map_err(err)?;
    let spec = GeneratorSpec::pdme(h, gamma).map_err(err)?;
    Ok(to_rows(generators::propagator(&spec, t, 1).map_err(err)?.matrix()))
}

/// Closed-form dephasing for `H = diag(energies)`.
#[pyclass(name = "DephasingModel", frozen)]
struct PyDephasingModel {
    inner: dephasing::DephasingModel,
}

#[pymethods]
impl PyDephasingModel {
    /// `kind` is "global_white_noise" or "uncorrelated_kicks".
    #[new]
    #[pyo3(signature = (energies, gamma, kind = "global_white_noise"))]
    fn new(energies: Vec<f64>, gamma: f64, kind: &str) -> PyResult<Self> {
        let sd = SpectralDecomposition::from_energies(&energies);
        let kind = match kind {
            "global_white_noise" => DephasingKind::GlobalWhiteNoise { gamma },
            "uncorrelated_kicks" => DephasingKind::UncorrelatedKicks { gamma },
            other => return Err(PyValueError::new_err(format!("unknown dephasing kind {other:?}"))),
        };
        Ok(Self {
            inner: dephasing::DephasingModel::new(sd, kind).map_err(err)?,
        })
    }

    fn coherence_factor(&self, n: usize, m: usize, t: f64) -> PyResult<f64> {
        self.inner.coherence_factor(n, m, t).map_err(err)
    }

    fn evolve(&self, rho0: Rows, t: f64) -> PyResult<Rows> {
        let rho = dephasing::evolve_dephasing(&self.inner, &density(&rho0)?, t).map_err(err)?;
        Ok(to_rows(rho.matrix()))
    }

    fn propagator(&self, t: f64) -> PyResult<Rows> {
        Ok(to_rows(self.inner.propagator(t).map_err(err)?.matrix()))
    }

    /// Monte Carlo average of `U ρ0 U†` at each time in `times`; returns
    /// `(mean, stderr_re, stderr_im)` per time. Times snap to a 1000-step grid
    /// over the largest time.
    #[pyo3(signature = (rho0, times, n_samples, seed = 0))]
    fn monte_carlo(
        &self,
        py: Python<'_>,
        rho0: Rows,
        times: Vec<f64>,
        n_samples: usize,
        seed: u64,
    ) -> PyResult<Vec<(Rows, Vec<Vec<f64>>, Vec<Vec<f64>>)>> {
        let rho0 = density(&rho0)?;
        if times.iter().any(|t| !(*t > 0.0)) {
            return Err(PyValueError::new_err("times must be > 0"));
        }
        let horizon = times.iter().cloned().fold(0.0, f64::max);
        let steps = 1000usize;
        let checkpoints: Vec<usize> =
            times.iter().map(|t| ((t / horizon) * steps as f64).round().max(1.0) as usize).collect();
        let sd = self.inner.decomposition().clone();
        let model = match self.inner.kind() {
            DephasingKind::GlobalWhiteNoise { gamma } => TrajectoryModel::global_white_noise(sd, *gamma, horizon, steps),
            DephasingKind::UncorrelatedKicks { gamma } => TrajectoryModel::uncorrelated_kicks(sd, *gamma, horizon, steps),
            DephasingKind::GeneralKicks { .. } => unreachable!("constructed from a named kind"),
        }
        .map_err(err)?;
        let est = py
            .detach(|| montecarlo::mc_average_at(&model, &rho0, &checkpoints, n_samples, seed))
            .map_err(err)?;
        Ok(est
            .iter()
            .map(|e| (to_rows(&e.mean), real_rows(&e.stderr_re), real_rows(&e.stderr_im)))
            .collect())
    }
}

/// Correlation coefficients of a two-qubit environment state, `η' = (η − βγᵀ)/8`
/// with the system maximally mixed.
#[pyfunction]
fn environment_primed_eta(beta: Vec<f64>, gamma: Vec<f64>, eta: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let env = environment(beta, gamma, eta)?;
    Ok(real_rows(&cp::primed_coefficients(&env).eta))
}

fn environment(beta: Vec<f64>, gamma: Vec<f64>, eta: Vec<Vec<f64>>) -> PyResult<TripartiteCoefficients> {
    let mut env = TripartiteCoefficients::zeros((2, 2, 2));
    if beta.len() != 3 || gamma.len() != 3 || eta.len() != 3 || eta.iter().any(|r| r.len() != 3) {
        return Err(PyValueError::new_err("beta, gamma need 3 entries and eta 3x3 for qubit environments"));
    }
    env.beta = beta;
    env.gamma = gamma;
    env.eta = DMatrix::from_fn(3, 3, |i, j| eta[i][j]);
    Ok(env)
}

/// Reduced map `X ↦ Tr_12[U (X ⊗ ρ_env) U†]` for a qubit system and a
/// two-qubit environment; returns the superoperator of `L + Tr(·)C`.
#[pyfunction]
fn reduced_map(u: Rows, beta: Vec<f64>, gamma: Vec<f64>, eta: Vec<Vec<f64>>) -> PyResult<Rows> {
    let env = environment(beta, gamma, eta)?;
    let map = cp::reduced_map_tomography(&to_matrix(&u)?, &env).map_err(err)?;
    Ok(to_rows(map.as_superoperator().matrix()))
}

/// Runs a scenario file like the command-line tool and returns the report.
#[pyfunction]
#[pyo3(signature = (path, subcommand, out_dir, seed = None, samples = None, steps = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    path: PathBuf,
    subcommand: &str,
    out_dir: PathBuf,
    seed: Option<u64>,
    samples: Option<usize>,
    steps: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let sub: Subcommand = subcommand.parse().map_err(err)?;
    let sc = scenario::parse_scenario(&path).map_err(err)?;
    let opts = RunOptions {
        seed,
        samples,
        steps,
        out_dir,
    };
    let report = py.detach(|| harness::run(sub, &sc, &opts)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("scenario", &report.scenario)?;
    d.set_item("exit_code", report.exit_code())?;
    d.set_item(
        "files",
        report.manifest.iter().map(|m| (m.observable.clone(), m.path.clone())).collect::<Vec<_>>(),
    )?;
    d.set_item("max_invariant_violation", report.max_invariant_violation)?;
    d.set_item("max_abs_z", report.max_abs_z)?;
    d.set_item("non_cp_points", report.non_cp_points)?;
    d.set_item("min_choi_eigenvalue", report.min_choi_eigenvalue)?;
    d.set_item("notes", report.notes.clone())?;
    Ok(d)
}

#[pymodule]
fn dekohere_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(partial_trace, m)?)?;
    m.add_function(wrap_pyfunction!(choi_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(cp_check, m)?)?;
    m.add_function(wrap_pyfunction!(qubit_generator_moment, m)?)?;
    m.add_function(wrap_pyfunction!(qubit_generator_published, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(qubit_propagator, m)?)?;
    m.add_function(wrap_pyfunction!(pdme_propagator, m)?)?;
    m.add_function(wrap_pyfunction!(environment_primed_eta, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_map, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_class::<PyDephasingModel>()?;
    Ok(())
}
