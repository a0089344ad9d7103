use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fdhmm::harness::{self, ExperimentConfig, Series};
use fdhmm::homog::{solve_cell_with, CellOptions};
use fdhmm::upscale::{exact_reference, matched_reference};
use fdhmm::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::UnknownCoefficient(_)
        | Error::Config(_)
        | Error::Cfl { .. }
        | Error::BoxTooSmall { .. }
        | Error::Mismatch(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Averaging kernel of class (p, q).
#[pyclass(frozen, module = "fdhmm_py")]
struct Kernel(fdhmm::Kernel);

#[pymethods]
impl Kernel {
    #[new]
    fn new(p: usize, q: usize) -> PyResult<Self> {
        fdhmm::Kernel::new(p, q).map(Kernel).map_err(to_py)
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p()
    }

    #[getter]
    fn q(&self) -> usize {
        self.0.q()
    }

    fn coeffs(&self) -> Vec<f64> {
        self.0.coeffs()
    }

    fn eval(&self, x: f64) -> f64 {
        self.0.eval(x)
    }

    fn eval_scaled(&self, h: f64, x: f64) -> f64 {
        self.0.eval_scaled(h, x)
    }

    fn derivative(&self, order: usize, x: f64) -> f64 {
        self.0.derivative(order, x)
    }

    fn moment(&self, r: usize) -> f64 {
        self.0.moment_exact(r)
    }

    fn __repr__(&self) -> String {
        format!("Kernel(p={}, q={})", self.0.p(), self.0.q())
    }
}

/// Catalog coefficient `A(x, y)`.
#[pyclass(frozen, module = "fdhmm_py")]
struct CoefficientField(fdhmm::CoefficientField);

#[pymethods]
impl CoefficientField {
    #[new]
    fn new(label: &str) -> PyResult<Self> {
        fdhmm::CoefficientField::catalog(label)
            .map(CoefficientField)
            .map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label().to_string()
    }

    #[getter]
    fn bounds(&self) -> (f64, f64) {
        (self.0.c1(), self.0.c2())
    }

    /// `A(x, y)` as a `dim × dim` nested list.
    fn eval(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let d = self.0.dim();
        if x.len() != d || y.len() != d {
            return Err(PyValueError::new_err(format!(
                "x and y need {d} components"
            )));
        }
        let a = self.0.eval(&x, &y);
        Ok((0..d).map(|k| a[k][..d].to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!("CoefficientField('{}')", self.0.label())
    }
}

fn tensor_rows(a: &fdhmm::Mat, d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|k| a[k][..d].to_vec()).collect()
}

/// Homogenized tensor and correctors at slow point `x` on an `n^d` cell grid.
#[pyfunction]
#[pyo3(signature = (field, x, n=256))]
fn cell_solve<'py>(
    py: Python<'py>,
    field: &CoefficientField,
    x: Vec<f64>,
    n: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let sol = py
        .detach(|| solve_cell_with(&field.0, &x, n, CellOptions::default()))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("a0", tensor_rows(&sol.a0, sol.dim))?;
    out.set_item("correctors", sol.correctors)?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("residual", sol.residual)?;
    Ok(out)
}

/// HMM flux at `r0` with its matched and, optionally, resolved references.
#[pyfunction]
#[pyo3(signature = (field, slope, eps, eta, tau=None, p=3, q=6, r0=None, pts_per_eps=32, cfl=0.5, reference_n=None))]
#[allow(clippy::too_many_arguments)]
fn hmm_flux<'py>(
    py: Python<'py>,
    field: &CoefficientField,
    slope: Vec<f64>,
    eps: f64,
    eta: f64,
    tau: Option<f64>,
    p: usize,
    q: usize,
    r0: Option<Vec<f64>>,
    pts_per_eps: usize,
    cfl: f64,
    reference_n: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = field.0.dim();
    let problem = fdhmm::MicroProblem::new(
        field.0.clone(),
        r0.unwrap_or_else(|| vec![0.0; d]),
        slope,
        eps,
        eta,
    )
    .with_tau(tau.unwrap_or(eta))
    .with_pts_per_eps(pts_per_eps)
    .with_cfl(cfl);
    let (flux, matched, resolved) = py
        .detach(|| -> fdhmm::Result<_> {
            let kernel = fdhmm::Kernel::new(p, q)?;
            let flux = fdhmm::hmm_flux(&problem, &kernel)?;
            let matched = matched_reference(&problem)?;
            let resolved = reference_n
                .map(|n| exact_reference(&problem, n))
                .transpose()?;
            Ok((flux, matched, resolved))
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("flux", &flux.value)?;
    out.set_item("reference", &matched.value)?;
    out.set_item(
        "error",
        fdhmm::upscaling_error(&flux, &matched).map_err(to_py)?,
    )?;
    if let Some(r) = resolved {
        out.set_item(
            "resolved_error",
            fdhmm::upscaling_error(&flux, &r).map_err(to_py)?,
        )?;
        out.set_item("resolved", r.value)?;
    }
    Ok(out)
}

/// `|∫ K_η(t) f(t/ε) dt − mean(f)|` for `f = sin(2πt + phase)`.
#[pyfunction]
#[pyo3(signature = (kernel, eta, eps, phase=0.0))]
fn periodic_average_error(kernel: &Kernel, eta: f64, eps: f64, phase: f64) -> PyResult<f64> {
    fdhmm::periodic_average_test(&kernel.0, eta, eps, |t| {
        (2.0 * std::f64::consts::PI * t + phase).sin()
    })
    .map_err(to_py)
}

fn series_dict<'py>(py: Python<'py>, series: &[Series]) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    for s in series {
        let d = PyDict::new(py);
        d.set_item(
            "sweep_var",
            s.records.iter().map(|r| r.sweep_var).collect::<Vec<_>>(),
        )?;
        d.set_item("error", s.errors())?;
        d.set_item("slope", s.fit.map(|f| f.slope))?;
        out.set_item(&s.label, d)?;
    }
    Ok(out)
}

fn parse(config: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_toml(config).map_err(to_py)
}

/// Upscaling-error sweeps from a TOML document with a `[convergence]` table.
#[pyfunction]
fn run_convergence<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse(config)?;
    let cfg = cfg.convergence().map_err(to_py)?.clone();
    let series = py
        .detach(|| harness::run_convergence(&cfg))
        .map_err(to_py)?;
    series_dict(py, &series)
}

/// Expansion experiment (`fig2`, `fig3`, `fig4`, `time-averages`,
/// `flux-decomp`) from a TOML document with an `[expansion]` table.
#[pyfunction]
fn run_expansion<'py>(
    py: Python<'py>,
    config: &str,
    experiment: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse(config)?;
    let cfg = cfg.expansion().map_err(to_py)?.clone();
    let exp: harness::ExpansionExperiment = experiment.parse().map_err(to_py)?;
    let out = py
        .detach(|| harness::run_expansion(&cfg, exp))
        .map_err(to_py)?;
    let d = series_dict(py, &out.series)?;
    let summary = PyDict::new(py);
    for (k, v) in &out.summary {
        summary.set_item(k, v)?;
    }
    d.set_item("summary", summary)?;
    Ok(d)
}

/// Macro solve from a TOML document with a `[macro]` table. Returns node
/// coordinates, the final field and the L² error when an exact solution exists.
#[pyfunction]
fn run_macro<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse(config)?;
    let cfg = cfg.macro_run().map_err(to_py)?.clone();
    let out = py
        .detach(|| harness::run_macro_config(&cfg))
        .map_err(to_py)?;
    let t = &out.trajectory;
    let g = t.grid;
    let coords: Vec<Vec<f64>> = (0..g.len()).map(|i| g.coords(g.multi_index(i))).collect();
    let d = PyDict::new(py);
    d.set_item("coords", coords)?;
    d.set_item("u", t.final_field())?;
    d.set_item("t", t.final_time())?;
    d.set_item("steps", t.steps)?;
    d.set_item("l2_error", out.l2_error)?;
    Ok(d)
}

#[pymodule]
fn fdhmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<CoefficientField>()?;
    m.add_function(wrap_pyfunction!(cell_solve, m)?)?;
    m.add_function(wrap_pyfunction!(hmm_flux, m)?)?;
    m.add_function(wrap_pyfunction!(periodic_average_error, m)?)?;
    m.add_function(wrap_pyfunction!(run_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(run_expansion, m)?)?;
    m.add_function(wrap_pyfunction!(run_macro, m)?)?;
    m.add("CATALOG", fdhmm::media::CATALOG.to_vec())?;
    Ok(())
}
