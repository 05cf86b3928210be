//! Python bindings: `import taperrod`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use taper_rod::bvp::{shoot, RodSolution as CoreSolution, SolverConfig};
use taper_rod::calibration::{register_rigid as core_register, LoadCellTable as CoreTable};
use taper_rod::design::{curvature_of, optimize_taper, CurvatureProfile, DesignProblem, NoiseModel};
use taper_rod::geometry::{disc_layout, export_manifest, parse_spec, spec_to_toml, taper_angle};
use taper_rod::rod::{ExternalLoads, TensionSet};
use taper_rod::se3::Vec3;
use taper_rod::{Error, RobotSpec as CoreSpec};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NoConvergence { .. } | Error::NotConverged | Error::NonUnimodal { .. } | Error::TooManyDrops { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

type DesignOutcome = (f64, f64, Vec<(f64, f64)>);

fn xyz(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Backbone and routing description (SI units).
#[pyclass(name = "RobotSpec", module = "taperrod", skip_from_py_object)]
#[derive(Clone)]
pub struct PySpec {
    inner: CoreSpec,
}

#[pymethods]
impl PySpec {
    /// The 34.5 cm validation robot.
    #[staticmethod]
    fn validation_robot() -> Self {
        PySpec { inner: CoreSpec::validation_robot() }
    }

    /// Parse a TOML spec file's contents.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PySpec { inner: parse_spec(text).map_err(to_py)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        spec_to_toml(&self.inner).map_err(to_py)
    }

    fn manifest(&self) -> PyResult<String> {
        export_manifest(&self.inner).map_err(to_py)
    }

    fn with_taper_angle(&self, degrees: f64) -> PyResult<Self> {
        Ok(PySpec { inner: self.inner.with_taper_angle(degrees).map_err(to_py)? })
    }

    fn with_youngs_modulus(&self, pascals: f64) -> Self {
        PySpec { inner: self.inner.with_youngs_modulus(pascals) }
    }

    #[getter]
    fn length(&self) -> f64 {
        self.inner.length
    }
    #[getter]
    fn base_radius(&self) -> f64 {
        self.inner.base_radius
    }
    #[getter]
    fn tip_radius(&self) -> f64 {
        self.inner.tip_radius
    }
    #[getter]
    fn youngs_modulus(&self) -> f64 {
        self.inner.youngs_modulus
    }
    #[getter]
    fn tendon_count(&self) -> usize {
        self.inner.tendon_count
    }
    #[getter]
    fn taper_angle(&self) -> f64 {
        taper_angle(&self.inner)
    }
    #[getter]
    fn disc_positions(&self) -> Vec<f64> {
        disc_layout(&self.inner).positions
    }

    fn __repr__(&self) -> String {
        format!(
            "RobotSpec(length={}, base_radius={}, tip_radius={}, youngs_modulus={})",
            self.inner.length, self.inner.base_radius, self.inner.tip_radius, self.inner.youngs_modulus
        )
    }
}

/// Converged forward solution.
#[pyclass(name = "RodSolution", module = "taperrod")]
pub struct PySolution {
    inner: CoreSolution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn s(&self) -> Vec<f64> {
        self.inner.s.clone()
    }
    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.states.iter().map(|st| xyz(&st.p)).collect()
    }
    #[getter]
    fn curvature(&self) -> Vec<[f64; 3]> {
        self.inner.states.iter().map(|st| xyz(&st.u)).collect()
    }
    #[getter]
    fn quaternions(&self) -> Vec<[f64; 4]> {
        self.inner.states.iter().map(|st| [st.q.w, st.q.i, st.q.j, st.q.k]).collect()
    }
    #[getter]
    fn tip_position(&self) -> [f64; 3] {
        xyz(&self.inner.tip_position())
    }
    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }
    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }
    #[getter]
    fn bending_angle(&self) -> f64 {
        self.inner.bending_angle()
    }
    fn position_at(&self, s: f64) -> [f64; 3] {
        xyz(&self.inner.position_at(s))
    }
}

/// Solve the clamped rod under tendon tensions and an optional tip force.
#[pyfunction]
#[pyo3(signature = (spec, tensions, tip_force = None, steps = 200))]
fn solve(spec: PyRef<'_, PySpec>, tensions: Vec<f64>, tip_force: Option<[f64; 3]>, steps: usize) -> PyResult<PySolution> {
    let tensions = TensionSet::new(tensions).map_err(to_py)?;
    let loads = ExternalLoads::tip_force(tip_force.map(Vec3::from).unwrap_or_else(Vec3::zeros));
    let sol = shoot(&spec.inner, &tensions, &loads, &SolverConfig::with_steps(steps), None).map_err(to_py)?;
    Ok(PySolution { inner: sol })
}

/// Recover the taper angle whose curvature profile best matches a target.
/// `target` is `(s, u)` with `u` a list of 3-vectors; when omitted, the
/// target is planted at `plant_alpha` with multiplicative `noise`.
/// Returns `(alpha_star, cost, [(alpha, cost), ...])`.
#[pyfunction]
#[pyo3(signature = (spec, tension, target = None, plant_alpha = None, noise = 0.0, seed = 42, tendon = 0, bounds = (0.0, 2.0)))]
#[allow(clippy::too_many_arguments)]
fn design_taper(
    spec: PyRef<'_, PySpec>,
    tension: f64,
    target: Option<(Vec<f64>, Vec<[f64; 3]>)>,
    plant_alpha: Option<f64>,
    noise: f64,
    seed: u64,
    tendon: usize,
    bounds: (f64, f64),
) -> PyResult<DesignOutcome> {
    let tensions = TensionSet::single(spec.inner.tendon_count, tendon, tension).map_err(to_py)?;
    let mut problem = DesignProblem::new(spec.inner.clone(), tensions);
    problem.bounds = bounds;
    problem.noise = NoiseModel { level: noise, seed };
    let profile = match (target, plant_alpha) {
        (Some((s, u)), _) => CurvatureProfile::new(s, u.into_iter().map(Vec3::from).collect()).map_err(to_py)?,
        (None, Some(alpha)) => problem.planted_target(alpha).map_err(to_py)?,
        (None, None) => return Err(PyValueError::new_err("pass target or plant_alpha")),
    };
    let result = optimize_taper(&problem, &profile).map_err(to_py)?;
    Ok((result.alpha, result.cost, result.curve))
}

/// Curvature samples `(s, u)` of a solution.
#[pyfunction]
fn curvature_profile(solution: PyRef<'_, PySolution>) -> PyResult<(Vec<f64>, Vec<[f64; 3]>)> {
    let p = curvature_of(&solution.inner).map_err(to_py)?;
    Ok((p.s, p.u.iter().map(xyz).collect()))
}

/// Least-squares rigid transform `(R, t)` with `R a + t ≈ b`.
#[pyfunction]
fn register_rigid(source: Vec<[f64; 3]>, target: Vec<[f64; 3]>) -> PyResult<([[f64; 3]; 3], [f64; 3])> {
    let a: Vec<Vec3> = source.into_iter().map(Vec3::from).collect();
    let b: Vec<Vec3> = target.into_iter().map(Vec3::from).collect();
    let t = core_register(&a, &b).map_err(to_py)?;
    Ok((std::array::from_fn(|i| std::array::from_fn(|j| t.rotation[(i, j)])), xyz(&t.translation)))
}

/// Load-cell force lookup.
#[pyclass(name = "LoadCellTable", module = "taperrod")]
pub struct PyLoadCells {
    inner: CoreTable,
}

#[pymethods]
impl PyLoadCells {
    /// Bench calibration of the validation robot's three cells.
    #[staticmethod]
    fn bench() -> Self {
        PyLoadCells { inner: CoreTable::bench() }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyLoadCells { inner: CoreTable::parse(text).map_err(to_py)? })
    }

    /// Tension in N for a 1-based cell and raw bit value.
    fn tension(&self, cell: usize, bit: i64) -> PyResult<f64> {
        self.inner.tension_from_adc(cell, bit).map_err(to_py)
    }

    fn resolution(&self) -> f64 {
        self.inner.pooled_resolution()
    }
}

#[pymodule]
fn taperrod(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyLoadCells>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(design_taper, m)?)?;
    m.add_function(wrap_pyfunction!(curvature_profile, m)?)?;
    m.add_function(wrap_pyfunction!(register_rigid, m)?)?;
    Ok(())
}
