//! Python bindings for the synthetic-control-with-temporal-aggregation
//! library. Exposes the balanced panel container, weight fitting under
//! the disaggregated / aggregated / combined objectives, counterfactual
//! effects, the imbalance frontier, in-space placebos, the bias-bound
//! formulas, and the Monte Carlo simulation lab.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use scmtagg_core::bounds::{self, BoundInputs};
use scmtagg_core::cli::{EstimatorChoice, SimulationConfig};
use scmtagg_core::estimator;
use scmtagg_core::factor;
use scmtagg_core::mc::{monte_carlo, McOptions};
use scmtagg_core::objective::ObjectiveSpec;
use scmtagg_core::panel::{Array3, PanelData};
use scmtagg_core::solver::{FeasibleSet, SolveOptions};

/// `(period, subperiod, observed, imputed, effect)` row.
type EffectRow = (u32, u32, f64, f64, f64);
/// `(period, subperiod, effect)` row of one placebo series.
type PlaceboRow = (u32, u32, f64);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_objective(kind: &str, nu: f64) -> PyResult<ObjectiveSpec> {
    match kind {
        "disaggregated" => Ok(ObjectiveSpec::Disaggregated),
        "aggregated" => Ok(ObjectiveSpec::Aggregated),
        "combined" => ObjectiveSpec::combined(nu).map_err(value_err),
        other => Err(PyValueError::new_err(format!(
            "unknown objective '{other}' (expected disaggregated, aggregated, or combined)"
        ))),
    }
}

fn solve_options(tol: Option<f64>, max_iter: Option<usize>) -> SolveOptions {
    SolveOptions {
        tol,
        max_iter,
        ..SolveOptions::default()
    }
}

/// A balanced outcome panel with the treated unit at index 0.
#[pyclass(frozen)]
pub struct Panel {
    inner: PanelData,
}

#[pymethods]
impl Panel {
    /// Builds a panel from `outcomes[unit][period][subperiod]`. The unit
    /// at `treated_index` is moved to the front.
    #[new]
    #[pyo3(signature = (outcomes, t0, unit_labels=None, treated_index=0))]
    fn new(
        outcomes: Vec<Vec<Vec<f64>>>,
        t0: usize,
        unit_labels: Option<Vec<String>>,
        treated_index: usize,
    ) -> PyResult<Self> {
        let n = outcomes.len();
        if treated_index >= n {
            return Err(PyValueError::new_err(format!(
                "treated_index {treated_index} out of range for {n} units"
            )));
        }
        let labels =
            unit_labels.unwrap_or_else(|| (0..n).map(|i| format!("unit{}", i + 1)).collect());
        if labels.len() != n {
            return Err(PyValueError::new_err(format!(
                "got {} labels for {n} units",
                labels.len()
            )));
        }
        let order: Vec<usize> = std::iter::once(treated_index)
            .chain((0..n).filter(|&i| i != treated_index))
            .collect();
        let reordered: Vec<Vec<Vec<f64>>> = order.iter().map(|&i| outcomes[i].clone()).collect();
        let relabeled: Vec<String> = order.iter().map(|&i| labels[i].clone()).collect();
        let array = Array3::from_nested(&reordered).map_err(value_err)?;
        Ok(Panel {
            inner: PanelData::new(array, t0, relabeled).map_err(value_err)?,
        })
    }

    /// Reads a long-format CSV (`unit,period,subperiod,outcome,treated`).
    /// `treated_unit` overrides the file's treated flags.
    #[staticmethod]
    #[pyo3(signature = (path, t0, treated_unit=None))]
    fn from_csv(
        path: std::path::PathBuf,
        t0: usize,
        treated_unit: Option<String>,
    ) -> PyResult<Self> {
        let mut records = scmtagg_core::cli::ingest_csv(&path).map_err(value_err)?;
        if let Some(label) = treated_unit {
            if !records.iter().any(|r| r.unit == label) {
                return Err(PyValueError::new_err(format!(
                    "treated unit '{label}' not found in {}",
                    path.display()
                )));
            }
            for r in records.iter_mut() {
                r.treated = r.unit == label;
            }
        }
        Ok(Panel {
            inner: scmtagg_core::panel::validate_panel(&records, t0).map_err(value_err)?,
        })
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    #[getter]
    fn n_donors(&self) -> usize {
        self.inner.n_donors()
    }

    #[getter]
    fn n_periods(&self) -> usize {
        self.inner.n_periods()
    }

    #[getter]
    fn n_subperiods(&self) -> usize {
        self.inner.n_subperiods()
    }

    #[getter]
    fn t0(&self) -> usize {
        self.inner.t0()
    }

    #[getter]
    fn unit_labels(&self) -> Vec<String> {
        self.inner.unit_labels().to_vec()
    }

    /// Per-unit pre-treatment means.
    fn pre_means(&self) -> Vec<f64> {
        scmtagg_core::panel::demean(&self.inner)
            .pre_means()
            .to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(n_units={}, n_periods={}, n_subperiods={}, t0={}, treated='{}')",
            self.inner.n_units(),
            self.inner.n_periods(),
            self.inner.n_subperiods(),
            self.inner.t0(),
            self.inner.treated_label()
        )
    }
}

/// Fitted donor weights with both pre-treatment RMSEs and the solver
/// certificate.
#[pyclass(frozen)]
pub struct FitResult {
    #[pyo3(get)]
    pub objective: String,
    #[pyo3(get)]
    pub nu: f64,
    #[pyo3(get)]
    pub weights: Vec<f64>,
    #[pyo3(get)]
    pub rmse_dis: f64,
    #[pyo3(get)]
    pub rmse_agg: f64,
    #[pyo3(get)]
    pub objective_value: f64,
    #[pyo3(get)]
    pub fw_gap: f64,
    #[pyo3(get)]
    pub iterations: usize,
    #[pyo3(get)]
    pub converged: bool,
}

#[pymethods]
impl FitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult(objective='{}', nu={}, rmse_dis={:.6}, rmse_agg={:.6}, converged={})",
            self.objective, self.nu, self.rmse_dis, self.rmse_agg, self.converged
        )
    }
}

fn wrap_fit(result: &estimator::FitResult) -> FitResult {
    FitResult {
        objective: result.spec.label().to_string(),
        nu: result.nu(),
        weights: result.weights().gamma().to_vec(),
        rmse_dis: result.rmse_dis,
        rmse_agg: result.rmse_agg,
        objective_value: result.solve.objective_value,
        fw_gap: result.solve.fw_gap,
        iterations: result.solve.iterations,
        converged: result.solve.converged,
    }
}

/// Fits donor weights by minimizing the chosen pre-treatment imbalance
/// objective over `{ ||w||_1 <= c_bound, sum(w) = 1 }`.
#[pyfunction]
#[pyo3(signature = (panel, objective="combined", nu=0.5, c_bound=1.0, tol=None, max_iter=None))]
fn fit(
    panel: &Panel,
    objective: &str,
    nu: f64,
    c_bound: f64,
    tol: Option<f64>,
    max_iter: Option<usize>,
) -> PyResult<FitResult> {
    let spec = parse_objective(objective, nu)?;
    let set = FeasibleSet::new(panel.inner.n_donors(), c_bound).map_err(value_err)?;
    let result = estimator::fit(&panel.inner, &spec, &set, &solve_options(tol, max_iter))
        .map_err(value_err)?;
    Ok(wrap_fit(&result))
}

/// Imputes the counterfactual for each post-treatment cell; returns
/// `(period, subperiod, observed, imputed, effect)` tuples.
#[pyfunction]
fn effects(panel: &Panel, result: &FitResult) -> PyResult<Vec<EffectRow>> {
    let spec = parse_objective(&result.objective, result.nu)?;
    let set = FeasibleSet::new(
        panel.inner.n_donors(),
        f64::max(1.0, result.weights.iter().map(|w| w.abs()).sum()),
    )
    .map_err(value_err)?;
    let weights =
        scmtagg_core::solver::Weights::new(result.weights.clone(), &set).map_err(value_err)?;
    let fitted = estimator::FitResult {
        spec,
        rmse_dis: result.rmse_dis,
        rmse_agg: result.rmse_agg,
        solve: scmtagg_core::solver::SolveReport {
            weights,
            objective_value: result.objective_value,
            fw_gap: result.fw_gap,
            iterations: result.iterations,
            converged: result.converged,
            trace: None,
        },
    };
    let estimates = estimator::impute(&fitted, &panel.inner).map_err(value_err)?;
    Ok(estimates
        .iter()
        .map(|e| (e.period, e.subperiod, e.observed, e.imputed, e.effect))
        .collect())
}

/// One imbalance-frontier point.
#[pyclass(frozen)]
pub struct FrontierPoint {
    #[pyo3(get)]
    pub nu: f64,
    #[pyo3(get)]
    pub rmse_dis: f64,
    #[pyo3(get)]
    pub rmse_agg: f64,
    #[pyo3(get)]
    pub weights: Vec<f64>,
}

#[pymethods]
impl FrontierPoint {
    fn __repr__(&self) -> String {
        format!(
            "FrontierPoint(nu={}, rmse_dis={:.6}, rmse_agg={:.6})",
            self.nu, self.rmse_dis, self.rmse_agg
        )
    }
}

/// Sweeps the imbalance frontier over `nu_grid` (defaults to 21 points
/// on [0, 1]).
#[pyfunction]
#[pyo3(signature = (panel, nu_grid=None, c_bound=1.0, tol=None, max_iter=None))]
fn frontier(
    panel: &Panel,
    nu_grid: Option<Vec<f64>>,
    c_bound: f64,
    tol: Option<f64>,
    max_iter: Option<usize>,
) -> PyResult<Vec<FrontierPoint>> {
    let grid = nu_grid.unwrap_or_else(estimator::default_nu_grid);
    let set = FeasibleSet::new(panel.inner.n_donors(), c_bound).map_err(value_err)?;
    let points = estimator::frontier(&panel.inner, &grid, &set, &solve_options(tol, max_iter))
        .map_err(value_err)?;
    Ok(points
        .into_iter()
        .map(|p| FrontierPoint {
            nu: p.nu,
            rmse_dis: p.rmse_dis,
            rmse_agg: p.rmse_agg,
            weights: p.weights.gamma().to_vec(),
        })
        .collect())
}

/// Refits each donor as pseudo-treated. Returns a list of
/// `(unit_label, [(period, subperiod, effect), ...])` pairs.
#[pyfunction]
#[pyo3(signature = (panel, objective="combined", nu=0.5, c_bound=1.0))]
fn placebo(
    panel: &Panel,
    objective: &str,
    nu: f64,
    c_bound: f64,
) -> PyResult<Vec<(String, Vec<PlaceboRow>)>> {
    let spec = parse_objective(objective, nu)?;
    let set = FeasibleSet::new(panel.inner.n_donors(), c_bound).map_err(value_err)?;
    let series = estimator::placebo_in_space(&panel.inner, &spec, &set, &SolveOptions::default())
        .map_err(value_err)?;
    Ok(series
        .into_iter()
        .map(|s| {
            let effects = s
                .effects
                .iter()
                .map(|e| (e.period, e.subperiod, e.effect))
                .collect();
            (s.unit_label, effects)
        })
        .collect())
}

/// Smallest eigenvalue of the pre-period factor second-moment matrix;
/// `factors[t][k]` is a length-`rank` vector.
#[pyfunction]
fn xi_dis(factors: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    validate_factors(&factors)?;
    Ok(bounds::xi_dis(&factors))
}

/// Aggregated counterpart of `xi_dis`, computed from the
/// subperiod-averaged factors.
#[pyfunction]
fn xi_agg(factors: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    validate_factors(&factors)?;
    Ok(bounds::xi_agg(&factors))
}

fn validate_factors(factors: &[Vec<Vec<f64>>]) -> PyResult<()> {
    let r = factors
        .first()
        .and_then(|p| p.first())
        .map(|v| v.len())
        .unwrap_or(0);
    if factors.is_empty() || r == 0 {
        return Err(PyValueError::new_err(
            "factors must be a nonempty [period][subperiod][component] array",
        ));
    }
    for period in factors {
        if period.is_empty() || period.iter().any(|v| v.len() != r) {
            return Err(PyValueError::new_err(
                "all factor vectors must share the same length",
            ));
        }
    }
    Ok(())
}

/// `tighter_by_aggregation(xi_dis, xi_agg, subperiods)`: whether the
/// aggregated bias bound has the smaller leading term.
#[pyfunction]
fn tighter_by_aggregation(xi_dis: f64, xi_agg: f64, subperiods: usize) -> bool {
    bounds::tighter_by_aggregation(xi_dis, xi_agg, subperiods)
}

/// Both finite-sample bias bounds and their shared probability guarantee.
#[pyclass(frozen)]
pub struct BoundSummary {
    #[pyo3(get)]
    pub bound_dis: f64,
    #[pyo3(get)]
    pub bound_agg: f64,
    #[pyo3(get)]
    pub bound_combined: f64,
    #[pyo3(get)]
    pub tilde_sigma: f64,
    #[pyo3(get)]
    pub guarantee_probability: f64,
    #[pyo3(get)]
    pub vacuous: bool,
}

#[pymethods]
impl BoundSummary {
    fn __repr__(&self) -> String {
        format!(
            "BoundSummary(bound_dis={:.6}, bound_agg={:.6}, probability={:.4}, vacuous={})",
            self.bound_dis, self.bound_agg, self.guarantee_probability, self.vacuous
        )
    }
}

/// Evaluates the bias bounds for both estimators at the given model
/// parameters; the combined bound is their minimum.
#[pyfunction]
#[pyo3(signature = (rank, factor_bound, xi_dis, xi_agg, sigma, delta, t0, subperiods, n_donors, c_bound=1.0))]
#[allow(clippy::too_many_arguments)]
fn bias_bounds(
    rank: usize,
    factor_bound: f64,
    xi_dis: f64,
    xi_agg: f64,
    sigma: f64,
    delta: f64,
    t0: usize,
    subperiods: usize,
    n_donors: usize,
    c_bound: f64,
) -> PyResult<BoundSummary> {
    let inputs = |xi: f64| BoundInputs {
        rank,
        factor_bound,
        xi,
        sigma,
        c_bound,
        delta,
        t0,
        subperiods,
        n_donors,
    };
    let dis = bounds::bound_dis(&inputs(xi_dis)).map_err(value_err)?;
    let agg = bounds::bound_agg(&inputs(xi_agg)).map_err(value_err)?;
    let combined = bounds::bound_combined(&inputs(xi_dis), &inputs(xi_agg)).map_err(value_err)?;
    Ok(BoundSummary {
        bound_dis: dis.bound_value,
        bound_agg: agg.bound_value,
        bound_combined: combined.bound_value,
        tilde_sigma: dis.tilde_sigma,
        guarantee_probability: dis.guarantee_probability,
        vacuous: dis.vacuous,
    })
}

/// Smallest `delta` whose guarantee probability reaches `target`.
#[pyfunction]
#[pyo3(signature = (target, sigma, t0, subperiods, c_bound=1.0))]
fn delta_for_probability(
    target: f64,
    sigma: f64,
    t0: usize,
    subperiods: usize,
    c_bound: f64,
) -> f64 {
    bounds::delta_for_probability(target, sigma, t0 * subperiods, c_bound)
}

/// Runs a Monte Carlo experiment described by a JSON document with the
/// same shape as the CLI's `simulation` config block; returns the
/// report as a JSON string.
#[pyfunction]
#[pyo3(signature = (sim_json, seed=0, c_bound=1.0))]
fn simulate(sim_json: &str, seed: u64, c_bound: f64) -> PyResult<String> {
    let sim: SimulationConfig = serde_json::from_str(sim_json).map_err(value_err)?;
    let estimators: Vec<ObjectiveSpec> = sim
        .estimators
        .iter()
        .map(|choice: &EstimatorChoice| parse_objective(&choice.kind, choice.nu.unwrap_or(0.5)))
        .collect::<PyResult<_>>()?;
    let set = FeasibleSet::new(sim.panel.n_donors(), c_bound).map_err(value_err)?;
    let report = monte_carlo(
        &sim.panel,
        &estimators,
        &set,
        &McOptions {
            replications: sim.replications,
            seed,
            delta: sim.delta,
            ..McOptions::default()
        },
    )
    .map_err(value_err)?;
    serde_json::to_string_pretty(&report)
        .map_err(|e| PyRuntimeError::new_err(format!("report serialization failed: {e}")))
}

/// Draws one panel from a factor-model spec (JSON, same shape as the
/// CLI's `simulation.panel` block) and returns it as a `Panel`.
#[pyfunction]
#[pyo3(signature = (spec_json, seed=0))]
fn generate_panel(spec_json: &str, seed: u64) -> PyResult<Panel> {
    let spec: factor::FactorModelSpec = serde_json::from_str(spec_json).map_err(value_err)?;
    let (panel, _) = factor::generate(&spec, seed).map_err(value_err)?;
    Ok(Panel { inner: panel })
}

#[pymodule]
fn scmtagg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panel>()?;
    m.add_class::<FitResult>()?;
    m.add_class::<FrontierPoint>()?;
    m.add_class::<BoundSummary>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(effects, m)?)?;
    m.add_function(wrap_pyfunction!(frontier, m)?)?;
    m.add_function(wrap_pyfunction!(placebo, m)?)?;
    m.add_function(wrap_pyfunction!(xi_dis, m)?)?;
    m.add_function(wrap_pyfunction!(xi_agg, m)?)?;
    m.add_function(wrap_pyfunction!(tighter_by_aggregation, m)?)?;
    m.add_function(wrap_pyfunction!(bias_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(delta_for_probability, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_panel, m)?)?;
    Ok(())
}
