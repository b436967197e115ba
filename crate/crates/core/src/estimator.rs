//! End-to-end estimation: fit donor weights under a chosen objective,
//! impute the treated unit's counterfactual, compute per-cell treatment
//! effects, and sweep the imbalance frontier over the combination
//! weight `nu`.

use rayon::prelude::*;
use thiserror::Error;

use crate::objective::{q_agg, q_dis, to_quadratic, ObjectiveError, ObjectiveSpec};
use crate::panel::{demean, Array3, DemeanedPanel, PanelData, PanelError};
use crate::solver::{frank_wolfe, FeasibleSet, SolveOptions, SolveReport, SolverError, Weights};
use crate::util::compensated_sum;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("nu grid must be nonempty, sorted ascending, and within [0, 1]")]
    InvalidNuGrid,
    #[error("placebo analysis needs at least 3 units, got {0}")]
    InsufficientDonors(usize),
}

/// A fitted synthetic control: weights plus both pre-treatment RMSEs,
/// evaluated at the solution regardless of which objective was
/// minimized.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ObjectiveSpec,
    pub rmse_dis: f64,
    pub rmse_agg: f64,
    pub solve: SolveReport,
}

impl FitResult {
    pub fn weights(&self) -> &Weights {
        &self.solve.weights
    }

    /// Weight on the aggregated objective used for this fit.
    pub fn nu(&self) -> f64 {
        self.spec.nu()
    }
}

/// Observed and imputed outcome for one post-treatment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub period: u32,
    pub subperiod: u32,
    pub observed: f64,
    pub imputed: f64,
    pub effect: f64,
}

/// One point of the imbalance frontier, ordered by `nu` ascending.
#[derive(Debug, Clone)]
pub struct FrontierPoint {
    pub nu: f64,
    pub rmse_dis: f64,
    pub rmse_agg: f64,
    pub weights: Weights,
    pub fw_gap: f64,
    pub converged: bool,
}

/// Effect series obtained by pretending one donor was treated.
#[derive(Debug, Clone)]
pub struct PlaceboSeries {
    pub unit_label: String,
    pub rmse_dis: f64,
    pub rmse_agg: f64,
    pub effects: Vec<EffectEstimate>,
}

/// Fits donor weights by minimizing the requested imbalance objective
/// over the constraint set.
pub fn fit(
    panel: &PanelData,
    spec: &ObjectiveSpec,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<FitResult, EstimatorError> {
    let demeaned = demean(panel);
    fit_demeaned(&demeaned, spec, set, opts)
}

/// As [`fit`] but on an already de-meaned panel, so that callers doing
/// repeated fits (frontier sweeps, Monte Carlo) de-mean only once.
pub fn fit_demeaned(
    demeaned: &DemeanedPanel,
    spec: &ObjectiveSpec,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<FitResult, EstimatorError> {
    let quadratic = to_quadratic(demeaned, spec);
    let solve = frank_wolfe(&quadratic, set, opts)?;
    let gamma = solve.weights.gamma();
    let rmse_dis = q_dis(demeaned, gamma)?.max(0.0).sqrt();
    let rmse_agg = q_agg(demeaned, gamma)?.max(0.0).sqrt();
    Ok(FitResult {
        spec: *spec,
        rmse_dis,
        rmse_agg,
        solve,
    })
}

/// Imputes the counterfactual for every post-treatment cell:
/// treated pre-mean plus the weighted donors' de-meaned outcomes.
/// `effect = observed - imputed` holds exactly.
pub fn impute(fit: &FitResult, panel: &PanelData) -> Result<Vec<EffectEstimate>, EstimatorError> {
    let gamma = fit.weights().gamma();
    if gamma.len() != panel.n_donors() {
        return Err(EstimatorError::Objective(
            ObjectiveError::DimensionMismatch {
                expected: panel.n_donors(),
                got: gamma.len(),
            },
        ));
    }
    let demeaned = demean(panel);
    let values = demeaned.values();
    let treated_mean = demeaned.pre_means()[0];
    let mut out = Vec::new();
    for t in panel.t0()..panel.n_periods() {
        for k in 0..panel.n_subperiods() {
            let synthetic = compensated_sum(
                gamma
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * values.get(i + 1, t, k)),
            );
            let imputed = treated_mean + synthetic;
            let observed = panel.outcomes().get(0, t, k);
            out.push(EffectEstimate {
                period: panel.period_labels()[t],
                subperiod: panel.subperiod_labels()[k],
                observed,
                imputed,
                effect: observed - imputed,
            });
        }
    }
    Ok(out)
}

/// Grid of 21 equally spaced `nu` values on `[0, 1]`.
pub fn default_nu_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Sweeps the imbalance frontier: one fit per `nu`, warm-starting each
/// solve from the previous solution. Endpoints reproduce the pure
/// disaggregated (`nu = 0`) and aggregated (`nu = 1`) fits.
pub fn frontier(
    panel: &PanelData,
    nu_grid: &[f64],
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<Vec<FrontierPoint>, EstimatorError> {
    if nu_grid.is_empty()
        || nu_grid.windows(2).any(|w| w[0] > w[1])
        || nu_grid.iter().any(|nu| !(0.0..=1.0).contains(nu))
    {
        return Err(EstimatorError::InvalidNuGrid);
    }
    let demeaned = demean(panel);
    let mut points = Vec::with_capacity(nu_grid.len());
    let mut warm: Option<Weights> = opts.start.clone();
    for &nu in nu_grid {
        let spec = ObjectiveSpec::combined(nu).map_err(EstimatorError::Objective)?;
        let point_opts = SolveOptions {
            start: warm.clone(),
            ..opts.clone()
        };
        let result = fit_demeaned(&demeaned, &spec, set, &point_opts)?;
        warm = Some(result.weights().clone());
        points.push(FrontierPoint {
            nu,
            rmse_dis: result.rmse_dis,
            rmse_agg: result.rmse_agg,
            weights: result.solve.weights.clone(),
            fw_gap: result.solve.fw_gap,
            converged: result.solve.converged,
        });
    }
    Ok(points)
}

/// Refits treating each donor in turn as pseudo-treated, with the true
/// treated unit excluded from the pseudo donor pool. Returns one effect
/// series per donor, ordered by donor index.
pub fn placebo_in_space(
    panel: &PanelData,
    spec: &ObjectiveSpec,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<Vec<PlaceboSeries>, EstimatorError> {
    let n = panel.n_units();
    if n < 3 {
        return Err(EstimatorError::InsufficientDonors(n));
    }
    let donor_indices: Vec<usize> = (1..n).collect();
    donor_indices
        .par_iter()
        .map(|&pseudo| {
            let sub = reassign_treated(panel, pseudo);
            let pseudo_set = FeasibleSet::new(sub.n_donors(), set.c_bound())?;
            let solve_opts = SolveOptions {
                start: None,
                ..opts.clone()
            };
            let result = fit(&sub, spec, &pseudo_set, &solve_opts)?;
            let effects = impute(&result, &sub)?;
            Ok(PlaceboSeries {
                unit_label: sub.unit_labels()[0].clone(),
                rmse_dis: result.rmse_dis,
                rmse_agg: result.rmse_agg,
                effects,
            })
        })
        .collect()
}

/// Builds the placebo panel for one pseudo-treated donor: that donor at
/// index 0, all other donors following, original treated unit dropped.
fn reassign_treated(panel: &PanelData, pseudo_treated: usize) -> PanelData {
    debug_assert!(pseudo_treated >= 1 && pseudo_treated < panel.n_units());
    let order: Vec<usize> = std::iter::once(pseudo_treated)
        .chain((1..panel.n_units()).filter(|&i| i != pseudo_treated))
        .collect();
    let (t_all, k_all) = (panel.n_periods(), panel.n_subperiods());
    let mut outcomes = Array3::zeros(order.len(), t_all, k_all);
    let mut labels = Vec::with_capacity(order.len());
    for (new_i, &old_i) in order.iter().enumerate() {
        labels.push(panel.unit_labels()[old_i].clone());
        for t in 0..t_all {
            for k in 0..k_all {
                outcomes.set(new_i, t, k, panel.outcomes().get(old_i, t, k));
            }
        }
    }
    PanelData::with_labels(
        outcomes,
        panel.t0(),
        labels,
        panel.period_labels().to_vec(),
        panel.subperiod_labels().to_vec(),
    )
    .expect("sub-panel of a valid panel is valid")
}
