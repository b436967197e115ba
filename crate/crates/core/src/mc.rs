//! Monte Carlo experiments on estimator bias and bound coverage.
//!
//! Each replication draws a fresh noise realization from the factor
//! model, fits every configured estimator on the noisy panel, and
//! measures bias on the latent interactive component: for post cell
//! `(t, k)` the bias is `L[treated, t, k] - sum_i gamma_i L[donor_i, t, k]`.
//! Coverage compares the worst post-cell bias magnitude per replication
//! against the corresponding theoretical bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{
    bound_agg, bound_combined, bound_dis, delta_for_probability, tighter_by_aggregation,
    BoundError, BoundInputs, BoundResult,
};
use crate::estimator::{fit_demeaned, EstimatorError};
use crate::factor::{generate, FactorError, FactorModelSpec};
use crate::objective::ObjectiveSpec;
use crate::panel::demean;
use crate::solver::{FeasibleSet, SolveOptions};
use crate::util::mix_seed;

#[derive(Debug, Error)]
pub enum McError {
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("at least one estimator must be configured")]
    NoEstimators,
    #[error("the factor model spec must embed oracle weights")]
    OracleWeightsRequired,
    #[error("oracle weights violate the constraint set by {slack:.3e}")]
    OracleWeightsInfeasible { slack: f64 },
    #[error("constraint set dimension {set} does not match the donor pool {donors}")]
    SetDimensionMismatch { set: usize, donors: usize },
}

/// Controls for [`monte_carlo`]. `delta = None` picks the smallest value
/// whose guarantee probability reaches 0.9.
#[derive(Debug, Clone)]
pub struct McOptions {
    pub replications: usize,
    pub seed: u64,
    pub delta: Option<f64>,
    pub solve: SolveOptions,
    /// Keep per-replication absolute biases in the report (for paired
    /// comparisons across estimators).
    pub record_replicates: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            replications: 100,
            seed: 0,
            delta: None,
            solve: SolveOptions::default(),
            record_replicates: false,
        }
    }
}

/// Summary for one configured estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub nu: f64,
    /// Mean over replications of the cell-averaged signed bias.
    pub mean_bias: f64,
    /// Standard error of `mean_bias` across replications.
    pub bias_se: f64,
    /// Mean over replications of the cell-averaged absolute bias.
    pub mean_abs_bias: f64,
    pub mean_rmse_dis: f64,
    pub mean_rmse_agg: f64,
    /// Theoretical bias bound for this estimator, when its signal
    /// strength permits evaluation.
    pub bound: Option<f64>,
    /// Share of replications whose worst post-cell |bias| stays within
    /// the bound.
    pub coverage: Option<f64>,
    pub solver_converged_share: f64,
}

/// Full report of a Monte Carlo run; serializes to stable JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub replications: usize,
    pub seed: u64,
    pub delta: f64,
    pub guarantee_probability: f64,
    pub vacuous: bool,
    pub rank: usize,
    pub factor_bound: f64,
    pub xi_dis: f64,
    pub xi_agg: f64,
    pub noise_scale: f64,
    pub c_bound: f64,
    pub tighter_by_aggregation: bool,
    pub estimators: Vec<EstimatorSummary>,
    /// Per-replication cell-averaged absolute bias, estimator-major;
    /// present only when requested via [`McOptions::record_replicates`].
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub abs_bias_replicates: Option<Vec<Vec<f64>>>,
}

struct RepStats {
    mean_bias: f64,
    mean_abs_bias: f64,
    max_abs_bias: f64,
    rmse_dis: f64,
    rmse_agg: f64,
    converged: bool,
}

/// Runs the experiment. Replications execute in parallel with seeds
/// derived from `opts.seed` by replication index; results are reduced
/// in replication order, so reports are deterministic.
pub fn monte_carlo(
    spec: &FactorModelSpec,
    estimators: &[ObjectiveSpec],
    set: &FeasibleSet,
    opts: &McOptions,
) -> Result<McReport, McError> {
    if opts.replications == 0 {
        return Err(McError::NoReplications);
    }
    if estimators.is_empty() {
        return Err(McError::NoEstimators);
    }
    spec.validate()?;
    let oracle = spec
        .oracle_weights
        .as_ref()
        .ok_or(McError::OracleWeightsRequired)?;
    if set.dimension() != spec.n_donors() {
        return Err(McError::SetDimensionMismatch {
            set: set.dimension(),
            donors: spec.n_donors(),
        });
    }
    let slack = set.feasibility_slack(oracle);
    if slack > 1e-8 {
        return Err(McError::OracleWeightsInfeasible { slack });
    }

    // latent structure is shared across replications; probe once
    let (_, truth) = generate(spec, mix_seed(opts.seed, 0))?;
    let t0k = spec.t0 * spec.subperiods;
    let (xi_d, xi_a, factor_bound) = if spec.rank > 0 {
        let pre = truth.pre_factors(spec.t0);
        (
            crate::bounds::xi_dis(&pre),
            crate::bounds::xi_agg(&pre),
            truth.factor_bound(),
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    let delta = opts
        .delta
        .unwrap_or_else(|| delta_for_probability(0.9, spec.noise_scale, t0k, set.c_bound()));

    let bound_inputs = |xi: f64| BoundInputs {
        rank: spec.rank,
        factor_bound,
        xi,
        sigma: spec.noise_scale,
        c_bound: set.c_bound(),
        delta,
        t0: spec.t0,
        subperiods: spec.subperiods,
        n_donors: spec.n_donors(),
    };
    let evaluate = |r: Result<BoundResult, BoundError>| match r {
        Ok(b) => Ok(Some(b)),
        Err(BoundError::WeakIdentification(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let dis_bound = evaluate(bound_dis(&bound_inputs(xi_d)))?;
    let agg_bound = evaluate(bound_agg(&bound_inputs(xi_a)))?;
    let com_bound = evaluate(bound_combined(&bound_inputs(xi_d), &bound_inputs(xi_a)))?;
    let bound_for = |spec: &ObjectiveSpec| match spec {
        ObjectiveSpec::Disaggregated => dis_bound,
        ObjectiveSpec::Aggregated => agg_bound,
        ObjectiveSpec::Combined { .. } => com_bound,
    };
    let (guarantee_probability, vacuous) = [dis_bound, agg_bound, com_bound]
        .iter()
        .flatten()
        .next()
        .map(|b| (b.guarantee_probability, b.vacuous))
        .unwrap_or_else(|| {
            let raw = crate::bounds::guarantee_probability_raw(
                delta,
                spec.noise_scale,
                t0k,
                set.c_bound(),
            );
            (raw.clamp(0.0, 1.0), raw <= 0.0)
        });

    let results: Result<Vec<Vec<RepStats>>, McError> = (0..opts.replications)
        .into_par_iter()
        .map(|rep| replication(spec, estimators, set, opts, rep))
        .collect();
    let results = results?;

    let r = opts.replications as f64;
    let mut summaries = Vec::with_capacity(estimators.len());
    for (e_idx, e_spec) in estimators.iter().enumerate() {
        let per_rep: Vec<&RepStats> = results.iter().map(|reps| &reps[e_idx]).collect();
        let mean_bias = per_rep.iter().map(|s| s.mean_bias).sum::<f64>() / r;
        let variance = if opts.replications > 1 {
            per_rep
                .iter()
                .map(|s| (s.mean_bias - mean_bias).powi(2))
                .sum::<f64>()
                / (r - 1.0)
        } else {
            0.0
        };
        let bound = bound_for(e_spec).map(|b| b.bound_value);
        let coverage =
            bound.map(|b| per_rep.iter().filter(|s| s.max_abs_bias <= b).count() as f64 / r);
        summaries.push(EstimatorSummary {
            name: e_spec.label().to_string(),
            nu: e_spec.nu(),
            mean_bias,
            bias_se: (variance / r).sqrt(),
            mean_abs_bias: per_rep.iter().map(|s| s.mean_abs_bias).sum::<f64>() / r,
            mean_rmse_dis: per_rep.iter().map(|s| s.rmse_dis).sum::<f64>() / r,
            mean_rmse_agg: per_rep.iter().map(|s| s.rmse_agg).sum::<f64>() / r,
            bound,
            coverage,
            solver_converged_share: per_rep.iter().filter(|s| s.converged).count() as f64 / r,
        });
    }

    let abs_bias_replicates = opts.record_replicates.then(|| {
        (0..estimators.len())
            .map(|e_idx| {
                results
                    .iter()
                    .map(|reps| reps[e_idx].mean_abs_bias)
                    .collect()
            })
            .collect()
    });

    Ok(McReport {
        replications: opts.replications,
        seed: opts.seed,
        delta,
        guarantee_probability,
        vacuous,
        rank: spec.rank,
        factor_bound,
        xi_dis: xi_d,
        xi_agg: xi_a,
        noise_scale: spec.noise_scale,
        c_bound: set.c_bound(),
        tighter_by_aggregation: tighter_by_aggregation(xi_d, xi_a, spec.subperiods),
        estimators: summaries,
        abs_bias_replicates,
    })
}

fn replication(
    spec: &FactorModelSpec,
    estimators: &[ObjectiveSpec],
    set: &FeasibleSet,
    opts: &McOptions,
    rep: usize,
) -> Result<Vec<RepStats>, McError> {
    let (panel, truth) = generate(spec, mix_seed(opts.seed, rep as u64))?;
    let demeaned = demean(&panel);
    let n_cells = (spec.n_post * spec.subperiods) as f64;
    estimators
        .iter()
        .map(|e_spec| {
            let fitted = fit_demeaned(&demeaned, e_spec, set, &opts.solve)?;
            let gamma = fitted.weights().gamma();
            let mut sum = 0.0;
            let mut abs_sum = 0.0;
            let mut max_abs = 0.0f64;
            for t in spec.t0..spec.n_periods() {
                for k in 0..spec.subperiods {
                    let synthetic: f64 = gamma
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * truth.l.get(i + 1, t, k))
                        .sum();
                    let bias = truth.l.get(0, t, k) - synthetic;
                    sum += bias;
                    abs_sum += bias.abs();
                    max_abs = max_abs.max(bias.abs());
                }
            }
            Ok(RepStats {
                mean_bias: sum / n_cells,
                mean_abs_bias: abs_sum / n_cells,
                max_abs_bias: max_abs,
                rmse_dis: fitted.rmse_dis,
                rmse_agg: fitted.rmse_agg,
                converged: fitted.solve.converged,
            })
        })
        .collect()
}
