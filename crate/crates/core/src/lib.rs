//! Synthetic control with temporal aggregation.
//!
//! Donor weights are chosen to balance the treated unit's de-meaned
//! pre-treatment outcomes under one of three objectives: the
//! disaggregated high-frequency series, the period-level aggregated
//! series, or a `nu`-weighted combination of the two. Weights live in
//! the polytope `{ ||gamma||_1 <= C, sum(gamma) = 1 }` and are fitted by
//! Frank-Wolfe with an exact vertex oracle and a duality-gap
//! certificate. On top of the estimator sit an imbalance-frontier sweep
//! over `nu` and a factor-model simulation lab that evaluates
//! finite-sample bias bounds and measures their empirical coverage.
//!
//! Modules:
//! - [`panel`]: balanced panels, de-meaning, temporal aggregation.
//! - [`objective`]: imbalance objectives and their quadratic forms.
//! - [`solver`]: Frank-Wolfe over the constraint polytope, plus a
//!   brute-force grid oracle for tests.
//! - [`estimator`]: fitting, counterfactual imputation, the frontier,
//!   and in-space placebo checks.
//! - [`factor`], [`bounds`], [`mc`]: the simulation lab (data
//!   generation, bias-bound formulas, Monte Carlo experiments).
//! - [`cli`]: the `scmtagg` command-line front end.

pub mod bounds;
pub mod cli;
pub mod estimator;
pub mod factor;
pub mod mc;
pub mod objective;
pub mod panel;
pub mod solver;
pub mod util;

pub use bounds::{
    bound_agg, bound_combined, bound_dis, delta_for_probability, tighter_by_aggregation,
    tilde_sigma, xi_agg, xi_dis, BoundError, BoundInputs, BoundResult,
};
pub use estimator::{
    default_nu_grid, fit, frontier, impute, placebo_in_space, EffectEstimate, EstimatorError,
    FitResult, FrontierPoint, PlaceboSeries,
};
pub use factor::{generate, FactorError, FactorModelSpec, LatentTruth};
pub use mc::{monte_carlo, EstimatorSummary, McError, McOptions, McReport};
pub use objective::{
    q_agg, q_combined, q_dis, to_quadratic, ObjectiveError, ObjectiveSpec, QuadraticForm,
};
pub use panel::{
    aggregate, demean, validate_panel, AggregatedSeries, Array3, DemeanedPanel, PanelData,
    PanelError, RawObservation,
};
pub use solver::{
    frank_wolfe, grid_oracle, lmo, FeasibleSet, SolveOptions, SolveReport, SolverError, Weights,
};
