//! Finite-sample bias bounds for the disaggregated and aggregated
//! synthetic-control weights under the linear factor model, and the
//! signal-strength quantities they depend on.
//!
//! `xi_dis` and `xi_agg` are the smallest eigenvalues of the pre-period
//! second-moment matrices of the factors and of the subperiod-averaged
//! factors. The bound for the disaggregated weights is
//! `(r M^2 / xi_dis) * (4 (1 + C) sigma + 2 delta + tilde_sigma / sqrt(T0 K))`;
//! the aggregated version divides the first term by `sqrt(K)` and uses
//! `xi_agg`. Both hold jointly with probability at least
//! `1 - 8 exp(-delta^2 / 2) - 4 exp(-T0 K delta^2 / (2 sigma^2 (1 + C^2)))`,
//! so weights minimizing a combination of both objectives inherit the
//! smaller of the two bounds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("signal strength xi = {0} is not positive (weak identification)")]
    WeakIdentification(f64),
    #[error("bound inputs disagree on shared parameter {0}")]
    MismatchedInputs(&'static str),
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
}

/// Inputs to the bias-bound formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub rank: usize,
    /// Upper bound `M` on the absolute factor components.
    pub factor_bound: f64,
    /// Relevant smallest eigenvalue (disaggregated or aggregated).
    pub xi: f64,
    pub sigma: f64,
    pub c_bound: f64,
    pub delta: f64,
    pub t0: usize,
    pub subperiods: usize,
    pub n_donors: usize,
}

/// An evaluated bias bound with its probability guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub bound_value: f64,
    pub tilde_sigma: f64,
    /// Clamped to [0, 1]; `vacuous` marks a raw value at or below zero.
    pub guarantee_probability: f64,
    pub vacuous: bool,
}

/// Smallest eigenvalue of the pre-period factor second-moment matrix
/// `(1 / (T0 K)) sum_{t,k} mu[t][k] mu[t][k]'`.
///
/// `factors[t][k]` are the factor vectors over the pre-treatment
/// periods. Returns 0 under weak identification (callers flag it).
pub fn xi_dis(factors: &[Vec<Vec<f64>>]) -> f64 {
    let vectors: Vec<&[f64]> = factors
        .iter()
        .flat_map(|period| period.iter().map(|v| v.as_slice()))
        .collect();
    smallest_eigenvalue_of_second_moment(&vectors)
}

/// Smallest eigenvalue of `(1 / T0) sum_t mu_bar[t] mu_bar[t]'`, where
/// `mu_bar[t]` averages the factor vectors over the subperiods of `t`.
pub fn xi_agg(factors: &[Vec<Vec<f64>>]) -> f64 {
    let averaged: Vec<Vec<f64>> = factors
        .iter()
        .map(|period| {
            let k = period.len() as f64;
            let r = period.first().map_or(0, |v| v.len());
            (0..r)
                .map(|j| period.iter().map(|v| v[j]).sum::<f64>() / k)
                .collect()
        })
        .collect();
    let vectors: Vec<&[f64]> = averaged.iter().map(|v| v.as_slice()).collect();
    smallest_eigenvalue_of_second_moment(&vectors)
}

fn smallest_eigenvalue_of_second_moment(vectors: &[&[f64]]) -> f64 {
    let count = vectors.len();
    assert!(count > 0, "need at least one factor vector");
    let r = vectors[0].len();
    assert!(r > 0, "factor vectors must have positive length");
    let mut moment = DMatrix::zeros(r, r);
    for v in vectors {
        debug_assert_eq!(v.len(), r);
        for a in 0..r {
            for b in 0..r {
                moment[(a, b)] += v[a] * v[b];
            }
        }
    }
    moment /= count as f64;
    let eigen = moment.symmetric_eigenvalues();
    eigen.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
}

/// Noise amplitude entering the overfitting term:
/// `(2 C sqrt(log 2 N0) + (1 + C) delta) (1 + 1 / sqrt(T0 K)) sigma`.
pub fn tilde_sigma(inputs: &BoundInputs) -> f64 {
    let t0k = (inputs.t0 * inputs.subperiods) as f64;
    let log_term = (2.0 * inputs.n_donors as f64).ln();
    (2.0 * inputs.c_bound * log_term.sqrt() + (1.0 + inputs.c_bound) * inputs.delta)
        * (1.0 + 1.0 / t0k.sqrt())
        * inputs.sigma
}

/// Probability that both bias bounds hold, before clamping:
/// `1 - 8 exp(-delta^2/2) - 4 exp(-T0 K delta^2 / (2 sigma^2 (1 + C^2)))`.
/// The second term is zero when `sigma = 0`.
pub fn guarantee_probability_raw(delta: f64, sigma: f64, t0k: usize, c_bound: f64) -> f64 {
    let first = 8.0 * (-delta * delta / 2.0).exp();
    let second = if sigma == 0.0 {
        0.0
    } else {
        4.0 * (-(t0k as f64) * delta * delta / (2.0 * sigma * sigma * (1.0 + c_bound * c_bound)))
            .exp()
    };
    1.0 - first - second
}

/// Smallest `delta` whose guarantee probability reaches `target`, found
/// by bisection. Useful for calibrating simulation reports.
pub fn delta_for_probability(target: f64, sigma: f64, t0k: usize, c_bound: f64) -> f64 {
    assert!((0.0..1.0).contains(&target), "target must be in [0, 1)");
    let mut lo = 0.0;
    let mut hi = 1.0;
    while guarantee_probability_raw(hi, sigma, t0k, c_bound) < target {
        hi *= 2.0;
        assert!(hi < 1e9, "no delta reaches probability {target}");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if guarantee_probability_raw(mid, sigma, t0k, c_bound) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn bound_with_imbalance_term(
    inputs: &BoundInputs,
    imbalance_noise: f64,
) -> Result<BoundResult, BoundError> {
    if inputs.xi <= 0.0 || inputs.xi.is_nan() {
        return Err(BoundError::WeakIdentification(inputs.xi));
    }
    if inputs.delta <= 0.0 || inputs.delta.is_nan() {
        return Err(BoundError::InvalidDelta(inputs.delta));
    }
    let t0k = (inputs.t0 * inputs.subperiods) as f64;
    let ts = tilde_sigma(inputs);
    let leading = inputs.rank as f64 * inputs.factor_bound * inputs.factor_bound / inputs.xi;
    let bound_value = leading * (imbalance_noise + 2.0 * inputs.delta + ts / t0k.sqrt());
    let raw = guarantee_probability_raw(
        inputs.delta,
        inputs.sigma,
        inputs.t0 * inputs.subperiods,
        inputs.c_bound,
    );
    Ok(BoundResult {
        bound_value,
        tilde_sigma: ts,
        guarantee_probability: raw.clamp(0.0, 1.0),
        vacuous: raw <= 0.0,
    })
}

/// Bias bound for the disaggregated weights; `inputs.xi` must be the
/// disaggregated signal strength.
pub fn bound_dis(inputs: &BoundInputs) -> Result<BoundResult, BoundError> {
    bound_with_imbalance_term(inputs, 4.0 * (1.0 + inputs.c_bound) * inputs.sigma)
}

/// Bias bound for the aggregated weights; `inputs.xi` must be the
/// aggregated signal strength.
pub fn bound_agg(inputs: &BoundInputs) -> Result<BoundResult, BoundError> {
    let k = inputs.subperiods as f64;
    bound_with_imbalance_term(
        inputs,
        4.0 * (1.0 + inputs.c_bound) * inputs.sigma / k.sqrt(),
    )
}

/// Bound for weights that fit both series at least as well as the oracle
/// weights: the minimum of the two bounds, same probability guarantee.
pub fn bound_combined(
    inputs_dis: &BoundInputs,
    inputs_agg: &BoundInputs,
) -> Result<BoundResult, BoundError> {
    if inputs_dis.rank != inputs_agg.rank {
        return Err(BoundError::MismatchedInputs("rank"));
    }
    if inputs_dis.factor_bound != inputs_agg.factor_bound {
        return Err(BoundError::MismatchedInputs("factor_bound"));
    }
    if inputs_dis.sigma != inputs_agg.sigma {
        return Err(BoundError::MismatchedInputs("sigma"));
    }
    if inputs_dis.c_bound != inputs_agg.c_bound {
        return Err(BoundError::MismatchedInputs("c_bound"));
    }
    if inputs_dis.delta != inputs_agg.delta {
        return Err(BoundError::MismatchedInputs("delta"));
    }
    if inputs_dis.t0 != inputs_agg.t0 || inputs_dis.subperiods != inputs_agg.subperiods {
        return Err(BoundError::MismatchedInputs("t0/subperiods"));
    }
    if inputs_dis.n_donors != inputs_agg.n_donors {
        return Err(BoundError::MismatchedInputs("n_donors"));
    }
    let dis = bound_dis(inputs_dis)?;
    let agg = bound_agg(inputs_agg)?;
    Ok(if agg.bound_value <= dis.bound_value {
        agg
    } else {
        dis
    })
}

/// Whether aggregation tightens the leading bias term:
/// `sqrt(K) * xi_agg > xi_dis`, strictly.
pub fn tighter_by_aggregation(xi_dis: f64, xi_agg: f64, subperiods: usize) -> bool {
    (subperiods as f64).sqrt() * xi_agg > xi_dis
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(xi: f64) -> BoundInputs {
        BoundInputs {
            rank: 1,
            factor_bound: 1.0,
            xi,
            sigma: 0.1,
            c_bound: 1.0,
            delta: 0.5,
            t0: 10,
            subperiods: 4,
            n_donors: 10,
        }
    }

    fn factors_from(values: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
        // one subperiod per period, scalar factors
        values.iter().map(|row| vec![row.clone()]).collect()
    }

    #[test]
    fn xi_dis_examples() {
        // r=1, K=1, mu = [1, -1] over T0 = 2 -> 1.0
        let f = factors_from(&[vec![1.0], vec![-1.0]]);
        assert_eq!(xi_dis(&f), 1.0);

        // all-zero factors: weak identification
        let f = factors_from(&[vec![0.0], vec![0.0]]);
        assert_eq!(xi_dis(&f), 0.0);

        // r=2 orthogonal factors with per-coordinate mean squares (2, 0.5):
        // second moment diag(2, 0.5), smallest eigenvalue 0.5
        let f = factors_from(&[
            vec![2.0, 0.0],
            vec![-2.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ]);
        assert_eq!(xi_dis(&f), 0.5);
    }

    #[test]
    fn xi_agg_examples() {
        // K = 1: xi_agg equals xi_dis
        let f = factors_from(&[vec![1.5], vec![-0.5], vec![0.25]]);
        assert_eq!(xi_agg(&f), xi_dis(&f));

        // purely seasonal factor: subperiod pattern sums to zero, so
        // aggregation destroys all signal
        let seasonal: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|t| {
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                vec![vec![1.5 * sign], vec![-0.5 * sign], vec![-sign]]
            })
            .collect();
        assert!(xi_agg(&seasonal).abs() < 1e-15);
        assert!(xi_dis(&seasonal) > 0.0);

        // constant within period: averaging is the identity
        let persistent: Vec<Vec<Vec<f64>>> = [2.0, -1.0, 0.5]
            .iter()
            .map(|&m| vec![vec![m], vec![m], vec![m]])
            .collect();
        let period_level = factors_from(&[vec![2.0], vec![-1.0], vec![0.5]]);
        assert!((xi_agg(&persistent) - xi_dis(&period_level)).abs() < 1e-15);
    }

    #[test]
    fn tilde_sigma_examples() {
        // sigma = 0 -> 0
        let mut z = inputs(0.5);
        z.sigma = 0.0;
        assert_eq!(tilde_sigma(&z), 0.0);

        // C=1, N0=10, delta=0.5, T0*K=40, sigma=0.1 -> about 0.5167
        let base = inputs(0.5);
        let v = tilde_sigma(&base);
        assert!((v - 0.5167).abs() < 1e-4, "tilde_sigma = {v}");

        // linear in sigma
        let mut doubled = base;
        doubled.sigma = 0.2;
        assert!((tilde_sigma(&doubled) - 2.0 * v).abs() < 1e-12);
    }

    #[test]
    fn bound_examples() {
        // sigma = 0, delta = 3.2: both bounds reduce to (r M^2 / xi) * 2 delta
        let mut z = inputs(0.5);
        z.sigma = 0.0;
        z.delta = 3.2;
        let d = bound_dis(&z).unwrap();
        let a = bound_agg(&z).unwrap();
        let expected = (1.0 / 0.5) * 2.0 * 3.2;
        assert!((d.bound_value - expected).abs() < 1e-12);
        assert!((a.bound_value - expected).abs() < 1e-12);
        let p = 1.0 - 8.0 * (-3.2f64 * 3.2 / 2.0).exp();
        assert!((d.guarantee_probability - p).abs() < 1e-12);
        assert!(!d.vacuous);

        // the worked disaggregated example: about 3.763
        let v = bound_dis(&inputs(0.5)).unwrap();
        assert!(
            (v.bound_value - 3.763).abs() < 2e-3,
            "bound = {}",
            v.bound_value
        );
        // delta = 0.5 with this noise leaves a vacuous probability
        assert!(v.vacuous);
        assert_eq!(v.guarantee_probability, 0.0);

        // K = 1 with equal xis: the two bounds coincide
        let mut one = inputs(0.5);
        one.subperiods = 1;
        let d1 = bound_dis(&one).unwrap();
        let a1 = bound_agg(&one).unwrap();
        assert_eq!(d1.bound_value, a1.bound_value);
    }

    #[test]
    fn combined_bound_takes_the_minimum() {
        // equal xis with K > 1: aggregated term is smaller
        let shared = inputs(0.5);
        let combined = bound_combined(&shared, &shared).unwrap();
        let agg = bound_agg(&shared).unwrap();
        assert_eq!(combined.bound_value, agg.bound_value);

        // vanishing aggregated signal: the disaggregated bound wins
        let mut tiny = shared;
        tiny.xi = 1e-12;
        let combined = bound_combined(&shared, &tiny).unwrap();
        let dis = bound_dis(&shared).unwrap();
        assert_eq!(combined.bound_value, dis.bound_value);

        // explicit minimum of the two worked examples
        let agg_inputs = inputs(0.5);
        let c = bound_combined(&shared, &agg_inputs).unwrap();
        let d = bound_dis(&shared).unwrap();
        let a = bound_agg(&agg_inputs).unwrap();
        assert_eq!(c.bound_value, d.bound_value.min(a.bound_value));

        // mismatched shared parameters are rejected
        let mut other = shared;
        other.sigma = 0.2;
        assert_eq!(
            bound_combined(&shared, &other).unwrap_err(),
            BoundError::MismatchedInputs("sigma")
        );
    }

    #[test]
    fn weak_identification_is_refused() {
        let z = inputs(0.0);
        assert_eq!(
            bound_dis(&z).unwrap_err(),
            BoundError::WeakIdentification(0.0)
        );
        assert_eq!(
            bound_agg(&z).unwrap_err(),
            BoundError::WeakIdentification(0.0)
        );
    }

    #[test]
    fn tighter_by_aggregation_examples() {
        assert!(tighter_by_aggregation(1.0, 1.0, 4));
        assert!(!tighter_by_aggregation(1.0, 0.0, 4));
        // strict inequality at the boundary
        assert!(!tighter_by_aggregation(1.0, 1.0, 1));
    }

    #[test]
    fn bounds_scale_in_m_and_xi() {
        let base = bound_dis(&inputs(0.5)).unwrap().bound_value;
        let mut m2 = inputs(0.5);
        m2.factor_bound = 2.0;
        assert!((bound_dis(&m2).unwrap().bound_value - 4.0 * base).abs() < 1e-9 * base);
        let halved = inputs(0.25);
        assert!((bound_dis(&halved).unwrap().bound_value - 2.0 * base).abs() < 1e-9 * base);
    }

    #[test]
    fn delta_search_reaches_target_probability() {
        let delta = delta_for_probability(0.9, 0.05, 40, 1.0);
        let p = guarantee_probability_raw(delta, 0.05, 40, 1.0);
        assert!((0.9..0.91).contains(&p), "p = {p}");
        // sigma = 0 drops the second term entirely
        let delta0 = delta_for_probability(0.9, 0.0, 40, 1.0);
        assert!(guarantee_probability_raw(delta0, 0.0, 40, 1.0) >= 0.9);
        assert!(delta0 <= delta + 1e-9);
    }
}
