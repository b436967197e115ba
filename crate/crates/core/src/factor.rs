//! Linear-factor-model panel generator for the simulation lab.
//!
//! Outcomes under control follow
//! `Y[i,t,k] = alpha[i] + beta[t,k] + L[i,t,k] + eps[i,t,k]`, where
//! `L[i,t,k] = loadings[i] . factors[t,k]` is a rank-`r` interactive
//! component, double-centered so that it sums to zero across units for
//! every `(t, k)` and across periods for every `(i, k)`. Noise is i.i.d.
//! Gaussian with standard deviation `noise_scale` (the sub-Gaussian
//! scale parameter). Treated post-treatment cells receive the given
//! treatment effects on top.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{Array3, PanelData};
use crate::util::compensated_mean;

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error("{0}")]
    Shape(String),
    #[error("time effects for subperiod {subperiod} sum to {sum:.3e}, expected 0")]
    TimeEffectsNotCentered { subperiod: usize, sum: f64 },
    #[error("noise scale must be finite and nonnegative, got {0}")]
    InvalidNoiseScale(f64),
    #[error("oracle weights must sum to 1, got {0}")]
    OracleWeightsNotNormalized(f64),
    #[error("spec needs at least 2 units and t0 >= 1, n_post >= 1, subperiods >= 1")]
    DegenerateShape,
}

/// Full description of the data-generating process.
///
/// `loadings` has one row per unit; `factors[t][k]` is the length-`rank`
/// factor vector of cell `(t, k)` over all `t0 + n_post` periods. When
/// `oracle_weights` is present, the treated unit's loading row is
/// replaced by the weighted donor combination, so weights achieving
/// zero bias exist by construction. `rank = 0` degenerates to a pure
/// two-way fixed-effects model with `L = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub n_units: usize,
    pub t0: usize,
    pub n_post: usize,
    pub subperiods: usize,
    pub rank: usize,
    pub unit_effects: Vec<f64>,
    /// `time_effects[t][k]`, constrained to sum to zero over `t` per `k`.
    pub time_effects: Vec<Vec<f64>>,
    /// `loadings[i]`, each of length `rank`.
    pub loadings: Vec<Vec<f64>>,
    /// `factors[t][k]`, each of length `rank`.
    pub factors: Vec<Vec<Vec<f64>>>,
    pub noise_scale: f64,
    /// `treatment_effects[p][k]` for post period `p` (0-based after t0).
    pub treatment_effects: Vec<Vec<f64>>,
    pub oracle_weights: Option<Vec<f64>>,
}

impl FactorModelSpec {
    pub fn n_periods(&self) -> usize {
        self.t0 + self.n_post
    }

    pub fn n_donors(&self) -> usize {
        self.n_units - 1
    }

    pub fn validate(&self) -> Result<(), FactorError> {
        if self.n_units < 2 || self.t0 < 1 || self.n_post < 1 || self.subperiods < 1 {
            return Err(FactorError::DegenerateShape);
        }
        let (t_all, k_all, r) = (self.n_periods(), self.subperiods, self.rank);
        if self.unit_effects.len() != self.n_units {
            return Err(FactorError::Shape(format!(
                "unit_effects has {} entries, expected {}",
                self.unit_effects.len(),
                self.n_units
            )));
        }
        if self.time_effects.len() != t_all
            || self.time_effects.iter().any(|row| row.len() != k_all)
        {
            return Err(FactorError::Shape(format!(
                "time_effects must be {t_all} periods x {k_all} subperiods"
            )));
        }
        if self.loadings.len() != self.n_units || self.loadings.iter().any(|l| l.len() != r) {
            return Err(FactorError::Shape(format!(
                "loadings must be {} x {}",
                self.n_units, r
            )));
        }
        if self.factors.len() != t_all
            || self
                .factors
                .iter()
                .any(|t| t.len() != k_all || t.iter().any(|f| f.len() != r))
        {
            return Err(FactorError::Shape(format!(
                "factors must be {t_all} x {k_all} x {r}"
            )));
        }
        if self.treatment_effects.len() != self.n_post
            || self.treatment_effects.iter().any(|row| row.len() != k_all)
        {
            return Err(FactorError::Shape(format!(
                "treatment_effects must be {} x {}",
                self.n_post, k_all
            )));
        }
        for k in 0..k_all {
            let sum: f64 = self.time_effects.iter().map(|row| row[k]).sum();
            let scale: f64 = self
                .time_effects
                .iter()
                .map(|row| row[k].abs())
                .fold(0.0, f64::max);
            if sum.abs() > 1e-8 * (1.0 + scale) {
                return Err(FactorError::TimeEffectsNotCentered { subperiod: k, sum });
            }
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(FactorError::InvalidNoiseScale(self.noise_scale));
        }
        if let Some(w) = &self.oracle_weights {
            if w.len() != self.n_donors() {
                return Err(FactorError::Shape(format!(
                    "oracle_weights has {} entries, expected {}",
                    w.len(),
                    self.n_donors()
                )));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(FactorError::OracleWeightsNotNormalized(sum));
            }
        }
        Ok(())
    }
}

/// The latent side of a generated panel: the interactive component, the
/// treatment effects, the realized noise, and the centered loadings and
/// factors that `L` factorizes through.
#[derive(Debug, Clone)]
pub struct LatentTruth {
    pub l: Array3,
    pub effects: Vec<Vec<f64>>,
    pub noise: Array3,
    pub effective_loadings: Vec<Vec<f64>>,
    /// `effective_factors[t][k]`: time-centered factors per subperiod.
    pub effective_factors: Vec<Vec<Vec<f64>>>,
}

impl LatentTruth {
    /// Largest absolute component over all effective factor vectors.
    pub fn factor_bound(&self) -> f64 {
        self.effective_factors
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Effective factors restricted to the first `t0` periods.
    pub fn pre_factors(&self, t0: usize) -> Vec<Vec<Vec<f64>>> {
        self.effective_factors[..t0].to_vec()
    }
}

/// Draws one panel from the factor model. Deterministic in `(spec, seed)`.
pub fn generate(
    spec: &FactorModelSpec,
    seed: u64,
) -> Result<(PanelData, LatentTruth), FactorError> {
    spec.validate()?;
    let (n, t_all, k_all, r) = (spec.n_units, spec.n_periods(), spec.subperiods, spec.rank);

    // resolve the treated loading row, then center loadings across units
    // and factors across periods (per subperiod). Centering preserves the
    // oracle relation and makes L exactly double-centered.
    let mut loadings = spec.loadings.clone();
    if let Some(w) = &spec.oracle_weights {
        loadings[0] = (0..r)
            .map(|j| {
                w.iter()
                    .enumerate()
                    .map(|(i, wi)| wi * spec.loadings[i + 1][j])
                    .sum()
            })
            .collect();
    }
    let loading_mean: Vec<f64> = (0..r)
        .map(|j| compensated_mean(loadings.iter().map(|l| l[j])))
        .collect();
    let effective_loadings: Vec<Vec<f64>> = loadings
        .iter()
        .map(|l| l.iter().zip(&loading_mean).map(|(v, m)| v - m).collect())
        .collect();

    let factor_means: Vec<Vec<f64>> = (0..k_all)
        .map(|k| {
            (0..r)
                .map(|j| compensated_mean(spec.factors.iter().map(|t| t[k][j])))
                .collect()
        })
        .collect();
    let mut effective_factors = spec.factors.clone();
    for period in effective_factors.iter_mut() {
        for (cell, means) in period.iter_mut().zip(&factor_means) {
            for (v, m) in cell.iter_mut().zip(means) {
                *v -= m;
            }
        }
    }

    let mut l = Array3::zeros(n, t_all, k_all);
    for (i, loading) in effective_loadings.iter().enumerate() {
        for (t, period) in effective_factors.iter().enumerate() {
            for (k, mu) in period.iter().enumerate() {
                let v: f64 = loading.iter().zip(mu).map(|(a, b)| a * b).sum();
                l.set(i, t, k, v);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.noise_scale)
        .map_err(|_| FactorError::InvalidNoiseScale(spec.noise_scale))?;
    let mut noise = Array3::zeros(n, t_all, k_all);
    let mut outcomes = Array3::zeros(n, t_all, k_all);
    for i in 0..n {
        for t in 0..t_all {
            for k in 0..k_all {
                let eps = normal.sample(&mut rng);
                noise.set(i, t, k, eps);
                let mut y = spec.unit_effects[i] + spec.time_effects[t][k] + l.get(i, t, k) + eps;
                if i == 0 && t >= spec.t0 {
                    y += spec.treatment_effects[t - spec.t0][k];
                }
                outcomes.set(i, t, k, y);
            }
        }
    }

    let labels = (0..n)
        .map(|i| {
            if i == 0 {
                "treated".to_string()
            } else {
                format!("donor{i}")
            }
        })
        .collect();
    let panel = PanelData::new(outcomes, spec.t0, labels)
        .map_err(|e| FactorError::Shape(format!("generated panel failed validation: {e}")))?;
    Ok((
        panel,
        LatentTruth {
            l,
            effects: spec.treatment_effects.clone(),
            noise,
            effective_loadings,
            effective_factors,
        },
    ))
}
