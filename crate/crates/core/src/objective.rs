//! Pre-treatment imbalance objectives in the donor weights.
//!
//! Three objectives are supported: the disaggregated objective (mean
//! squared imbalance over all high-frequency cells), the aggregated
//! objective (mean squared imbalance over period-level averages), and
//! their convex combination with weight `nu` on the aggregated part.
//! All three are convex quadratics in the weights and can be precomputed
//! into a [`QuadraticForm`] for the solver.

use thiserror::Error;

use crate::panel::DemeanedPanel;
use crate::util::{compensated_mean, compensated_sum};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("weight vector has length {got}, expected {expected} donors")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("nu = {0} is outside [0, 1]")]
    InvalidNu(f64),
}

/// Which imbalance objective to minimize.
///
/// `nu` is the weight on the *aggregated* objective: `nu = 0` is the
/// pure disaggregated objective and `nu = 1` the pure aggregated one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveSpec {
    Disaggregated,
    Aggregated,
    Combined { nu: f64 },
}

impl ObjectiveSpec {
    pub fn combined(nu: f64) -> Result<Self, ObjectiveError> {
        if !(0.0..=1.0).contains(&nu) {
            return Err(ObjectiveError::InvalidNu(nu));
        }
        Ok(ObjectiveSpec::Combined { nu })
    }

    /// Weight on the aggregated objective implied by this spec.
    pub fn nu(&self) -> f64 {
        match self {
            ObjectiveSpec::Disaggregated => 0.0,
            ObjectiveSpec::Aggregated => 1.0,
            ObjectiveSpec::Combined { nu } => *nu,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ObjectiveSpec::Disaggregated => "disaggregated",
            ObjectiveSpec::Aggregated => "aggregated",
            ObjectiveSpec::Combined { .. } => "combined",
        }
    }
}

/// Disaggregated imbalance: mean over all pre-treatment `(t, k)` cells of
/// the squared gap between the treated unit's de-meaned outcome and the
/// weighted donor combination.
pub fn q_dis(demeaned: &DemeanedPanel, gamma: &[f64]) -> Result<f64, ObjectiveError> {
    check_dim(demeaned, gamma)?;
    let v = demeaned.values();
    let (t0, k_all) = (demeaned.t0(), demeaned.n_subperiods());
    let total = compensated_sum((0..t0).flat_map(|t| (0..k_all).map(move |k| (t, k))).map(
        |(t, k)| {
            let synthetic = compensated_sum(
                gamma
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * v.get(i + 1, t, k)),
            );
            let r = v.get(0, t, k) - synthetic;
            r * r
        },
    ));
    Ok(total / (t0 * k_all) as f64)
}

/// Aggregated imbalance: mean over pre-treatment periods of the squared
/// gap between period-level (subperiod-averaged) outcomes.
pub fn q_agg(demeaned: &DemeanedPanel, gamma: &[f64]) -> Result<f64, ObjectiveError> {
    check_dim(demeaned, gamma)?;
    let v = demeaned.values();
    let (t0, k_all) = (demeaned.t0(), demeaned.n_subperiods());
    let total = compensated_sum((0..t0).map(|t| {
        let period_mean = |i: usize| compensated_mean((0..k_all).map(|k| v.get(i, t, k)));
        let synthetic = compensated_sum(
            gamma
                .iter()
                .enumerate()
                .map(|(i, g)| g * period_mean(i + 1)),
        );
        let r = period_mean(0) - synthetic;
        r * r
    }));
    Ok(total / t0 as f64)
}

/// Convex combination `(1 - nu) * q_dis + nu * q_agg`. The endpoints
/// evaluate identically to the pure objectives.
pub fn q_combined(demeaned: &DemeanedPanel, gamma: &[f64], nu: f64) -> Result<f64, ObjectiveError> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(ObjectiveError::InvalidNu(nu));
    }
    if nu == 0.0 {
        q_dis(demeaned, gamma)
    } else if nu == 1.0 {
        q_agg(demeaned, gamma)
    } else {
        Ok((1.0 - nu) * q_dis(demeaned, gamma)? + nu * q_agg(demeaned, gamma)?)
    }
}

fn check_dim(demeaned: &DemeanedPanel, gamma: &[f64]) -> Result<(), ObjectiveError> {
    let expected = demeaned.n_donors();
    if gamma.len() != expected {
        return Err(ObjectiveError::DimensionMismatch {
            expected,
            got: gamma.len(),
        });
    }
    Ok(())
}

/// Precomputed quadratic `q(g) = g' H g / 2 + b . g + c` over donor
/// weights, with `H` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    hessian: Vec<f64>,
    linear: Vec<f64>,
    constant: f64,
    dim: usize,
}

impl QuadraticForm {
    /// Assembles a form from raw parts (`hessian` row-major, sized
    /// `linear.len()` squared). No convexity check is performed here;
    /// the solver rejects non-convex forms when it meets one.
    pub fn from_parts(hessian: Vec<f64>, linear: Vec<f64>, constant: f64) -> Self {
        let dim = linear.len();
        assert_eq!(hessian.len(), dim * dim, "hessian must be dim x dim");
        QuadraticForm {
            hessian,
            linear,
            constant,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `dim x dim` Hessian.
    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    #[inline]
    pub fn hessian_at(&self, row: usize, col: usize) -> f64 {
        self.hessian[row * self.dim + col]
    }

    fn row_dot(&self, row: usize, vector: &[f64]) -> f64 {
        self.hessian[row * self.dim..(row + 1) * self.dim]
            .iter()
            .zip(vector)
            .map(|(h, v)| h * v)
            .sum()
    }

    pub fn evaluate(&self, gamma: &[f64]) -> f64 {
        debug_assert_eq!(gamma.len(), self.dim);
        let quad: f64 = gamma
            .iter()
            .enumerate()
            .map(|(i, g)| g * self.row_dot(i, gamma))
            .sum();
        let lin: f64 = self.linear.iter().zip(gamma).map(|(b, g)| b * g).sum();
        0.5 * quad + lin + self.constant
    }

    /// Gradient `H g + b`.
    pub fn gradient(&self, gamma: &[f64]) -> Vec<f64> {
        debug_assert_eq!(gamma.len(), self.dim);
        self.linear
            .iter()
            .enumerate()
            .map(|(i, b)| self.row_dot(i, gamma) + b)
            .collect()
    }

    /// Curvature `d' H d` along a direction.
    pub fn curvature(&self, direction: &[f64]) -> f64 {
        debug_assert_eq!(direction.len(), self.dim);
        direction
            .iter()
            .enumerate()
            .map(|(i, d)| d * self.row_dot(i, direction))
            .sum()
    }

    /// `(1 - nu) * a + nu * b`, with exact endpoints.
    pub fn convex_combination(a: &QuadraticForm, b: &QuadraticForm, nu: f64) -> QuadraticForm {
        debug_assert_eq!(a.dim, b.dim);
        if nu == 0.0 {
            return a.clone();
        }
        if nu == 1.0 {
            return b.clone();
        }
        let w_a = 1.0 - nu;
        QuadraticForm {
            hessian: a
                .hessian
                .iter()
                .zip(&b.hessian)
                .map(|(x, y)| w_a * x + nu * y)
                .collect(),
            linear: a
                .linear
                .iter()
                .zip(&b.linear)
                .map(|(x, y)| w_a * x + nu * y)
                .collect(),
            constant: w_a * a.constant + nu * b.constant,
            dim: a.dim,
        }
    }

    pub fn max_symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self.hessian_at(i, j) - self.hessian_at(j, i)).abs());
            }
        }
        worst
    }
}

/// Builds the [`QuadraticForm`] representation of an objective.
///
/// Evaluating the form agrees with the direct objective to within
/// 1e-10 relative for any weight vector.
pub fn to_quadratic(demeaned: &DemeanedPanel, spec: &ObjectiveSpec) -> QuadraticForm {
    match spec {
        ObjectiveSpec::Disaggregated => disaggregated_quadratic(demeaned),
        ObjectiveSpec::Aggregated => aggregated_quadratic(demeaned),
        ObjectiveSpec::Combined { nu } => QuadraticForm::convex_combination(
            &disaggregated_quadratic(demeaned),
            &aggregated_quadratic(demeaned),
            *nu,
        ),
    }
}

/// Builds a quadratic form from per-cell rows: the residual in cell `c`
/// is `treated[c] - sum_i gamma_i donors[c][i]` and the objective is the
/// mean of squared residuals.
fn quadratic_from_rows(treated: &[f64], donors: &[Vec<f64>], n_donors: usize) -> QuadraticForm {
    let n_cells = treated.len() as f64;
    let mut hessian = vec![0.0; n_donors * n_donors];
    let mut linear = vec![0.0; n_donors];
    for i in 0..n_donors {
        for j in i..n_donors {
            let s = compensated_sum(donors.iter().map(|row| row[i] * row[j]));
            let h = 2.0 * s / n_cells;
            hessian[i * n_donors + j] = h;
            hessian[j * n_donors + i] = h;
        }
        let cross = compensated_sum(treated.iter().zip(donors).map(|(a, row)| a * row[i]));
        linear[i] = -2.0 * cross / n_cells;
    }
    let constant = compensated_sum(treated.iter().map(|a| a * a)) / n_cells;
    QuadraticForm {
        hessian,
        linear,
        constant,
        dim: n_donors,
    }
}

fn disaggregated_quadratic(demeaned: &DemeanedPanel) -> QuadraticForm {
    let v = demeaned.values();
    let (t0, k_all, n_donors) = (demeaned.t0(), demeaned.n_subperiods(), demeaned.n_donors());
    let mut treated = Vec::with_capacity(t0 * k_all);
    let mut donors = Vec::with_capacity(t0 * k_all);
    for t in 0..t0 {
        for k in 0..k_all {
            treated.push(v.get(0, t, k));
            donors.push((0..n_donors).map(|i| v.get(i + 1, t, k)).collect());
        }
    }
    quadratic_from_rows(&treated, &donors, n_donors)
}

fn aggregated_quadratic(demeaned: &DemeanedPanel) -> QuadraticForm {
    let v = demeaned.values();
    let (t0, k_all, n_donors) = (demeaned.t0(), demeaned.n_subperiods(), demeaned.n_donors());
    let mut treated = Vec::with_capacity(t0);
    let mut donors = Vec::with_capacity(t0);
    for t in 0..t0 {
        let period_mean = |i: usize| compensated_mean((0..k_all).map(|k| v.get(i, t, k)));
        treated.push(period_mean(0));
        donors.push((0..n_donors).map(|i| period_mean(i + 1)).collect());
    }
    quadratic_from_rows(&treated, &donors, n_donors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{demean, Array3, PanelData};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// De-meaned panel straight from the given values (pre-means 0).
    fn demeaned_from(values: &[Vec<Vec<f64>>], t0: usize) -> DemeanedPanel {
        let arr = Array3::from_nested(values).unwrap();
        let pre_means = vec![0.0; values.len()];
        DemeanedPanel::from_parts(arr, pre_means, t0)
    }

    fn random_demeaned(rng: &mut ChaCha8Rng, n: usize, t0: usize, k: usize) -> DemeanedPanel {
        let t_all = t0 + 1;
        let mut values = Vec::new();
        for _ in 0..n {
            let level: f64 = rng.random_range(-3.0..3.0);
            let unit: Vec<Vec<f64>> = (0..t_all)
                .map(|_| {
                    (0..k)
                        .map(|_| level + rng.random_range(-2.0..2.0))
                        .collect()
                })
                .collect();
            values.push(unit);
        }
        let arr = Array3::from_nested(&values).unwrap();
        let labels = (0..n).map(|i| format!("u{i}")).collect();
        demean(&PanelData::new(arr, t0, labels).unwrap())
    }

    fn random_gamma(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn q_dis_examples() {
        // T0=2, K=1, treated demeaned [1,-1], donor [0,0]
        let dm = demeaned_from(
            &[
                vec![vec![1.0], vec![-1.0], vec![0.0]],
                vec![vec![0.0], vec![0.0], vec![0.0]],
            ],
            2,
        );
        assert_eq!(q_dis(&dm, &[1.0]).unwrap(), 1.0);

        // donor identical to treated: exact fit
        let dm = demeaned_from(
            &[
                vec![vec![1.0], vec![-1.0], vec![0.0]],
                vec![vec![1.0], vec![-1.0], vec![0.0]],
            ],
            2,
        );
        assert_eq!(q_dis(&dm, &[1.0]).unwrap(), 0.0);

        // T0=1, K=2, treated [[1,3]], donor [[2,2]] -> ((1-2)^2 + (3-2)^2)/2 = 1
        let dm = demeaned_from(
            &[
                vec![vec![1.0, 3.0], vec![0.0, 0.0]],
                vec![vec![2.0, 2.0], vec![0.0, 0.0]],
            ],
            1,
        );
        assert_eq!(q_dis(&dm, &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn q_agg_examples() {
        // Jensen gap: same cells, but period means are both 2
        let dm = demeaned_from(
            &[
                vec![vec![1.0, 3.0], vec![0.0, 0.0]],
                vec![vec![2.0, 2.0], vec![0.0, 0.0]],
            ],
            1,
        );
        assert_eq!(q_agg(&dm, &[1.0]).unwrap(), 0.0);
        assert_eq!(q_dis(&dm, &[1.0]).unwrap(), 1.0);

        // K = 1: q_agg equals q_dis on any input
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let dm = random_demeaned(&mut rng, 3, 4, 1);
            let gamma = random_gamma(&mut rng, 2);
            assert_eq!(q_agg(&dm, &gamma).unwrap(), q_dis(&dm, &gamma).unwrap());
        }

        // exact-fit donor
        let dm = demeaned_from(
            &[
                vec![vec![1.0, 3.0], vec![0.0, 0.0]],
                vec![vec![1.0, 3.0], vec![0.0, 0.0]],
            ],
            1,
        );
        assert_eq!(q_agg(&dm, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn q_combined_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dm = random_demeaned(&mut rng, 4, 3, 3);
            let gamma = random_gamma(&mut rng, 3);
            // exact endpoint identities
            assert_eq!(
                q_combined(&dm, &gamma, 0.0).unwrap(),
                q_dis(&dm, &gamma).unwrap()
            );
            assert_eq!(
                q_combined(&dm, &gamma, 1.0).unwrap(),
                q_agg(&dm, &gamma).unwrap()
            );
        }

        // nu = 0.5 on the Jensen example: (1 + 0)/2
        let dm = demeaned_from(
            &[
                vec![vec![1.0, 3.0], vec![0.0, 0.0]],
                vec![vec![2.0, 2.0], vec![0.0, 0.0]],
            ],
            1,
        );
        assert_eq!(q_combined(&dm, &[1.0], 0.5).unwrap(), 0.5);

        assert_eq!(
            q_combined(&dm, &[1.0], 1.5).unwrap_err(),
            ObjectiveError::InvalidNu(1.5)
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dm = demeaned_from(&[vec![vec![1.0], vec![0.0]], vec![vec![0.5], vec![0.0]]], 1);
        assert_eq!(
            q_dis(&dm, &[1.0, 2.0]).unwrap_err(),
            ObjectiveError::DimensionMismatch {
                expected: 1,
                got: 2
            }
        );
    }

    #[test]
    fn quadratic_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let dm = random_demeaned(&mut rng, 4, 3, 2);
            for spec in [
                ObjectiveSpec::Disaggregated,
                ObjectiveSpec::Aggregated,
                ObjectiveSpec::combined(rng.random_range(0.0..1.0)).unwrap(),
            ] {
                let qf = to_quadratic(&dm, &spec);
                assert!(qf.max_symmetry_error() < 1e-12);
                for _ in 0..10 {
                    let gamma = random_gamma(&mut rng, 3);
                    let direct = q_combined(&dm, &gamma, spec.nu()).unwrap();
                    let via_form = qf.evaluate(&gamma);
                    assert!(
                        (via_form - direct).abs() <= 1e-10 * (1.0 + direct.abs()),
                        "form {via_form} direct {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-5;
        for _ in 0..10 {
            let dm = random_demeaned(&mut rng, 4, 4, 2);
            let nu = rng.random_range(0.0..1.0);
            let qf = to_quadratic(&dm, &ObjectiveSpec::combined(nu).unwrap());
            let gamma = random_gamma(&mut rng, 3);
            let grad = qf.gradient(&gamma);
            for i in 0..gamma.len() {
                let mut up = gamma.clone();
                let mut down = gamma.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (q_combined(&dm, &up, nu).unwrap() - q_combined(&dm, &down, nu).unwrap())
                    / (2.0 * h);
                assert!(
                    (grad[i] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "grad {} fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn zero_panel_gives_zero_form() {
        let dm = demeaned_from(
            &[
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            ],
            1,
        );
        let qf = to_quadratic(&dm, &ObjectiveSpec::Disaggregated);
        assert!(qf.hessian().iter().all(|&h| h == 0.0));
        assert!(qf.linear().iter().all(|&b| b == 0.0));
        assert_eq!(qf.constant(), 0.0);
    }

    #[test]
    fn jensen_ordering_holds_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..200 {
            let n = rng.random_range(2..5);
            let t0 = rng.random_range(1..4);
            let k = rng.random_range(1..5);
            let dm = random_demeaned(&mut rng, n, t0, k);
            let gamma = random_gamma(&mut rng, n - 1);
            let dis = q_dis(&dm, &gamma).unwrap();
            let agg = q_agg(&dm, &gamma).unwrap();
            assert!(agg <= dis + 1e-12, "agg {agg} > dis {dis}");
        }
    }

    #[test]
    fn objectives_ignore_unit_intercepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t0 = 3;
        let values: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| {
                (0..4)
                    .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let shifts = [4.0, -2.5, 11.0];
        let shifted: Vec<Vec<Vec<f64>>> = values
            .iter()
            .enumerate()
            .map(|(i, unit)| {
                unit.iter()
                    .map(|row| row.iter().map(|v| v + shifts[i]).collect())
                    .collect()
            })
            .collect();
        let labels: Vec<String> = (0..3).map(|i| format!("u{i}")).collect();
        let dm_a = demean(
            &PanelData::new(Array3::from_nested(&values).unwrap(), t0, labels.clone()).unwrap(),
        );
        let dm_b =
            demean(&PanelData::new(Array3::from_nested(&shifted).unwrap(), t0, labels).unwrap());
        for _ in 0..10 {
            let gamma = random_gamma(&mut rng, 2);
            let a = q_dis(&dm_a, &gamma).unwrap();
            let b = q_dis(&dm_b, &gamma).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            let a = q_agg(&dm_a, &gamma).unwrap();
            let b = q_agg(&dm_b, &gamma).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn objectives_are_convex_along_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..100 {
            let dm = random_demeaned(&mut rng, 4, 3, 3);
            let ga = random_gamma(&mut rng, 3);
            let gb = random_gamma(&mut rng, 3);
            let lambda: f64 = rng.random_range(0.0..1.0);
            let mid: Vec<f64> = ga
                .iter()
                .zip(&gb)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let nu = rng.random_range(0.0..1.0);
            let q_mid = q_combined(&dm, &mid, nu).unwrap();
            let bound = lambda * q_combined(&dm, &ga, nu).unwrap()
                + (1.0 - lambda) * q_combined(&dm, &gb, nu).unwrap();
            assert!(q_mid <= bound + 1e-10, "{q_mid} > {bound}");
        }
    }
}
