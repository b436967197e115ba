//! Convex quadratic minimization over the constraint polytope
//! `{ g in R^n : ||g||_1 <= C, sum(g) = 1 }` via Frank-Wolfe with an
//! exact vertex oracle and exact line search.
//!
//! The polytope has closed-form vertices: for `C = 1` it is the
//! probability simplex with vertices `e_i`; for `C > 1` the vertices are
//! `a e_i + b e_j` with `a = (1 + C) / 2`, `b = (1 - C) / 2`, `i != j`.
//! The duality gap `grad . (g - lmo(grad))` certifies suboptimality of
//! the returned point. Between vertex steps the solver periodically
//! re-optimizes exactly over the convex hull of the atoms collected so
//! far, which drives the gap to machine precision once the optimal face
//! has been identified.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::objective::QuadraticForm;

/// Feasibility tolerance for weight vectors: `|sum - 1|` and the excess
/// of the l1 norm over `C` must both stay below this.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Default iteration cap for [`frank_wolfe`].
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Iterations between exact re-optimizations over the collected atoms.
const CORRECTION_INTERVAL: usize = 8;

/// Tolerated negative curvature before a Hessian is declared non-convex.
const CURVATURE_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("c bound {0} is below 1; the constraint set would be empty")]
    CBoundTooSmall(f64),
    #[error("dimension must be at least 1")]
    EmptyDimension,
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("start point violates feasibility by {slack:.3e}")]
    InfeasibleStart { slack: f64 },
    #[error("objective is not convex: curvature {curvature:.3e} along a search direction")]
    NonConvex { curvature: f64 },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("grid oracle supports at most 4 donors, got {0}")]
    GridDimensionTooLarge(usize),
    #[error("grid resolution must be positive, got {0}")]
    InvalidResolution(f64),
}

/// The constraint set: l1 ball of radius `C` intersected with the
/// `sum = 1` hyperplane. `C = 1` is the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleSet {
    c_bound: f64,
    dimension: usize,
}

impl FeasibleSet {
    pub fn new(dimension: usize, c_bound: f64) -> Result<Self, SolverError> {
        if dimension == 0 {
            return Err(SolverError::EmptyDimension);
        }
        if c_bound < 1.0 || c_bound.is_nan() {
            return Err(SolverError::CBoundTooSmall(c_bound));
        }
        Ok(FeasibleSet { c_bound, dimension })
    }

    /// The probability simplex in `dimension` coordinates.
    pub fn simplex(dimension: usize) -> Result<Self, SolverError> {
        FeasibleSet::new(dimension, 1.0)
    }

    pub fn c_bound(&self) -> f64 {
        self.c_bound
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `max(||g||_1 - C, |sum(g) - 1|)`; nonpositive inside the set.
    pub fn feasibility_slack(&self, gamma: &[f64]) -> f64 {
        let l1: f64 = gamma.iter().map(|g| g.abs()).sum();
        let sum: f64 = gamma.iter().sum();
        (l1 - self.c_bound).max((sum - 1.0).abs())
    }

    /// Uniform weights `1/n`, feasible for every `C >= 1`.
    pub fn uniform(&self) -> Weights {
        let g = vec![1.0 / self.dimension as f64; self.dimension];
        Weights::new(g, self).expect("uniform point is feasible")
    }
}

/// A feasible donor-weight vector together with its feasibility slack.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    gamma: Vec<f64>,
    feasibility_slack: f64,
}

impl Weights {
    /// Validates feasibility against `set` within [`FEASIBILITY_TOL`].
    pub fn new(gamma: Vec<f64>, set: &FeasibleSet) -> Result<Self, SolverError> {
        if gamma.len() != set.dimension() {
            return Err(SolverError::DimensionMismatch {
                expected: set.dimension(),
                got: gamma.len(),
            });
        }
        let slack = set.feasibility_slack(&gamma);
        if slack > FEASIBILITY_TOL {
            return Err(SolverError::InfeasibleStart { slack });
        }
        Ok(Weights {
            gamma,
            feasibility_slack: slack,
        })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn feasibility_slack(&self) -> f64 {
        self.feasibility_slack
    }
}

/// Outcome of a [`frank_wolfe`] solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub weights: Weights,
    pub objective_value: f64,
    /// Duality-gap certificate: `objective_value - minimum <= fw_gap`.
    pub fw_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every iteration, when requested.
    pub trace: Option<Vec<f64>>,
}

/// Options for [`frank_wolfe`]. `tol = None` uses the relative default
/// `1e-10 * (1 + |objective at start|)`.
#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub start: Option<Weights>,
    pub record_trace: bool,
}

/// Linear minimization oracle: the vertex of the constraint set that
/// minimizes `gradient . g`. Ties break toward the lowest index.
pub fn lmo(gradient: &[f64], set: &FeasibleSet) -> Result<Weights, SolverError> {
    let n = set.dimension();
    if gradient.len() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            got: gradient.len(),
        });
    }
    if n == 1 {
        return Weights::new(vec![1.0], set);
    }
    let argmin = first_extreme(gradient, |a, b| a < b);
    let mut gamma = vec![0.0; n];
    if set.c_bound() == 1.0 {
        gamma[argmin] = 1.0;
    } else {
        let argmax = first_extreme_excluding(gradient, argmin, |a, b| a > b);
        gamma[argmin] = (1.0 + set.c_bound()) / 2.0;
        gamma[argmax] = (1.0 - set.c_bound()) / 2.0;
    }
    Weights::new(gamma, set)
}

fn first_extreme(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    best
}

fn first_extreme_excluding(
    values: &[f64],
    excluded: usize,
    better: impl Fn(f64, f64) -> bool,
) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in values.iter().enumerate() {
        if i == excluded {
            continue;
        }
        if best == usize::MAX || better(v, values[best]) {
            best = i;
        }
    }
    best
}

/// Identifier for an atom in the convex decomposition of the iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum AtomKey {
    /// The user-supplied start point.
    Start,
    /// Simplex vertex `e_i`.
    Basis(usize),
    /// `a e_i + b e_j` vertex of the `C > 1` polytope.
    Pair(usize, usize),
}

struct Atom {
    key: AtomKey,
    point: Vec<f64>,
    weight: f64,
}

fn atom_key(gamma: &[f64], c_bound: f64) -> AtomKey {
    if c_bound == 1.0 {
        AtomKey::Basis(gamma.iter().position(|&g| g > 0.5).unwrap_or(0))
    } else {
        let mut pos = 0;
        let mut neg = 0;
        for (i, &g) in gamma.iter().enumerate() {
            if g > 0.5 {
                pos = i;
            } else if g < -1e-15 {
                neg = i;
            }
        }
        if gamma.iter().all(|&g| g >= -1e-15) {
            AtomKey::Basis(gamma.iter().position(|&g| g > 0.5).unwrap_or(0))
        } else {
            AtomKey::Pair(pos, neg)
        }
    }
}

/// Minimizes a convex quadratic over the constraint set.
///
/// Runs Frank-Wolfe with exact line search, interleaved every few
/// iterations with an exact equality-constrained solve over the convex
/// hull of the atoms visited so far (dropping atoms whose coefficient
/// would go negative). Iterates remain feasible throughout and the
/// objective is non-increasing. The returned `fw_gap` is the standard
/// duality-gap certificate evaluated at the final point.
pub fn frank_wolfe(
    objective: &QuadraticForm,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<SolveReport, SolverError> {
    let n = set.dimension();
    if objective.dim() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            got: objective.dim(),
        });
    }
    if let Some(t) = opts.tol {
        if t <= 0.0 || t.is_nan() {
            return Err(SolverError::InvalidTolerance(t));
        }
    }
    let start = match &opts.start {
        Some(w) => {
            if w.len() != n {
                return Err(SolverError::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            w.clone()
        }
        None => set.uniform(),
    };
    let max_iter = opts.max_iter.unwrap_or(DEFAULT_MAX_ITER);

    let mut gamma = start.gamma().to_vec();
    let q_start = objective.evaluate(&gamma);
    let tol = opts.tol.unwrap_or(1e-10 * (1.0 + q_start.abs()));
    let scale = 1.0 + q_start.abs();
    let mut trace = opts.record_trace.then(Vec::new);

    let mut atoms = vec![Atom {
        key: AtomKey::Start,
        point: gamma.clone(),
        weight: 1.0,
    }];

    let mut iterations = 0;
    let mut gap;
    let mut converged;
    loop {
        let gradient = objective.gradient(&gamma);
        let vertex = lmo(&gradient, set)?;
        gap = dual_gap(&gradient, &gamma, vertex.gamma());
        converged = gap <= tol;
        if converged || iterations >= max_iter {
            break;
        }

        // exact line search along d = v - gamma, clipped to [0, 1]
        let direction: Vec<f64> = vertex
            .gamma()
            .iter()
            .zip(&gamma)
            .map(|(v, g)| v - g)
            .collect();
        let curvature = objective.curvature(&direction);
        let step = if curvature > 0.0 {
            (gap / curvature).min(1.0)
        } else if curvature >= -CURVATURE_TOL * scale {
            1.0
        } else {
            return Err(SolverError::NonConvex { curvature });
        };

        for (g, d) in gamma.iter_mut().zip(&direction) {
            *g += step * d;
        }
        update_atoms(&mut atoms, &vertex, step, set.c_bound());
        iterations += 1;

        if iterations % CORRECTION_INTERVAL == 0 {
            correct_over_atoms(objective, &mut atoms, &mut gamma);
        }
        if let Some(t) = trace.as_mut() {
            t.push(objective.evaluate(&gamma));
        }
    }

    // final polish and certificate refresh
    if !atoms.is_empty() && correct_over_atoms(objective, &mut atoms, &mut gamma) {
        let gradient = objective.gradient(&gamma);
        let vertex = lmo(&gradient, set)?;
        gap = dual_gap(&gradient, &gamma, vertex.gamma());
        converged = gap <= tol;
        if let Some(t) = trace.as_mut() {
            t.push(objective.evaluate(&gamma));
        }
    }

    let weights = Weights::new(gamma.clone(), set)?;
    Ok(SolveReport {
        objective_value: objective.evaluate(&gamma),
        weights,
        fw_gap: gap,
        iterations,
        converged,
        trace,
    })
}

fn dual_gap(gradient: &[f64], gamma: &[f64], vertex: &[f64]) -> f64 {
    gradient
        .iter()
        .zip(gamma.iter().zip(vertex))
        .map(|(g, (x, v))| g * (x - v))
        .sum()
}

fn update_atoms(atoms: &mut Vec<Atom>, vertex: &Weights, step: f64, c_bound: f64) {
    for atom in atoms.iter_mut() {
        atom.weight *= 1.0 - step;
    }
    let key = atom_key(vertex.gamma(), c_bound);
    if let Some(existing) = atoms.iter_mut().find(|a| a.key == key) {
        existing.weight += step;
    } else {
        atoms.push(Atom {
            key,
            point: vertex.gamma().to_vec(),
            weight: step,
        });
    }
    atoms.retain(|a| a.weight > 1e-16);
}

/// Exactly minimizes the objective over the convex hull of `atoms` by
/// solving the equality-constrained KKT system, dropping atoms whose
/// coefficient turns negative. Updates `atoms` and `gamma` and returns
/// true if the point improved (or stayed equal within roundoff).
fn correct_over_atoms(
    objective: &QuadraticForm,
    atoms: &mut Vec<Atom>,
    gamma: &mut Vec<f64>,
) -> bool {
    let m = atoms.len();
    if m == 0 {
        return false;
    }
    if m == 1 {
        atoms[0].weight = 1.0;
        let changed = gamma != &atoms[0].point;
        *gamma = atoms[0].point.clone();
        return changed;
    }

    // reduced problem: q(V l) over the simplex in l
    let n = gamma.len();
    let mut h_reduced = DMatrix::<f64>::zeros(m, m);
    let mut b_reduced = DVector::<f64>::zeros(m);
    let mut h_point = vec![vec![0.0; n]; m];
    for (a, atom) in atoms.iter().enumerate() {
        for (i, slot) in h_point[a].iter_mut().enumerate() {
            *slot = (0..n)
                .map(|j| objective.hessian_at(i, j) * atom.point[j])
                .sum();
        }
        b_reduced[a] = atom
            .point
            .iter()
            .zip(objective.linear())
            .map(|(p, l)| p * l)
            .sum();
    }
    for a in 0..m {
        for b in a..m {
            let v: f64 = atoms[b]
                .point
                .iter()
                .zip(&h_point[a])
                .map(|(p, h)| p * h)
                .sum();
            h_reduced[(a, b)] = v;
            h_reduced[(b, a)] = v;
        }
    }

    let mut active: Vec<usize> = (0..m).collect();
    let coefficients = loop {
        let d = active.len();
        if d == 1 {
            let mut lambda = vec![0.0; m];
            lambda[active[0]] = 1.0;
            break lambda;
        }
        // KKT system: [H 1; 1' 0] [l; mu] = [-b; 1]
        let mut kkt = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut rhs = DVector::<f64>::zeros(d + 1);
        for (r, &ar) in active.iter().enumerate() {
            for (c, &ac) in active.iter().enumerate() {
                kkt[(r, c)] = h_reduced[(ar, ac)];
            }
            kkt[(r, d)] = 1.0;
            kkt[(d, r)] = 1.0;
            rhs[r] = -b_reduced[ar];
        }
        rhs[d] = 1.0;
        let solution = match kkt.lu().solve(&rhs) {
            Some(s) => s,
            None => return false, // singular face; keep the current point
        };
        let worst = (0..d).min_by(|&a, &b| solution[a].partial_cmp(&solution[b]).unwrap());
        match worst {
            Some(w) if solution[w] < -1e-12 => {
                active.remove(w);
            }
            _ => {
                let mut lambda = vec![0.0; m];
                let total: f64 = (0..d).map(|r| solution[r].max(0.0)).sum();
                if total <= 0.0 {
                    return false;
                }
                for (r, &ar) in active.iter().enumerate() {
                    lambda[ar] = solution[r].max(0.0) / total;
                }
                break lambda;
            }
        }
    };

    let mut candidate = vec![0.0; n];
    for (a, atom) in atoms.iter().enumerate() {
        if coefficients[a] == 0.0 {
            continue;
        }
        for (c, p) in candidate.iter_mut().zip(&atom.point) {
            *c += coefficients[a] * p;
        }
    }
    let q_old = objective.evaluate(gamma);
    let q_new = objective.evaluate(&candidate);
    if q_new <= q_old + 1e-14 * (1.0 + q_old.abs()) {
        for (a, atom) in atoms.iter_mut().enumerate() {
            atom.weight = coefficients[a];
        }
        atoms.retain(|a| a.weight > 1e-16);
        *gamma = candidate;
        true
    } else {
        false
    }
}

/// Brute-force minimizer over a uniform grid on the constraint set.
///
/// Parameterizes the first `n - 1` coordinates over `[-C, C]` at the
/// given resolution, sets the last coordinate from the sum constraint,
/// and skips infeasible points. Exponential in the dimension; intended
/// as an independent test oracle, hence the `n <= 4` limit.
pub fn grid_oracle(
    objective: &QuadraticForm,
    set: &FeasibleSet,
    resolution: f64,
) -> Result<Weights, SolverError> {
    let n = set.dimension();
    if n > 4 {
        return Err(SolverError::GridDimensionTooLarge(n));
    }
    if objective.dim() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            got: objective.dim(),
        });
    }
    if resolution <= 0.0 || resolution.is_nan() {
        return Err(SolverError::InvalidResolution(resolution));
    }
    if n == 1 {
        return Weights::new(vec![1.0], set);
    }

    let c = set.c_bound();
    let steps = (2.0 * c / resolution).floor() as usize + 1;
    let coordinate = |idx: usize| -c + idx as f64 * resolution;

    let free = n - 1;
    let mut index = vec![0usize; free];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut point = vec![0.0; n];
    'outer: loop {
        let mut sum = 0.0;
        let mut l1 = 0.0;
        for (slot, &idx) in index.iter().enumerate() {
            let v = coordinate(idx);
            point[slot] = v;
            sum += v;
            l1 += v.abs();
        }
        let last = 1.0 - sum;
        point[free] = last;
        if l1 + last.abs() <= c + FEASIBILITY_TOL {
            let value = objective.evaluate(&point);
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, point.clone()));
            }
        }
        // odometer increment
        for slot in (0..free).rev() {
            index[slot] += 1;
            if index[slot] < steps {
                continue 'outer;
            }
            index[slot] = 0;
            if slot == 0 {
                break 'outer;
            }
        }
    }

    let (_, gamma) = best.expect("grid always contains a feasible point");
    Weights::new(gamma, set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{to_quadratic, ObjectiveSpec};
    use crate::panel::{Array3, DemeanedPanel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn demeaned_from(values: &[Vec<Vec<f64>>], t0: usize) -> DemeanedPanel {
        let arr = Array3::from_nested(values).unwrap();
        let pre_means = vec![0.0; values.len()];
        DemeanedPanel::from_parts(arr, pre_means, t0)
    }

    /// All polytope vertices, for exhaustive LMO checks.
    fn enumerate_vertices(set: &FeasibleSet) -> Vec<Vec<f64>> {
        let n = set.dimension();
        let c = set.c_bound();
        let mut out = Vec::new();
        if n == 1 {
            out.push(vec![1.0]);
            return out;
        }
        if c == 1.0 {
            for i in 0..n {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                out.push(v);
            }
        } else {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut v = vec![0.0; n];
                    v[i] = (1.0 + c) / 2.0;
                    v[j] = (1.0 - c) / 2.0;
                    out.push(v);
                }
            }
        }
        out
    }

    #[test]
    fn feasible_set_rejects_small_c() {
        assert_eq!(
            FeasibleSet::new(3, 0.5).unwrap_err(),
            SolverError::CBoundTooSmall(0.5)
        );
        assert!(FeasibleSet::new(3, 1.0).is_ok());
    }

    #[test]
    fn lmo_examples() {
        // g = (3, -1, 2), C = 2 -> (-0.5, 1.5, 0) with value -3
        let set = FeasibleSet::new(3, 2.0).unwrap();
        let v = lmo(&[3.0, -1.0, 2.0], &set).unwrap();
        assert_eq!(v.gamma(), &[-0.5, 1.5, 0.0]);
        let value: f64 = v
            .gamma()
            .iter()
            .zip([3.0, -1.0, 2.0])
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(value, -3.0);

        // simplex argmin
        let set = FeasibleSet::simplex(2).unwrap();
        assert_eq!(lmo(&[1.0, 2.0], &set).unwrap().gamma(), &[1.0, 0.0]);

        // singleton feasible set
        let set = FeasibleSet::new(1, 5.0).unwrap();
        assert_eq!(lmo(&[123.0], &set).unwrap().gamma(), &[1.0]);
    }

    #[test]
    fn lmo_attains_vertex_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let n = rng.random_range(2..5);
            let c = [1.0, 1.5, 2.0, 3.0][rng.random_range(0..4)];
            let set = FeasibleSet::new(n, c).unwrap();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let chosen = lmo(&g, &set).unwrap();
            let value: f64 = chosen.gamma().iter().zip(&g).map(|(a, b)| a * b).sum();
            let vertices = enumerate_vertices(&set);
            assert!(vertices.iter().any(|v| v
                .iter()
                .zip(chosen.gamma())
                .all(|(a, b)| (a - b).abs() < 1e-15)));
            for v in &vertices {
                let alt: f64 = v.iter().zip(&g).map(|(a, b)| a * b).sum();
                assert!(value <= alt + 1e-12);
            }
        }
    }

    #[test]
    fn lmo_ties_break_to_lowest_index() {
        let set = FeasibleSet::simplex(3).unwrap();
        assert_eq!(
            lmo(&[1.0, 1.0, 1.0], &set).unwrap().gamma(),
            &[1.0, 0.0, 0.0]
        );
        let set = FeasibleSet::new(3, 2.0).unwrap();
        // constant gradient: i = 0, j = lowest index != i
        assert_eq!(
            lmo(&[1.0, 1.0, 1.0], &set).unwrap().gamma(),
            &[1.5, -0.5, 0.0]
        );
    }

    #[test]
    fn frank_wolfe_interpolates_two_donors() {
        // treated demeaned pre [1], donors [0] and [2]: gamma = (0.5, 0.5)
        let dm = demeaned_from(
            &[
                vec![vec![1.0], vec![0.0]],
                vec![vec![0.0], vec![0.0]],
                vec![vec![2.0], vec![0.0]],
            ],
            1,
        );
        let qf = to_quadratic(&dm, &ObjectiveSpec::Disaggregated);
        let set = FeasibleSet::simplex(2).unwrap();
        let report = frank_wolfe(&qf, &set, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0); // the uniform start is optimal
        assert!(report.objective_value.abs() < 1e-12);
        assert!((report.weights.gamma()[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn frank_wolfe_negative_weights_when_allowed() {
        // treated [2], donors [0] and [1]: C = 1 ends at (0, 1) with
        // objective 1; C = 3 reaches (-1, 2) with objective 0.
        let dm = demeaned_from(
            &[
                vec![vec![2.0], vec![0.0]],
                vec![vec![0.0], vec![0.0]],
                vec![vec![1.0], vec![0.0]],
            ],
            1,
        );
        let qf = to_quadratic(&dm, &ObjectiveSpec::Disaggregated);

        let simplex = FeasibleSet::simplex(2).unwrap();
        let report = frank_wolfe(&qf, &simplex, &SolveOptions::default()).unwrap();
        let oracle = grid_oracle(&qf, &simplex, 1e-3).unwrap();
        assert!((report.objective_value - 1.0).abs() < 1e-9);
        assert!(report.objective_value <= qf.evaluate(oracle.gamma()) + 1e-4);
        assert!((report.weights.gamma()[1] - 1.0).abs() < 1e-6);

        let wide = FeasibleSet::new(2, 3.0).unwrap();
        let report = frank_wolfe(&qf, &wide, &SolveOptions::default()).unwrap();
        let oracle = grid_oracle(&qf, &wide, 1e-3).unwrap();
        assert!(report.objective_value.abs() < 1e-9);
        assert!(report.objective_value <= qf.evaluate(oracle.gamma()) + 1e-4);
        assert!((report.weights.gamma()[0] + 1.0).abs() < 1e-6);
        assert!((report.weights.gamma()[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn frank_wolfe_zero_objective_converges_immediately() {
        let dm = demeaned_from(
            &[
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            ],
            1,
        );
        let qf = to_quadratic(&dm, &ObjectiveSpec::Disaggregated);
        let set = FeasibleSet::simplex(2).unwrap();
        let report = frank_wolfe(&qf, &set, &SolveOptions::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.fw_gap, 0.0);
        assert!(set.feasibility_slack(report.weights.gamma()) <= FEASIBILITY_TOL);
    }

    #[test]
    fn frank_wolfe_rejects_infeasible_start() {
        let dm = demeaned_from(
            &[
                vec![vec![1.0], vec![0.0]],
                vec![vec![0.0], vec![0.0]],
                vec![vec![1.0], vec![0.0]],
            ],
            1,
        );
        let qf = to_quadratic(&dm, &ObjectiveSpec::Disaggregated);
        let set = FeasibleSet::simplex(2).unwrap();
        let bad = Weights::new(vec![0.9, 0.2], &set);
        assert!(matches!(bad, Err(SolverError::InfeasibleStart { .. })));
        // a feasible start for the wrong dimension is also rejected
        let other = FeasibleSet::simplex(3).unwrap();
        let start = other.uniform();
        let err = frank_wolfe(
            &qf,
            &set,
            &SolveOptions {
                start: Some(start),
                ..SolveOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, SolverError::DimensionMismatch { .. }));
    }

    #[test]
    fn frank_wolfe_rejects_concave_objective() {
        let concave = QuadraticForm::from_parts(vec![-2.0, 0.0, 0.0, -2.0], vec![0.1, 0.0], 1.0);
        let set = FeasibleSet::simplex(2).unwrap();
        let err = frank_wolfe(&concave, &set, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, SolverError::NonConvex { .. }));
    }

    #[test]
    fn frank_wolfe_descends_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let n = rng.random_range(2..5usize);
            let t0 = rng.random_range(2..5usize);
            let values: Vec<Vec<Vec<f64>>> = (0..n + 1)
                .map(|_| {
                    (0..t0 + 1)
                        .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
                        .collect()
                })
                .collect();
            let dm = demeaned_from(&values, t0);
            let qf = to_quadratic(&dm, &ObjectiveSpec::Disaggregated);
            let set = FeasibleSet::new(n, 1.5).unwrap();
            let report = frank_wolfe(
                &qf,
                &set,
                &SolveOptions {
                    record_trace: true,
                    ..SolveOptions::default()
                },
            )
            .unwrap();
            let trace = report.trace.as_ref().unwrap();
            let mut prev = f64::INFINITY;
            for &q in trace {
                assert!(q <= prev + 1e-10 * (1.0 + prev.abs()), "{q} > {prev}");
                prev = q;
            }
            assert!(report.fw_gap >= -1e-12);
            assert!(set.feasibility_slack(report.weights.gamma()) <= FEASIBILITY_TOL);
        }
    }

    #[test]
    fn certificate_bounds_suboptimality_against_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..20 {
            let n = rng.random_range(2..4usize);
            let t0 = rng.random_range(1..4usize);
            let k = rng.random_range(1..3usize);
            let values: Vec<Vec<Vec<f64>>> = (0..n + 1)
                .map(|_| {
                    (0..t0 + 1)
                        .map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect())
                        .collect()
                })
                .collect();
            let dm = demeaned_from(&values, t0);
            let qf = to_quadratic(&dm, &ObjectiveSpec::Disaggregated);
            let c = [1.0, 1.5, 2.0][rng.random_range(0..3)];
            let set = FeasibleSet::new(n, c).unwrap();
            let report = frank_wolfe(&qf, &set, &SolveOptions::default()).unwrap();
            let oracle = grid_oracle(&qf, &set, 0.002).unwrap();
            let oracle_value = qf.evaluate(oracle.gamma());
            // the oracle value is within O(resolution) of the true minimum
            assert!(
                report.objective_value - oracle_value <= report.fw_gap + 1e-9,
                "certificate violated: obj {} oracle {} gap {}",
                report.objective_value,
                oracle_value,
                report.fw_gap
            );
        }
    }

    #[test]
    fn grid_oracle_examples() {
        // Jensen-style problem: fw and grid agree to 1e-4
        let dm = demeaned_from(
            &[
                vec![vec![1.0, 3.0], vec![0.0, 0.0]],
                vec![vec![2.0, 2.0], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            ],
            1,
        );
        let qf = to_quadratic(&dm, &ObjectiveSpec::Aggregated);
        let set = FeasibleSet::simplex(2).unwrap();
        let fw = frank_wolfe(&qf, &set, &SolveOptions::default()).unwrap();
        let grid = grid_oracle(&qf, &set, 1e-3).unwrap();
        assert!((qf.evaluate(grid.gamma()) - fw.objective_value).abs() < 1e-4);

        // singleton: always (1)
        let set1 = FeasibleSet::new(1, 2.0).unwrap();
        let dm1 = demeaned_from(&[vec![vec![1.0], vec![0.0]], vec![vec![0.7], vec![0.0]]], 1);
        let qf1 = to_quadratic(&dm1, &ObjectiveSpec::Disaggregated);
        assert_eq!(grid_oracle(&qf1, &set1, 0.1).unwrap().gamma(), &[1.0]);

        // duplicate donors: argmin not unique but the value is
        let dm2 = demeaned_from(
            &[
                vec![vec![1.0], vec![0.0]],
                vec![vec![1.0], vec![0.0]],
                vec![vec![1.0], vec![0.0]],
            ],
            1,
        );
        let qf2 = to_quadratic(&dm2, &ObjectiveSpec::Disaggregated);
        let set2 = FeasibleSet::simplex(2).unwrap();
        let grid2 = grid_oracle(&qf2, &set2, 0.01).unwrap();
        let fw2 = frank_wolfe(&qf2, &set2, &SolveOptions::default()).unwrap();
        assert!(qf2.evaluate(grid2.gamma()).abs() < 1e-12);
        assert!(fw2.objective_value.abs() < 1e-12);

        // dimension limit
        let set5 = FeasibleSet::simplex(5).unwrap();
        let dm5 = demeaned_from(&vec![vec![vec![0.0], vec![0.0]]; 6], 1);
        let qf5 = to_quadratic(&dm5, &ObjectiveSpec::Disaggregated);
        assert_eq!(
            grid_oracle(&qf5, &set5, 0.1).unwrap_err(),
            SolverError::GridDimensionTooLarge(5)
        );
    }
}
