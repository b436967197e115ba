//! Balanced-panel data model, pre-treatment de-meaning, and temporal
//! aggregation.
//!
//! Outcomes are indexed by `(unit, period, subperiod)`: for each unit and
//! each low-frequency period there are `K` high-frequency observations
//! (e.g. years and the months within each year). The treated unit always
//! sits at index 0; the remaining `N - 1` units form the donor pool.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::compensated_mean;

/// Dense `(unit, period, subperiod)` array, unit-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Array3 {
    data: Vec<f64>,
    n_units: usize,
    n_periods: usize,
    n_subperiods: usize,
}

impl Array3 {
    pub fn zeros(n_units: usize, n_periods: usize, n_subperiods: usize) -> Self {
        Array3 {
            data: vec![0.0; n_units * n_periods * n_subperiods],
            n_units,
            n_periods,
            n_subperiods,
        }
    }

    /// Builds from nested `values[unit][period][subperiod]` vectors.
    pub fn from_nested(values: &[Vec<Vec<f64>>]) -> Result<Self, PanelError> {
        let n_units = values.len();
        let n_periods = values.first().map_or(0, |u| u.len());
        let n_subperiods = values
            .first()
            .and_then(|u| u.first())
            .map_or(0, |p| p.len());
        let mut out = Array3::zeros(n_units, n_periods, n_subperiods);
        for (i, unit) in values.iter().enumerate() {
            if unit.len() != n_periods {
                return Err(PanelError::RaggedInput { unit: i });
            }
            for (t, row) in unit.iter().enumerate() {
                if row.len() != n_subperiods {
                    return Err(PanelError::RaggedInput { unit: i });
                }
                for (k, &v) in row.iter().enumerate() {
                    out.set(i, t, k, v);
                }
            }
        }
        Ok(out)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_subperiods(&self) -> usize {
        self.n_subperiods
    }

    #[inline]
    fn offset(&self, unit: usize, period: usize, subperiod: usize) -> usize {
        debug_assert!(
            unit < self.n_units && period < self.n_periods && subperiod < self.n_subperiods
        );
        (unit * self.n_periods + period) * self.n_subperiods + subperiod
    }

    #[inline]
    pub fn get(&self, unit: usize, period: usize, subperiod: usize) -> f64 {
        self.data[self.offset(unit, period, subperiod)]
    }

    #[inline]
    pub fn set(&mut self, unit: usize, period: usize, subperiod: usize, value: f64) {
        let at = self.offset(unit, period, subperiod);
        self.data[at] = value;
    }

    /// Contiguous `n_periods * n_subperiods` slice for one unit.
    pub fn unit(&self, unit: usize) -> &[f64] {
        let len = self.n_periods * self.n_subperiods;
        &self.data[unit * len..(unit + 1) * len]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// One long-format observation, the input grain of [`validate_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub unit: String,
    pub period: u32,
    pub subperiod: u32,
    pub outcome: f64,
    pub treated: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum PanelError {
    #[error("missing cell (unit {unit}, period {period}, subperiod {subperiod})")]
    MissingCell {
        unit: String,
        period: u32,
        subperiod: u32,
    },
    #[error("duplicate cell (unit {unit}, period {period}, subperiod {subperiod})")]
    DuplicateCell {
        unit: String,
        period: u32,
        subperiod: u32,
    },
    #[error("unit {unit} has both treated and untreated observations")]
    InconsistentTreated { unit: String },
    #[error("multiple treated units: {first} and {second}")]
    MultipleTreated { first: String, second: String },
    #[error("no unit is flagged as treated")]
    NoTreated,
    #[error("non-finite outcome at (unit {unit}, period {period}, subperiod {subperiod})")]
    NonFinite {
        unit: String,
        period: u32,
        subperiod: u32,
    },
    #[error("t0 = {t0} is out of range: need 1 <= t0 < {n_periods} periods")]
    T0OutOfRange { t0: usize, n_periods: usize },
    #[error("panel needs at least 2 units, found {n}")]
    TooFewUnits { n: usize },
    #[error("panel has no observations")]
    Empty,
    #[error("ragged input array at unit {unit}")]
    RaggedInput { unit: usize },
    #[error("expected {expected} unit labels, got {got}")]
    LabelCountMismatch { expected: usize, got: usize },
}

/// A balanced outcome panel with the treated unit at index 0.
///
/// Invariants: every `(unit, period, subperiod)` cell is present and
/// finite, `n_units >= 2`, `n_subperiods >= 1`, and `1 <= t0 < n_periods`
/// so at least one post-treatment period exists.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    outcomes: Array3,
    t0: usize,
    unit_labels: Vec<String>,
    period_labels: Vec<u32>,
    subperiod_labels: Vec<u32>,
}

impl PanelData {
    /// Constructs a panel from an already-assembled array. The treated
    /// unit is unit 0 by convention.
    pub fn new(outcomes: Array3, t0: usize, unit_labels: Vec<String>) -> Result<Self, PanelError> {
        let period_labels = (1..=outcomes.n_periods() as u32).collect();
        let subperiod_labels = (1..=outcomes.n_subperiods() as u32).collect();
        Self::with_labels(outcomes, t0, unit_labels, period_labels, subperiod_labels)
    }

    /// As [`PanelData::new`] but with explicit period/subperiod labels
    /// (e.g. calendar years and months from an ingested file).
    pub fn with_labels(
        outcomes: Array3,
        t0: usize,
        unit_labels: Vec<String>,
        period_labels: Vec<u32>,
        subperiod_labels: Vec<u32>,
    ) -> Result<Self, PanelError> {
        let n = outcomes.n_units();
        if n < 2 {
            return Err(PanelError::TooFewUnits { n });
        }
        if outcomes.n_periods() == 0 || outcomes.n_subperiods() == 0 {
            return Err(PanelError::Empty);
        }
        if unit_labels.len() != n {
            return Err(PanelError::LabelCountMismatch {
                expected: n,
                got: unit_labels.len(),
            });
        }
        if t0 < 1 || t0 >= outcomes.n_periods() {
            return Err(PanelError::T0OutOfRange {
                t0,
                n_periods: outcomes.n_periods(),
            });
        }
        debug_assert_eq!(period_labels.len(), outcomes.n_periods());
        debug_assert_eq!(subperiod_labels.len(), outcomes.n_subperiods());
        for (i, unit_label) in unit_labels.iter().enumerate() {
            for (t, &period) in period_labels.iter().enumerate() {
                for (k, &subperiod) in subperiod_labels.iter().enumerate() {
                    if !outcomes.get(i, t, k).is_finite() {
                        return Err(PanelError::NonFinite {
                            unit: unit_label.clone(),
                            period,
                            subperiod,
                        });
                    }
                }
            }
        }
        Ok(PanelData {
            outcomes,
            t0,
            unit_labels,
            period_labels,
            subperiod_labels,
        })
    }

    pub fn outcomes(&self) -> &Array3 {
        &self.outcomes
    }

    /// Number of pre-treatment periods.
    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.n_units()
    }

    /// Donor-pool size, `n_units - 1`.
    pub fn n_donors(&self) -> usize {
        self.n_units() - 1
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.n_periods()
    }

    pub fn n_subperiods(&self) -> usize {
        self.outcomes.n_subperiods()
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn treated_label(&self) -> &str {
        &self.unit_labels[0]
    }

    /// Labels of the donor units, i.e. all units except the treated one.
    pub fn donor_labels(&self) -> &[String] {
        &self.unit_labels[1..]
    }

    pub fn period_labels(&self) -> &[u32] {
        &self.period_labels
    }

    pub fn subperiod_labels(&self) -> &[u32] {
        &self.subperiod_labels
    }
}

/// A panel expressed as deviations from each unit's pre-treatment mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    values: Array3,
    pre_means: Vec<f64>,
    t0: usize,
}

impl DemeanedPanel {
    /// Assembles a de-meaned panel from raw parts; mainly useful in tests
    /// where the de-meaned values are the natural starting point.
    pub fn from_parts(values: Array3, pre_means: Vec<f64>, t0: usize) -> Self {
        debug_assert_eq!(values.n_units(), pre_means.len());
        debug_assert!(t0 >= 1 && t0 <= values.n_periods());
        DemeanedPanel {
            values,
            pre_means,
            t0,
        }
    }

    pub fn values(&self) -> &Array3 {
        &self.values
    }

    /// Per-unit pre-treatment means, in outcome units.
    pub fn pre_means(&self) -> &[f64] {
        &self.pre_means
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn n_units(&self) -> usize {
        self.values.n_units()
    }

    pub fn n_donors(&self) -> usize {
        self.n_units() - 1
    }

    pub fn n_periods(&self) -> usize {
        self.values.n_periods()
    }

    pub fn n_subperiods(&self) -> usize {
        self.values.n_subperiods()
    }
}

/// Per-(unit, period) means over the subperiods of a source array.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedSeries {
    values: Vec<f64>,
    n_units: usize,
    n_periods: usize,
}

impl AggregatedSeries {
    #[inline]
    pub fn get(&self, unit: usize, period: usize) -> f64 {
        self.values[unit * self.n_periods + period]
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
}

/// Subtracts each unit's pre-treatment mean from all of its outcomes.
///
/// The mean is taken over `t <= t0` and all subperiods only, but the
/// subtraction is applied to every period including post-treatment ones.
pub fn demean(panel: &PanelData) -> DemeanedPanel {
    let outcomes = panel.outcomes();
    let (n, t_all, k_all) = (panel.n_units(), panel.n_periods(), panel.n_subperiods());
    let pre_len = panel.t0() * k_all;
    let mut pre_means = Vec::with_capacity(n);
    let mut values = Array3::zeros(n, t_all, k_all);
    for i in 0..n {
        let series = outcomes.unit(i);
        let mean = compensated_mean(series[..pre_len].iter().copied());
        pre_means.push(mean);
        for t in 0..t_all {
            for k in 0..k_all {
                values.set(i, t, k, outcomes.get(i, t, k) - mean);
            }
        }
    }
    DemeanedPanel {
        values,
        pre_means,
        t0: panel.t0(),
    }
}

/// Averages the subperiods of each `(unit, period)` cell.
pub fn aggregate(series: &Array3) -> AggregatedSeries {
    let (n, t_all, k_all) = (series.n_units(), series.n_periods(), series.n_subperiods());
    let mut values = Vec::with_capacity(n * t_all);
    for i in 0..n {
        for t in 0..t_all {
            values.push(compensated_mean((0..k_all).map(|k| series.get(i, t, k))));
        }
    }
    AggregatedSeries {
        values,
        n_units: n,
        n_periods: t_all,
    }
}

/// Assembles a balanced [`PanelData`] from long-format observations.
///
/// Unit order is preserved from first appearance, except that the
/// treated unit is moved to index 0. Periods and subperiods may carry
/// arbitrary positive integer labels; they are sorted ascending and the
/// grid must be complete for every unit.
pub fn validate_panel(records: &[RawObservation], t0: usize) -> Result<PanelData, PanelError> {
    use std::collections::HashMap;

    if records.is_empty() {
        return Err(PanelError::Empty);
    }

    let mut unit_order: Vec<String> = Vec::new();
    let mut unit_index: HashMap<&str, usize> = HashMap::new();
    let mut periods: Vec<u32> = Vec::new();
    let mut subperiods: Vec<u32> = Vec::new();
    for rec in records {
        if !unit_index.contains_key(rec.unit.as_str()) {
            unit_index.insert(rec.unit.as_str(), unit_order.len());
            unit_order.push(rec.unit.clone());
        }
        if !periods.contains(&rec.period) {
            periods.push(rec.period);
        }
        if !subperiods.contains(&rec.subperiod) {
            subperiods.push(rec.subperiod);
        }
    }
    periods.sort_unstable();
    subperiods.sort_unstable();

    let n = unit_order.len();
    if n < 2 {
        return Err(PanelError::TooFewUnits { n });
    }
    let t_all = periods.len();
    let k_all = subperiods.len();
    let period_index: HashMap<u32, usize> =
        periods.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let subperiod_index: HashMap<u32, usize> = subperiods
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();

    // treated flag per unit: None until seen, then must stay consistent
    let mut treated_flag: Vec<Option<bool>> = vec![None; n];
    let mut filled: Vec<bool> = vec![false; n * t_all * k_all];
    let mut outcomes = Array3::zeros(n, t_all, k_all);

    for rec in records {
        let i = unit_index[rec.unit.as_str()];
        let t = period_index[&rec.period];
        let k = subperiod_index[&rec.subperiod];
        let slot = (i * t_all + t) * k_all + k;
        if filled[slot] {
            return Err(PanelError::DuplicateCell {
                unit: rec.unit.clone(),
                period: rec.period,
                subperiod: rec.subperiod,
            });
        }
        filled[slot] = true;
        if !rec.outcome.is_finite() {
            return Err(PanelError::NonFinite {
                unit: rec.unit.clone(),
                period: rec.period,
                subperiod: rec.subperiod,
            });
        }
        outcomes.set(i, t, k, rec.outcome);
        match treated_flag[i] {
            None => treated_flag[i] = Some(rec.treated),
            Some(prev) if prev != rec.treated => {
                return Err(PanelError::InconsistentTreated {
                    unit: rec.unit.clone(),
                });
            }
            Some(_) => {}
        }
    }

    // first missing cell in (unit, period, subperiod) order
    for (i, label) in unit_order.iter().enumerate() {
        for (t, &p) in periods.iter().enumerate() {
            for (k, &s) in subperiods.iter().enumerate() {
                if !filled[(i * t_all + t) * k_all + k] {
                    return Err(PanelError::MissingCell {
                        unit: label.clone(),
                        period: p,
                        subperiod: s,
                    });
                }
            }
        }
    }

    let treated_units: Vec<usize> = (0..n).filter(|&i| treated_flag[i] == Some(true)).collect();
    let treated = match treated_units.as_slice() {
        [] => return Err(PanelError::NoTreated),
        [one] => *one,
        [first, second, ..] => {
            return Err(PanelError::MultipleTreated {
                first: unit_order[*first].clone(),
                second: unit_order[*second].clone(),
            })
        }
    };

    if t0 < 1 || t0 >= t_all {
        return Err(PanelError::T0OutOfRange {
            t0,
            n_periods: t_all,
        });
    }

    // relocate the treated unit to index 0, donors keep first-appearance order
    let mut order: Vec<usize> = Vec::with_capacity(n);
    order.push(treated);
    order.extend((0..n).filter(|&i| i != treated));
    let mut reordered = Array3::zeros(n, t_all, k_all);
    let mut labels = Vec::with_capacity(n);
    for (new_i, &old_i) in order.iter().enumerate() {
        labels.push(unit_order[old_i].clone());
        for t in 0..t_all {
            for k in 0..k_all {
                reordered.set(new_i, t, k, outcomes.get(old_i, t, k));
            }
        }
    }

    PanelData::with_labels(reordered, t0, labels, periods, subperiods)
}

/// Treats each period-level mean as a `K = 1` panel, preserving labels.
/// Useful for comparing aggregation before and after de-meaning.
pub fn aggregate_to_panel(panel: &PanelData) -> PanelData {
    let agg = aggregate(panel.outcomes());
    let mut outcomes = Array3::zeros(panel.n_units(), panel.n_periods(), 1);
    for i in 0..panel.n_units() {
        for t in 0..panel.n_periods() {
            outcomes.set(i, t, 0, agg.get(i, t));
        }
    }
    PanelData::with_labels(
        outcomes,
        panel.t0(),
        panel.unit_labels().to_vec(),
        panel.period_labels().to_vec(),
        vec![1],
    )
    .expect("aggregated panel preserves validity")
}
