//! Euclidean projections onto the weight-sparsity sets (irregular, column,
//! filter) and the binary share-mask set, plus an exhaustive oracle for
//! small instances.
//!
//! Ties on equal magnitude or norm go to the lower flat index, so every
//! projection is deterministic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Matrix;
use crate::partition::Support;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruningKind {
    Irregular,
    Column,
    Filter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupAxis {
    /// Columns of the GEMM matrix.
    Column,
    /// Rows of the GEMM matrix.
    Filter,
}

/// Projected values plus the coordinates the projection allocated.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub values: Matrix,
    pub support: Support,
}

/// Indices of the `k` largest keys; ties resolve to the lower index.
fn top_k(mut keyed: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };
    if k == 0 {
        return Vec::new();
    }
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, order);
        keyed.truncate(k);
    }
    let mut idx: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

fn check_eligible(z: &Matrix, eligible: &Support) -> Result<()> {
    if eligible.shape() != z.dim() {
        return Err(Error::shape("eligible set", z.dim(), eligible.shape()));
    }
    Ok(())
}

/// Keeps the `alpha` eligible entries of largest magnitude.
pub fn project_irregular(z: &Matrix, alpha: usize, eligible: &Support) -> Result<Projection> {
    check_eligible(z, eligible)?;
    let n = eligible.len();
    if alpha > n {
        return Err(Error::Budget(format!(
            "alpha {alpha} exceeds {n} eligible entries"
        )));
    }
    let flat = z.as_slice().expect("standard layout");
    let keyed = eligible
        .flat_indices()
        .map(|i| (flat[i].abs(), i))
        .collect();
    let (rows, cols) = z.dim();
    let mut values = Matrix::zeros((rows, cols));
    let mut support = Support::empty(rows, cols);
    let out = values.as_slice_mut().expect("standard layout");
    for i in top_k(keyed, alpha) {
        out[i] = flat[i];
        support.insert_flat(i);
    }
    Ok(Projection { values, support })
}

/// Keeps the `alpha` eligible columns (or rows) of largest l2 norm.
pub fn project_structured(
    z: &Matrix,
    alpha: usize,
    axis: GroupAxis,
    eligible_groups: &[bool],
) -> Result<Projection> {
    let (rows, cols) = z.dim();
    let groups = match axis {
        GroupAxis::Column => cols,
        GroupAxis::Filter => rows,
    };
    if eligible_groups.len() != groups {
        return Err(Error::shape(
            "eligible groups",
            groups,
            eligible_groups.len(),
        ));
    }
    let n = eligible_groups.iter().filter(|&&e| e).count();
    if alpha > n {
        return Err(Error::Budget(format!(
            "alpha {alpha} exceeds {n} eligible groups"
        )));
    }
    let keyed = (0..groups)
        .filter(|&g| eligible_groups[g])
        .map(|g| {
            let norm_sq = match axis {
                GroupAxis::Column => z.column(g).iter().map(|v| v * v).sum::<f64>(),
                GroupAxis::Filter => z.row(g).iter().map(|v| v * v).sum::<f64>(),
            };
            (norm_sq, g)
        })
        .collect();
    let mut values = Matrix::zeros((rows, cols));
    let mut support = Support::empty(rows, cols);
    for g in top_k(keyed, alpha) {
        match axis {
            GroupAxis::Column => {
                values.column_mut(g).assign(&z.column(g));
                (0..rows).for_each(|r| support.insert(r, g));
            }
            GroupAxis::Filter => {
                values.row_mut(g).assign(&z.row(g));
                (0..cols).for_each(|c| support.insert(g, c));
            }
        }
    }
    Ok(Projection { values, support })
}

/// Nearest binary matrix with exactly `beta` ones, all on `eligible`:
/// the `beta` largest eligible entries become 1, everything else 0.
pub fn project_mask_binary(z: &Matrix, beta: usize, eligible: &Support) -> Result<Projection> {
    check_eligible(z, eligible)?;
    let n = eligible.len();
    if beta > n {
        return Err(Error::Budget(format!(
            "beta {beta} exceeds {n} eligible entries"
        )));
    }
    let flat = z.as_slice().expect("standard layout");
    let keyed = eligible.flat_indices().map(|i| (flat[i], i)).collect();
    let (rows, cols) = z.dim();
    let mut values = Matrix::zeros((rows, cols));
    let mut support = Support::empty(rows, cols);
    let out = values.as_slice_mut().expect("standard layout");
    for i in top_k(keyed, beta) {
        out[i] = 1.0;
        support.insert_flat(i);
    }
    Ok(Projection { values, support })
}

/// `round(percent/100 * total)`, clamped to `[0, eligible]`, and at least 1
/// when `percent > 0` and something is eligible.
pub fn resolve_count(percent: f64, total: usize, eligible: usize) -> usize {
    let raw = (percent / 100.0 * total as f64).round().max(0.0) as usize;
    let mut n = raw.min(eligible);
    if percent > 0.0 && eligible >= 1 {
        n = n.max(1);
    }
    n
}

/// Per-layer integer budgets for one task. `alpha` counts entries for
/// irregular pruning and whole columns/rows for structured pruning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityBudget {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
}

/// Everything needed to project one layer's weights and mask for a task.
#[derive(Clone, Debug)]
pub struct LayerConstraint {
    pub kind: PruningKind,
    pub alpha: usize,
    pub beta: usize,
    /// Coordinates not yet allocated to any task.
    pub free: Support,
    /// Coordinates allocated to earlier tasks.
    pub past: Support,
}

impl LayerConstraint {
    /// Groups lying entirely inside free capacity.
    pub fn eligible_groups(&self) -> Vec<bool> {
        match self.kind {
            PruningKind::Irregular => Vec::new(),
            PruningKind::Column => self.free.full_groups(true),
            PruningKind::Filter => self.free.full_groups(false),
        }
    }

    /// Number of eligible units (entries or groups) for `alpha`.
    pub fn eligible_units(&self) -> usize {
        match self.kind {
            PruningKind::Irregular => self.free.len(),
            _ => self.eligible_groups().iter().filter(|&&g| g).count(),
        }
    }

    pub fn project_weights(&self, z: &Matrix) -> Result<Projection> {
        match self.kind {
            PruningKind::Irregular => project_irregular(z, self.alpha, &self.free),
            PruningKind::Column => {
                project_structured(z, self.alpha, GroupAxis::Column, &self.eligible_groups())
            }
            PruningKind::Filter => {
                project_structured(z, self.alpha, GroupAxis::Filter, &self.eligible_groups())
            }
        }
    }

    pub fn project_mask(&self, z: &Matrix) -> Result<Projection> {
        project_mask_binary(z, self.beta, &self.past)
    }

    /// Builds the constraint for one layer from percentage budgets.
    pub fn from_percent(
        kind: PruningKind,
        alpha_percent: f64,
        beta_percent: f64,
        free: Support,
        past: Support,
    ) -> Self {
        let (rows, cols) = free.shape();
        let mut c = Self {
            kind,
            alpha: 0,
            beta: 0,
            free,
            past,
        };
        let units = match kind {
            PruningKind::Irregular => rows * cols,
            PruningKind::Column => cols,
            PruningKind::Filter => rows,
        };
        c.alpha = resolve_count(alpha_percent, units, c.eligible_units());
        let past_len = c.past.len();
        c.beta = resolve_count(beta_percent, past_len, past_len);
        c
    }
}

pub const ORACLE_LIMIT: usize = 20;

/// Constraint set handed to the exhaustive oracle.
#[derive(Clone, Copy, Debug)]
pub enum OracleKind<'a> {
    Irregular(&'a Support),
    Column(&'a [bool]),
    Filter(&'a [bool]),
    Mask(&'a Support),
}

fn squared_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// True minimizer of `||x - z||` over the feasible set, by enumerating every
/// candidate support or binary pattern. Ties keep the first candidate found.
pub fn oracle_project(z: &Matrix, budget: usize, kind: OracleKind<'_>) -> Result<Matrix> {
    let (rows, cols) = z.dim();
    // Units to choose from, each a list of coordinates.
    let units: Vec<Vec<(usize, usize)>> = match kind {
        OracleKind::Irregular(e) | OracleKind::Mask(e) => {
            check_eligible(z, e)?;
            e.flat_indices().map(|i| vec![e.coord(i)]).collect()
        }
        OracleKind::Column(groups) => {
            if groups.len() != cols {
                return Err(Error::shape("eligible columns", cols, groups.len()));
            }
            (0..cols)
                .filter(|&c| groups[c])
                .map(|c| (0..rows).map(|r| (r, c)).collect())
                .collect()
        }
        OracleKind::Filter(groups) => {
            if groups.len() != rows {
                return Err(Error::shape("eligible rows", rows, groups.len()));
            }
            (0..rows)
                .filter(|&r| groups[r])
                .map(|r| (0..cols).map(|c| (r, c)).collect())
                .collect()
        }
    };
    let coords: usize = units.iter().map(Vec::len).sum();
    if coords > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            eligible: coords,
            limit: ORACLE_LIMIT,
        });
    }
    let is_mask = matches!(kind, OracleKind::Mask(_));
    if budget > units.len() {
        return Err(Error::Budget(format!(
            "budget {budget} exceeds {} eligible units",
            units.len()
        )));
    }

    let mut best: Option<(f64, Matrix)> = None;
    for pattern in 0u64..(1u64 << units.len()) {
        let chosen = pattern.count_ones() as usize;
        let feasible = if is_mask {
            chosen == budget
        } else {
            chosen <= budget
        };
        if !feasible {
            continue;
        }
        let mut x = Matrix::zeros((rows, cols));
        for (u, unit) in units.iter().enumerate() {
            if pattern & (1 << u) != 0 {
                for &(r, c) in unit {
                    x[[r, c]] = if is_mask { 1.0 } else { z[[r, c]] };
                }
            }
        }
        let d = squared_distance(&x, z);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    Ok(best
        .expect("empty pattern is always feasible for budget 0")
        .1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn all(rows: usize, cols: usize) -> Support {
        Support::full(rows, cols)
    }

    #[test]
    fn irregular_keeps_largest_magnitudes() {
        let z = array![[3.0, -5.0], [1.0, 0.0]];
        let p = project_irregular(&z, 2, &all(2, 2)).unwrap();
        assert_eq!(p.values, array![[3.0, -5.0], [0.0, 0.0]]);
        let o = oracle_project(&z, 2, OracleKind::Irregular(&all(2, 2))).unwrap();
        assert_eq!(o, p.values);
    }

    #[test]
    fn irregular_full_budget_restricts_to_eligible() {
        let z = array![[3.0, -5.0], [1.0, 2.0]];
        let e = Support::from_coords(2, 2, [(0, 1), (1, 0), (1, 1)]).unwrap();
        let p = project_irregular(&z, 3, &e).unwrap();
        assert_eq!(p.values, array![[0.0, -5.0], [1.0, 2.0]]);
        assert_eq!(p.support, e);
    }

    #[test]
    fn irregular_over_budget_is_rejected() {
        let z = Matrix::zeros((2, 2));
        let e = Support::from_coords(2, 2, [(0, 0)]).unwrap();
        assert!(matches!(
            project_irregular(&z, 2, &e),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn ten_percent_of_mnist_layer() {
        let alpha = resolve_count(10.0, 784 * 2000, 784 * 2000);
        assert_eq!(alpha, 156_800);
    }

    #[test]
    fn column_projection_keeps_largest_norms() {
        // column norms 5, 1, 3
        let z = array![[3.0, 1.0, 0.0], [4.0, 0.0, 3.0]];
        let groups = [true, true, true];
        let p = project_structured(&z, 2, GroupAxis::Column, &groups).unwrap();
        assert_eq!(p.values, array![[3.0, 0.0, 0.0], [4.0, 0.0, 3.0]]);
        assert_eq!(p.support.len(), 4);
        let o = oracle_project(&z, 2, OracleKind::Column(&groups)).unwrap();
        assert_eq!(o, p.values);
        let p = project_structured(&z, 3, GroupAxis::Column, &groups).unwrap();
        assert_eq!(p.values, z);
    }

    #[test]
    fn filter_projection_uses_rows() {
        let z = array![[1.0, 1.0], [3.0, 0.0], [0.5, 0.5]];
        let p = project_structured(&z, 1, GroupAxis::Filter, &[true, true, true]).unwrap();
        assert_eq!(p.values, array![[0.0, 0.0], [3.0, 0.0], [0.0, 0.0]]);
        let p = project_structured(&z, 1, GroupAxis::Filter, &[true, false, true]).unwrap();
        assert_eq!(p.values, array![[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn mask_projection_example() {
        let z = array![[0.9, 0.2, 0.6, 0.4]];
        let e = all(1, 4);
        let p = project_mask_binary(&z, 2, &e).unwrap();
        assert_eq!(p.values, array![[1.0, 0.0, 1.0, 0.0]]);
        let o = oracle_project(&z, 2, OracleKind::Mask(&e)).unwrap();
        assert_eq!(o, p.values);
    }

    #[test]
    fn mask_boundary_budgets() {
        let z = array![[0.9, -0.2], [0.6, 0.4]];
        let e = Support::from_coords(2, 2, [(0, 1), (1, 0), (1, 1)]).unwrap();
        let none = project_mask_binary(&z, 0, &e).unwrap();
        assert!(none.values.iter().all(|&v| v == 0.0));
        let every = project_mask_binary(&z, 3, &e).unwrap();
        assert_eq!(every.values, array![[0.0, 1.0], [1.0, 1.0]]);
        assert!(project_mask_binary(&z, 4, &e).is_err());
    }

    #[test]
    fn ninety_percent_share_budget() {
        assert_eq!(resolve_count(90.0, 1000, 1000), 900);
        assert_eq!(resolve_count(0.0, 1000, 1000), 0);
        assert_eq!(resolve_count(0.01, 10, 10), 1);
        assert_eq!(resolve_count(50.0, 10, 3), 3);
        assert_eq!(resolve_count(50.0, 10, 0), 0);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let z = array![[1.0, -1.0, 1.0, 1.0]];
        let p = project_irregular(&z, 2, &all(1, 4)).unwrap();
        assert_eq!(p.values, array![[1.0, -1.0, 0.0, 0.0]]);
        let m = project_mask_binary(&Matrix::zeros((1, 4)), 2, &all(1, 4)).unwrap();
        assert_eq!(m.values, array![[1.0, 1.0, 0.0, 0.0]]);
    }

    #[test]
    fn oracle_zero_matrix() {
        let z = Matrix::zeros((2, 3));
        let o = oracle_project(&z, 4, OracleKind::Irregular(&all(2, 3))).unwrap();
        assert_eq!(o, z);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let z = Matrix::zeros((5, 5));
        assert!(matches!(
            oracle_project(&z, 1, OracleKind::Irregular(&all(5, 5))),
            Err(Error::OracleTooLarge { eligible: 25, .. })
        ));
    }

    #[test]
    fn column_eligibility_requires_fully_free_groups() {
        let mut used = Support::empty(2, 3);
        used.insert(1, 1);
        let free = used.complement();
        let c = LayerConstraint::from_percent(
            PruningKind::Column,
            100.0,
            0.0,
            free,
            Support::empty(2, 3),
        );
        assert_eq!(c.eligible_groups(), vec![true, false, true]);
        assert_eq!(c.alpha, 2);
    }
}
