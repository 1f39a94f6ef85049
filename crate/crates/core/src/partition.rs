//! Disjoint per-task weight partition and the accumulated past weights.
//!
//! Supports are explicit allocations, not "wherever the value is nonzero":
//! a weight that trains to exactly 0.0 inside its allocation still belongs
//! to its task.

use std::fmt;

use crate::error::{Error, Result};
use crate::netcore::{Head, Matrix, NetworkSpec};

/// Allocated coordinates of one `rows x cols` layer, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Support {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Support({}x{}, {} set)",
            self.rows,
            self.cols,
            self.len()
        )
    }
}

impl Support {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape("support bits", rows * cols, bits.len()));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn from_coords(
        rows: usize,
        cols: usize,
        coords: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut s = Self::empty(rows, cols);
        for (r, c) in coords {
            if r >= rows || c >= cols {
                return Err(Error::shape("support coordinate", (rows, cols), (r, c)));
            }
            s.insert(r, c);
        }
        Ok(s)
    }

    /// Coordinates holding a nonzero value.
    pub fn nonzeros(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            bits: m.iter().map(|&v| v != 0.0).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn contains_flat(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn insert(&mut self, row: usize, col: usize) {
        self.bits[row * self.cols + col] = true;
    }

    pub fn insert_flat(&mut self, index: usize) {
        self.bits[index] = true;
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn capacity(&self) -> usize {
        self.bits.len()
    }

    pub fn coord(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn flat_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn complement(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn union_with(&mut self, other: &Support) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    /// First coordinate present in both sets.
    pub fn first_overlap(&self, other: &Support) -> Option<(usize, usize)> {
        self.bits
            .iter()
            .zip(&other.bits)
            .position(|(&a, &b)| a && b)
            .map(|i| self.coord(i))
    }

    /// First coordinate of `self` missing from `other`.
    pub fn first_outside(&self, other: &Support) -> Option<(usize, usize)> {
        self.bits
            .iter()
            .zip(&other.bits)
            .position(|(&a, &b)| a && !b)
            .map(|i| self.coord(i))
    }

    /// 0/1 matrix of the set.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_shape_vec(
            (self.rows, self.cols),
            self.bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("shape matches")
    }

    /// Columns (`by_column`) or rows whose every coordinate is in the set.
    pub fn full_groups(&self, by_column: bool) -> Vec<bool> {
        if by_column {
            (0..self.cols)
                .map(|c| (0..self.rows).all(|r| self.contains(r, c)))
                .collect()
        } else {
            (0..self.rows)
                .map(|r| (0..self.cols).all(|c| self.contains(r, c)))
                .collect()
        }
    }
}

/// One task's share of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSlice {
    pub task_id: usize,
    pub weights: Vec<Matrix>,
    /// Binary reuse masks over past weights; `None` for the first task.
    pub masks: Option<Vec<Matrix>>,
    pub head: Head,
    pub weight_support: Vec<Support>,
    pub mask_support: Vec<Support>,
}

impl TaskSlice {
    /// Checks the slice's own invariants: shapes, zeros outside supports,
    /// binary masks, and disjoint weight/mask supports.
    pub fn check(&self, shapes: &[(usize, usize)]) -> Result<()> {
        let layers = shapes.len();
        if self.weights.len() != layers
            || self.weight_support.len() != layers
            || self.mask_support.len() != layers
        {
            return Err(Error::shape(
                format!("task {} slice layers", self.task_id),
                layers,
                (
                    self.weights.len(),
                    self.weight_support.len(),
                    self.mask_support.len(),
                ),
            ));
        }
        for l in 0..layers {
            let w = &self.weights[l];
            let ws = &self.weight_support[l];
            let ms = &self.mask_support[l];
            if w.dim() != shapes[l] || ws.shape() != shapes[l] || ms.shape() != shapes[l] {
                return Err(Error::shape(
                    format!("task {} layer {l}", self.task_id),
                    shapes[l],
                    (w.dim(), ws.shape(), ms.shape()),
                ));
            }
            if let Some(i) = w
                .iter()
                .enumerate()
                .position(|(i, &v)| v != 0.0 && !ws.contains_flat(i))
            {
                let (row, col) = ws.coord(i);
                return Err(Error::Budget(format!(
                    "task {} layer {l}: weight at ({row}, {col}) outside its support",
                    self.task_id
                )));
            }
            if let Some((row, col)) = ws.first_overlap(ms) {
                return Err(Error::SupportOverlap { layer: l, row, col });
            }
            match &self.masks {
                None => {
                    if !ms.is_empty() {
                        return Err(Error::Budget(format!(
                            "task {} has a mask support but no masks",
                            self.task_id
                        )));
                    }
                }
                Some(masks) => {
                    let m = masks.get(l).ok_or_else(|| {
                        Error::shape(format!("task {} masks", self.task_id), layers, masks.len())
                    })?;
                    if m.dim() != shapes[l] {
                        return Err(Error::shape(format!("mask {l}"), shapes[l], m.dim()));
                    }
                    for (i, &v) in m.iter().enumerate() {
                        let inside = ms.contains_flat(i);
                        if !(v == 0.0 || (v == 1.0 && inside)) {
                            let (row, col) = ms.coord(i);
                            return Err(Error::Budget(format!(
                                "task {} layer {l}: mask value {v} at ({row}, {col}) is not a \
                                 valid binary entry",
                                self.task_id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `W + M ⊙ prior`, coordinate-wise. With no masks the result is `W`.
pub fn compose(weights: &[Matrix], masks: Option<&[Matrix]>, prior: &[Matrix]) -> Vec<Matrix> {
    match masks {
        None => weights.to_vec(),
        Some(masks) => weights
            .iter()
            .zip(masks)
            .zip(prior)
            .map(|((w, m), p)| w + &(m * p))
            .collect(),
    }
}

/// Append-only record of committed tasks.
#[derive(Clone, Debug)]
pub struct PartitionLedger {
    shapes: Vec<(usize, usize)>,
    accumulated: Vec<Matrix>,
    used: Vec<Support>,
    slices: Vec<TaskSlice>,
}

impl PartitionLedger {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self::with_shapes(spec.feature_shapes())
    }

    pub fn with_shapes(shapes: Vec<(usize, usize)>) -> Self {
        Self {
            accumulated: shapes.iter().map(|&s| Matrix::zeros(s)).collect(),
            used: shapes.iter().map(|&(p, q)| Support::empty(p, q)).collect(),
            slices: Vec::new(),
            shapes,
        }
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    /// Accumulated weights `W̄` over all committed tasks.
    pub fn accumulated(&self) -> &[Matrix] {
        &self.accumulated
    }

    pub fn used_support(&self) -> &[Support] {
        &self.used
    }

    pub fn slices(&self) -> &[TaskSlice] {
        &self.slices
    }

    pub fn slice(&self, task_id: usize) -> Result<&TaskSlice> {
        self.slices
            .iter()
            .find(|s| s.task_id == task_id)
            .ok_or(Error::UnknownTask(task_id))
    }

    pub fn next_task_id(&self) -> usize {
        self.slices.len() + 1
    }

    pub fn total_capacity(&self) -> usize {
        self.shapes.iter().map(|(p, q)| p * q).sum()
    }

    /// `W̄^{task_id - 1}`, summed from the committed slices that precede
    /// `task_id`. Later commits never affect it.
    pub fn prior_weights(&self, task_id: usize) -> Vec<Matrix> {
        let mut sum: Vec<Matrix> = self.shapes.iter().map(|&s| Matrix::zeros(s)).collect();
        for s in self.slices.iter().filter(|s| s.task_id < task_id) {
            for (acc, w) in sum.iter_mut().zip(&s.weights) {
                *acc += w;
            }
        }
        sum
    }

    /// Coordinates allocated to tasks before `task_id`.
    pub fn prior_support(&self, task_id: usize) -> Vec<Support> {
        let mut sup: Vec<Support> = self
            .shapes
            .iter()
            .map(|&(p, q)| Support::empty(p, q))
            .collect();
        for s in self.slices.iter().filter(|s| s.task_id < task_id) {
            for (acc, w) in sup.iter_mut().zip(&s.weight_support) {
                acc.union_with(w);
            }
        }
        sup
    }

    /// Complement of the used support, per layer.
    pub fn free_support(&self) -> Vec<Support> {
        self.used.iter().map(Support::complement).collect()
    }

    pub fn used_count(&self) -> usize {
        self.used.iter().map(Support::len).sum()
    }

    /// Weights used to run `slice`'s task: `W^t + M^t ⊙ W̄^{t-1}`.
    pub fn effective_weights(&self, slice: &TaskSlice) -> Result<Vec<Matrix>> {
        if slice.weights.len() != self.shapes.len() {
            return Err(Error::shape(
                "effective weights layers",
                self.shapes.len(),
                slice.weights.len(),
            ));
        }
        for (l, w) in slice.weights.iter().enumerate() {
            if w.dim() != self.shapes[l] {
                return Err(Error::shape(
                    format!("weights[{l}]"),
                    self.shapes[l],
                    w.dim(),
                ));
            }
        }
        match &slice.masks {
            None => Ok(slice.weights.clone()),
            Some(masks) => {
                for (l, m) in masks.iter().enumerate() {
                    if m.dim() != self.shapes[l] {
                        return Err(Error::shape(format!("masks[{l}]"), self.shapes[l], m.dim()));
                    }
                }
                let prior = self.prior_weights(slice.task_id);
                Ok(compose(&slice.weights, Some(masks), &prior))
            }
        }
    }

    /// Appends `slice`, enforcing disjointness from the used support and
    /// mask containment within it.
    pub fn commit_task(&mut self, slice: TaskSlice) -> Result<()> {
        if slice.task_id != self.next_task_id() {
            return Err(Error::Config(format!(
                "expected task {}, got {}",
                self.next_task_id(),
                slice.task_id
            )));
        }
        slice.check(&self.shapes)?;
        for l in 0..self.shapes.len() {
            if let Some((row, col)) = slice.weight_support[l].first_overlap(&self.used[l]) {
                return Err(Error::SupportOverlap { layer: l, row, col });
            }
            if let Some((row, col)) = slice.mask_support[l].first_outside(&self.used[l]) {
                return Err(Error::MaskOutsidePast { layer: l, row, col });
            }
        }
        for l in 0..self.shapes.len() {
            self.accumulated[l] += &slice.weights[l];
            self.used[l].union_with(&slice.weight_support[l]);
        }
        self.slices.push(slice);
        Ok(())
    }

    /// Recomputes every ledger invariant from the raw slices.
    pub fn verify_invariants(&self) -> InvariantReport {
        let mut checks = Vec::new();

        let mut disjoint = None;
        'outer: for (i, a) in self.slices.iter().enumerate() {
            for b in &self.slices[i + 1..] {
                for l in 0..self.shapes.len() {
                    if let Some((r, c)) = a.weight_support[l].first_overlap(&b.weight_support[l]) {
                        disjoint = Some(format!(
                            "tasks {} and {} share layer {l} coordinate ({r}, {c})",
                            a.task_id, b.task_id
                        ));
                        break 'outer;
                    }
                }
            }
        }
        checks.push(InvariantCheck::new("disjoint_supports", disjoint));

        let mut sum: Vec<Matrix> = self.shapes.iter().map(|&s| Matrix::zeros(s)).collect();
        let mut union: Vec<Support> = self
            .shapes
            .iter()
            .map(|&(p, q)| Support::empty(p, q))
            .collect();
        for s in &self.slices {
            for l in 0..self.shapes.len() {
                if let (Some(w), Some(ws)) = (s.weights.get(l), s.weight_support.get(l)) {
                    if w.dim() == self.shapes[l] && ws.shape() == self.shapes[l] {
                        sum[l] += w;
                        union[l].union_with(ws);
                    }
                }
            }
        }
        let mut accumulation = None;
        for l in 0..self.shapes.len() {
            let cols = self.shapes[l].1;
            if let Some(i) = sum[l]
                .iter()
                .zip(self.accumulated[l].iter())
                .position(|(a, b)| a.to_bits() != b.to_bits() && a != b)
            {
                accumulation = Some(format!(
                    "layer {l} coordinate ({}, {}): stored {} vs recomputed {}",
                    i / cols,
                    i % cols,
                    self.accumulated[l].iter().nth(i).unwrap(),
                    sum[l].iter().nth(i).unwrap()
                ));
                break;
            }
        }
        checks.push(InvariantCheck::new("accumulation", accumulation));

        let mut used = None;
        for l in 0..self.shapes.len() {
            if union[l] != self.used[l] {
                let diff = union[l]
                    .first_outside(&self.used[l])
                    .or_else(|| self.used[l].first_outside(&union[l]))
                    .unwrap_or((0, 0));
                used = Some(format!("layer {l} coordinate {diff:?}"));
                break;
            }
        }
        checks.push(InvariantCheck::new("used_support", used));

        let count: usize = union.iter().map(Support::len).sum();
        let cap = self.total_capacity();
        checks.push(InvariantCheck::new(
            "capacity",
            (count > cap).then(|| format!("{count} used of {cap}")),
        ));

        let mut contents = None;
        let mut past: Vec<Support> = self
            .shapes
            .iter()
            .map(|&(p, q)| Support::empty(p, q))
            .collect();
        for s in &self.slices {
            if let Err(e) = s.check(&self.shapes) {
                contents = Some(format!("task {}: {e}", s.task_id));
                break;
            }
            if let Some((l, (r, c))) = s
                .mask_support
                .iter()
                .zip(&past)
                .enumerate()
                .find_map(|(l, (m, p))| m.first_outside(p).map(|rc| (l, rc)))
            {
                contents = Some(format!(
                    "task {}: mask at layer {l} ({r}, {c}) outside past support",
                    s.task_id
                ));
                break;
            }
            for (p, w) in past.iter_mut().zip(&s.weight_support) {
                p.union_with(w);
            }
        }
        checks.push(InvariantCheck::new("slice_contents", contents));

        InvariantReport { checks }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Option<String>,
}

impl InvariantCheck {
    fn new(name: &'static str, failure: Option<String>) -> Self {
        Self {
            name,
            passed: failure.is_none(),
            detail: failure,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantReport {
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "{status} {}", c.name)?;
            if let Some(d) = &c.detail {
                write!(f, ": {d}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
