//! ADMM over the task weights `W` and relaxed share masks `M`.
//!
//! Each outer iteration runs one epoch of Adam on the proximal objective
//!
//! ```text
//! L(W + M ⊙ W̄, head) + Σ_l ρ_l/2 ‖W_l − Z_l + U_l‖² + Σ_l τ_l/2 ‖M_l − Y_l + K_l‖²
//! ```
//!
//! then projects `W + U` and `M + K` onto the sparsity and binary-mask sets
//! to get `Z` and `Y`, then takes the scaled dual step. `τ` follows the same
//! schedule as `ρ`.

use ndarray::{ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricsSink, Phase, ResidualRecord};
use crate::netcore::{
    adam_step, backprop, forward, mean_cross_entropy, relative_error, zero_outside, AdamState,
    GradientSet, Matrix, ParamSet, TrainableCoords, FD_STEP,
};
use crate::partition::compose;
use crate::projection::LayerConstraint;
use crate::tasks::{batches, LabeledData};

/// Piecewise-constant penalty: `initial · factor^k` on the `k`-th of
/// `intervals` equal slices of the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub factor: f64,
    pub intervals: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            factor: 10.0,
            intervals: 3,
        }
    }
}

impl PenaltySchedule {
    pub fn penalty(&self, iteration: usize, total: usize) -> f64 {
        penalty_schedule(iteration, total, self.initial, self.factor, self.intervals)
    }
}

pub fn penalty_schedule(
    iteration: usize,
    total: usize,
    initial: f64,
    factor: f64,
    intervals: usize,
) -> f64 {
    if total == 0 || intervals == 0 {
        return initial;
    }
    let step = (iteration * intervals / total).min(intervals - 1);
    initial * factor.powi(step as i32)
}

/// Auxiliary, dual and penalty state for every feature layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub z: Vec<Matrix>,
    pub y: Vec<Matrix>,
    pub u: Vec<Matrix>,
    pub k: Vec<Matrix>,
    pub rho: Vec<f64>,
    pub tau: Vec<f64>,
    pub outer_iteration: usize,
}

impl AdmmState {
    /// `Z = Π(W)`, `Y = Π(M)`, zero duals. Without masks, `Y` and `K` are
    /// empty.
    pub fn init(params: &ParamSet, constraints: &[LayerConstraint], penalty: f64) -> Result<Self> {
        let layers = params.weights.len();
        if constraints.len() != layers {
            return Err(Error::shape("constraints", layers, constraints.len()));
        }
        let z = params
            .weights
            .iter()
            .zip(constraints)
            .map(|(w, c)| c.project_weights(w).map(|p| p.values))
            .collect::<Result<Vec<_>>>()?;
        let y = params
            .masks
            .iter()
            .zip(constraints)
            .map(|(m, c)| c.project_mask(m).map(|p| p.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            u: z.iter().map(|m| Matrix::zeros(m.dim())).collect(),
            k: y.iter().map(|m| Matrix::zeros(m.dim())).collect(),
            z,
            y,
            rho: vec![penalty; layers],
            tau: vec![penalty; layers],
            outer_iteration: 0,
        })
    }

    /// Same penalty on every layer for both `ρ` and `τ`.
    pub fn set_penalty(&mut self, penalty: f64) {
        self.rho.iter_mut().for_each(|r| *r = penalty);
        self.tau.iter_mut().for_each(|t| *t = penalty);
    }
}

/// `A − B + C`.
fn offset(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
    let mut out = a - b;
    out += c;
    out
}

fn frob_sq(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn check_state(params: &ParamSet, state: &AdmmState) -> Result<()> {
    let l = params.weights.len();
    if state.z.len() != l || state.u.len() != l || state.rho.len() != l || state.tau.len() != l {
        return Err(Error::shape("admm state layers", l, state.z.len()));
    }
    if state.y.len() != params.masks.len() || state.k.len() != params.masks.len() {
        return Err(Error::shape(
            "admm mask state",
            params.masks.len(),
            state.y.len(),
        ));
    }
    for (i, (&r, &t)) in state.rho.iter().zip(&state.tau).enumerate() {
        if !(r >= 0.0 && t >= 0.0 && r.is_finite() && t.is_finite()) {
            return Err(Error::Config(format!(
                "layer {i}: invalid penalties {r}, {t}"
            )));
        }
    }
    Ok(())
}

/// Loss of the task network and its gradient on `coords`, with the
/// proximal terms added when `state` is given. Mask gradients follow
/// `∂L/∂M = (∂L/∂W_eff) ⊙ W̄`.
pub fn task_loss_and_grads(
    params: &ParamSet,
    prior: &[Matrix],
    state: Option<&AdmmState>,
    batch: ArrayView2<f64>,
    labels: &[usize],
    coords: &TrainableCoords,
) -> Result<(f64, GradientSet, usize)> {
    let masked = !params.masks.is_empty();
    if masked && (prior.len() != params.masks.len() || coords.masks.len() != params.masks.len()) {
        return Err(Error::shape(
            "masks / prior / mask coords",
            params.masks.len(),
            (prior.len(), coords.masks.len()),
        ));
    }
    if coords.weights.len() != params.weights.len() {
        return Err(Error::shape(
            "weight coords",
            params.weights.len(),
            coords.weights.len(),
        ));
    }
    if let Some(s) = state {
        check_state(params, s)?;
    }
    let effective = compose(
        &params.weights,
        masked.then_some(params.masks.as_slice()),
        prior,
    );
    let bp = backprop(&effective, &params.head, &params.biases, batch, labels)?;

    let mut loss = bp.loss;
    let mut grads = GradientSet {
        masks: if masked {
            bp.weights.iter().zip(prior).map(|(g, p)| g * p).collect()
        } else {
            Vec::new()
        },
        weights: bp.weights,
        biases: bp.biases,
        head: bp.head,
    };
    if let Some(s) = state {
        for l in 0..params.weights.len() {
            let r = offset(&params.weights[l], &s.z[l], &s.u[l]);
            loss += 0.5 * s.rho[l] * frob_sq(&r);
            grads.weights[l].scaled_add(s.rho[l], &r);
        }
        for l in 0..params.masks.len() {
            let r = offset(&params.masks[l], &s.y[l], &s.k[l]);
            loss += 0.5 * s.tau[l] * frob_sq(&r);
            grads.masks[l].scaled_add(s.tau[l], &r);
        }
    }
    for (g, s) in grads.weights.iter_mut().zip(&coords.weights) {
        zero_outside(g, s);
    }
    for (g, s) in grads.masks.iter_mut().zip(&coords.masks) {
        zero_outside(g, s);
    }
    if !coords.biases {
        grads.biases.iter_mut().for_each(|b| b.fill(0.0));
    }
    if !coords.head {
        grads.head.weights.fill(0.0);
        grads.head.bias.fill(0.0);
    }
    Ok((loss, grads, bp.correct))
}

/// Augmented loss and gradient restricted to the trainable `W` and `M`
/// coordinates.
pub fn proximal_loss_and_grads(
    params: &ParamSet,
    prior: &[Matrix],
    state: &AdmmState,
    batch: ArrayView2<f64>,
    labels: &[usize],
    coords: &TrainableCoords,
) -> Result<(f64, GradientSet)> {
    task_loss_and_grads(params, prior, Some(state), batch, labels, coords).map(|(l, g, _)| (l, g))
}

/// Augmented objective evaluated by a plain forward pass.
pub fn augmented_loss(
    params: &ParamSet,
    prior: &[Matrix],
    state: &AdmmState,
    batch: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    let masked = !params.masks.is_empty();
    let effective = compose(
        &params.weights,
        masked.then_some(params.masks.as_slice()),
        prior,
    );
    let logits = forward(&effective, &params.head, &params.biases, batch)?;
    let mut loss = mean_cross_entropy(&logits, labels)?;
    for l in 0..params.weights.len() {
        loss += 0.5 * state.rho[l] * frob_sq(&offset(&params.weights[l], &state.z[l], &state.u[l]));
    }
    for l in 0..params.masks.len() {
        loss += 0.5 * state.tau[l] * frob_sq(&offset(&params.masks[l], &state.y[l], &state.k[l]));
    }
    Ok(loss)
}

/// A scalar of a task's [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamCoord {
    Weight {
        layer: usize,
        row: usize,
        col: usize,
    },
    Mask {
        layer: usize,
        row: usize,
        col: usize,
    },
    Bias {
        layer: usize,
        index: usize,
    },
    HeadWeight {
        row: usize,
        col: usize,
    },
    HeadBias {
        index: usize,
    },
}

impl ParamCoord {
    fn slot<'a>(&self, p: &'a mut ParamSet) -> &'a mut f64 {
        match *self {
            ParamCoord::Weight { layer, row, col } => &mut p.weights[layer][[row, col]],
            ParamCoord::Mask { layer, row, col } => &mut p.masks[layer][[row, col]],
            ParamCoord::Bias { layer, index } => &mut p.biases[layer][index],
            ParamCoord::HeadWeight { row, col } => &mut p.head.weights[[row, col]],
            ParamCoord::HeadBias { index } => &mut p.head.bias[index],
        }
    }
}

/// Max relative error of the augmented-objective gradient against central
/// differences, over `coords`.
pub fn augmented_finite_difference_check(
    params: &ParamSet,
    prior: &[Matrix],
    state: &AdmmState,
    batch: ArrayView2<f64>,
    labels: &[usize],
    coords: &[ParamCoord],
) -> Result<f64> {
    let everything = TrainableCoords {
        weights: params
            .weights
            .iter()
            .map(|w| crate::partition::Support::full(w.nrows(), w.ncols()))
            .collect(),
        masks: params
            .masks
            .iter()
            .map(|m| crate::partition::Support::full(m.nrows(), m.ncols()))
            .collect(),
        biases: true,
        head: true,
    };
    let (_, grads) = proximal_loss_and_grads(params, prior, state, batch, labels, &everything)?;
    let mut grads = grads;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for c in coords {
        let analytic = *c.slot(&mut grads);
        let orig = *c.slot(&mut probe);
        *c.slot(&mut probe) = orig + FD_STEP;
        let up = augmented_loss(&probe, prior, state, batch, labels)?;
        *c.slot(&mut probe) = orig - FD_STEP;
        let down = augmented_loss(&probe, prior, state, batch, labels)?;
        *c.slot(&mut probe) = orig;
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

/// `Z ← Π_S(W + U)`, `Y ← Π_S'(M + K)`.
pub fn update_auxiliary(
    state: &mut AdmmState,
    params: &ParamSet,
    constraints: &[LayerConstraint],
) -> Result<()> {
    check_state(params, state)?;
    for l in 0..params.weights.len() {
        state.z[l] = constraints[l]
            .project_weights(&(&params.weights[l] + &state.u[l]))?
            .values;
    }
    for l in 0..params.masks.len() {
        state.y[l] = constraints[l]
            .project_mask(&(&params.masks[l] + &state.k[l]))?
            .values;
    }
    Ok(())
}

/// `U ← U + W − Z`, `K ← K + M − Y`.
pub fn update_duals(state: &mut AdmmState, params: &ParamSet) -> Result<()> {
    check_state(params, state)?;
    for l in 0..params.weights.len() {
        Zip::from(&mut state.u[l])
            .and(&params.weights[l])
            .and(&state.z[l])
            .for_each(|u, &w, &z| *u += w - z);
    }
    for l in 0..params.masks.len() {
        Zip::from(&mut state.k[l])
            .and(&params.masks[l])
            .and(&state.y[l])
            .for_each(|k, &m, &y| *k += m - y);
    }
    Ok(())
}

/// Mean minibatch loss and training accuracy of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Settings shared by every training epoch of a phase.
#[derive(Clone, Copy, Debug)]
pub struct EpochSettings<'a> {
    pub task: usize,
    pub phase: Phase,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub prior: &'a [Matrix],
    pub coords: &'a TrainableCoords,
}

/// One pass of Adam over shuffled minibatches.
pub fn train_epoch(
    params: &mut ParamSet,
    adam: &mut AdamState,
    data: &LabeledData,
    settings: &EpochSettings<'_>,
    epoch: usize,
    state: Option<&AdmmState>,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (x, y) in batches(
        data,
        settings.batch_size,
        settings.shuffle_seed,
        epoch as u64,
    )? {
        let (loss, grads, hits) =
            task_loss_and_grads(params, settings.prior, state, x.view(), &y, settings.coords)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                task: settings.task,
                iteration: epoch,
                loss,
            });
        }
        adam_step(params, &grads, adam)?;
        loss_sum += loss * y.len() as f64;
        correct += hits;
    }
    Ok(EpochStats {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Result of an ADMM phase: final auxiliary/dual state and per-layer
/// residual log.
#[derive(Clone, Debug)]
pub struct AdmmOutcome {
    pub state: AdmmState,
    pub residuals: Vec<ResidualRecord>,
    pub epochs: Vec<EpochStats>,
}

impl AdmmOutcome {
    /// Summed `‖W − Z‖_F + ‖M − Y‖_F` over layers at `iteration`.
    pub fn total_residual(&self, iteration: usize) -> f64 {
        self.residuals
            .iter()
            .filter(|r| r.iteration == iteration)
            .map(|r| r.weight_residual + r.mask_residual)
            .sum()
    }
}

/// Runs `epochs` outer ADMM iterations starting from the warm-started
/// `params`.
#[allow(clippy::too_many_arguments)]
pub fn run_admm_phase(
    params: &mut ParamSet,
    constraints: &[LayerConstraint],
    data: &LabeledData,
    settings: &EpochSettings<'_>,
    epochs: usize,
    learning_rate: f64,
    schedule: &PenaltySchedule,
    sink: &mut dyn MetricsSink,
) -> Result<AdmmOutcome> {
    for (l, c) in constraints.iter().enumerate() {
        if c.alpha == 0 {
            return Err(Error::NoFreeCapacity { layer: l });
        }
    }
    if epochs < schedule.intervals {
        return Err(Error::Config(format!(
            "{epochs} ADMM epochs cannot cover {} penalty intervals",
            schedule.intervals
        )));
    }
    let mut state = AdmmState::init(params, constraints, schedule.penalty(0, epochs))?;
    let mut adam = AdamState::new(learning_rate, params);
    let mut residuals = Vec::new();
    let mut stats = Vec::with_capacity(epochs);
    for n in 0..epochs {
        state.outer_iteration = n;
        state.set_penalty(schedule.penalty(n, epochs));
        let s = train_epoch(params, &mut adam, data, settings, n, Some(&state))?;
        sink.record(MetricRecord::Epoch {
            task: settings.task,
            phase: Phase::Admm,
            epoch: n,
            loss: s.loss,
            train_accuracy: s.accuracy,
        });
        stats.push(s);
        update_auxiliary(&mut state, params, constraints)?;
        for l in 0..params.weights.len() {
            let rec = ResidualRecord {
                task: settings.task,
                iteration: n,
                layer: l,
                rho: state.rho[l],
                weight_residual: frob_sq(&(&params.weights[l] - &state.z[l])).sqrt(),
                weight_norm: frob_sq(&params.weights[l]).sqrt(),
                mask_residual: params
                    .masks
                    .get(l)
                    .map_or(0.0, |m| frob_sq(&(m - &state.y[l])).sqrt()),
            };
            sink.record(MetricRecord::Residual(rec.clone()));
            residuals.push(rec);
        }
        update_duals(&mut state, params)?;
    }
    state.outer_iteration = epochs;
    Ok(AdmmOutcome {
        state,
        residuals,
        epochs: stats,
    })
}
