//! Dense ReLU network in GEMM layout with hand-written backprop and a
//! coordinate-masked Adam.
//!
//! Layer `l` maps `P_l` inputs to `Q_l` outputs through a `P_l x Q_l`
//! matrix, so a batch flows as `H_l = relu(H_{l-1} W_l + b_l)`. The head is
//! a separate affine layer with its own bias and no activation.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Support;

pub type Matrix = Array2<f64>;

/// One layer's weights in GEMM format.
pub type WeightMatrix = Matrix;

/// Layer widths `[d, h_1, ..., h_L, classes]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::Config(format!(
                "need input, at least one hidden layer and a head, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {layer_dims:?}")));
        }
        Ok(Self { layer_dims })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of feature layers `L` (the head is not counted).
    pub fn feature_layers(&self) -> usize {
        self.layer_dims.len() - 2
    }

    pub fn feature_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.feature_layers())
            .map(|l| (self.layer_dims[l], self.layer_dims[l + 1]))
            .collect()
    }

    pub fn head_shape(&self) -> (usize, usize) {
        let n = self.layer_dims.len();
        (self.layer_dims[n - 2], self.layer_dims[n - 1])
    }

    /// Total feature-extractor weight count `m`.
    pub fn total_capacity(&self) -> usize {
        self.feature_shapes().iter().map(|(p, q)| p * q).sum()
    }
}

/// Per-task output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weights: Matrix,
    pub bias: Array1<f64>,
}

impl Head {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weights: Matrix::zeros((rows, cols)),
            bias: Array1::zeros(cols),
        }
    }
}

/// Feature-layer biases, learned on the first task and frozen afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasSet {
    pub layers: Vec<Array1<f64>>,
    pub frozen: bool,
}

impl BiasSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .feature_shapes()
                .iter()
                .map(|&(_, q)| Array1::zeros(q))
                .collect(),
            frozen: false,
        }
    }
}

/// Uniform `[-sqrt(6/(P+Q)), sqrt(6/(P+Q))]`.
pub fn init_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

pub fn init_feature_weights<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Vec<Matrix> {
    spec.feature_shapes()
        .into_iter()
        .map(|(p, q)| init_uniform(p, q, rng))
        .collect()
}

pub fn init_head<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Head {
    let (p, q) = spec.head_shape();
    Head {
        weights: init_uniform(p, q, rng),
        bias: Array1::zeros(q),
    }
}

/// Trainable tensors of one task: feature weights, relaxed masks (empty on
/// the first task), feature biases and the head. Gradients share the layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub weights: Vec<Matrix>,
    pub masks: Vec<Matrix>,
    pub biases: Vec<Array1<f64>>,
    pub head: Head,
}

pub type GradientSet = ParamSet;

impl ParamSet {
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.dim()))
                .collect(),
            masks: self.masks.iter().map(|m| Matrix::zeros(m.dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            head: Head::zeros(self.head.weights.nrows(), self.head.weights.ncols()),
        }
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend((0..self.weights.len()).map(|l| format!("weights[{l}]")));
        names.extend((0..self.masks.len()).map(|l| format!("masks[{l}]")));
        names.extend((0..self.biases.len()).map(|l| format!("biases[{l}]")));
        names.push("head.weights".into());
        names.push("head.bias".into());
        names
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for w in self.weights.iter().chain(&self.masks) {
            out.push(w.as_slice().expect("standard layout"));
        }
        for b in &self.biases {
            out.push(b.as_slice().expect("contiguous"));
        }
        out.push(self.head.weights.as_slice().expect("standard layout"));
        out.push(self.head.bias.as_slice().expect("contiguous"));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for w in self.weights.iter_mut().chain(self.masks.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
        }
        for b in &mut self.biases {
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        out.push(self.head.weights.as_slice_mut().expect("standard layout"));
        out.push(self.head.bias.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn is_all_zero(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|&x| x == 0.0))
    }
}

/// Which coordinates may receive gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableCoords {
    pub weights: Vec<Support>,
    pub masks: Vec<Support>,
    pub biases: bool,
    pub head: bool,
}

impl TrainableCoords {
    pub fn all(spec: &NetworkSpec) -> Self {
        Self {
            weights: spec
                .feature_shapes()
                .iter()
                .map(|&(p, q)| Support::full(p, q))
                .collect(),
            masks: Vec::new(),
            biases: true,
            head: true,
        }
    }

    pub fn none(spec: &NetworkSpec) -> Self {
        Self {
            weights: spec
                .feature_shapes()
                .iter()
                .map(|&(p, q)| Support::empty(p, q))
                .collect(),
            masks: Vec::new(),
            biases: false,
            head: false,
        }
    }
}

fn check_chain(
    weights: &[Matrix],
    head: &Head,
    biases: &[Array1<f64>],
    batch: &ArrayView2<f64>,
) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::shape("forward", "at least one feature layer", 0));
    }
    if biases.len() != weights.len() {
        return Err(Error::shape("biases", weights.len(), biases.len()));
    }
    let mut width = batch.ncols();
    for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
        if w.nrows() != width {
            return Err(Error::shape(format!("weights[{l}] rows"), width, w.nrows()));
        }
        if b.len() != w.ncols() {
            return Err(Error::shape(format!("biases[{l}]"), w.ncols(), b.len()));
        }
        width = w.ncols();
    }
    if head.weights.nrows() != width {
        return Err(Error::shape("head rows", width, head.weights.nrows()));
    }
    if head.bias.len() != head.weights.ncols() {
        return Err(Error::shape(
            "head bias",
            head.weights.ncols(),
            head.bias.len(),
        ));
    }
    Ok(())
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != rows {
        return Err(Error::shape("labels", rows, labels.len()));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes,
        });
    }
    Ok(())
}

fn affine(x: &ArrayView2<f64>, w: &Matrix, b: &Array1<f64>) -> Matrix {
    let mut z = x.dot(w);
    z += b;
    z
}

fn relu_in_place(z: &mut Matrix) {
    z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Logits for `batch` (one row per sample).
pub fn forward(
    weights: &[Matrix],
    head: &Head,
    biases: &[Array1<f64>],
    batch: ArrayView2<f64>,
) -> Result<Matrix> {
    check_chain(weights, head, biases, &batch)?;
    let mut h = batch.to_owned();
    for (w, b) in weights.iter().zip(biases) {
        h = affine(&h.view(), w, b);
        relu_in_place(&mut h);
    }
    Ok(affine(&h.view(), &head.weights, &head.bias))
}

/// Row-wise softmax probabilities and the mean cross-entropy.
fn softmax_xent(logits: &Matrix, labels: &[usize]) -> (Matrix, f64) {
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (mut row, &y) in probs.axis_iter_mut(Axis(0)).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        total += sum.ln() - (row[y].ln());
        row /= sum;
    }
    (probs, total / labels.len() as f64)
}

pub fn mean_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    let mut total = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

pub fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Unmasked gradients with respect to the weights actually used in the
/// forward pass.
#[derive(Clone, Debug)]
pub struct Backprop {
    pub loss: f64,
    pub correct: usize,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Array1<f64>>,
    pub head: Head,
}

pub fn backprop(
    weights: &[Matrix],
    head: &Head,
    biases: &[Array1<f64>],
    batch: ArrayView2<f64>,
    labels: &[usize],
) -> Result<Backprop> {
    check_chain(weights, head, biases, &batch)?;
    check_labels(labels, batch.nrows(), head.weights.ncols())?;
    let n = batch.nrows() as f64;

    // activations[0] is the input; activations[l + 1] is relu output of layer l.
    let mut activations: Vec<Matrix> = Vec::with_capacity(weights.len() + 1);
    activations.push(batch.to_owned());
    for (w, b) in weights.iter().zip(biases) {
        let mut z = affine(&activations.last().unwrap().view(), w, b);
        relu_in_place(&mut z);
        activations.push(z);
    }
    let top = activations.last().unwrap();
    let logits = affine(&top.view(), &head.weights, &head.bias);
    let (mut delta, loss) = softmax_xent(&logits, labels);
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax_row(row.view()) == y)
        .count();
    for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(labels) {
        row[y] -= 1.0;
    }
    delta /= n;

    let head_grad = Head {
        weights: top.t().dot(&delta),
        bias: delta.sum_axis(Axis(0)),
    };
    let mut upstream = delta.dot(&head.weights.t());

    let mut weight_grads = vec![Matrix::zeros((0, 0)); weights.len()];
    let mut bias_grads = vec![Array1::zeros(0); weights.len()];
    for l in (0..weights.len()).rev() {
        // ReLU'(0) = 0: gate on the stored post-activation.
        Zip::from(&mut upstream)
            .and(&activations[l + 1])
            .for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
        weight_grads[l] = activations[l].t().dot(&upstream);
        bias_grads[l] = upstream.sum_axis(Axis(0));
        if l > 0 {
            upstream = upstream.dot(&weights[l].t());
        }
    }

    Ok(Backprop {
        loss,
        correct,
        weights: weight_grads,
        biases: bias_grads,
        head: head_grad,
    })
}

pub(crate) fn zero_outside(g: &mut Matrix, support: &Support) {
    let bits = support.bits();
    for (v, &keep) in g
        .as_slice_mut()
        .expect("standard layout")
        .iter_mut()
        .zip(bits)
    {
        if !keep {
            *v = 0.0;
        }
    }
}

/// Mean softmax cross-entropy and its gradient restricted to `trainable`.
pub fn loss_and_grads(
    weights: &[Matrix],
    head: &Head,
    biases: &[Array1<f64>],
    batch: ArrayView2<f64>,
    labels: &[usize],
    trainable: &TrainableCoords,
) -> Result<(f64, GradientSet)> {
    if trainable.weights.len() != weights.len() {
        return Err(Error::shape(
            "trainable weight layers",
            weights.len(),
            trainable.weights.len(),
        ));
    }
    let bp = backprop(weights, head, biases, batch, labels)?;
    let mut grads = GradientSet {
        weights: bp.weights,
        masks: Vec::new(),
        biases: bp.biases,
        head: bp.head,
    };
    for (l, (g, s)) in grads.weights.iter_mut().zip(&trainable.weights).enumerate() {
        if s.shape() != g.dim() {
            return Err(Error::shape(format!("trainable[{l}]"), g.dim(), s.shape()));
        }
        zero_outside(g, s);
    }
    if !trainable.biases {
        grads.biases.iter_mut().for_each(|b| b.fill(0.0));
    }
    if !trainable.head {
        grads.head.weights.fill(0.0);
        grads.head.bias.fill(0.0);
    }
    Ok((bp.loss, grads))
}

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: ParamSet,
    pub second: ParamSet,
}

impl AdamState {
    pub fn new(learning_rate: f64, like: &ParamSet) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: like.zeros_like(),
            second: like.zeros_like(),
        }
    }
}

/// One Adam step. Coordinates whose gradient is exactly zero are left
/// untouched, moments included.
pub fn adam_step(params: &mut ParamSet, grads: &GradientSet, state: &mut AdamState) -> Result<()> {
    let names = params.block_names();
    let grad_blocks = grads.blocks();
    let lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let moment_lens: Vec<usize> = state.first.blocks().iter().map(|b| b.len()).collect();
    let grad_lens: Vec<usize> = grad_blocks.iter().map(|b| b.len()).collect();
    if lens != grad_lens {
        return Err(Error::shape("adam gradients", &lens, &grad_lens));
    }
    if lens != moment_lens {
        return Err(Error::shape("adam moments", &lens, &moment_lens));
    }
    for (name, g) in names.iter().zip(&grad_blocks) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                block: name.clone(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let p_blocks = params.blocks_mut();
    let m_blocks = state.first.blocks_mut();
    let v_blocks = state.second.blocks_mut();
    for (((p, g), m), v) in p_blocks
        .into_iter()
        .zip(grad_blocks)
        .zip(m_blocks)
        .zip(v_blocks)
    {
        for i in 0..p.len() {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// A single scalar parameter of a plain network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coord {
    Weight {
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

pub const FD_STEP: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Max relative error between backprop and central differences over
/// `coords`.
pub fn finite_difference_check(
    weights: &[Matrix],
    head: &Head,
    biases: &[Array1<f64>],
    batch: ArrayView2<f64>,
    labels: &[usize],
    coords: &[Coord],
) -> Result<f64> {
    if coords.is_empty() {
        return Err(Error::Config(
            "finite_difference_check needs coordinates".into(),
        ));
    }
    let all = TrainableCoords {
        weights: weights
            .iter()
            .map(|w| Support::full(w.nrows(), w.ncols()))
            .collect(),
        masks: Vec::new(),
        biases: true,
        head: true,
    };
    let (_, grads) = loss_and_grads(weights, head, biases, batch, labels, &all)?;

    let mut w = weights.to_vec();
    let mut h = head.clone();
    let mut b = biases.to_vec();
    let mut worst = 0.0f64;
    for &c in coords {
        let analytic = match c {
            Coord::Weight { layer, row, col } => grads.weights[layer][[row, col]],
            Coord::Bias { layer, index } => grads.biases[layer][index],
            Coord::HeadWeight { row, col } => grads.head.weights[[row, col]],
            Coord::HeadBias { index } => grads.head.bias[index],
        };
        let mut eval = |delta: f64| -> Result<f64> {
            let slot = match c {
                Coord::Weight { layer, row, col } => &mut w[layer][[row, col]],
                Coord::Bias { layer, index } => &mut b[layer][index],
                Coord::HeadWeight { row, col } => &mut h.weights[[row, col]],
                Coord::HeadBias { index } => &mut h.bias[index],
            };
            let orig = *slot;
            *slot = orig + delta;
            let logits = forward(&w, &h, &b, batch);
            let slot = match c {
                Coord::Weight { layer, row, col } => &mut w[layer][[row, col]],
                Coord::Bias { layer, index } => &mut b[layer][index],
                Coord::HeadWeight { row, col } => &mut h.weights[[row, col]],
                Coord::HeadBias { index } => &mut h.bias[index],
            };
            *slot = orig;
            mean_cross_entropy(&logits?, labels)
        };
        let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}
