//! Per-task protocol (warm-up, ADMM, projection + masked retrain), the
//! sequential runner, and multi-head evaluation.

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admm::{
    run_admm_phase, train_epoch, AdmmOutcome, EpochSettings, EpochStats, PenaltySchedule,
};
use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricsSink, Phase};
use crate::netcore::{
    argmax_row, forward, init_head, init_uniform, AdamState, BiasSet, Matrix, NetworkSpec,
    ParamSet, TrainableCoords,
};
use crate::partition::{compose, PartitionLedger, Support, TaskSlice};
use crate::projection::{LayerConstraint, PruningKind, SparsityBudget};
use crate::seed::{self, stream};
use crate::tasks::{LabeledData, TaskDataset};

/// Epoch counts and budgets for every task of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub warmup_epochs: usize,
    pub admm_epochs: usize,
    pub final_epochs: usize,
    pub pruning: PruningKind,
    /// Weight budget, percent of each layer (entries, columns or rows).
    pub alpha_percent: f64,
    /// Share budget, percent of each layer's past support.
    pub beta_percent: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub penalty_initial: f64,
    pub penalty_factor: f64,
    pub penalty_intervals: usize,
    pub prune_last_task: bool,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self {
            warmup_epochs: 30,
            admm_epochs: 90,
            final_epochs: 30,
            pruning: PruningKind::Irregular,
            alpha_percent: 10.0,
            beta_percent: 90.0,
            learning_rate: 1e-3,
            batch_size: 128,
            penalty_initial: 1e-3,
            penalty_factor: 10.0,
            penalty_intervals: 3,
            prune_last_task: true,
        }
    }
}

impl PhasePlan {
    pub fn schedule(&self) -> PenaltySchedule {
        PenaltySchedule {
            initial: self.penalty_initial,
            factor: self.penalty_factor,
            intervals: self.penalty_intervals,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pct = |name: &str, v: f64| {
            if (0.0..=100.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is outside [0, 100]")))
            }
        };
        pct("alpha_percent", self.alpha_percent)?;
        pct("beta_percent", self.beta_percent)?;
        if self.alpha_percent == 0.0 {
            return Err(Error::Config("alpha_percent must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {}",
                self.learning_rate
            )));
        }
        if !(self.penalty_initial > 0.0 && self.penalty_factor >= 1.0) {
            return Err(Error::Config(
                "penalties must be positive and non-decreasing".into(),
            ));
        }
        if self.penalty_intervals == 0 {
            return Err(Error::Config("penalty_intervals must be at least 1".into()));
        }
        if self.admm_epochs > 0 && self.admm_epochs < self.penalty_intervals {
            return Err(Error::Config(format!(
                "admm_epochs {} < penalty_intervals {}",
                self.admm_epochs, self.penalty_intervals
            )));
        }
        Ok(())
    }
}

/// Top-1 accuracy of one task plus a digest of every test logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: usize,
    pub top1_accuracy: f64,
    pub correct: usize,
    pub sample_count: usize,
    pub logits_digest: String,
}

const EVAL_CHUNK: usize = 1024;

/// Accuracy and logits digest of a network on `data`, evaluated in fixed
/// chunks.
pub fn score(
    weights: &[Matrix],
    head: &crate::netcore::Head,
    biases: &[ndarray::Array1<f64>],
    data: &LabeledData,
) -> Result<(usize, String)> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut hasher = Sha256::new();
    let mut correct = 0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let logits = forward(weights, head, biases, data.inputs.slice(s![start..end, ..]))?;
        for (row, &y) in logits.axis_iter(Axis(0)).zip(&data.labels[start..end]) {
            for v in row {
                hasher.update(v.to_le_bytes());
            }
            if argmax_row(row) == y {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((correct, hex::encode(hasher.finalize())))
}

/// Shared network state across the task sequence.
#[derive(Clone, Debug)]
pub struct Engine {
    pub spec: NetworkSpec,
    pub biases: BiasSet,
    pub ledger: PartitionLedger,
    pub seed: u64,
}

impl Engine {
    pub fn new(spec: NetworkSpec, seed: u64) -> Self {
        Self {
            biases: BiasSet::zeros(&spec),
            ledger: PartitionLedger::new(&spec),
            spec,
            seed,
        }
    }

    /// Per-layer projection constraints for the next task.
    pub fn constraints(&self, plan: &PhasePlan, is_last: bool) -> Result<Vec<LayerConstraint>> {
        let alpha = if is_last && !plan.prune_last_task {
            100.0
        } else {
            plan.alpha_percent
        };
        let free = self.ledger.free_support();
        let past = self.ledger.used_support();
        let out: Vec<LayerConstraint> = free
            .into_iter()
            .zip(past)
            .map(|(f, p)| {
                LayerConstraint::from_percent(plan.pruning, alpha, plan.beta_percent, f, p.clone())
            })
            .collect();
        for (l, c) in out.iter().enumerate() {
            if c.alpha == 0 {
                return Err(Error::NoFreeCapacity { layer: l });
            }
        }
        Ok(out)
    }

    /// Multi-head evaluation of a committed task.
    pub fn evaluate(&self, task_id: usize, test: &LabeledData) -> Result<EvalRecord> {
        let slice = self.ledger.slice(task_id)?;
        let effective = self.ledger.effective_weights(slice)?;
        let (correct, digest) = score(&effective, &slice.head, &self.biases.layers, test)?;
        Ok(EvalRecord {
            task_id,
            top1_accuracy: correct as f64 / test.len() as f64,
            correct,
            sample_count: test.len(),
            logits_digest: digest,
        })
    }
}

fn task_params(engine: &Engine, task_id: usize) -> ParamSet {
    let free = engine.ledger.free_support();
    let mut rng = seed::rng(engine.seed, &[stream::FEATURE_INIT, task_id as u64]);
    let weights = engine
        .spec
        .feature_shapes()
        .into_iter()
        .zip(&free)
        .map(|((p, q), f)| {
            let mut w = init_uniform(p, q, &mut rng);
            crate::netcore::zero_outside(&mut w, f);
            w
        })
        .collect();
    let masks = if task_id > 1 {
        engine
            .ledger
            .used_support()
            .iter()
            .map(Support::to_matrix)
            .collect()
    } else {
        Vec::new()
    };
    let head = init_head(
        &engine.spec,
        &mut seed::rng(engine.seed, &[stream::HEAD_INIT, task_id as u64]),
    );
    ParamSet {
        weights,
        masks,
        biases: engine.biases.layers.clone(),
        head,
    }
}

fn empty_supports(spec: &NetworkSpec) -> Vec<Support> {
    spec.feature_shapes()
        .iter()
        .map(|&(p, q)| Support::empty(p, q))
        .collect()
}

fn run_epochs(
    params: &mut ParamSet,
    data: &LabeledData,
    settings: &EpochSettings<'_>,
    epochs: usize,
    learning_rate: f64,
    sink: &mut dyn MetricsSink,
) -> Result<Vec<EpochStats>> {
    let mut adam = AdamState::new(learning_rate, params);
    let mut out = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let s = train_epoch(params, &mut adam, data, settings, e, None)?;
        sink.record(MetricRecord::Epoch {
            task: settings.task,
            phase: settings.phase,
            epoch: e,
            loss: s.loss,
            train_accuracy: s.accuracy,
        });
        out.push(s);
    }
    Ok(out)
}

/// Dense training on the free capacity with the share mask held at 1.
pub fn warmup(
    engine: &Engine,
    task_id: usize,
    data: &LabeledData,
    plan: &PhasePlan,
    sink: &mut dyn MetricsSink,
) -> Result<(ParamSet, Vec<EpochStats>)> {
    let free = engine.ledger.free_support();
    if let Some(l) = free.iter().position(Support::is_empty) {
        return Err(Error::NoFreeCapacity { layer: l });
    }
    let mut params = task_params(engine, task_id);
    let prior = engine.ledger.prior_weights(task_id);
    let coords = TrainableCoords {
        weights: free,
        masks: if task_id > 1 {
            empty_supports(&engine.spec)
        } else {
            Vec::new()
        },
        biases: !engine.biases.frozen,
        head: true,
    };
    let settings = EpochSettings {
        task: task_id,
        phase: Phase::Warmup,
        batch_size: plan.batch_size,
        shuffle_seed: seed::derive(engine.seed, &[stream::WARMUP_SHUFFLE, task_id as u64]),
        prior: &prior,
        coords: &coords,
    };
    let stats = run_epochs(
        &mut params,
        data,
        &settings,
        plan.warmup_epochs,
        plan.learning_rate,
        sink,
    )?;
    Ok((params, stats))
}

/// Joint pruning of `W` and learning of `M` by ADMM.
pub fn admm_phase(
    engine: &Engine,
    task_id: usize,
    params: &mut ParamSet,
    constraints: &[LayerConstraint],
    data: &LabeledData,
    plan: &PhasePlan,
    sink: &mut dyn MetricsSink,
) -> Result<AdmmOutcome> {
    let prior = engine.ledger.prior_weights(task_id);
    let coords = TrainableCoords {
        weights: engine.ledger.free_support(),
        masks: if task_id > 1 {
            engine.ledger.used_support().to_vec()
        } else {
            Vec::new()
        },
        biases: !engine.biases.frozen,
        head: true,
    };
    let settings = EpochSettings {
        task: task_id,
        phase: Phase::Admm,
        batch_size: plan.batch_size,
        shuffle_seed: seed::derive(engine.seed, &[stream::ADMM_SHUFFLE, task_id as u64]),
        prior: &prior,
        coords: &coords,
    };
    run_admm_phase(
        params,
        constraints,
        data,
        &settings,
        plan.admm_epochs,
        plan.learning_rate,
        &plan.schedule(),
        sink,
    )
}

/// Hard projection of `W` and `M`, then retraining of the kept weights
/// (and head) only. The returned slice is ready to commit.
pub fn finalize(
    engine: &Engine,
    task_id: usize,
    mut params: ParamSet,
    constraints: &[LayerConstraint],
    data: &LabeledData,
    plan: &PhasePlan,
    sink: &mut dyn MetricsSink,
) -> Result<(TaskSlice, ParamSet, Vec<EpochStats>)> {
    let mut weight_support = Vec::with_capacity(constraints.len());
    for (w, c) in params.weights.iter_mut().zip(constraints) {
        let p = c.project_weights(w)?;
        *w = p.values;
        weight_support.push(p.support);
    }
    let mut mask_support = Vec::with_capacity(constraints.len());
    if task_id > 1 {
        for (m, c) in params.masks.iter_mut().zip(constraints) {
            let p = c.project_mask(m)?;
            *m = p.values;
            mask_support.push(p.support);
        }
    } else {
        mask_support = empty_supports(&engine.spec);
    }

    let prior = engine.ledger.prior_weights(task_id);
    let coords = TrainableCoords {
        weights: weight_support.clone(),
        masks: if task_id > 1 {
            empty_supports(&engine.spec)
        } else {
            Vec::new()
        },
        biases: !engine.biases.frozen,
        head: true,
    };
    let settings = EpochSettings {
        task: task_id,
        phase: Phase::Final,
        batch_size: plan.batch_size,
        shuffle_seed: seed::derive(engine.seed, &[stream::FINAL_SHUFFLE, task_id as u64]),
        prior: &prior,
        coords: &coords,
    };
    let stats = run_epochs(
        &mut params,
        data,
        &settings,
        plan.final_epochs,
        plan.learning_rate,
        sink,
    )?;
    let slice = TaskSlice {
        task_id,
        weights: params.weights.clone(),
        masks: (task_id > 1).then(|| params.masks.clone()),
        head: params.head.clone(),
        weight_support,
        mask_support,
    };
    slice.check(engine.ledger.shapes())?;
    Ok((slice, params, stats))
}

/// Everything observed while training one task.
#[derive(Clone, Debug)]
pub struct TaskReport {
    pub task_id: usize,
    pub budget: SparsityBudget,
    pub warmup: Vec<EpochStats>,
    pub admm: Option<AdmmOutcome>,
    pub final_stats: Vec<EpochStats>,
    /// Test accuracy of the ADMM iterate just before the hard projection.
    pub pre_projection_accuracy: f64,
    pub eval: EvalRecord,
}

fn params_accuracy(
    engine: &Engine,
    task_id: usize,
    params: &ParamSet,
    data: &LabeledData,
) -> Result<f64> {
    let prior = engine.ledger.prior_weights(task_id);
    let effective = compose(
        &params.weights,
        (!params.masks.is_empty()).then_some(params.masks.as_slice()),
        &prior,
    );
    let (correct, _) = score(&effective, &params.head, &params.biases, data)?;
    Ok(correct as f64 / data.len() as f64)
}

/// Warm-up, ADMM, finalize, commit. Nothing is committed on error.
pub fn train_task(
    engine: &mut Engine,
    dataset: &TaskDataset,
    plan: &PhasePlan,
    is_last: bool,
    sink: &mut dyn MetricsSink,
) -> Result<TaskReport> {
    plan.validate()?;
    let task_id = engine.ledger.next_task_id();
    if dataset.task_id != task_id {
        return Err(Error::Config(format!(
            "next task is {task_id}, dataset is task {}",
            dataset.task_id
        )));
    }
    if dataset.classes != engine.spec.classes() {
        return Err(Error::shape(
            "task classes",
            engine.spec.classes(),
            dataset.classes,
        ));
    }
    let constraints = engine.constraints(plan, is_last)?;
    let budget = SparsityBudget {
        alpha: constraints.iter().map(|c| c.alpha).collect(),
        beta: if task_id > 1 {
            constraints.iter().map(|c| c.beta).collect()
        } else {
            vec![0; constraints.len()]
        },
    };

    let (mut params, warm) = warmup(engine, task_id, &dataset.train, plan, sink)?;
    let admm = if plan.admm_epochs > 0 {
        Some(admm_phase(
            engine,
            task_id,
            &mut params,
            &constraints,
            &dataset.train,
            plan,
            sink,
        )?)
    } else {
        None
    };
    let pre = params_accuracy(engine, task_id, &params, &dataset.test)?;
    let (slice, final_params, final_stats) = finalize(
        engine,
        task_id,
        params,
        &constraints,
        &dataset.train,
        plan,
        sink,
    )?;

    engine.ledger.commit_task(slice)?;
    if task_id == 1 {
        engine.biases.layers = final_params.biases;
        engine.biases.frozen = true;
    }
    let eval = engine.evaluate(task_id, &dataset.test)?;
    Ok(TaskReport {
        task_id,
        budget,
        warmup: warm,
        admm,
        final_stats,
        pre_projection_accuracy: pre,
        eval,
    })
}

/// `cells[i][j]`: task `i+1` evaluated after training task `j+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub cells: Vec<Vec<Option<EvalRecord>>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            cells: vec![vec![None; tasks]; tasks],
        }
    }

    pub fn tasks(&self) -> usize {
        self.cells.len()
    }

    /// Number of leading checkpoints filled in.
    pub fn completed(&self) -> usize {
        (0..self.tasks())
            .take_while(|&j| self.cells[j][j].is_some())
            .count()
    }

    /// Latest accuracy of every evaluated task.
    pub fn final_accuracies(&self) -> Vec<f64> {
        let done = self.completed();
        (0..done)
            .filter_map(|i| self.cells[i][done - 1].as_ref().map(|r| r.top1_accuracy))
            .collect()
    }

    pub fn average(&self) -> f64 {
        let f = self.final_accuracies();
        if f.is_empty() {
            0.0
        } else {
            f.iter().sum::<f64>() / f.len() as f64
        }
    }

    /// True when every task's digest is the same at every later checkpoint.
    pub fn digests_constant(&self) -> bool {
        self.cells.iter().all(|row| {
            let mut seen = row.iter().flatten().map(|r| &r.logits_digest);
            match seen.next() {
                None => true,
                Some(first) => seen.all(|d| d == first),
            }
        })
    }

    /// `task,after_1,...,after_n` with blanks above the diagonal.
    pub fn to_csv(&self) -> String {
        let n = self.tasks();
        let mut out = String::from("task");
        for j in 1..=n {
            out.push_str(&format!(",after_task_{j}"));
        }
        out.push('\n');
        for (i, row) in self.cells.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for cell in row {
                out.push(',');
                if let Some(r) = cell {
                    out.push_str(&format!("{:.6}", r.top1_accuracy));
                }
            }
            out.push('\n');
        }
        out.push_str("avg");
        for j in 0..n {
            out.push(',');
            let col: Vec<f64> = (0..=j)
                .filter_map(|i| self.cells[i][j].as_ref().map(|r| r.top1_accuracy))
                .collect();
            if col.len() == j + 1 {
                out.push_str(&format!(
                    "{:.6}",
                    col.iter().sum::<f64>() / col.len() as f64
                ));
            }
        }
        out.push('\n');
        out
    }
}

/// Trains `tasks` in order starting at the engine's next task, evaluating
/// every committed task after each one. `after_task` runs once per
/// committed task (checkpointing hooks in here). Stops after task
/// `stop_after` when given.
pub fn run_sequence(
    engine: &mut Engine,
    matrix: &mut AccuracyMatrix,
    tasks: &[TaskDataset],
    plan: &PhasePlan,
    stop_after: Option<usize>,
    sink: &mut dyn MetricsSink,
    after_task: &mut dyn FnMut(&Engine, &AccuracyMatrix, &TaskReport) -> Result<()>,
) -> Result<Vec<TaskReport>> {
    if matrix.tasks() != tasks.len() {
        return Err(Error::shape("accuracy matrix", tasks.len(), matrix.tasks()));
    }
    let mut reports = Vec::new();
    let first = engine.ledger.next_task_id();
    let last = stop_after.unwrap_or(tasks.len()).min(tasks.len());
    for t in first..=last {
        let report = train_task(engine, &tasks[t - 1], plan, t == tasks.len(), sink)?;
        for i in 1..=t {
            let rec = engine.evaluate(i, &tasks[i - 1].test)?;
            sink.record(MetricRecord::TaskEval {
                after_task: t,
                task: i,
                accuracy: rec.top1_accuracy,
                samples: rec.sample_count,
                digest: rec.logits_digest.clone(),
            });
            matrix.cells[i - 1][t - 1] = Some(rec);
        }
        after_task(engine, matrix, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::NullSink;
    use crate::tasks::{make_blob_tasks, BlobParams};

    fn blobs(similarity: f64) -> Vec<TaskDataset> {
        make_blob_tasks(&BlobParams {
            tasks: 3,
            input_dim: 20,
            classes: 5,
            train_samples: 500,
            test_samples: 200,
            seed: 7,
            similarity,
            separation: 6.0,
        })
        .unwrap()
    }

    fn plan() -> PhasePlan {
        PhasePlan {
            warmup_epochs: 3,
            admm_epochs: 6,
            final_epochs: 3,
            alpha_percent: 20.0,
            batch_size: 32,
            learning_rate: 1e-2,
            ..PhasePlan::default()
        }
    }

    fn run(tasks: &[TaskDataset], plan: &PhasePlan) -> (Engine, AccuracyMatrix) {
        let spec = NetworkSpec::new(vec![20, 32, 32, 5]).unwrap();
        let mut engine = Engine::new(spec, 11);
        let mut matrix = AccuracyMatrix::new(tasks.len());
        run_sequence(
            &mut engine,
            &mut matrix,
            tasks,
            plan,
            None,
            &mut NullSink,
            &mut |e, _, _| {
                assert!(e.ledger.verify_invariants().all_passed());
                Ok(())
            },
        )
        .unwrap();
        (engine, matrix)
    }

    #[test]
    fn sequence_learns_and_never_forgets() {
        let tasks = blobs(0.5);
        let (engine, matrix) = run(&tasks, &plan());
        assert_eq!(engine.ledger.next_task_id(), 4);
        assert!(engine.biases.frozen);
        assert!(matrix.digests_constant());
        for a in matrix.final_accuracies() {
            assert!(a > 0.8, "accuracy {a}");
        }
    }

    #[test]
    fn runs_are_bitwise_repeatable() {
        let tasks = blobs(0.5);
        let (_, a) = run(&tasks, &plan());
        let (_, b) = run(&tasks, &plan());
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a, b);
    }

    #[test]
    fn weight_budget_is_exact() {
        let tasks = blobs(0.0);
        let (engine, _) = run(&tasks[..1], &plan());
        let slice = engine.ledger.slice(1).unwrap();
        for (s, &(p, q)) in slice.weight_support.iter().zip(engine.ledger.shapes()) {
            assert_eq!(s.len(), ((p * q) as f64 * 0.2).round() as usize);
        }
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let tasks = blobs(0.0);
        let spec = NetworkSpec::new(vec![20, 8, 8, 5]).unwrap();
        let mut engine = Engine::new(spec, 1);
        let err = train_task(&mut engine, &tasks[1], &plan(), false, &mut NullSink);
        assert!(matches!(err, Err(Error::Config(_))));
        assert_eq!(engine.ledger.next_task_id(), 1);
    }

    #[test]
    fn csv_leaves_upper_triangle_blank() {
        let mut m = AccuracyMatrix::new(2);
        let rec = |t| EvalRecord {
            task_id: t,
            top1_accuracy: 0.5,
            correct: 1,
            sample_count: 2,
            logits_digest: String::new(),
        };
        m.cells[0][0] = Some(rec(1));
        m.cells[0][1] = Some(rec(1));
        m.cells[1][1] = Some(rec(2));
        assert_eq!(
            m.to_csv(),
            "task,after_task_1,after_task_2\n1,0.500000,0.500000\n2,,0.500000\navg,0.500000,0.500000\n"
        );
        assert_eq!(m.completed(), 2);
        assert_eq!(m.average(), 0.5);
    }
}
