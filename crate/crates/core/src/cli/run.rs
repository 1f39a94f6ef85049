//! The `run` verb: trains a configured sequence and writes its artifacts.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use crate::cli::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::cli::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricsSink};
use crate::trainer::{run_sequence, AccuracyMatrix, Engine};

pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const RESIDUALS_CSV: &str = "residuals.csv";
pub const CHECKPOINT: &str = "checkpoint.lps";
pub const ARTIFACTS: [&str; 4] = [ACCURACY_CSV, METRICS_JSONL, RESIDUALS_CSV, CHECKPOINT];

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop once this task is committed.
    pub stop_after: Option<usize>,
    /// Suppress the progress lines on stderr.
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub label: Option<String>,
    pub output_dir: PathBuf,
    pub matrix: AccuracyMatrix,
}

impl RunSummary {
    pub fn average(&self) -> f64 {
        self.matrix.average()
    }

    pub fn summary_line(&self) -> String {
        let prefix = self
            .label
            .as_ref()
            .map(|l| format!("[{l}] "))
            .unwrap_or_default();
        format!(
            "{prefix}average accuracy {:.4} over {} task(s)",
            self.average(),
            self.matrix.completed()
        )
    }
}

#[derive(Clone, Default)]
struct SharedLog(Rc<RefCell<Vec<MetricRecord>>>);

impl MetricsSink for SharedLog {
    fn record(&mut self, record: MetricRecord) {
        self.0.borrow_mut().push(record);
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

pub fn metrics_jsonl(records: &[MetricRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn residuals_csv(records: &[MetricRecord]) -> String {
    let mut out =
        String::from("task,iteration,layer,rho,weight_residual,weight_norm,mask_residual\n");
    for r in records {
        if let MetricRecord::Residual(r) = r {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.task,
                r.iteration,
                r.layer,
                r.rho,
                r.weight_residual,
                r.weight_norm,
                r.mask_residual
            );
        }
    }
    out
}

fn flush(dir: &Path, matrix: &AccuracyMatrix, records: &[MetricRecord]) -> Result<()> {
    write(dir, ACCURACY_CSV, &matrix.to_csv())?;
    write(dir, METRICS_JSONL, &metrics_jsonl(records)?)?;
    write(dir, RESIDUALS_CSV, &residuals_csv(records))
}

/// Runs one (already expanded) configuration.
pub fn run_single(
    cfg: &ExperimentConfig,
    label: Option<String>,
    opts: &RunOptions,
) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let tasks = cfg.build_tasks()?;
    let spec = cfg.network(&tasks)?;
    let plan = cfg.plan();
    let hash = cfg.hash();

    let (mut engine, mut matrix, history) = match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config_hash != hash {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    reason: "written by a different configuration".into(),
                });
            }
            if ck.engine.spec != spec || ck.matrix.tasks() != tasks.len() {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    reason: "network or task count does not match the configuration".into(),
                });
            }
            (ck.engine, ck.matrix, ck.history)
        }
        None => (
            Engine::new(spec, cfg.seed),
            AccuracyMatrix::new(tasks.len()),
            Vec::new(),
        ),
    };

    let log = SharedLog(Rc::new(RefCell::new(history)));
    let mut sink = log.clone();
    let quiet = opts.quiet;
    let result = run_sequence(
        &mut engine,
        &mut matrix,
        &tasks,
        &plan,
        opts.stop_after,
        &mut sink,
        &mut |engine, matrix, report| {
            let records = log.0.borrow();
            flush(&dir, matrix, &records)?;
            save_checkpoint(
                &dir.join(CHECKPOINT),
                &Checkpoint {
                    engine: engine.clone(),
                    matrix: matrix.clone(),
                    history: records.clone(),
                    config_hash: hash.clone(),
                },
            )?;
            if !quiet {
                eprintln!(
                    "task {}: test accuracy {:.4} (before projection {:.4})",
                    report.task_id, report.eval.top1_accuracy, report.pre_projection_accuracy
                );
            }
            Ok(())
        },
    );
    if let Err(e) = result {
        let _ = flush(&dir, &matrix, &log.0.borrow());
        return Err(e);
    }
    flush(&dir, &matrix, &log.0.borrow())?;
    Ok(RunSummary {
        label,
        output_dir: dir,
        matrix,
    })
}

/// Runs a configuration, expanding sweeps into one run per entry.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<RunSummary>> {
    let runs = cfg.expand_sweep();
    if runs.len() > 1 && opts.resume.is_some() {
        return Err(Error::Config(
            "resume applies to a single run, not a sweep".into(),
        ));
    }
    runs.into_iter()
        .map(|(label, c)| run_single(&c, label, opts))
        .collect()
}
