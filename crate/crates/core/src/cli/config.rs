//! Flat JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netcore::NetworkSpec;
use crate::projection::PruningKind;
use crate::seed;
use crate::tasks::{
    load_mnist_dir, make_blob_tasks, make_permuted_tasks, make_split_tasks, read_csv,
    stratified_subsample, BlobParams, LabeledData, SuiteKind, TaskDataset,
};
use crate::trainer::PhasePlan;

fn default_true() -> bool {
    true
}

/// Every key of a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: SuiteKind,
    pub task_count: usize,
    /// Classes per task (split and blob suites).
    #[serde(default)]
    pub classes_per_task: Option<usize>,
    /// Feature count of blob inputs.
    #[serde(default)]
    pub input_dim: Option<usize>,
    pub train_samples: usize,
    pub test_samples: usize,
    #[serde(default)]
    pub blob_similarity: Option<f64>,
    #[serde(default)]
    pub blob_separation: Option<f64>,
    /// Directory holding the IDX files (or `train.csv` / `test.csv`).
    #[serde(default)]
    pub data_dir: Option<PathBuf>,

    pub hidden_layers: Vec<usize>,
    pub pruning: PruningKind,
    pub alpha_percent: f64,
    pub beta_percent: f64,
    /// When set, overrides `alpha_percent` with an even split of this share
    /// of every layer across the tasks.
    #[serde(default)]
    pub capacity_percent: Option<f64>,
    #[serde(default = "default_true")]
    pub prune_last_task: bool,

    pub warmup_epochs: usize,
    pub admm_epochs: usize,
    pub final_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub penalty_initial: f64,
    pub penalty_factor: f64,
    pub penalty_intervals: usize,

    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sweep_beta: Option<Vec<f64>>,
    #[serde(default)]
    pub sweep_capacity: Option<Vec<f64>>,
}

impl ExperimentConfig {
    /// Parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(d) = &cfg.data_dir {
            if d.is_relative() {
                cfg.data_dir = Some(base.join(d));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_count < 1 {
            return Err(Error::Config("task_count must be at least 1".into()));
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("sample caps must be positive".into()));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config(
                "hidden_layers must be non-empty and positive".into(),
            ));
        }
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        for (name, v) in [
            ("capacity_percent", self.capacity_percent),
            ("blob_similarity", self.blob_similarity.map(|s| s * 100.0)),
        ] {
            if let Some(v) = v {
                if !in_range(v) {
                    return Err(Error::Config(format!("{name} out of range: {v}")));
                }
            }
        }
        for v in self.sweep_beta.iter().chain(&self.sweep_capacity).flatten() {
            if !in_range(*v) {
                return Err(Error::Config(format!("sweep value {v} outside [0, 100]")));
            }
        }
        if self.sweep_beta.is_some() && self.sweep_capacity.is_some() {
            return Err(Error::Config(
                "sweep_beta and sweep_capacity are exclusive".into(),
            ));
        }
        match self.suite {
            SuiteKind::Blobs => {
                if self.input_dim.is_none() || self.classes_per_task.is_none() {
                    return Err(Error::Config(
                        "blobs need input_dim and classes_per_task".into(),
                    ));
                }
            }
            SuiteKind::Split => {
                if self.classes_per_task.is_none() || self.data_dir.is_none() {
                    return Err(Error::Config(
                        "split needs classes_per_task and data_dir".into(),
                    ));
                }
            }
            SuiteKind::Permuted => {
                if self.data_dir.is_none() {
                    return Err(Error::Config("permuted needs data_dir".into()));
                }
            }
        }
        self.plan().validate()
    }

    pub fn plan(&self) -> PhasePlan {
        let alpha_percent = match self.capacity_percent {
            Some(c) => {
                let pruned = if self.prune_last_task {
                    self.task_count
                } else {
                    (self.task_count - 1).max(1)
                };
                c / pruned as f64
            }
            None => self.alpha_percent,
        };
        PhasePlan {
            warmup_epochs: self.warmup_epochs,
            admm_epochs: self.admm_epochs,
            final_epochs: self.final_epochs,
            pruning: self.pruning,
            alpha_percent,
            beta_percent: self.beta_percent,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            penalty_initial: self.penalty_initial,
            penalty_factor: self.penalty_factor,
            penalty_intervals: self.penalty_intervals,
            prune_last_task: self.prune_last_task,
        }
    }

    /// Digest of every key that affects training. Output location and
    /// sweep lists are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.data_dir = None;
        c.sweep_beta = None;
        c.sweep_capacity = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// One config per sweep entry with its output subdirectory name, or the
    /// config itself when no sweep is set.
    pub fn expand_sweep(&self) -> Vec<(Option<String>, ExperimentConfig)> {
        let mut base = self.clone();
        base.sweep_beta = None;
        base.sweep_capacity = None;
        let entries = |values: &[f64], name: &str, set: &dyn Fn(&mut Self, f64)| {
            values
                .iter()
                .map(|&v| {
                    let mut c = base.clone();
                    set(&mut c, v);
                    let dir = format!("{name}_{v}");
                    c.output_dir = self.output_dir.join(&dir);
                    (Some(dir), c)
                })
                .collect::<Vec<_>>()
        };
        if let Some(b) = &self.sweep_beta {
            entries(b, "beta", &|c, v| c.beta_percent = v)
        } else if let Some(cap) = &self.sweep_capacity {
            entries(cap, "capacity", &|c, v| c.capacity_percent = Some(v))
        } else {
            vec![(None, base)]
        }
    }

    fn input_and_classes(&self, tasks: &[TaskDataset]) -> (usize, usize) {
        let first = &tasks[0];
        (first.train.dim(), first.classes)
    }

    pub fn network(&self, tasks: &[TaskDataset]) -> Result<NetworkSpec> {
        let (input, classes) = self.input_and_classes(tasks);
        let mut dims = vec![input];
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(classes);
        NetworkSpec::new(dims)
    }

    /// Builds the task sequence.
    pub fn build_tasks(&self) -> Result<Vec<TaskDataset>> {
        match self.suite {
            SuiteKind::Blobs => make_blob_tasks(&BlobParams {
                tasks: self.task_count,
                input_dim: self.input_dim.unwrap_or(0),
                classes: self.classes_per_task.unwrap_or(0),
                train_samples: self.train_samples,
                test_samples: self.test_samples,
                seed: self.seed,
                similarity: self.blob_similarity.unwrap_or(0.0),
                separation: self.blob_separation.unwrap_or(6.0),
            }),
            SuiteKind::Permuted => {
                let (train, test) = self.load_base()?;
                let train =
                    stratified_subsample(&train, self.train_samples, seed::derive(self.seed, &[1]));
                let test =
                    stratified_subsample(&test, self.test_samples, seed::derive(self.seed, &[2]));
                make_permuted_tasks(&train, &test, self.task_count, self.seed)
            }
            SuiteKind::Split => {
                let (train, test) = self.load_base()?;
                let tasks = make_split_tasks(
                    &train,
                    &test,
                    self.classes_per_task.unwrap_or(0),
                    self.task_count,
                    self.seed,
                )?;
                Ok(tasks
                    .into_iter()
                    .map(|mut t| {
                        let id = t.task_id as u64;
                        let (s1, s2) = (
                            seed::derive(self.seed, &[id, 1]),
                            seed::derive(self.seed, &[id, 2]),
                        );
                        t.train = stratified_subsample(&t.train, self.train_samples, s1);
                        t.test = stratified_subsample(&t.test, self.test_samples, s2);
                        t
                    })
                    .collect())
            }
        }
    }

    fn load_base(&self) -> Result<(LabeledData, LabeledData)> {
        let dir = self
            .data_dir
            .as_deref()
            .ok_or_else(|| Error::Config("data_dir is required".into()))?;
        let csv_train = dir.join("train.csv");
        if csv_train.exists() {
            let train = read_csv(&csv_train)?;
            let test = read_csv(&dir.join("test.csv"))?;
            let classes = train.classes.max(test.classes);
            Ok((
                LabeledData { classes, ..train },
                LabeledData { classes, ..test },
            ))
        } else {
            load_mnist_dir(dir)
        }
    }
}
