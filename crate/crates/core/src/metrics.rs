//! Structured training records.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Admm,
    Final,
}

/// Primal residuals of one layer after one ADMM iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub task: usize,
    pub iteration: usize,
    pub layer: usize,
    pub rho: f64,
    pub weight_residual: f64,
    pub weight_norm: f64,
    pub mask_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricRecord {
    Epoch {
        task: usize,
        phase: Phase,
        epoch: usize,
        loss: f64,
        train_accuracy: f64,
    },
    Residual(ResidualRecord),
    TaskEval {
        after_task: usize,
        task: usize,
        accuracy: f64,
        samples: usize,
        digest: String,
    },
}

pub trait MetricsSink {
    fn record(&mut self, record: MetricRecord);
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: MetricRecord) {}
}

impl MetricsSink for Vec<MetricRecord> {
    fn record(&mut self, record: MetricRecord) {
        self.push(record);
    }
}
