#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lps_core::cli::ExperimentConfig;
use lps_core::netcore::{init_feature_weights, init_head, Matrix, NetworkSpec, ParamSet};
use lps_core::partition::Support;
use lps_core::projection::{
    oracle_project, project_irregular, project_mask_binary, project_structured, GroupAxis,
    OracleKind,
};
use lps_core::tasks::SuiteKind;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn distance(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Random values, sometimes coarsely quantized so ties are common.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let quantize = rng.random_bool(0.3);
    Matrix::from_shape_simple_fn((rows, cols), || {
        let v = rng.random_range(lo..hi);
        if quantize {
            (v * 2.0).round() / 2.0
        } else {
            v
        }
    })
}

/// Random eligible set with at most `limit` coordinates.
pub fn random_support(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: usize) -> Support {
    let p = rng.random_range(0.2..1.0);
    let mut s = Support::empty(rows, cols);
    for i in 0..rows * cols {
        if s.len() < limit && rng.random_bool(p) {
            s.insert_flat(i);
        }
    }
    s
}

/// Random eligible groups whose coordinate count stays within `limit`.
pub fn random_groups(
    rng: &mut ChaCha8Rng,
    count: usize,
    group_size: usize,
    limit: usize,
) -> Vec<bool> {
    let mut used = 0;
    (0..count)
        .map(|_| {
            let take = used + group_size <= limit && rng.random_bool(0.7);
            if take {
                used += group_size;
            }
            take
        })
        .collect()
}

/// Largest gap between the fast projections' distance to `z` and the
/// oracle's, per kind (irregular, column, filter, mask), over `instances`
/// random problems with at most 12 eligible coordinates.
pub fn oracle_gaps(seed: u64, instances: usize) -> [f64; 4] {
    let mut r = rng(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..instances {
        let rows = r.random_range(1..=4);
        let cols = r.random_range(1..=4);
        let z = random_matrix(&mut r, rows, cols, -2.0, 2.0);

        let e = random_support(&mut r, rows, cols, 12);
        let a = r.random_range(0..=e.len());
        let fast = project_irregular(&z, a, &e).unwrap().values;
        let best = oracle_project(&z, a, OracleKind::Irregular(&e)).unwrap();
        worst[0] = worst[0].max((distance(&fast, &z) - distance(&best, &z)).abs());

        let g = random_groups(&mut r, cols, rows, 12);
        let a = r.random_range(0..=g.iter().filter(|&&x| x).count());
        let fast = project_structured(&z, a, GroupAxis::Column, &g)
            .unwrap()
            .values;
        let best = oracle_project(&z, a, OracleKind::Column(&g)).unwrap();
        worst[1] = worst[1].max((distance(&fast, &z) - distance(&best, &z)).abs());

        let g = random_groups(&mut r, rows, cols, 12);
        let a = r.random_range(0..=g.iter().filter(|&&x| x).count());
        let fast = project_structured(&z, a, GroupAxis::Filter, &g)
            .unwrap()
            .values;
        let best = oracle_project(&z, a, OracleKind::Filter(&g)).unwrap();
        worst[2] = worst[2].max((distance(&fast, &z) - distance(&best, &z)).abs());

        let m = random_matrix(&mut r, rows, cols, -0.5, 1.5);
        let past = random_support(&mut r, rows, cols, 12);
        let b = r.random_range(0..=past.len());
        let fast = project_mask_binary(&m, b, &past).unwrap().values;
        let best = oracle_project(&m, b, OracleKind::Mask(&past)).unwrap();
        worst[3] = worst[3].max((distance(&fast, &m) - distance(&best, &m)).abs());
    }
    worst
}

/// Random small task: parameters (masks optional), a prior, and a batch.
pub fn random_task(
    seed: u64,
    dims: &[usize],
    masked: bool,
) -> (ParamSet, Vec<Matrix>, Matrix, Vec<usize>) {
    let mut r = rng(seed);
    let spec = NetworkSpec::new(dims.to_vec()).unwrap();
    let weights = init_feature_weights(&spec, &mut r);
    let prior = init_feature_weights(&spec, &mut r);
    let masks = if masked {
        spec.feature_shapes()
            .iter()
            .map(|&s| Matrix::from_shape_simple_fn(s, || r.random_range(0.0..1.5)))
            .collect()
    } else {
        Vec::new()
    };
    let mut head = init_head(&spec, &mut r);
    head.bias.mapv_inplace(|_| r.random_range(-0.2..0.2));
    let biases = spec
        .feature_shapes()
        .iter()
        .map(|&(_, q)| Array1::from_shape_simple_fn(q, || r.random_range(-0.2..0.2)))
        .collect();
    let n = 8;
    let x = Matrix::from_shape_simple_fn((n, dims[0]), || r.random_range(-1.0..1.0));
    let classes = *dims.last().unwrap();
    let y = (0..n).map(|i| i % classes).collect();
    (
        ParamSet {
            weights,
            masks,
            biases,
            head,
        },
        prior,
        x,
        y,
    )
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The 3-task blob suite used throughout the tests.
pub fn blob_config(similarity: f64, output_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        suite: SuiteKind::Blobs,
        task_count: 3,
        classes_per_task: Some(5),
        input_dim: Some(20),
        train_samples: 1000,
        test_samples: 500,
        blob_similarity: Some(similarity),
        blob_separation: Some(6.0),
        data_dir: None,
        hidden_layers: vec![64, 64],
        pruning: lps_core::projection::PruningKind::Irregular,
        alpha_percent: 10.0,
        beta_percent: 90.0,
        capacity_percent: None,
        prune_last_task: true,
        warmup_epochs: 5,
        admm_epochs: 15,
        final_epochs: 5,
        learning_rate: 1e-3,
        batch_size: 32,
        penalty_initial: 1e-3,
        penalty_factor: 10.0,
        penalty_intervals: 3,
        seed: 2024,
        output_dir: output_dir.to_path_buf(),
        sweep_beta: None,
        sweep_capacity: None,
    }
}
