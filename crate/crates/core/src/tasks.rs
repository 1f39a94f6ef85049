//! Task-sequence construction: permuted-pixel tasks, class-split tasks and
//! synthetic Gaussian-blob tasks, plus IDX/CSV readers and deterministic
//! minibatching.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Matrix;
use crate::seed::{self, stream};

/// Inputs (one row per sample) with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledData {
    pub fn new(inputs: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape("labels", inputs.nrows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// One task of a suite. Labels are task-local `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub train: LabeledData,
    pub test: LabeledData,
    pub classes: usize,
    /// Pixel map for permuted tasks: column `j` reads source column `perm[j]`.
    pub permutation: Option<Vec<usize>>,
    /// Source classes of a split task, in local label order.
    pub source_classes: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    Permuted,
    Split,
    Blobs,
}

// ---------------------------------------------------------------- readers

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(BufReader::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    open_maybe_gz(path)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset(format!("{}: truncated IDX header", path.display())))
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an IDX image file (optionally gzipped) into an `N x (rows*cols)`
/// matrix scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Matrix> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: bad image magic {magic:#010x}",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let body = &bytes[16..];
    let pixels = n * rows * cols;
    if body.len() != pixels {
        return Err(Error::Dataset(format!(
            "{}: expected {pixels} pixel bytes, found {}",
            path.display(),
            body.len()
        )));
    }
    Ok(Array2::from_shape_vec(
        (n, rows * cols),
        body.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("length checked"))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: bad label magic {magic:#010x}",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Dataset(format!(
            "{}: expected {n} labels, found {}",
            path.display(),
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// CSV with one sample per line: label, then raw byte features (0..=255).
pub fn read_csv(path: &Path) -> Result<LabeledData> {
    let reader = BufReader::new(open_maybe_gz(path)?);
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Ok(label) = fields[0].parse::<usize>() else {
            if lineno == 0 {
                continue; // header
            }
            return Err(Error::Dataset(format!(
                "{}:{}: bad label {:?}",
                path.display(),
                lineno + 1,
                fields[0]
            )));
        };
        let feats = &fields[1..];
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::Dataset(format!(
                    "{}:{}: {} features, expected {w}",
                    path.display(),
                    lineno + 1,
                    feats.len()
                )))
            }
            _ => {}
        }
        for f in feats {
            let v: f64 = f.parse().map_err(|_| {
                Error::Dataset(format!(
                    "{}:{}: bad feature {f:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::Dataset(format!(
                    "{}:{}: feature {v} outside 0..=255",
                    path.display(),
                    lineno + 1
                )));
            }
            rows.push(v / 255.0);
        }
        labels.push(label);
    }
    let width = width.ok_or_else(|| Error::Dataset(format!("{}: no rows", path.display())))?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let inputs = Array2::from_shape_vec((labels.len(), width), rows).expect("rows counted");
    LabeledData::new(inputs, labels, classes)
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(candidate);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Dataset(format!(
        "{}: missing {stem}[.gz]",
        dir.display()
    )))
}

/// Loads the standard four MNIST IDX files from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledData, LabeledData)> {
    let load = |prefix: &str| -> Result<LabeledData> {
        let images = read_idx_images(&find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
        let labels = read_idx_labels(&find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        LabeledData::new(images, labels, classes)
    };
    Ok((load("train")?, load("t10k")?))
}

// ------------------------------------------------------------- generators

/// Seeded class-stratified draw of `cap` samples (all of them if `cap`
/// exceeds the dataset).
pub fn stratified_subsample(data: &LabeledData, cap: usize, seed: u64) -> LabeledData {
    if cap >= data.len() {
        return data.clone();
    }
    let mut rng = seed::rng(seed, &[stream::SUBSAMPLE]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let n = data.len() as f64;
    let exact: Vec<f64> = by_class
        .iter()
        .map(|c| cap as f64 * c.len() as f64 / n)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = cap - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..data.classes).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    let mut picked = Vec::with_capacity(cap);
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        picked.extend_from_slice(&idx[..quota[c]]);
    }
    picked.sort_unstable();
    data.select(&picked)
}

/// Pixel map of permuted task `task_id`; the first task is the identity.
pub fn task_permutation(features: usize, task_id: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..features).collect();
    if task_id > 1 {
        perm.shuffle(&mut seed::rng(seed, &[stream::PERMUTATION, task_id as u64]));
    }
    perm
}

pub fn apply_permutation(inputs: &Matrix, perm: &[usize]) -> Matrix {
    inputs.select(Axis(1), perm)
}

/// `n` tasks sharing the base images, each under its own pixel permutation.
pub fn make_permuted_tasks(
    train: &LabeledData,
    test: &LabeledData,
    n: usize,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    if n < 1 {
        return Err(Error::Dataset("need at least one task".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::shape("test features", train.dim(), test.dim()));
    }
    let classes = train.classes.max(test.classes);
    Ok((1..=n)
        .map(|t| {
            let perm = task_permutation(train.dim(), t, seed);
            TaskDataset {
                task_id: t,
                train: LabeledData {
                    inputs: apply_permutation(&train.inputs, &perm),
                    labels: train.labels.clone(),
                    classes,
                },
                test: LabeledData {
                    inputs: apply_permutation(&test.inputs, &perm),
                    labels: test.labels.clone(),
                    classes,
                },
                classes,
                permutation: Some(perm),
                source_classes: None,
            }
        })
        .collect())
}

fn restrict_classes(data: &LabeledData, group: &[usize]) -> LabeledData {
    let mut local = vec![usize::MAX; data.classes];
    for (k, &c) in group.iter().enumerate() {
        local[c] = k;
    }
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| local[data.labels[i]] != usize::MAX)
        .collect();
    LabeledData {
        inputs: data.inputs.select(Axis(0), &idx),
        labels: idx.iter().map(|&i| local[data.labels[i]]).collect(),
        classes: group.len(),
    }
}

/// Randomly partitions the classes into `n` disjoint groups of
/// `classes_per_task`, relabelled `0..classes_per_task` in ascending source
/// order.
pub fn make_split_tasks(
    train: &LabeledData,
    test: &LabeledData,
    classes_per_task: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    let total = train.classes.max(test.classes);
    if n < 1 || classes_per_task < 1 {
        return Err(Error::Dataset(
            "need at least one task and one class".into(),
        ));
    }
    if n * classes_per_task > total {
        return Err(Error::Dataset(format!(
            "{n} tasks x {classes_per_task} classes exceeds {total} available classes"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    if n > 1 || classes_per_task < total {
        order.shuffle(&mut seed::rng(seed, &[stream::DATA, 0]));
    }
    Ok(order
        .chunks(classes_per_task)
        .take(n)
        .enumerate()
        .map(|(i, chunk)| {
            let mut group = chunk.to_vec();
            group.sort_unstable();
            TaskDataset {
                task_id: i + 1,
                train: restrict_classes(train, &group),
                test: restrict_classes(test, &group),
                classes: classes_per_task,
                permutation: None,
                source_classes: Some(group),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub tasks: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
    /// 1.0: every task uses the same class centers; 0.0: independent centers.
    pub similarity: f64,
    /// Distance between any two class centers, in noise standard deviations.
    pub separation: f64,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Gram-Schmidt on the rows.
fn orthonormal_rows(mut m: Matrix) -> Result<Matrix> {
    for i in 0..m.nrows() {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let rj = m.row(j).to_owned();
            m.row_mut(i).scaled_add(-proj, &rj);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm < 1e-9 {
            return Err(Error::Dataset("degenerate blob centers".into()));
        }
        m.row_mut(i).mapv_inplace(|v| v / norm);
    }
    Ok(m)
}

/// Gaussian class clusters with mutually equidistant centers; `similarity`
/// blends each task's center layout between a shared one and its own.
pub fn make_blob_tasks(p: &BlobParams) -> Result<Vec<TaskDataset>> {
    if p.tasks < 1 || p.classes < 2 || p.train_samples == 0 || p.test_samples == 0 {
        return Err(Error::Dataset(format!("degenerate blob sizes {p:?}")));
    }
    if p.classes > p.input_dim {
        return Err(Error::Dataset(format!(
            "{} classes need input_dim >= classes, got {}",
            p.classes, p.input_dim
        )));
    }
    if !(0.0..=1.0).contains(&p.similarity) || p.separation.is_nan() || p.separation <= 0.0 {
        return Err(Error::Dataset(format!(
            "similarity must be in [0, 1] and separation positive, got {} / {}",
            p.similarity, p.separation
        )));
    }
    let shared = gaussian_matrix(
        p.classes,
        p.input_dim,
        &mut seed::rng(p.seed, &[stream::DATA, 0]),
    );
    let radius = p.separation / std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(p.tasks);
    for t in 1..=p.tasks {
        let own = gaussian_matrix(
            p.classes,
            p.input_dim,
            &mut seed::rng(p.seed, &[stream::DATA, t as u64, 0]),
        );
        let blend = if p.similarity == 1.0 {
            shared.clone()
        } else {
            &shared * p.similarity + &own * (1.0 - p.similarity)
        };
        let centers = orthonormal_rows(blend)? * radius;
        let sample = |n: usize, split: u64| -> LabeledData {
            let mut rng = seed::rng(p.seed, &[stream::DATA, t as u64, split]);
            let labels: Vec<usize> = (0..n).map(|i| i % p.classes).collect();
            let mut inputs = gaussian_matrix(n, p.input_dim, &mut rng);
            for (mut row, &y) in inputs.axis_iter_mut(Axis(0)).zip(&labels) {
                row += &centers.row(y);
            }
            LabeledData {
                inputs,
                labels,
                classes: p.classes,
            }
        };
        out.push(TaskDataset {
            task_id: t,
            train: sample(p.train_samples, 1),
            test: sample(p.test_samples, 2),
            classes: p.classes,
            permutation: None,
            source_classes: None,
        });
    }
    Ok(out)
}

// --------------------------------------------------------------- batching

/// Minibatch index lists for one epoch: a seeded shuffle keyed by
/// `(seed, epoch)`, final partial batch included.
pub fn batch_indices(
    samples: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if samples == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut seed::rng(seed, &[epoch]));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Materialized minibatches of `data` for one epoch.
pub fn batches(
    data: &LabeledData,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = (Matrix, Vec<usize>)> + '_> {
    let plan = batch_indices(data.len(), batch_size, seed, epoch)?;
    Ok(plan.into_iter().map(move |idx| {
        let x = data.inputs.select(Axis(0), &idx);
        let y = idx.iter().map(|&i| data.labels[i]).collect();
        (x, y)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toy(n: usize, classes: usize, dim: usize) -> LabeledData {
        let inputs = Array2::from_shape_fn((n, dim), |(i, j)| ((i * dim + j) % 256) as f64 / 255.0);
        let labels = (0..n).map(|i| i % classes).collect();
        LabeledData::new(inputs, labels, classes).unwrap()
    }

    #[test]
    fn batches_cover_samples_with_partial_tail() {
        let plan = batch_indices(10, 4, 1, 0).unwrap();
        let sizes: Vec<usize> = plan.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let all: BTreeSet<usize> = plan.iter().flatten().copied().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(plan, batch_indices(10, 4, 1, 0).unwrap());
        assert_ne!(plan, batch_indices(10, 4, 1, 1).unwrap());
        assert!(batch_indices(0, 4, 1, 0).is_err());
        assert!(batch_indices(4, 0, 1, 0).is_err());
    }

    #[test]
    fn permuted_first_task_is_identity() {
        let train = toy(20, 4, 9);
        let test = toy(6, 4, 9);
        let tasks = make_permuted_tasks(&train, &test, 3, 5).unwrap();
        assert_eq!(tasks[0].train.inputs, train.inputs);
        assert_eq!(tasks[0].test.inputs, test.inputs);
        for t in &tasks {
            let perm = t.permutation.as_ref().unwrap();
            let set: BTreeSet<usize> = perm.iter().copied().collect();
            assert_eq!(set.len(), 9, "bijection");
            assert_eq!(apply_permutation(&train.inputs, perm), t.train.inputs);
            assert_eq!(t.train.labels, train.labels);
        }
        assert_ne!(tasks[1].permutation, tasks[2].permutation);
        assert!(make_permuted_tasks(&train, &test, 0, 5).is_err());
    }

    #[test]
    fn split_tasks_partition_classes() {
        let train = toy(100, 10, 3);
        let test = toy(30, 10, 3);
        let tasks = make_split_tasks(&train, &test, 2, 5, 9).unwrap();
        let mut seen = BTreeSet::new();
        for t in &tasks {
            let group = t.source_classes.as_ref().unwrap();
            for &c in group {
                assert!(seen.insert(c), "class {c} used twice");
            }
            assert!(t.train.labels.iter().all(|&y| y < 2));
            assert_eq!(t.train.len(), 20);
        }
        assert_eq!(seen.len(), 10);
        assert!(make_split_tasks(&train, &test, 3, 4, 9).is_err());

        let whole = make_split_tasks(&train, &test, 10, 1, 9).unwrap();
        assert_eq!(whole[0].train, train);
    }

    #[test]
    fn shared_layout_gives_identical_centers() {
        let p = BlobParams {
            tasks: 3,
            input_dim: 8,
            classes: 4,
            train_samples: 400,
            test_samples: 40,
            seed: 3,
            similarity: 1.0,
            separation: 6.0,
        };
        let tasks = make_blob_tasks(&p).unwrap();
        let means = |d: &LabeledData| {
            let mut m = Matrix::zeros((4, 8));
            for (row, &y) in d.inputs.axis_iter(Axis(0)).zip(&d.labels) {
                let mut r = m.row_mut(y);
                r += &row;
            }
            m / 100.0
        };
        let a = means(&tasks[0].train);
        let b = means(&tasks[2].train);
        let diff = (&a - &b).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff < 0.5, "{diff}");
        assert_ne!(tasks[0].train.inputs, tasks[1].train.inputs);
    }

    #[test]
    fn blob_generation_is_pure() {
        let p = BlobParams {
            tasks: 2,
            input_dim: 6,
            classes: 3,
            train_samples: 30,
            test_samples: 9,
            seed: 77,
            similarity: 0.3,
            separation: 6.0,
        };
        assert_eq!(make_blob_tasks(&p).unwrap(), make_blob_tasks(&p).unwrap());
        let bad = BlobParams { classes: 7, ..p };
        assert!(make_blob_tasks(&bad).is_err());
    }

    #[test]
    fn stratified_subsample_keeps_class_balance() {
        let data = toy(1000, 10, 2);
        let sub = stratified_subsample(&data, 100, 4);
        assert_eq!(sub.len(), 100);
        for c in 0..10 {
            assert_eq!(sub.labels.iter().filter(|&&y| y == c).count(), 10);
        }
        assert_eq!(sub, stratified_subsample(&data, 100, 4));
    }

    #[test]
    fn idx_roundtrip_through_gzip() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4]);
        let path = dir.path().join("train-images-idx3-ubyte.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Default::default());
        enc.write_all(&img).unwrap();
        enc.finish().unwrap();
        let m = read_idx_images(&path).unwrap();
        assert_eq!(m.dim(), (2, 4));
        assert_eq!(m[[0, 1]], 1.0);
        assert_eq!(m[[0, 2]], 0.2);

        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[7, 3]);
        let lpath = dir.path().join("labels");
        std::fs::write(&lpath, &lab).unwrap();
        assert_eq!(read_idx_labels(&lpath).unwrap(), vec![7, 3]);

        std::fs::write(&lpath, &lab[..9]).unwrap();
        assert!(read_idx_labels(&lpath).is_err());
        assert!(read_idx_images(&lpath).is_err(), "wrong magic");
    }

    #[test]
    fn csv_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "label,p0,p1\n1,0,255\n0,51,0\n").unwrap();
        let d = read_csv(&path).unwrap();
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.inputs[[0, 1]], 1.0);
        assert_eq!(d.classes, 2);
        std::fs::write(&path, "1,0,256\n").unwrap();
        assert!(read_csv(&path).is_err());
    }
}
