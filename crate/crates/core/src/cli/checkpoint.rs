//! `checkpoint.lps`: magic, format version, JSON header, binary payload.
//!
//! The payload holds every matrix as little-endian `f64` and every support
//! as a bit-packed bitmap. The header records each tensor's offset and the
//! payload's SHA-256.

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::MetricRecord;
use crate::netcore::{BiasSet, Head, Matrix, NetworkSpec};
use crate::partition::{PartitionLedger, Support, TaskSlice};
use crate::trainer::{AccuracyMatrix, Engine};

pub const MAGIC: &[u8; 8] = b"LPSCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to evaluate committed tasks and resume a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub engine: Engine,
    pub matrix: AccuracyMatrix,
    pub history: Vec<MetricRecord>,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    Bits,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: Dtype,
    rows: usize,
    cols: usize,
    offset: usize,
    bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layer_dims: Vec<usize>,
    root_seed: u64,
    config_hash: String,
    biases_frozen: bool,
    tasks: Vec<usize>,
    matrix: AccuracyMatrix,
    history: Vec<MetricRecord>,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
    payload_sha256: String,
}

#[derive(Default)]
struct PayloadWriter {
    bytes: Vec<u8>,
    table: Vec<TensorEntry>,
}

impl PayloadWriter {
    fn matrix(&mut self, name: String, m: &Matrix) {
        let offset = self.bytes.len();
        for v in m.iter() {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.table.push(TensorEntry {
            name,
            dtype: Dtype::F64,
            rows: m.nrows(),
            cols: m.ncols(),
            offset,
            bytes: self.bytes.len() - offset,
        });
    }

    fn vector(&mut self, name: String, v: &Array1<f64>) {
        let m = v.view().insert_axis(ndarray::Axis(0)).to_owned();
        self.matrix(name, &m);
    }

    fn support(&mut self, name: String, s: &Support) {
        let offset = self.bytes.len();
        for chunk in s.bits().chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << i));
            self.bytes.push(byte);
        }
        let (rows, cols) = s.shape();
        self.table.push(TensorEntry {
            name,
            dtype: Dtype::Bits,
            rows,
            cols,
            offset,
            bytes: self.bytes.len() - offset,
        });
    }
}

struct PayloadReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    table: std::collections::HashMap<&'a str, &'a TensorEntry>,
}

impl PayloadReader<'_> {
    fn err(&self, reason: String) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    fn entry(&self, name: &str) -> Result<&TensorEntry> {
        let e = self
            .table
            .get(name)
            .ok_or_else(|| self.err(format!("missing tensor {name}")))?;
        if e.offset + e.bytes > self.bytes.len() {
            return Err(self.err(format!("tensor {name} runs past the payload")));
        }
        Ok(e)
    }

    fn matrix(&self, name: &str) -> Result<Matrix> {
        let e = self.entry(name)?;
        if !matches!(e.dtype, Dtype::F64) || e.bytes != e.rows * e.cols * 8 {
            return Err(self.err(format!("tensor {name} has the wrong layout")));
        }
        let data: Vec<f64> = self.bytes[e.offset..e.offset + e.bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Matrix::from_shape_vec((e.rows, e.cols), data).expect("size checked"))
    }

    fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let m = self.matrix(name)?;
        if m.nrows() != 1 {
            return Err(self.err(format!("tensor {name} is not a vector")));
        }
        Ok(m.row(0).to_owned())
    }

    fn support(&self, name: &str) -> Result<Support> {
        let e = self.entry(name)?;
        let n = e.rows * e.cols;
        if !matches!(e.dtype, Dtype::Bits) || e.bytes != n.div_ceil(8) {
            return Err(self.err(format!("tensor {name} has the wrong layout")));
        }
        let raw = &self.bytes[e.offset..e.offset + e.bytes];
        let bits = (0..n).map(|i| raw[i / 8] >> (i % 8) & 1 == 1).collect();
        Support::from_bits(e.rows, e.cols, bits)
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let engine = &ck.engine;
    let mut w = PayloadWriter::default();
    for (l, b) in engine.biases.layers.iter().enumerate() {
        w.vector(format!("biases[{l}]"), b);
    }
    for slice in engine.ledger.slices() {
        let t = slice.task_id;
        for (l, m) in slice.weights.iter().enumerate() {
            w.matrix(format!("task{t}.weights[{l}]"), m);
        }
        for (l, m) in slice.masks.iter().flatten().enumerate() {
            w.matrix(format!("task{t}.masks[{l}]"), m);
        }
        w.matrix(format!("task{t}.head.weights"), &slice.head.weights);
        w.vector(format!("task{t}.head.bias"), &slice.head.bias);
        for (l, s) in slice.weight_support.iter().enumerate() {
            w.support(format!("task{t}.weight_support[{l}]"), s);
        }
        for (l, s) in slice.mask_support.iter().enumerate() {
            w.support(format!("task{t}.mask_support[{l}]"), s);
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        layer_dims: engine.spec.layer_dims.clone(),
        root_seed: engine.seed,
        config_hash: ck.config_hash.clone(),
        biases_frozen: engine.biases.frozen,
        tasks: engine.ledger.slices().iter().map(|s| s.task_id).collect(),
        matrix: ck.matrix.clone(),
        history: ck.history.clone(),
        tensors: w.table,
        payload_bytes: w.bytes.len(),
        payload_sha256: hex::encode(Sha256::digest(&w.bytes)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + w.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.bytes);
    Ok(out)
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let err = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file (bad magic or truncated)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(err(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if header_len > body.len() {
        return Err(err(format!(
            "truncated header: {header_len} bytes declared, {} present",
            body.len()
        )));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| err(format!("corrupt header: {e}")))?;
    if header.format_version != version {
        return Err(err("header and preamble versions disagree".into()));
    }
    let payload = &body[header_len..];
    if payload.len() != header.payload_bytes {
        return Err(err(format!(
            "payload is {} bytes, header declares {} (truncated or padded)",
            payload.len(),
            header.payload_bytes
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(err("payload digest mismatch".into()));
    }

    let spec = NetworkSpec::new(header.layer_dims.clone())?;
    let reader = PayloadReader {
        path,
        bytes: payload,
        table: header
            .tensors
            .iter()
            .map(|e| (e.name.as_str(), e))
            .collect(),
    };
    let layers = spec.feature_layers();
    let biases = BiasSet {
        layers: (0..layers)
            .map(|l| reader.vector(&format!("biases[{l}]")))
            .collect::<Result<_>>()?,
        frozen: header.biases_frozen,
    };
    let mut ledger = PartitionLedger::new(&spec);
    for &t in &header.tasks {
        let all = |what: &str| -> Result<Vec<Matrix>> {
            (0..layers)
                .map(|l| reader.matrix(&format!("task{t}.{what}[{l}]")))
                .collect()
        };
        let supports = |what: &str| -> Result<Vec<Support>> {
            (0..layers)
                .map(|l| reader.support(&format!("task{t}.{what}[{l}]")))
                .collect()
        };
        let slice = TaskSlice {
            task_id: t,
            weights: all("weights")?,
            masks: if t > 1 { Some(all("masks")?) } else { None },
            head: Head {
                weights: reader.matrix(&format!("task{t}.head.weights"))?,
                bias: reader.vector(&format!("task{t}.head.bias"))?,
            },
            weight_support: supports("weight_support")?,
            mask_support: supports("mask_support")?,
        };
        ledger.commit_task(slice)?;
    }
    Ok(Checkpoint {
        engine: Engine {
            spec,
            biases,
            ledger,
            seed: header.root_seed,
        },
        matrix: header.matrix,
        history: header.history,
        config_hash: header.config_hash,
    })
}

/// Writes via a temporary file so a crash never leaves a half-written
/// checkpoint behind.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck)?;
    let tmp = path.with_extension("lps.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
