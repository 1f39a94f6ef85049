//! The `report` and `verify` verbs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cli::checkpoint::load_checkpoint;
use crate::cli::run::{ACCURACY_CSV, ARTIFACTS};
use crate::error::{Error, Result};
use crate::partition::InvariantReport;

/// Final per-task accuracies of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub accuracies: Vec<f64>,
}

impl ReportRow {
    pub fn average(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }
}

fn check_artifacts(dir: &Path) -> Result<()> {
    let missing: Vec<String> = ARTIFACTS
        .iter()
        .filter(|a| !dir.join(a).exists())
        .map(|a| a.to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            missing,
        })
    }
}

/// Last filled cell of every task row of an `accuracy.csv`.
pub fn parse_accuracy_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let mut fields = line.split(',');
        let Some(task) = fields.next() else { continue };
        if task == "avg" {
            continue;
        }
        let last = fields
            .rfind(|f| !f.is_empty())
            .ok_or_else(|| Error::Dataset(format!("task {task} has no accuracy")))?;
        out.push(
            last.parse()
                .map_err(|_| Error::Dataset(format!("bad accuracy {last:?}")))?,
        );
    }
    Ok(out)
}

fn read_row(dir: &Path, label: String) -> Result<ReportRow> {
    check_artifacts(dir)?;
    let path = dir.join(ACCURACY_CSV);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(ReportRow {
        label,
        accuracies: parse_accuracy_csv(&text)?,
    })
}

fn sweep_key(name: &str) -> (String, f64) {
    match name.rsplit_once('_') {
        Some((prefix, v)) => (prefix.to_string(), v.parse().unwrap_or(f64::NAN)),
        None => (name.to_string(), f64::NAN),
    }
}

/// Rows for a single run directory, or one row per sweep subdirectory.
pub fn collect(dir: &Path) -> Result<Vec<ReportRow>> {
    if dir.join(ACCURACY_CSV).exists() {
        return Ok(vec![read_row(dir, "run".into())?]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().join(ACCURACY_CSV).exists() {
            subdirs.push((
                entry.file_name().to_string_lossy().into_owned(),
                entry.path(),
            ));
        }
    }
    if subdirs.is_empty() {
        return Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            missing: ARTIFACTS.iter().map(|a| a.to_string()).collect(),
        });
    }
    subdirs.sort_by(|a, b| {
        let (pa, va) = sweep_key(&a.0);
        let (pb, vb) = sweep_key(&b.0);
        pa.cmp(&pb).then(va.total_cmp(&vb)).then(a.0.cmp(&b.0))
    });
    subdirs
        .into_iter()
        .map(|(name, path)| read_row(&path, name))
        .collect()
}

/// `config,task1..taskN,avg`.
pub fn summary_csv(rows: &[ReportRow]) -> String {
    let n = rows.iter().map(|r| r.accuracies.len()).max().unwrap_or(0);
    let mut out = String::from("config");
    for t in 1..=n {
        let _ = write!(out, ",task{t}");
    }
    out.push_str(",avg\n");
    for r in rows {
        out.push_str(&r.label);
        for t in 0..n {
            out.push(',');
            if let Some(a) = r.accuracies.get(t) {
                let _ = write!(out, "{a:.6}");
            }
        }
        let _ = writeln!(out, ",{:.6}", r.average());
    }
    out
}

/// Accuracies in percent, tasks then the average.
pub fn render_table(rows: &[ReportRow]) -> String {
    let n = rows.iter().map(|r| r.accuracies.len()).max().unwrap_or(0);
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}", "config");
    for t in 1..=n {
        let _ = write!(out, " {:>8}", format!("task {t}"));
    }
    out.push_str(&format!(" {:>8}\n", "Avg."));
    for r in rows {
        let _ = write!(out, "{:<width$}", r.label);
        for t in 0..n {
            match r.accuracies.get(t) {
                Some(a) => {
                    let _ = write!(out, " {:>8.2}", a * 100.0);
                }
                None => out.push_str(&format!(" {:>8}", "-")),
            }
        }
        let _ = writeln!(out, " {:>8.2}", r.average() * 100.0);
    }
    out
}

/// Renders the table and writes `summary.csv` next to the artifacts.
pub fn report(dir: &Path) -> Result<String> {
    let rows = collect(dir)?;
    let path = dir.join("summary.csv");
    std::fs::write(&path, summary_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(render_table(&rows))
}

/// Loads a checkpoint (which replays every commit) and audits the ledger.
pub fn verify(path: &Path) -> Result<InvariantReport> {
    let ck = load_checkpoint(path)?;
    Ok(ck.engine.ledger.verify_invariants())
}
