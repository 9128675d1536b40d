//! JSONL import and export of environment datasets.
//!
//! One record per line, `{"id", "task", "observation", "ground_truth"}`,
//! training samples first, then evaluation samples.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vrft_core::envs::Environment;
use vrft_core::reward::GroundTruth;
use vrft_core::structured_output::TaskMode;

use crate::scoring::{from_json_str, FieldError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub task: TaskMode,
    pub observation: Vec<f64>,
    pub ground_truth: GroundTruth,
}

pub fn records<E: Environment + ?Sized>(env: &E) -> impl Iterator<Item = DatasetRecord> + '_ {
    env.train_samples()
        .iter()
        .chain(env.eval_samples())
        .map(|s| DatasetRecord {
            id: s.id.clone(),
            task: env.mode(),
            observation: s.observation.clone(),
            ground_truth: s.truth.clone(),
        })
}

pub fn export_dataset<E: Environment + ?Sized, W: Write>(env: &E, mut out: W) -> std::io::Result<()> {
    for r in records(env) {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Line { line: usize, source: FieldError },
}

/// Reads a dataset back, checking that each ground truth fits its task.
pub fn import_dataset<R: BufRead>(input: R) -> Result<Vec<DatasetRecord>, ImportError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |source| ImportError::Line { line: i + 1, source };
        let r: DatasetRecord = from_json_str(&line, "").map_err(at)?;
        r.ground_truth
            .check(r.task)
            .map_err(|e| at(FieldError::new("ground_truth", e)))?;
        out.push(r);
    }
    Ok(out)
}

/// SHA-256 of the exported dataset, hex encoded. Arms that share an
/// environment share this hash.
pub fn dataset_hash<E: Environment + ?Sized>(env: &E) -> String {
    let mut h = Sha256::new();
    export_dataset(env, HashWriter(&mut h)).expect("hashing cannot fail");
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct HashWriter<'a>(&'a mut Sha256);

impl Write for HashWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
