use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;

/// One dataset item: the configuration and what a camera saw of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub theta: Vec<f64>,
    /// Pixel coordinates of `p_1 … p_n`.
    pub kp2d: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
    pub camera_id: String,
}

impl SampleRecord {
    pub fn all_visible(&self) -> bool {
        self.visible.iter().all(|&v| v)
    }

    /// Checks lengths against the chain and that every number is finite.
    pub fn validate(&self, chain: &KinematicChain) -> std::result::Result<(), String> {
        let n = chain.dof();
        if self.theta.len() != n {
            return Err(format!("theta has {} entries, chain {} has {n} joints", self.theta.len(), chain.name()));
        }
        if self.kp2d.len() != n {
            return Err(format!("kp2d has {} entries, expected {n}", self.kp2d.len()));
        }
        if self.visible.len() != n {
            return Err(format!("visible has {} entries, expected {n}", self.visible.len()));
        }
        if self.theta.iter().chain(self.kp2d.iter().flatten()).any(|x| !x.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_records(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a record file, validating every line against `chain`. Blank lines
/// are skipped.
pub fn read_records(path: impl AsRef<Path>, chain: &KinematicChain) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |msg: String| Error::Record {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        record.validate(chain).map_err(record_err)?;
        out.push(record);
    }
    Ok(out)
}
