use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::Context;
use interval_markets::{Dyadic, Interval};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One line of the JSONL trade log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub seq: u64,
    pub op: String,
    /// Endpoints as `"num/2^prec"`.
    pub lo: String,
    pub hi: String,
    pub shares: f64,
    pub cost: f64,
    pub engine: String,
}

impl TradeRecord {
    pub fn new(seq: u64, interval: &Interval, shares: f64, cost: f64, engine: &str) -> Self {
        TradeRecord {
            seq,
            op: "buy".into(),
            lo: interval.lo().to_string(),
            hi: interval.hi().to_string(),
            shares,
            cost,
            engine: engine.into(),
        }
    }

    pub fn interval(&self) -> anyhow::Result<Interval> {
        Ok(Interval::new(
            Dyadic::parse(&self.lo)?,
            Dyadic::parse(&self.hi)?,
        )?)
    }
}

/// Reads a log, checking that sequence numbers run 1, 2, 3, ... A missing
/// file reads as an empty log.
pub fn read_log(path: &Path) -> anyhow::Result<Vec<TradeRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).with_context(|| format!("cannot open {}", path.display())),
    };
    let corrupt = |reason: String| CliError::LogCorrupt {
        path: path.display().to_string(),
        reason,
    };
    let mut out: Vec<TradeRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TradeRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
        let expected = out.len() as u64 + 1;
        if rec.seq != expected {
            return Err(corrupt(format!(
                "missing seq {expected} (found {} on line {})",
                rec.seq,
                i + 1
            ))
            .into());
        }
        if rec.op != "buy" {
            return Err(corrupt(format!("line {}: unknown op `{}`", i + 1, rec.op)).into());
        }
        rec.interval()
            .map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Appends one record and flushes it to disk.
pub fn append(path: &Path, rec: &TradeRecord) -> anyhow::Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut line = serde_json::to_string(rec)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}
