use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::engine::{Engine, Snapshot};
use crate::error::CliError;
use crate::tradelog::{read_log, TradeRecord};

/// Trade log next to a snapshot: `market.json` -> `market.log.jsonl`.
pub fn log_path(state: &Path) -> PathBuf {
    state.with_extension("log.jsonl")
}

pub fn lock_path(state: &Path) -> PathBuf {
    state.with_extension("lock")
}

/// Advisory writer lock, released on drop.
pub struct StateLock {
    path: PathBuf,
}

impl StateLock {
    pub fn acquire(state: &Path) -> anyhow::Result<Self> {
        let path = lock_path(state);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(StateLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked {
                path: state.display().to_string(),
                lock: path.display().to_string(),
            }
            .into()),
            Err(e) => Err(e).with_context(|| format!("cannot create {}", path.display())),
        }
    }
}

impl Drop for StateLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes the snapshot to a temporary file and renames it into place.
pub fn save(state: &Path, snap: &Snapshot) -> anyhow::Result<()> {
    let tmp = state.with_extension("tmp");
    let mut f =
        fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
    serde_json::to_writer_pretty(&mut f, snap)?;
    f.write_all(b"\n")?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, state).with_context(|| format!("cannot replace {}", state.display()))?;
    Ok(())
}

pub fn load_snapshot(state: &Path) -> anyhow::Result<Snapshot> {
    let text =
        fs::read_to_string(state).with_context(|| format!("cannot read {}", state.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", state.display()))
}

/// Loads the market and rolls it forward over any logged trades the snapshot
/// missed (a crash between appending to the log and renaming the snapshot).
/// Returns the engine and the sequence number it reflects.
pub fn load(state: &Path) -> anyhow::Result<(Engine, u64)> {
    let snap = load_snapshot(state)?;
    let mut engine = Engine::from_snapshot(&snap)?;
    let log = log_path(state);
    let records = read_log(&log)?;
    if (records.len() as u64) < snap.last_seq {
        return Err(CliError::LogCorrupt {
            path: log.display().to_string(),
            reason: format!(
                "snapshot reflects seq {} but the log ends at {}",
                snap.last_seq,
                records.len()
            ),
        }
        .into());
    }
    let mut seq = snap.last_seq;
    for rec in &records[snap.last_seq as usize..] {
        engine.buy(&rec.interval()?, rec.shares)?;
        seq = rec.seq;
    }
    Ok((engine, seq))
}

/// Replays `records` into `engine`, returning each trade's recomputed cost.
pub fn replay(engine: &mut Engine, records: &[TradeRecord]) -> anyhow::Result<Vec<f64>> {
    records
        .iter()
        .map(|rec| engine.buy(&rec.interval()?, rec.shares))
        .collect()
}
