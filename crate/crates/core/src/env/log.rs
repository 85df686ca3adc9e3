use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::state::StepEvents;
use super::types::ContactKind;
use crate::error::{Error, Result};

/// Append-only CSV event log: `tick,event_type,fields`.
///
/// `fields` is a `;`-separated list of `key=value` pairs so every event type
/// fits the same three columns.
pub struct EventLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EventLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let existed = path.exists() && std::fs::metadata(&path).map(|m| m.len() > 0).unwrap_or(false);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        if !existed {
            writeln!(out, "tick,event_type,fields").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { path, out })
    }

    pub fn record(&mut self, tick: u64, event_type: &str, fields: &str) -> Result<()> {
        writeln!(self.out, "{tick},{event_type},{fields}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn record_step(&mut self, events: &StepEvents) -> Result<()> {
        for r in &events.rewards {
            self.record(r.tick, "reward", &format!("amount={}", r.amount))?;
        }
        for c in &events.contacts {
            let kind = match c.kind {
                ContactKind::Hit => "contact",
                ContactKind::Miss => "miss",
            };
            self.record(
                c.tick,
                kind,
                &format!(
                    "controllable={};other={};dx={};dy={}",
                    c.controllable_id.0, c.other_id.0, c.offset.x, c.offset.y
                ),
            )?;
        }
        for &t in &events.serves {
            self.record(t, "serve", "")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for EventLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}
