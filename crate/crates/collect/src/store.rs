//! Append-only log of sensor transitions.
//!
//! Only changes are kept, plus one baseline record the first time a
//! sensor is seen. A sensor's state at any second is therefore the value
//! of its latest record at or before that second.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransitionRecord {
    /// Epoch seconds.
    pub t: i64,
    pub sensor: String,
    pub on: bool,
}

impl TransitionRecord {
    pub fn new(sensor: impl Into<String>, t: i64, on: bool) -> Self {
        TransitionRecord {
            t,
            sensor: sensor.into(),
            on,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{sensor}: second {got} precedes last stored second {last}")]
    TimeRegression { sensor: String, last: i64, got: i64 },
    #[error("range starts at {from}, after its end {to}")]
    BadRange { from: i64, to: i64 },
    #[error("log {path}: line {line}: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct TransitionStore {
    records: Vec<TransitionRecord>,
    last: HashMap<String, (i64, bool)>,
    log: Option<(PathBuf, File)>,
}

impl TransitionStore {
    pub fn in_memory() -> Self {
        TransitionStore {
            records: Vec::new(),
            last: HashMap::new(),
            log: None,
        }
    }

    /// Opens (or creates) a log file and replays it into the index.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut store = Self::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = parse_log_line(&line).ok_or_else(|| StoreError::Corrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: format!("unparseable {line:?}"),
                })?;
                store.apply(rec)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        store.log = Some((path.to_path_buf(), file));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_state(&self, sensor: &str) -> Option<(i64, bool)> {
        self.last.get(sensor).copied()
    }

    /// Checks ordering and, for a change or a first sighting, appends.
    fn apply(&mut self, rec: TransitionRecord) -> Result<bool, StoreError> {
        if let Some(&(last_t, last_on)) = self.last.get(&rec.sensor) {
            if rec.t < last_t || (rec.t == last_t && rec.on != last_on) {
                return Err(StoreError::TimeRegression {
                    sensor: rec.sensor,
                    last: last_t,
                    got: rec.t,
                });
            }
            if rec.on == last_on {
                return Ok(false);
            }
        }
        self.last.insert(rec.sensor.clone(), (rec.t, rec.on));
        self.records.push(rec);
        Ok(true)
    }

    /// Stores `on` for `sensor` at `second` if it differs from the last
    /// stored state. Returns whether a record was written.
    pub fn record_transition(
        &mut self,
        sensor: &str,
        second: i64,
        on: bool,
    ) -> Result<bool, StoreError> {
        let rec = TransitionRecord::new(sensor, second, on);
        let line = log_line(&rec);
        let stored = self.apply(rec)?;
        if stored {
            if let Some((_, f)) = &mut self.log {
                writeln!(f, "{line}")?;
                f.flush()?;
            }
        }
        Ok(stored)
    }

    /// Records with `from <= t <= to`, ordered by `(t, sensor)`.
    pub fn query_range(&self, from: i64, to: i64) -> Result<Vec<TransitionRecord>, StoreError> {
        if from > to {
            return Err(StoreError::BadRange { from, to });
        }
        let mut out: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.t >= from && r.t <= to)
            .cloned()
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }
}

fn log_line(r: &TransitionRecord) -> String {
    format!("{}\t{}\t{}", r.t, r.sensor, u8::from(r.on))
}

fn parse_log_line(line: &str) -> Option<TransitionRecord> {
    let mut it = line.split('\t');
    let t = it.next()?.parse().ok()?;
    let sensor = it.next()?;
    let on = match it.next()? {
        "1" => true,
        "0" => false,
        _ => return None,
    };
    if it.next().is_some() || sensor.is_empty() {
        return None;
    }
    Some(TransitionRecord::new(sensor, t, on))
}

/// State of every sensor at `t` reconstructed from a record list.
pub fn state_at(records: &[TransitionRecord], t: i64) -> HashMap<String, bool> {
    let mut sorted: Vec<&TransitionRecord> = records.iter().filter(|r| r.t <= t).collect();
    sorted.sort();
    sorted
        .into_iter()
        .map(|r| (r.sensor.clone(), r.on))
        .collect()
}
