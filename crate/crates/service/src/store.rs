//! Append-only JSON-lines run log with an in-memory index.
//!
//! Each line is either `{"kind":"started","run":{...}}`, written when a run
//! is launched (status `running`), or `{"kind":"record","run":{...}}`, the
//! terminal record. Replaying the log on open rebuilds the index; a run that
//! was started but never finished is closed as faulted.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sievebot_core::protocol::{RunRecord, RunStatus};
use thiserror::Error;

pub const RESTART_FAULT: &str = "service restarted";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run store line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("run {0} already exists")]
    Duplicate(u64),
    #[error("run {0} is unknown")]
    Unknown(u64),
    #[error("run {0} is already terminal")]
    Immutable(u64),
    #[error("run {0} record is not terminal")]
    NotTerminal(u64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "run", rename_all = "snake_case")]
enum Entry {
    Started(RunRecord),
    Record(RunRecord),
}

/// What replaying an existing log found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Replay {
    pub records: usize,
    /// Runs closed as faulted because the log ended while they were running.
    pub orphans: Vec<u64>,
    /// A partial final line (interrupted write) was dropped.
    pub torn_tail: bool,
}

#[derive(Debug)]
pub struct RunStore {
    path: Option<PathBuf>,
    file: Option<File>,
    runs: BTreeMap<u64, RunRecord>,
    next_id: u64,
}

impl RunStore {
    /// A store that keeps records in memory only.
    pub fn in_memory() -> Self {
        RunStore {
            path: None,
            file: None,
            runs: BTreeMap::new(),
            next_id: 1,
        }
    }

    /// Opens (or creates) the log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Replay), StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;

        let (runs, mut replay, complete) = parse(&text)?;
        if replay.torn_tail {
            // the last write never reached its newline
            file.set_len(complete as u64)?;
            file.seek(SeekFrom::End(0))?;
        }
        let next_id = runs.keys().next_back().map_or(1, |k| k + 1);
        let mut store = RunStore {
            path: Some(path),
            file: Some(file),
            runs,
            next_id,
        };
        let orphans: Vec<u64> = store
            .runs
            .values()
            .filter(|r| !r.status.is_terminal())
            .map(|r| r.run_id)
            .collect();
        for id in &orphans {
            let mut r = store.runs[id].clone();
            r.status = RunStatus::Faulted(RESTART_FAULT.into());
            store.finish(r)?;
        }
        replay.orphans = orphans;
        Ok((store, replay))
    }

    /// Reads the log at `path` without touching it. Runs that never
    /// finished are returned as logged, with status `running`.
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, Replay), StoreError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let (runs, replay, _) = parse(&text)?;
        let next_id = runs.keys().next_back().map_or(1, |k| k + 1);
        let store = RunStore {
            path: None,
            file: None,
            runs,
            next_id,
        };
        Ok((store, replay))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Reserves the next run id; ids are unique and increasing.
    pub fn allocate_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn append(&mut self, entry: &Entry) -> Result<(), StoreError> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(entry).expect("run records serialize");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        Ok(())
    }

    /// Logs a run that is about to execute.
    pub fn start(&mut self, stub: RunRecord) -> Result<(), StoreError> {
        if self.runs.contains_key(&stub.run_id) {
            return Err(StoreError::Duplicate(stub.run_id));
        }
        self.next_id = self.next_id.max(stub.run_id + 1);
        self.append(&Entry::Started(stub.clone()))?;
        self.runs.insert(stub.run_id, stub);
        Ok(())
    }

    /// Logs the terminal record of a started run.
    pub fn finish(&mut self, record: RunRecord) -> Result<(), StoreError> {
        let id = record.run_id;
        match self.runs.get(&id) {
            None => return Err(StoreError::Unknown(id)),
            Some(r) if r.status.is_terminal() => return Err(StoreError::Immutable(id)),
            Some(_) => {}
        }
        if !record.status.is_terminal() {
            return Err(StoreError::NotTerminal(id));
        }
        self.append(&Entry::Record(record.clone()))?;
        self.runs.insert(id, record);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&RunRecord> {
        self.runs.get(&id)
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.values()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Replays log text; also returns the length of its complete lines.
fn parse(text: &str) -> Result<(BTreeMap<u64, RunRecord>, Replay, usize), StoreError> {
    let mut replay = Replay::default();
    let mut runs: BTreeMap<u64, RunRecord> = BTreeMap::new();
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    replay.torn_tail = complete < text.len();
    for (i, line) in text[..complete].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let corrupt = |reason: &str| StoreError::Corrupt {
            line: i + 1,
            reason: reason.to_string(),
        };
        match entry {
            Entry::Started(r) => {
                if runs.contains_key(&r.run_id) {
                    return Err(corrupt("run started twice"));
                }
                runs.insert(r.run_id, r);
            }
            Entry::Record(r) => {
                if !r.status.is_terminal() {
                    return Err(corrupt("record is not terminal"));
                }
                if runs.get(&r.run_id).is_some_and(|p| p.status.is_terminal()) {
                    return Err(corrupt("terminal record written twice"));
                }
                replay.records += 1;
                runs.insert(r.run_id, r);
            }
        }
    }
    Ok((runs, replay, complete))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sievebot_core::protocol::{OutputCounts, ScriptName};
    use sievebot_core::sim::EggLedger;

    fn stub(id: u64) -> RunRecord {
        RunRecord {
            run_id: id,
            script: ScriptName::CystExtraction,
            profile: "muscatine".into(),
            seed: 1,
            start_ms: 0,
            end_ms: 0,
            expected_total_ms: 140_000,
            status: RunStatus::Running,
            steps_executed: 0,
            output_counts: OutputCounts::default(),
            egg_ledger: EggLedger::default(),
            telemetry: Vec::new(),
            snapshots: Vec::new(),
            final_snapshot: None,
        }
    }

    fn done(id: u64) -> RunRecord {
        RunRecord {
            status: RunStatus::Completed,
            end_ms: 140_000,
            ..stub(id)
        }
    }

    #[test]
    fn lifecycle_rules() {
        let mut s = RunStore::in_memory();
        let id = s.allocate_id();
        assert_eq!(id, 1);
        assert!(matches!(s.finish(done(id)), Err(StoreError::Unknown(1))));
        s.start(stub(id)).unwrap();
        assert!(matches!(s.start(stub(id)), Err(StoreError::Duplicate(1))));
        assert!(matches!(
            s.finish(stub(id)),
            Err(StoreError::NotTerminal(1))
        ));
        s.finish(done(id)).unwrap();
        assert!(matches!(s.finish(done(id)), Err(StoreError::Immutable(1))));
        assert_eq!(s.allocate_id(), 2);
    }

    #[test]
    fn replay_restores_records_and_closes_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        {
            let (mut s, replay) = RunStore::open(&path).unwrap();
            assert_eq!(replay, Replay::default());
            s.start(stub(1)).unwrap();
            s.finish(done(1)).unwrap();
            s.start(stub(2)).unwrap();
        }
        let (s, replay) = RunStore::open(&path).unwrap();
        assert_eq!(replay.records, 1);
        assert_eq!(replay.orphans, vec![2]);
        assert_eq!(s.get(1), Some(&done(1)));
        assert_eq!(
            s.get(2).unwrap().status,
            RunStatus::Faulted(RESTART_FAULT.into())
        );
        drop(s);
        let (mut s, replay) = RunStore::open(&path).unwrap();
        assert_eq!(replay.records, 2);
        assert!(replay.orphans.is_empty());
        assert_eq!(s.allocate_id(), 3);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        {
            let (mut s, _) = RunStore::open(&path).unwrap();
            s.start(stub(1)).unwrap();
            s.finish(done(1)).unwrap();
        }
        let good = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("{good}{{\"kind\":\"started\",\"ru")).unwrap();
        let (s, replay) = RunStore::open(&path).unwrap();
        assert!(replay.torn_tail);
        assert_eq!(s.get(1), Some(&done(1)));
        drop(s);
        let torn = format!("{good}{{\"kind\":\"started\",\"ru");
        std::fs::write(&path, &torn).unwrap();
        let (s, replay) = RunStore::read(&path).unwrap();
        assert!(replay.torn_tail);
        assert_eq!(s.len(), 1);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), torn);
        RunStore::open(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), good);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(
            RunStore::open(&path),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }
}
