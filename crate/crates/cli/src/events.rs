//! Append-only JSON Lines event log. Replaying it reconstructs every
//! session.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use oselect_core::interaction::ResponseRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("event log {path}, line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated {
        annotator_id: String,
        unit_id: String,
        utterances: Vec<String>,
        token: String,
        seed: u64,
    },
    ResponseRecorded {
        utterance_id: String,
        record: ResponseRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub session_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Single writer; every append is flushed before it is acknowledged.
pub struct EventLog {
    path: Option<PathBuf>,
    out: Option<BufWriter<File>>,
    next_seq: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog {
            path: None,
            out: None,
            next_seq: 0,
        }
    }

    /// Opens (creating if needed) the log at `path` and returns it with the
    /// events already recorded.
    pub fn open(path: &Path) -> Result<(EventLog, Vec<Event>), LogError> {
        let io = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let events = if path.exists() { read_events(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        let next_seq = events.last().map_or(0, |e| e.seq + 1);
        Ok((
            EventLog {
                path: Some(path.to_path_buf()),
                out: Some(BufWriter::new(file)),
                next_seq,
            },
            events,
        ))
    }

    pub fn append(&mut self, session_id: &str, kind: EventKind) -> Result<Event, LogError> {
        let event = Event {
            seq: self.next_seq,
            timestamp: Utc::now(),
            session_id: session_id.to_string(),
            kind,
        };
        if let (Some(out), Some(path)) = (self.out.as_mut(), self.path.as_ref()) {
            let io = |source| LogError::Io {
                path: path.clone(),
                source,
            };
            serde_json::to_writer(&mut *out, &event).map_err(|e| io(e.into()))?;
            out.write_all(b"\n").map_err(io)?;
            out.flush().map_err(io)?;
        }
        self.next_seq += 1;
        Ok(event)
    }
}

/// Reads every event; a torn final line (crash mid-write) is ignored.
pub fn read_events(path: &Path) -> Result<Vec<Event>, LogError> {
    let f = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(_) if Some(i) == last && !line.ends_with('}') => {
                log::warn!("ignoring torn final event at line {}", i + 1);
            }
            Err(source) => {
                return Err(LogError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use oselect_core::interaction::Answer;

    fn record() -> ResponseRecord {
        ResponseRecord {
            question_id: "u#".into(),
            annotator_id: "a".into(),
            response: Answer::Timeout,
            free_text_ambiguous: Some("unclear".into()),
            free_text_confusing: None,
            free_text_expected: None,
            elapsed_ms: 5,
        }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let (mut log, before) = EventLog::open(&p).unwrap();
        assert!(before.is_empty());
        let a = log
            .append(
                "s1",
                EventKind::ResponseRecorded {
                    utterance_id: "u".into(),
                    record: record(),
                },
            )
            .unwrap();
        drop(log);
        let (mut log, events) = EventLog::open(&p).unwrap();
        assert_eq!(events, vec![a]);
        let b = log
            .append(
                "s1",
                EventKind::ResponseRecorded {
                    utterance_id: "u".into(),
                    record: record(),
                },
            )
            .unwrap();
        assert_eq!(b.seq, 1);
    }

    #[test]
    fn torn_tail_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let (mut log, _) = EventLog::open(&p).unwrap();
        log.append(
            "s1",
            EventKind::ResponseRecorded {
                utterance_id: "u".into(),
                record: record(),
            },
        )
        .unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"seq\":1,\"times").unwrap();
        assert_eq!(read_events(&p).unwrap().len(), 1);
    }
}
