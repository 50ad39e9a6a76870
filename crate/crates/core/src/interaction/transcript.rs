//! Transcript persistence as JSON Lines, one answered question per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Question, ResponseRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub utterance_id: String,
    pub question: Question,
    pub response: ResponseRecord,
    /// Posterior over the pool's clusters after this response.
    pub posterior: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn write_transcript<'a>(
    out: &mut impl Write,
    entries: impl IntoIterator<Item = &'a TranscriptEntry>,
) -> Result<(), TranscriptError> {
    for e in entries {
        serde_json::to_writer(&mut *out, e).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads entries, skipping blank lines.
pub fn read_transcript(input: impl BufRead) -> Result<Vec<TranscriptEntry>, TranscriptError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| TranscriptError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}
