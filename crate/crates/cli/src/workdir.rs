//! Files produced and consumed by the pipeline inside the work directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use oselect_core::corpus::{Corpus, CorpusError, PoolStore};
use oselect_core::interaction::{read_transcript, ResponseTree, TranscriptEntry};
use oselect_core::interaction::transcript::TranscriptError;
use oselect_core::response_model::{AnnotatorParams, ErrorModel};
use thiserror::Error;

pub const CORPUS: &str = "corpus.json";
pub const POOLS: &str = "pools.json";
pub const TREES: &str = "trees.json";
pub const TRANSCRIPTS: &str = "transcripts.jsonl";
pub const PARAMS: &str = "params.json";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0}")]
    Corpus(#[from] CorpusError),
    #[error("{what} not found at {path}; run `oselect {command}` first")]
    Missing {
        what: &'static str,
        path: PathBuf,
        command: &'static str,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Transcript {
        path: PathBuf,
        #[source]
        source: TranscriptError,
    },
}

pub type Trees = BTreeMap<String, ResponseTree>;

pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn require(&self, name: &str, what: &'static str, command: &'static str) -> Result<PathBuf, StoreError> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(StoreError::Missing { what, path, command })
        }
    }

    pub fn corpus(&self) -> Result<Corpus, StoreError> {
        Ok(Corpus::open(&self.require(CORPUS, "corpus store", "ingest")?)?)
    }

    pub fn pools(&self) -> Result<PoolStore, StoreError> {
        Ok(PoolStore::open(&self.require(POOLS, "cluster store", "cluster")?)?)
    }

    pub fn trees(&self) -> Result<Trees, StoreError> {
        let path = self.path(TREES);
        if !path.exists() {
            return Ok(Trees::new());
        }
        read_json(&path)
    }

    /// The fitted model when `params.json` exists, else the fixed default.
    pub fn model(&self) -> Result<ErrorModel, StoreError> {
        let path = self.path(PARAMS);
        if !path.exists() {
            return Ok(ErrorModel::default());
        }
        let params: AnnotatorParams = read_json(&path)?;
        Ok(ErrorModel::Logistic { params })
    }

    pub fn transcripts(&self, path: Option<&Path>) -> Result<Vec<TranscriptEntry>, StoreError> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => self.require(TRANSCRIPTS, "transcripts", "simulate")?,
        };
        let f = File::open(&path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        read_transcript(BufReader::new(f)).map_err(|source| StoreError::Transcript { path, source })
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, StoreError> {
        let path = self.path(name);
        write_text(&path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))?;
        Ok(path)
    }
}

pub fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), StoreError> {
    let io = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}
