//! On-disk corpus bundles and the processed store.
//!
//! A bundle directory holds:
//!
//! - `schemas/<id>.sql`: DDL, with `schemas/<id>.meta.json` ([`SchemaMeta`])
//!   and optional `schemas/<id>.md` (description page)
//! - `samples/<id>.json`: the sample database in portable JSON form
//! - `utterances.jsonl`: one [`Utterance`] per line
//! - `candidates.jsonl`: one [`RawCandidate`] per line
//! - `units.json` (optional): `[{"id": .., "utterances": [..]}]`

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{build_pool, equivalent_cluster, CandidatePool, ClusterConfig, RawCandidate, Utterance};
use crate::infogain::ClusterId;
use crate::relational::engine::{schema_from_ddl, EngineError};
use crate::relational::repair::{repair_database, RepairConfig, RepairError};
use crate::relational::database::DatabaseFormatError;
use crate::relational::{Database, Schema, SchemaMeta};

#[derive(Debug, Error)]
pub enum CorpusError {
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
    #[error("schema `{id}`: {source}")]
    Schema {
        id: String,
        #[source]
        source: EngineError,
    },
    #[error("sample database `{id}`: {source}")]
    Sample {
        id: String,
        #[source]
        source: DatabaseFormatError,
    },
    #[error("sample database `{id}`: {source}")]
    Repair {
        id: String,
        #[source]
        source: RepairError,
    },
    #[error("utterance `{utterance}` refers to unknown schema `{schema}`")]
    UnknownSchema { utterance: String, schema: String },
    #[error("unknown utterance `{0}`")]
    UnknownUtterance(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub utterances: Vec<String>,
}

/// A loaded, repaired corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub schemas: BTreeMap<String, Schema>,
    pub samples: BTreeMap<String, Database>,
    #[serde(default)]
    pub descriptions: BTreeMap<String, String>,
    pub utterances: Vec<Utterance>,
    pub candidates: BTreeMap<String, Vec<RawCandidate>>,
    #[serde(default)]
    pub units: Vec<Unit>,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, CorpusError> {
    serde_json::from_str(text).map_err(|source| CorpusError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse(path, l))
        .collect()
}

impl Corpus {
    /// Loads a bundle directory, repairing every sample database.
    pub fn load(dir: &Path) -> Result<Corpus, CorpusError> {
        let schema_dir = dir.join("schemas");
        let mut ids: Vec<String> = fs::read_dir(&schema_dir)
            .map_err(|source| CorpusError::Io {
                path: schema_dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension().is_some_and(|x| x == "sql"))
                    .then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                    .flatten()
            })
            .collect();
        ids.sort();
        let mut schemas = BTreeMap::new();
        let mut samples = BTreeMap::new();
        let mut descriptions = BTreeMap::new();
        let repair = RepairConfig::default();
        for id in ids {
            let ddl = read(&schema_dir.join(format!("{id}.sql")))?;
            let meta_path = schema_dir.join(format!("{id}.meta.json"));
            let meta: SchemaMeta = if meta_path.exists() {
                parse(&meta_path, &read(&meta_path)?)?
            } else {
                SchemaMeta {
                    domain_id: id.clone(),
                    ..SchemaMeta::default()
                }
            };
            let schema = schema_from_ddl(&id, &ddl, &meta).map_err(|source| CorpusError::Schema {
                id: id.clone(),
                source,
            })?;
            let sample_path = dir.join("samples").join(format!("{id}.json"));
            let raw = Database::from_json_str(&read(&sample_path)?, &schema)
                .map_err(|source| CorpusError::Sample { id: id.clone(), source })?;
            let sample = repair_database(&raw, &schema, &repair)
                .map_err(|source| CorpusError::Repair { id: id.clone(), source })?;
            let md = schema_dir.join(format!("{id}.md"));
            if md.exists() {
                descriptions.insert(id.clone(), read(&md)?);
            }
            schemas.insert(id.clone(), schema);
            samples.insert(id, sample);
        }
        let utterances: Vec<Utterance> = read_jsonl(&dir.join("utterances.jsonl"))?;
        for u in &utterances {
            if !schemas.contains_key(&u.schema_id) {
                return Err(CorpusError::UnknownSchema {
                    utterance: u.id.clone(),
                    schema: u.schema_id.clone(),
                });
            }
        }
        let mut candidates: BTreeMap<String, Vec<RawCandidate>> = BTreeMap::new();
        let cand_path = dir.join("candidates.jsonl");
        if cand_path.exists() {
            for c in read_jsonl::<RawCandidate>(&cand_path)? {
                candidates.entry(c.utterance_id.clone()).or_default().push(c);
            }
        }
        let units_path = dir.join("units.json");
        let units = if units_path.exists() {
            parse(&units_path, &read(&units_path)?)?
        } else {
            Vec::new()
        };
        Ok(Corpus {
            schemas,
            samples,
            descriptions,
            utterances,
            candidates,
            units,
        })
    }

    pub fn utterance(&self, id: &str) -> Result<&Utterance, CorpusError> {
        self.utterances
            .iter()
            .find(|u| u.id == id)
            .ok_or_else(|| CorpusError::UnknownUtterance(id.to_string()))
    }

    pub fn schema_of(&self, u: &Utterance) -> &Schema {
        &self.schemas[&u.schema_id]
    }

    pub fn sample_of(&self, u: &Utterance) -> &Database {
        &self.samples[&u.schema_id]
    }

    /// Writes the corpus as a single JSON store.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_json(path, self)
    }

    pub fn open(path: &Path) -> Result<Corpus, CorpusError> {
        let mut c: Corpus = parse(path, &read(path)?)?;
        for (id, db) in c.samples.iter_mut() {
            *db = db.coerced(&c.schemas[id]).map_err(|source| CorpusError::Sample {
                id: id.clone(),
                source,
            })?;
        }
        Ok(c)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let text = serde_json::to_string_pretty(value).expect("store values serialize");
    fs::write(path, text + "\n").map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Clustered candidates of one utterance plus where its reference program
/// landed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub pool: CandidatePool,
    /// Cluster equivalent to the reference program, if any.
    pub gold_cluster: Option<ClusterId>,
    pub has_gold: bool,
}

/// Every utterance's pool, keyed by utterance id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolStore {
    pub config: Option<ClusterConfig>,
    pub pools: BTreeMap<String, PoolEntry>,
}

impl PoolStore {
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_json(path, self)
    }

    pub fn open(path: &Path) -> Result<PoolStore, CorpusError> {
        parse(path, &read(path)?)
    }
}

/// Builds the pool of one utterance and locates its reference program.
pub fn cluster_utterance(corpus: &Corpus, u: &Utterance, cfg: &ClusterConfig) -> PoolEntry {
    let schema = corpus.schema_of(u);
    let sample = corpus.sample_of(u);
    let cands = corpus.candidates.get(&u.id).map(Vec::as_slice).unwrap_or(&[]);
    let pool = build_pool(&u.id, cands, schema, sample, cfg);
    let gold_cluster = u
        .gold_sql
        .as_deref()
        .and_then(|g| equivalent_cluster(g, &pool.clusters, schema, sample, cfg));
    PoolEntry {
        pool,
        gold_cluster,
        has_gold: u.gold_sql.is_some(),
    }
}

/// Clusters every utterance of the corpus.
pub fn cluster_corpus(corpus: &Corpus, cfg: &ClusterConfig) -> PoolStore {
    let pools = corpus
        .utterances
        .iter()
        .map(|u| (u.id.clone(), cluster_utterance(corpus, u, cfg)))
        .collect();
    PoolStore {
        config: Some(cfg.clone()),
        pools,
    }
}
