#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use oselect_cli::events::EventLog;
use oselect_cli::service::Service;
use oselect_cli::workdir::Trees;
use oselect_core::candidates::ClusterConfig;
use oselect_core::corpus::{cluster_corpus, Corpus, PoolStore};
use oselect_core::interaction::InteractionConfig;
use oselect_core::response_model::ErrorModel;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(name: &str) -> (Corpus, PoolStore) {
    let corpus = Corpus::load(&fixtures().join(name)).expect("fixture corpus loads");
    let store = cluster_corpus(&corpus, &ClusterConfig::default());
    (corpus, store)
}

/// The small three-utterance corpus, clustered once per test binary.
pub fn special() -> &'static (Corpus, PoolStore) {
    static S: OnceLock<(Corpus, PoolStore)> = OnceLock::new();
    S.get_or_init(|| load("special"))
}

pub fn corpus() -> &'static (Corpus, PoolStore) {
    static C: OnceLock<(Corpus, PoolStore)> = OnceLock::new();
    C.get_or_init(|| load("corpus"))
}

pub fn service_with(data: &(Corpus, PoolStore), log: EventLog, history: Vec<oselect_cli::events::Event>) -> Service {
    Service::new(
        data.0.clone(),
        data.1.clone(),
        Trees::new(),
        ErrorModel::default(),
        InteractionConfig::default(),
        log,
        history,
    )
    .expect("service builds")
}

pub fn memory_service(data: &(Corpus, PoolStore)) -> Service {
    service_with(data, EventLog::in_memory(), Vec::new())
}
