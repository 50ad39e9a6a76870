#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use oselect_core::candidates::ClusterConfig;
use oselect_core::corpus::{cluster_corpus, Corpus, PoolStore};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn corpus() -> &'static (Corpus, PoolStore) {
    static C: OnceLock<(Corpus, PoolStore)> = OnceLock::new();
    C.get_or_init(|| load("corpus"))
}

pub fn special() -> &'static (Corpus, PoolStore) {
    static C: OnceLock<(Corpus, PoolStore)> = OnceLock::new();
    C.get_or_init(|| load("special"))
}

fn load(name: &str) -> (Corpus, PoolStore) {
    let corpus = Corpus::load(&fixtures().join(name)).expect("fixture corpus loads");
    let store = cluster_corpus(&corpus, &ClusterConfig::default());
    (corpus, store)
}
