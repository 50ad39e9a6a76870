//! TOML configuration with environment overrides.
//!
//! Every key is optional. Environment variables override the file:
//!
//! | variable | key |
//! |---|---|
//! | `OSELECT_SEED` | `seed` (applied to every component) |
//! | `OSELECT_WORKDIR` | `workdir` |
//! | `OSELECT_BIND` | `service.bind` |
//! | `OSELECT_EVENT_LOG` | `service.event_log` |
//! | `OSELECT_N_DBS` | `cluster.n_dbs` |
//! | `OSELECT_SYNTH_BUDGET_SECS` | `interaction.synth.budget` |
//! | `OSELECT_PRECOMPUTE_BUDGET_SECS` | `precompute.budget_secs` |
//! | `OSELECT_MAX_ROUNDS` | `interaction.max_rounds` |

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use oselect_core::candidates::ClusterConfig;
use oselect_core::evalsim::CrowdConfig;
use oselect_core::interaction::InteractionConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("environment variable {name}={value:?} is not a valid {expected}")]
    Env {
        name: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("invalid synthesis settings: {0}")]
    Synth(#[from] oselect_core::synth::ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Relative paths are resolved against the work directory.
    pub event_log: PathBuf,
    /// Precompute missing response trees when the service starts.
    pub precompute_on_start: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            event_log: "events.jsonl".into(),
            precompute_on_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecomputeConfig {
    /// Per-utterance budget.
    pub budget_secs: u64,
}

impl Default for PrecomputeConfig {
    fn default() -> Self {
        PrecomputeConfig { budget_secs: 40 * 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Seeds averaged over in noisy-crowd mode.
    pub seeds: usize,
    pub crowd: CrowdConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            seeds: 20,
            crowd: CrowdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub seed: u64,
    pub workdir: PathBuf,
    pub cluster: ClusterConfig,
    pub interaction: InteractionConfig,
    pub precompute: PrecomputeConfig,
    pub simulate: SimulateConfig,
    pub service: ServiceConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 0,
            workdir: "work".into(),
            cluster: ClusterConfig::default(),
            interaction: InteractionConfig::default(),
            precompute: PrecomputeConfig::default(),
            simulate: SimulateConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(
    env: &HashMap<String, String>,
    name: &'static str,
    expected: &'static str,
) -> Result<Option<T>, ConfigError> {
    env.get(name)
        .map(|v| {
            v.trim().parse().map_err(|_| ConfigError::Env {
                name,
                value: v.clone(),
                expected,
            })
        })
        .transpose()
}

impl AppConfig {
    /// Reads `path` (defaults when `None`) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<AppConfig, ConfigError> {
        Self::load_with_env(path, &std::env::vars().collect())
    }

    pub fn load_with_env(path: Option<&Path>, env: &HashMap<String, String>) -> Result<AppConfig, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: p.to_path_buf(),
                    source,
                })?
            }
            None => AppConfig::default(),
        };
        if let Some(seed) = parse_env(env, "OSELECT_SEED", "integer")? {
            cfg.set_seed(seed);
        }
        if let Some(w) = env.get("OSELECT_WORKDIR") {
            cfg.workdir = w.into();
        }
        if let Some(b) = env.get("OSELECT_BIND") {
            cfg.service.bind = b.clone();
        }
        if let Some(l) = env.get("OSELECT_EVENT_LOG") {
            cfg.service.event_log = l.into();
        }
        if let Some(n) = parse_env(env, "OSELECT_N_DBS", "integer")? {
            cfg.cluster.n_dbs = n;
        }
        if let Some(s) = parse_env::<u64>(env, "OSELECT_SYNTH_BUDGET_SECS", "integer")? {
            cfg.interaction.synth.budget = Duration::from_secs(s);
        }
        if let Some(s) = parse_env(env, "OSELECT_PRECOMPUTE_BUDGET_SECS", "integer")? {
            cfg.precompute.budget_secs = s;
        }
        if let Some(r) = parse_env(env, "OSELECT_MAX_ROUNDS", "integer")? {
            cfg.interaction.max_rounds = r;
        }
        cfg.interaction.synth.validate()?;
        Ok(cfg)
    }

    /// Uses `seed` for clustering, question synthesis and simulation.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.cluster.seed = seed;
        self.interaction.seed = seed;
        self.simulate.crowd.seed = seed;
    }

    pub fn event_log_path(&self) -> PathBuf {
        if self.service.event_log.is_absolute() {
            self.service.event_log.clone()
        } else {
            self.workdir.join(&self.service.event_log)
        }
    }
}
