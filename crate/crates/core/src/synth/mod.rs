//! Question database synthesis: fuzzing, the fuzz-then-drop search, pruning
//! and the configuration lattice.

pub mod fuzz;
pub mod prune;
pub mod search;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use fuzz::{fuzz_database, FuzzConfig, FuzzError};
pub use prune::prune_database;
pub use search::{
    fuzz_then_drop, synthesize_question_db, synthesize_with_trace, AttemptTrace, LevelTrace, RestartTrace, SynthFailure,
    SynthResult, SynthTrace,
};

/// Record cap with the small-cap tweak on.
pub const SMALL_CAP: usize = 15;
/// Record cap with the small-cap tweak off.
pub const LARGE_CAP: usize = 30;

/// Search settings. The three `tweak_*` flags form the configuration index
/// `4·unique + 2·init + small_cap` (see [`SynthConfig::config_index`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub tweak_unique: bool,
    pub tweak_init_sample_db: bool,
    pub tweak_small_cap: bool,
    pub n_fuzz: usize,
    pub max_rows_per_table: usize,
    pub drop_fraction: f64,
    pub drop_tries: usize,
    pub restarts: usize,
    pub seed: u64,
    pub int_perturb_prob: f64,
    /// Error rate of the response model used for scoring; 0 scores as if
    /// the annotator were perfect.
    pub error_rate: f64,
    #[serde(with = "crate::candidates::pool::duration_ms")]
    pub query_timeout: Duration,
    /// Wall-clock budget for [`synthesize_question_db`] across all
    /// configurations.
    #[serde(with = "crate::candidates::pool::duration_ms")]
    pub budget: Duration,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tweak_unique: true,
            tweak_init_sample_db: true,
            tweak_small_cap: true,
            n_fuzz: 64,
            max_rows_per_table: 40,
            drop_fraction: 0.05,
            drop_tries: 20,
            restarts: 3,
            seed: 0,
            int_perturb_prob: 0.3,
            error_rate: crate::response_model::DEFAULT_ERROR_RATE,
            query_timeout: Duration::from_secs(2),
            budget: Duration::from_secs(40 * 60),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("drop_fraction must lie in (0, 1), got {0}")]
    DropFraction(f64),
    #[error("`{0}` must be positive")]
    NonPositive(&'static str),
}

impl SynthConfig {
    pub fn config_index(&self) -> u8 {
        (self.tweak_unique as u8) << 2 | (self.tweak_init_sample_db as u8) << 1 | self.tweak_small_cap as u8
    }

    pub fn with_config_index(&self, c: u8) -> Self {
        SynthConfig {
            tweak_unique: c & 4 != 0,
            tweak_init_sample_db: c & 2 != 0,
            tweak_small_cap: c & 1 != 0,
            ..self.clone()
        }
    }

    /// Record cap `R`.
    pub fn cap(&self) -> usize {
        if self.tweak_small_cap {
            SMALL_CAP
        } else {
            LARGE_CAP
        }
    }

    pub fn fuzz_config(&self) -> FuzzConfig {
        FuzzConfig {
            max_rows_per_table: self.max_rows_per_table,
            int_perturb_prob: self.int_perturb_prob,
            enforce_unique: self.tweak_unique,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.drop_fraction > 0.0 && self.drop_fraction < 1.0) {
            return Err(ConfigError::DropFraction(self.drop_fraction));
        }
        for (name, v) in [
            ("n_fuzz", self.n_fuzz),
            ("max_rows_per_table", self.max_rows_per_table),
            ("drop_tries", self.drop_tries),
            ("restarts", self.restarts),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        Ok(())
    }
}
