//! End-to-end runs: headless simulation, replay from a run directory and
//! live sessions with human observers.
//!
//! A run directory holds `config.toml`, `choices.log`, `alice.tags`,
//! `bob.tags`, `pairs.txt`, `report.txt` and `report.kv`.

mod accumulator;
mod choices;
mod config;
mod live;
mod report;
mod run;

pub use accumulator::{LoopholeTally, PairFate, RunAccumulator, TrialRecord};
pub use choices::{
    emission_window, generate_choices, schedules, split_sides, ChoiceEvent, ChoiceLog,
    CHOICE_LOG_SCHEMA_VERSION,
};
pub use config::{
    parse_override, preset, ChoiceConfig, ChoiceSourceKind, CoincidenceSettings, DetectorPair,
    GeometrySettings, LinkConfig, RunMode, SamplingConfig, SessionConfig, LAB_DURATION_S, PRESETS,
    PRESET_EARTH_MOON, PRESET_INTERACTIVE_90DB, PRESET_LAB_103DB,
};
pub use live::{
    LiveEvent, LivePhase, LiveSession, ManualClock, MonotonicClock, SessionClock, StatsSnapshot,
};
pub use report::{kv_hash, RunReport, BOOTSTRAP_RESAMPLES, REPORT_SCHEMA_VERSION};
pub use run::{
    evaluate_run, parse_pairs, persist, render_pairs, run_headless, run_replay, simulate_tags,
    RunOutput, ALICE_TAGS_FILE, BOB_TAGS_FILE, CHOICES_FILE, CONFIG_FILE, PAIRS_FILE,
    REPORT_KV_FILE, REPORT_TEXT_FILE,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::linkbudget::BudgetError;
use crate::photonics::PhotonicsError;
use crate::spacetime::SpacetimeError;
use crate::tagstream::{CoincidenceError, TagFileError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("choice log schema version {found} is not supported")]
    SchemaVersion { found: u32 },
    #[error("choice log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("pair file line {line} is malformed")]
    CorruptPairs { line: usize },
    #[error("choice log was written for config {found}, expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("choice at {time_ps} ps is earlier than session time {now_ps} ps")]
    StaleChoice { time_ps: u64, now_ps: u64 },
    #[error("session is closed")]
    SessionClosed,
    #[error(transparent)]
    Tags(#[from] TagFileError),
    #[error(transparent)]
    Coincidence(#[from] CoincidenceError),
    #[error(transparent)]
    Photonics(#[from] PhotonicsError),
    #[error(transparent)]
    Spacetime(#[from] SpacetimeError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl SessionError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        SessionError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
