//! Wire messages. Every frame is one JSON object with a `type` field.

use std::collections::BTreeMap;

use lunabell_core::analysis::SettingCounts;
use lunabell_core::session::{LivePhase, LoopholeTally, RunReport, StatsSnapshot};
use lunabell_core::spacetime::Loophole;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Alice,
    Bob,
    Spectator,
}

/// Session to create when `hello` carries no session id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    #[serde(default)]
    pub preset: Option<String>,
    /// Dotted `key = value` config overrides.
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        protocol: u32,
        #[serde(default)]
        session: Option<String>,
        #[serde(default)]
        config: Option<SessionSpec>,
    },
    ClaimRole {
        role: Role,
    },
    Choice {
        /// Client-chosen id, unique per observer. Repeats are ignored.
        id: u64,
        setting: u8,
        #[serde(default)]
        client_time_ms: Option<f64>,
    },
    /// Request the final report; `close` ends the session first.
    Report {
        #[serde(default)]
        close: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleState {
    Free,
    Connected,
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleStatus {
    pub alice: RoleState,
    pub bob: RoleState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloBody {
    pub protocol: u32,
    pub session: String,
    pub created: bool,
    pub preset: String,
    pub pair_loss_db: f64,
    pub duration_s: f64,
    pub roles: RoleStatus,
    pub phase: LivePhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimBody {
    pub role: Role,
    pub granted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyBody {
    pub loophole: String,
    pub valid: u64,
    pub invalid: u64,
    pub undetected: u64,
}

fn tally_bodies(tallies: &[LoopholeTally; 3]) -> Vec<TallyBody> {
    tallies
        .iter()
        .zip(Loophole::ALL)
        .map(|(t, l)| TallyBody {
            loophole: l.name().to_string(),
            valid: t.valid,
            invalid: t.invalid,
            undetected: t.undetected,
        })
        .collect()
}

/// Cumulative statistics. `counts` rows follow a,b / a,b' / a',b / a',b',
/// columns ++ / +- / -+ / --.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBody {
    pub seq: u64,
    pub session_time_s: f64,
    pub phase: LivePhase,
    pub armed: bool,
    pub roles: RoleStatus,
    pub pair_loss_db: f64,
    pub trials: [u64; 2],
    pub counted_pairs: u64,
    pub excluded_pairs: u64,
    pub counts: [[u64; 4]; 4],
    pub s_value: Option<f64>,
    pub sigma: Option<f64>,
    pub tallies: Vec<TallyBody>,
}

impl StatsBody {
    pub fn new(snap: &StatsSnapshot, armed: bool, roles: RoleStatus) -> Self {
        Self {
            seq: snap.seq,
            session_time_s: snap.session_time_s,
            phase: snap.phase,
            armed,
            roles,
            pair_loss_db: snap.pair_loss_db,
            trials: snap.trials,
            counted_pairs: snap.counted_pairs,
            excluded_pairs: snap.excluded_pairs,
            counts: snap.counts.counts,
            s_value: snap.s_value,
            sigma: snap.sigma,
            tallies: tally_bodies(&snap.tallies),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub session: String,
    /// SHA-256 of `kv` without its wall-time line.
    pub hash: String,
    pub pair_loss_db: f64,
    pub duration_s: f64,
    pub trials: [u64; 2],
    pub counted_pairs: u64,
    pub excluded_pairs: u64,
    pub counts: [[u64; 4]; 4],
    pub s_value: Option<f64>,
    pub sigma: Option<f64>,
    pub bootstrap_sigma: Option<f64>,
    pub tallies: Vec<TallyBody>,
    pub text: String,
    pub kv: String,
    pub run_dir: Option<String>,
}

impl ReportBody {
    pub fn new(session: &str, report: &RunReport, run_dir: Option<String>) -> Self {
        Self {
            session: session.to_string(),
            hash: report.hash(),
            pair_loss_db: report.pair_loss_db,
            duration_s: report.duration_s,
            trials: report.trials,
            counted_pairs: report.counted_pairs,
            excluded_pairs: report.excluded_pairs,
            counts: report.counts.counts,
            s_value: report.chsh.map(|c| c.s_value),
            sigma: report.chsh.map(|c| c.sigma),
            bootstrap_sigma: report.bootstrap_sigma,
            tallies: tally_bodies(&report.tallies),
            text: report.to_text(),
            kv: report.to_kv(),
            run_dir,
        }
    }

    pub fn setting_counts(&self) -> SettingCounts {
        SettingCounts {
            counts: self.counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    RoleConflict,
    UnknownSession,
    BadMessage,
    NotArmed,
    NoRole,
    NotFinished,
    Config,
    SessionClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(HelloBody),
    ClaimRole(ClaimBody),
    Stats(StatsBody),
    Report(ReportBody),
    Error(ErrorBody),
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error(ErrorBody {
            code,
            message: message.into(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}
