//! One task per live session. The task owns the [`LiveSession`] and is the
//! only writer; connections talk to it through a command queue.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use lunabell_core::session::{
    persist, LiveEvent, LiveSession, SessionClock, SessionConfig, SessionError,
};
use lunabell_core::tagstream::Side;
use tokio::sync::{mpsc, oneshot};
use tokio::time::MissedTickBehavior;

use crate::protocol::*;

pub type Outbox = mpsc::UnboundedSender<String>;

#[derive(Debug)]
pub enum Command {
    Join {
        conn: u64,
        outbox: Outbox,
        created: bool,
    },
    Client {
        conn: u64,
        message: ClientMessage,
    },
    Leave {
        conn: u64,
    },
    FetchReport {
        reply: oneshot::Sender<Option<ReportBody>>,
    },
}

struct Conn {
    outbox: Outbox,
    role: Option<Role>,
}

pub struct SessionActor {
    id: String,
    live: LiveSession,
    clock: Arc<dyn SessionClock>,
    runs_dir: Option<PathBuf>,
    conns: HashMap<u64, Conn>,
    holders: [Option<u64>; 2],
    claimed: [bool; 2],
    seen: [HashSet<u64>; 2],
    report: Option<ReportBody>,
}

fn observer(role: Role) -> Option<Side> {
    match role {
        Role::Alice => Some(Side::Alice),
        Role::Bob => Some(Side::Bob),
        Role::Spectator => None,
    }
}

fn session_error(e: &SessionError) -> ServerMessage {
    let code = match e {
        SessionError::SessionClosed => ErrorCode::SessionClosed,
        SessionError::Config(_) => ErrorCode::Config,
        _ => ErrorCode::BadMessage,
    };
    ServerMessage::error(code, e.to_string())
}

impl SessionActor {
    pub fn new(
        id: String,
        config: SessionConfig,
        clock: Arc<dyn SessionClock>,
        runs_dir: Option<PathBuf>,
    ) -> Result<Self, SessionError> {
        Ok(Self {
            id,
            live: LiveSession::new(config)?,
            clock,
            runs_dir,
            conns: HashMap::new(),
            holders: [None; 2],
            claimed: [false; 2],
            seen: Default::default(),
            report: None,
        })
    }

    pub async fn run(mut self, mut commands: mpsc::UnboundedReceiver<Command>, tick: Duration) {
        let mut ticker = tokio::time::interval(tick);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                cmd = commands.recv() => match cmd {
                    Some(cmd) => self.command(cmd),
                    None => break,
                },
                _ = ticker.tick(), if self.report.is_none() => self.tick(),
            }
        }
    }

    fn armed(&self) -> bool {
        self.claimed == [true; 2]
    }

    fn roles(&self) -> RoleStatus {
        let state = |s: usize| match (self.holders[s], self.claimed[s]) {
            (Some(_), _) => RoleState::Connected,
            (None, true) => RoleState::Disconnected,
            (None, false) => RoleState::Free,
        };
        RoleStatus {
            alice: state(0),
            bob: state(1),
        }
    }

    fn send(&self, conn: u64, msg: &ServerMessage) {
        if let Some(c) = self.conns.get(&conn) {
            let _ = c.outbox.send(msg.to_json());
        }
    }

    fn broadcast(&self, msg: &ServerMessage) {
        let json = msg.to_json();
        for c in self.conns.values() {
            let _ = c.outbox.send(json.clone());
        }
    }

    fn broadcast_stats(&mut self) {
        let snap = self.live.snapshot();
        let msg = ServerMessage::Stats(StatsBody::new(&snap, self.armed(), self.roles()));
        self.broadcast(&msg);
    }

    fn event(&mut self, event: LiveEvent) -> Result<(), SessionError> {
        let r = self.live.handle(event);
        if self.live.is_finished() && self.report.is_none() {
            self.finish();
        }
        r
    }

    fn tick(&mut self) {
        let now = self.clock.now_ps();
        if let Err(e) = self.event(LiveEvent::Tick { time_ps: now }) {
            tracing::warn!(session = %self.id, "tick failed: {e}");
        }
        if self.report.is_none() {
            self.broadcast_stats();
        }
    }

    /// Final stats, persistence and the report broadcast.
    fn finish(&mut self) {
        let Some(output) = self.live.output() else {
            return;
        };
        let run_dir = self.runs_dir.as_ref().and_then(|root| {
            let dir = root.join(&self.id);
            match persist(output, &dir) {
                Ok(()) => Some(dir.display().to_string()),
                Err(e) => {
                    tracing::warn!(session = %self.id, "could not persist run: {e}");
                    None
                }
            }
        });
        let report = ReportBody::new(&self.id, &output.report, run_dir);
        self.broadcast_stats();
        self.broadcast(&ServerMessage::Report(report.clone()));
        tracing::info!(session = %self.id, hash = %report.hash, "session finished");
        self.report = Some(report);
    }

    fn command(&mut self, cmd: Command) {
        match cmd {
            Command::Join {
                conn,
                outbox,
                created,
            } => {
                self.conns.insert(conn, Conn { outbox, role: None });
                let config = self.live.config();
                let hello = ServerMessage::Hello(HelloBody {
                    protocol: PROTOCOL_VERSION,
                    session: self.id.clone(),
                    created,
                    preset: config.preset.clone(),
                    pair_loss_db: config.pair_loss_db(),
                    duration_s: config.duration_s,
                    roles: self.roles(),
                    phase: self.live.phase(),
                });
                self.send(conn, &hello);
                if let Some(report) = &self.report {
                    self.send(conn, &ServerMessage::Report(report.clone()));
                }
            }
            Command::Client { conn, message } => {
                if let Err(msg) = self.client(conn, message) {
                    self.send(conn, &msg);
                }
            }
            Command::Leave { conn } => {
                let Some(c) = self.conns.remove(&conn) else {
                    return;
                };
                if let Some(side) = c.role.and_then(observer) {
                    self.holders[side.index()] = None;
                    if self.report.is_none() {
                        let now = self.clock.now_ps();
                        if let Err(e) = self.event(LiveEvent::Disconnect {
                            observer: side,
                            time_ps: now,
                        }) {
                            tracing::warn!(session = %self.id, "disconnect failed: {e}");
                        }
                        self.broadcast_stats();
                    }
                }
            }
            Command::FetchReport { reply } => {
                let _ = reply.send(self.report.clone());
            }
        }
    }

    fn client(&mut self, conn: u64, message: ClientMessage) -> Result<(), ServerMessage> {
        let role = self.conns.get(&conn).and_then(|c| c.role);
        match message {
            ClientMessage::Hello { .. } => Err(ServerMessage::error(
                ErrorCode::BadMessage,
                "hello was already received on this connection",
            )),
            ClientMessage::ClaimRole { role: wanted } => self.claim(conn, role, wanted),
            ClientMessage::Choice { id, setting, .. } => {
                if self.report.is_some() {
                    return Err(ServerMessage::error(
                        ErrorCode::SessionClosed,
                        "the session has finished",
                    ));
                }
                let Some(side) = role.and_then(observer) else {
                    return Err(ServerMessage::error(
                        ErrorCode::NoRole,
                        "claim alice or bob before sending choices",
                    ));
                };
                if !self.armed() {
                    return Err(ServerMessage::error(
                        ErrorCode::NotArmed,
                        "waiting for both observers",
                    ));
                }
                if setting > 1 {
                    return Err(ServerMessage::error(
                        ErrorCode::BadMessage,
                        format!("setting must be 0 or 1, got {setting}"),
                    ));
                }
                if !self.seen[side.index()].insert(id) {
                    return Ok(());
                }
                let now = self.clock.now_ps();
                self.event(LiveEvent::Choice {
                    observer: side,
                    setting,
                    time_ps: now,
                })
                .map_err(|e| session_error(&e))
            }
            ClientMessage::Report { close } => {
                if close {
                    if role.and_then(observer).is_none() {
                        return Err(ServerMessage::error(
                            ErrorCode::NoRole,
                            "only observers can close a session",
                        ));
                    }
                    let now = self.clock.now_ps();
                    self.event(LiveEvent::Close { time_ps: now })
                        .map_err(|e| session_error(&e))?;
                    // the report went out with the broadcast
                    return Ok(());
                }
                match &self.report {
                    Some(r) => {
                        self.send(conn, &ServerMessage::Report(r.clone()));
                        Ok(())
                    }
                    None => Err(ServerMessage::error(
                        ErrorCode::NotFinished,
                        "the session is still running",
                    )),
                }
            }
        }
    }

    fn claim(
        &mut self,
        conn: u64,
        current: Option<Role>,
        wanted: Role,
    ) -> Result<(), ServerMessage> {
        if current == Some(wanted) {
            self.send(conn, &ServerMessage::ClaimRole(ClaimBody { role: wanted, granted: true }));
            return Ok(());
        }
        if let Some(held) = current.and_then(observer) {
            return Err(ServerMessage::error(
                ErrorCode::Config,
                format!(
                    "this connection already feeds {}; one feed cannot serve both observers",
                    held.name()
                ),
            ));
        }
        if let Some(side) = observer(wanted) {
            let s = side.index();
            if self.holders[s].is_some() {
                return Err(ServerMessage::error(
                    ErrorCode::RoleConflict,
                    format!("{} is already claimed", side.name()),
                ));
            }
            self.holders[s] = Some(conn);
            let reconnect = self.claimed[s] && self.report.is_none();
            self.claimed[s] = true;
            if reconnect {
                let now = self.clock.now_ps();
                self.event(LiveEvent::Reconnect {
                    observer: side,
                    time_ps: now,
                })
                .map_err(|e| session_error(&e))?;
            }
        }
        if let Some(c) = self.conns.get_mut(&conn) {
            c.role = Some(wanted);
        }
        self.send(conn, &ServerMessage::ClaimRole(ClaimBody { role: wanted, granted: true }));
        if self.report.is_none() {
            self.broadcast_stats();
        }
        Ok(())
    }
}
