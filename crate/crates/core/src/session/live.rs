//! Live sessions driven by human observers.
//!
//! [`LiveSession`] is a single-threaded state machine fed with
//! [`LiveEvent`]s stamped by a session clock. Photons are generated with the
//! same segment-seeded generator as headless runs, lagging the clock by
//! 2·[`MAX_JITTER_PS`] so that every setting a photon could be analysed with
//! is already known. A scripted feed that reproduces a headless choice
//! schedule therefore reproduces the headless report exactly.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::accumulator::{LoopholeTally, RunAccumulator};
use super::choices::{ChoiceEvent, ChoiceLog};
use super::config::{RunMode, SessionConfig};
use super::report::RunReport;
use super::run::RunOutput;
use super::SessionError;
use crate::analysis::{chsh, SettingCounts};
use crate::photonics::{PendingDetection, PhotonGenerator, MAX_JITTER_PS};
use crate::tagstream::{CoincidenceMatcher, CoincidencePair, Side, TimeTag};
use crate::{ps_to_seconds, seconds_to_ps};

/// Source of session time, ps since the session started.
pub trait SessionClock: Send + Sync {
    fn now_ps(&self) -> u64;
}

#[derive(Debug, Clone)]
pub struct MonotonicClock {
    start: Instant,
}

impl MonotonicClock {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl SessionClock for MonotonicClock {
    fn now_ps(&self) -> u64 {
        u64::try_from(self.start.elapsed().as_nanos() * 1000).unwrap_or(u64::MAX)
    }
}

/// Hand-driven clock for tests.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn set(&self, t_ps: u64) {
        self.0.store(t_ps, Ordering::SeqCst);
    }

    pub fn advance(&self, dt_ps: u64) {
        self.0.fetch_add(dt_ps, Ordering::SeqCst);
    }
}

impl SessionClock for ManualClock {
    fn now_ps(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiveEvent {
    Choice {
        observer: Side,
        setting: u8,
        time_ps: u64,
    },
    Tick {
        time_ps: u64,
    },
    Disconnect {
        observer: Side,
        time_ps: u64,
    },
    Reconnect {
        observer: Side,
        time_ps: u64,
    },
    Close {
        time_ps: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LivePhase {
    /// Waiting for both observers' first choice.
    Waiting,
    Running,
    Paused,
    Finished,
}

/// Cumulative statistics pushed to subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub seq: u64,
    pub session_time_s: f64,
    pub phase: LivePhase,
    pub pair_loss_db: f64,
    pub trials: [u64; 2],
    pub counted_pairs: u64,
    pub excluded_pairs: u64,
    pub counts: SettingCounts,
    pub s_value: Option<f64>,
    pub sigma: Option<f64>,
    pub tallies: [LoopholeTally; 3],
}

pub struct LiveSession {
    config: SessionConfig,
    delay_ps: u64,
    now: u64,
    choices: Vec<ChoiceEvent>,
    first_choice: [Option<u64>; 2],
    acc: RunAccumulator,
    t0: Option<u64>,
    planned_end: Option<u64>,
    generator: Option<PhotonGenerator>,
    next_segment: u64,
    pending: VecDeque<PendingDetection>,
    gen_frontier: u64,
    skip_before: u64,
    resolved: [BinaryHeap<Reverse<TimeTag>>; 2],
    released: [Vec<TimeTag>; 2],
    matcher: CoincidenceMatcher,
    pairs: Vec<CoincidencePair>,
    connected: [bool; 2],
    seq: u64,
    output: Option<RunOutput>,
    started: Instant,
}

impl LiveSession {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        if config.mode != RunMode::Interactive {
            return Err(SessionError::Config(format!(
                "live sessions need mode = \"interactive\", got {:?}",
                config.mode
            )));
        }
        let acc = RunAccumulator::new(
            config.timing,
            config.geometry.geometry,
            config.geometry.enforce,
        );
        let matcher = CoincidenceMatcher::new(config.coincidence_config())?;
        Ok(Self {
            delay_ps: config.system_delay_ps(),
            config,
            now: 0,
            choices: Vec::new(),
            first_choice: [None; 2],
            acc,
            t0: None,
            planned_end: None,
            generator: None,
            next_segment: 0,
            pending: VecDeque::new(),
            gen_frontier: 0,
            skip_before: 0,
            resolved: Default::default(),
            released: Default::default(),
            matcher,
            pairs: Vec::new(),
            connected: [true; 2],
            seq: 0,
            output: None,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn now_ps(&self) -> u64 {
        self.now
    }

    pub fn phase(&self) -> LivePhase {
        if self.output.is_some() {
            LivePhase::Finished
        } else if self.connected != [true; 2] {
            LivePhase::Paused
        } else if self.t0.is_none() {
            LivePhase::Waiting
        } else {
            LivePhase::Running
        }
    }

    pub fn is_finished(&self) -> bool {
        self.output.is_some()
    }

    /// Final output once the session has finished.
    pub fn output(&self) -> Option<&RunOutput> {
        self.output.as_ref()
    }

    pub fn handle(&mut self, event: LiveEvent) -> Result<(), SessionError> {
        if self.output.is_some() {
            return match event {
                LiveEvent::Tick { .. } | LiveEvent::Close { .. } => Ok(()),
                _ => Err(SessionError::SessionClosed),
            };
        }
        match event {
            LiveEvent::Tick { time_ps } => self.tick(time_ps),
            LiveEvent::Choice {
                observer,
                setting,
                time_ps,
            } => self.choice(observer, setting, time_ps),
            LiveEvent::Disconnect { observer, time_ps } => {
                self.tick(time_ps)?;
                self.connected[observer.index()] = false;
                Ok(())
            }
            LiveEvent::Reconnect { observer, time_ps } => {
                let was_paused = self.connected != [true; 2];
                self.now = self.now.max(time_ps);
                self.connected[observer.index()] = true;
                if was_paused && self.connected == [true; 2] {
                    // photons that arrived while paused are lost
                    self.skip_before = self.skip_before.max(self.now);
                }
                self.tick(time_ps)
            }
            LiveEvent::Close { time_ps } => self.close(time_ps),
        }
    }

    fn choice(&mut self, observer: Side, setting: u8, time_ps: u64) -> Result<(), SessionError> {
        if setting > 1 {
            return Err(SessionError::Config(format!(
                "setting {setting} is not 0 or 1"
            )));
        }
        if time_ps < self.now {
            return Err(SessionError::StaleChoice {
                time_ps,
                now_ps: self.now,
            });
        }
        self.tick(time_ps)?;
        if self.output.is_some() {
            return Err(SessionError::SessionClosed);
        }
        let prepared = time_ps + self.delay_ps;
        if self.planned_end.is_some_and(|end| prepared >= end) {
            return Ok(());
        }
        self.acc.push_trial(observer, time_ps, prepared, setting)?;
        self.choices.push(ChoiceEvent {
            time_ps,
            observer,
            setting,
        });
        let first = &mut self.first_choice[observer.index()];
        if first.is_none() {
            *first = Some(time_ps);
            if let [Some(a), Some(b)] = self.first_choice {
                self.start_emission(a.max(b) + self.delay_ps)?;
            }
        }
        Ok(())
    }

    fn start_emission(&mut self, t0: u64) -> Result<(), SessionError> {
        let duration = self.config.duration_ps();
        self.t0 = Some(t0);
        self.planned_end = (duration > 0).then(|| t0 + duration);
        self.generator = Some(PhotonGenerator::new(
            self.config.detection_model(),
            self.config.sampling.mode,
            self.config.seed,
            t0,
            self.config.segment_ps(),
        )?);
        self.gen_frontier = t0;
        Ok(())
    }

    fn tick(&mut self, time_ps: u64) -> Result<(), SessionError> {
        self.now = self.now.max(time_ps);
        if self.connected != [true; 2] || self.t0.is_none() {
            return Ok(());
        }
        let lagged = self.now.saturating_sub(2 * MAX_JITTER_PS);
        if let Some(end) = self.planned_end {
            if lagged >= end {
                return self.finish(end);
            }
        }
        self.generate_to(lagged)?;
        self.release(lagged.saturating_sub(MAX_JITTER_PS))
    }

    /// Resolve every pending detection arriving before `target`.
    fn generate_to(&mut self, target: u64) -> Result<(), SessionError> {
        if target <= self.gen_frontier {
            return Ok(());
        }
        let generator = self.generator.as_ref().expect("emission started");
        while generator.segment_bounds(self.next_segment).0 < target {
            self.pending
                .extend(generator.segment_pending(self.next_segment));
            self.next_segment += 1;
        }
        let mut out = [Vec::new(), Vec::new()];
        while let Some(p) = self.pending.front() {
            if p.arrival_ps >= target {
                break;
            }
            let p = self.pending.pop_front().expect("front exists");
            if p.arrival_ps >= self.skip_before {
                p.resolve(generator.model(), self.acc.schedules(), &mut out)?;
            }
        }
        for (heap, tags) in self.resolved.iter_mut().zip(out) {
            heap.extend(tags.into_iter().map(Reverse));
        }
        self.gen_frontier = target;
        Ok(())
    }

    /// Feed resolved tags earlier than `bound` to the matcher.
    fn release(&mut self, bound: u64) -> Result<(), SessionError> {
        loop {
            let head = |h: &BinaryHeap<Reverse<TimeTag>>| {
                h.peek().map(|r| r.0.time).filter(|&t| t < bound)
            };
            let side = match (head(&self.resolved[0]), head(&self.resolved[1])) {
                (None, None) => break,
                (Some(_), None) => Side::Alice,
                (None, Some(_)) => Side::Bob,
                (Some(a), Some(b)) => {
                    if a <= b {
                        Side::Alice
                    } else {
                        Side::Bob
                    }
                }
            };
            let tag = self.resolved[side.index()].pop().expect("peeked").0;
            self.matcher.advance_watermark(tag.time);
            self.matcher.push(side, tag)?;
            self.acc.add_tag(side, &tag);
            self.released[side.index()].push(tag);
        }
        self.matcher.advance_watermark(bound);
        self.drain_pairs()
    }

    fn drain_pairs(&mut self) -> Result<(), SessionError> {
        while let Some(pair) = self.matcher.pop_ready() {
            self.acc.add_pair(&pair)?;
            self.pairs.push(pair);
        }
        Ok(())
    }

    fn close(&mut self, time_ps: u64) -> Result<(), SessionError> {
        self.now = self.now.max(time_ps);
        let Some(t0) = self.t0 else {
            return self.finish(0);
        };
        let mut end = self.planned_end.unwrap_or(u64::MAX).min(self.now.max(t0));
        if Some(end) != self.planned_end {
            // the persisted duration must map back to the same end
            let duration_s = ps_to_seconds(end - t0);
            self.config.duration_s = duration_s;
            end = t0 + seconds_to_ps(duration_s);
            self.planned_end = Some(end);
        }
        self.finish(end)
    }

    fn finish(&mut self, end: u64) -> Result<(), SessionError> {
        if self.t0.is_some() && self.connected == [true; 2] {
            self.generate_to(end)?;
        }
        self.release(u64::MAX)?;
        self.matcher.finish();
        self.drain_pairs()?;
        self.acc.truncate_trials(end);
        let window = self.t0.map(|t0| (t0, end)).filter(|(a, b)| b > a);
        if window.is_none() {
            self.config.duration_s = 0.0;
            self.acc.truncate_trials(0);
        }
        let report = RunReport::build(
            &self.config,
            &self.acc,
            window,
            self.started.elapsed().as_secs_f64(),
        );
        self.output = Some(RunOutput {
            choices: ChoiceLog::new(self.config.config_hash(), std::mem::take(&mut self.choices)),
            config: self.config.clone(),
            tags: std::mem::take(&mut self.released),
            pairs: std::mem::take(&mut self.pairs),
            trials: self.acc.trials().clone(),
            report,
        });
        Ok(())
    }

    pub fn snapshot(&mut self) -> StatsSnapshot {
        self.seq += 1;
        let counts = *self.acc.counts();
        let result = chsh(&counts).ok();
        StatsSnapshot {
            seq: self.seq,
            session_time_s: ps_to_seconds(self.now),
            phase: self.phase(),
            pair_loss_db: self.config.pair_loss_db(),
            trials: self.acc.trial_count(),
            counted_pairs: self.acc.counted(),
            excluded_pairs: self.acc.excluded(),
            counts,
            s_value: result.map(|r| r.s_value),
            sigma: result.map(|r| r.sigma),
            tallies: self.acc.tallies(),
        }
    }
}
