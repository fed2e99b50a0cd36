//! Observer setting choices and the choice log.
//!
//! Log format, one record per line after a three-line header:
//!
//! ```text
//! # lunabell choice log
//! # schema_version=1
//! # config_hash=<64 hex digits>
//! <t_choice_ps> <alice|bob> <0|1>
//! ```
//!
//! Records are in non-decreasing time order.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ChoiceConfig;
use super::SessionError;
use crate::photonics::{ScheduledSetting, SettingSchedule};
use crate::seed::{rng_for, STREAM_CHOICES_ALICE, STREAM_CHOICES_BOB};
use crate::tagstream::Side;
use crate::PS_PER_S;

pub const CHOICE_LOG_SCHEMA_VERSION: u32 = 1;
const TITLE: &str = "# lunabell choice log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceEvent {
    pub time_ps: u64,
    pub observer: Side,
    pub setting: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChoiceLog {
    pub config_hash: String,
    pub events: Vec<ChoiceEvent>,
}

fn corrupt(line: usize, reason: impl Into<String>) -> SessionError {
    SessionError::CorruptLog {
        line,
        reason: reason.into(),
    }
}

impl ChoiceLog {
    pub fn new(config_hash: impl Into<String>, mut events: Vec<ChoiceEvent>) -> Self {
        events.sort_by_key(|e| (e.time_ps, e.observer));
        Self {
            config_hash: config_hash.into(),
            events,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{TITLE}\n# schema_version={CHOICE_LOG_SCHEMA_VERSION}\n# config_hash={}\n",
            self.config_hash
        );
        for e in &self.events {
            out.push_str(&format!(
                "{} {} {}\n",
                e.time_ps,
                e.observer.name(),
                e.setting
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SessionError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut lines = body.split('\n').enumerate().map(|(i, l)| (i + 1, l));

        match lines.next() {
            Some((_, TITLE)) => {}
            _ => return Err(corrupt(1, "missing choice log title")),
        }
        let version = match lines.next() {
            Some((_, l)) => l.strip_prefix("# schema_version=").map(str::parse::<u32>),
            None => None,
        };
        match version {
            Some(Ok(CHOICE_LOG_SCHEMA_VERSION)) => {}
            Some(Ok(found)) => return Err(SessionError::SchemaVersion { found }),
            _ => return Err(corrupt(2, "missing schema_version")),
        }
        let config_hash = match lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# config_hash="))
        {
            Some(h) if !h.is_empty() && h.bytes().all(|b| b.is_ascii_hexdigit()) => h.to_string(),
            _ => return Err(corrupt(3, "missing config_hash")),
        };

        let mut events = Vec::new();
        let mut last = 0u64;
        for (n, line) in lines {
            let mut fields = line.split(' ');
            let (Some(t), Some(obs), Some(set), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(corrupt(n, "expected `t_choice_ps observer setting`"));
            };
            let time_ps: u64 = t
                .parse()
                .map_err(|_| corrupt(n, format!("bad time `{t}`")))?;
            let observer =
                Side::parse(obs).ok_or_else(|| corrupt(n, format!("bad observer `{obs}`")))?;
            let setting = match set {
                "0" => 0,
                "1" => 1,
                _ => return Err(corrupt(n, format!("bad setting `{set}`"))),
            };
            if time_ps < last {
                return Err(corrupt(n, "time goes backwards"));
            }
            last = time_ps;
            events.push(ChoiceEvent {
                time_ps,
                observer,
                setting,
            });
        }
        Ok(Self {
            config_hash,
            events,
        })
    }

    pub fn read(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), SessionError> {
        std::fs::write(path, self.render()).map_err(|e| SessionError::io(path, e))
    }

    pub fn per_side(&self) -> [Vec<ChoiceEvent>; 2] {
        split_sides(&self.events)
    }
}

pub fn split_sides(events: &[ChoiceEvent]) -> [Vec<ChoiceEvent>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for e in events {
        out[e.observer.index()].push(*e);
    }
    out
}

/// Start and end of photon emission: from the moment both observers have a
/// prepared setting, for `duration_ps`. `None` when either observer never
/// chose or the duration is zero.
pub fn emission_window(
    events: &[ChoiceEvent],
    system_delay_ps: u64,
    duration_ps: u64,
) -> Option<(u64, u64)> {
    if duration_ps == 0 {
        return None;
    }
    let sides = split_sides(events);
    let first = |s: &Vec<ChoiceEvent>| s.iter().map(|e| e.time_ps).min();
    let t0 = first(&sides[0])?.max(first(&sides[1])?) + system_delay_ps;
    Some((t0, t0 + duration_ps))
}

/// Per-side setting schedules with preparation time choice + delay.
pub fn schedules(events: &[ChoiceEvent], system_delay_ps: u64) -> [SettingSchedule; 2] {
    let mut out = [SettingSchedule::default(), SettingSchedule::default()];
    for side in split_sides(events) {
        let mut side = side;
        side.sort_by_key(|e| e.time_ps);
        for e in side {
            out[e.observer.index()]
                .push(ScheduledSetting {
                    prepared_ps: e.time_ps + system_delay_ps,
                    setting: e.setting,
                })
                .expect("sorted, valid settings");
        }
    }
    out
}

fn draw_gap(config: &ChoiceConfig, rng: &mut impl Rng) -> u64 {
    let rate = if config.max_rate_hz > config.min_rate_hz {
        rng.random_range(config.min_rate_hz..=config.max_rate_hz)
    } else {
        config.min_rate_hz
    };
    ((PS_PER_S as f64 / rate).round() as u64).max(1)
}

/// Random observers: each picks a fair setting after every gap of
/// 1/U(min_rate, max_rate), starting one gap after time zero. Choices stop
/// once their preparation would fall past the emission window.
pub fn generate_choices(
    seed: u64,
    config: &ChoiceConfig,
    system_delay_ps: u64,
    duration_ps: u64,
) -> Vec<ChoiceEvent> {
    if duration_ps == 0 {
        return Vec::new();
    }
    let mut rngs = [
        rng_for(seed, STREAM_CHOICES_ALICE, 0),
        rng_for(seed, STREAM_CHOICES_BOB, 0),
    ];
    let mut next = [0u64; 2];
    for (n, rng) in next.iter_mut().zip(rngs.iter_mut()) {
        *n = draw_gap(config, rng);
    }
    let t0 = next[0].max(next[1]) + system_delay_ps;
    let end = t0 + duration_ps;
    let mut events = Vec::new();
    for side in Side::BOTH {
        let i = side.index();
        let rng = &mut rngs[i];
        let mut t = next[i];
        while t + system_delay_ps < end {
            let setting = rng.random_range(0..2u8);
            events.push(ChoiceEvent {
                time_ps: t,
                observer: side,
                setting,
            });
            t += draw_gap(config, rng);
        }
    }
    events.sort_by_key(|e| (e.time_ps, e.observer));
    events
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> ChoiceLog {
        ChoiceLog::new(
            "ab12",
            vec![
                ChoiceEvent {
                    time_ps: 10,
                    observer: Side::Bob,
                    setting: 1,
                },
                ChoiceEvent {
                    time_ps: 5,
                    observer: Side::Alice,
                    setting: 0,
                },
            ],
        )
    }

    #[test]
    fn log_round_trip() {
        let log = sample_log();
        let text = log.render();
        assert!(text.starts_with(
            "# lunabell choice log\n# schema_version=1\n# config_hash=ab12\n5 alice 0\n"
        ));
        assert_eq!(ChoiceLog::parse(&text).unwrap(), log);
        let empty = ChoiceLog::new("00", vec![]);
        assert_eq!(ChoiceLog::parse(&empty.render()).unwrap(), empty);
    }

    #[test]
    fn corrupted_logs_report_line() {
        let text = sample_log().render();
        let truncated = &text[..text.len() - 3];
        match ChoiceLog::parse(truncated) {
            Err(SessionError::CorruptLog { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let swapped = text.replace("5 alice 0", "50 alice 0");
        assert!(matches!(
            ChoiceLog::parse(&swapped),
            Err(SessionError::CorruptLog { line: 5, .. })
        ));
        let v2 = text.replace("schema_version=1", "schema_version=2");
        assert!(matches!(
            ChoiceLog::parse(&v2),
            Err(SessionError::SchemaVersion { found: 2 })
        ));
        assert!(matches!(
            ChoiceLog::parse(&text.replace("alice 0", "carol 0")),
            Err(SessionError::CorruptLog { line: 4, .. })
        ));
        assert!(ChoiceLog::parse("").is_err());
    }

    #[test]
    fn generated_choices_pace_and_cover_window() {
        let cfg = ChoiceConfig::default();
        let delay = 50_000_000_000;
        let dur = 60 * PS_PER_S;
        let ev = generate_choices(3, &cfg, delay, dur);
        assert_eq!(ev, generate_choices(3, &cfg, delay, dur));
        let (t0, end) = emission_window(&ev, delay, dur).unwrap();
        for side in split_sides(&ev) {
            for w in side.windows(2) {
                let gap = w[1].time_ps - w[0].time_ps;
                assert!((PS_PER_S / 4..=PS_PER_S / 2).contains(&gap), "{gap}");
            }
            assert!(side[0].time_ps + delay <= t0);
            assert!(side.last().unwrap().time_ps + delay < end);
            // 2–4 Hz over 60 s
            assert!((120..=240).contains(&side.len()));
        }
        assert!(generate_choices(3, &cfg, delay, 0).is_empty());
    }

    #[test]
    fn schedule_from_choices() {
        let s = schedules(&sample_log().events, 100);
        assert_eq!(s[0].setting_at(104), None);
        assert_eq!(s[0].setting_at(105), Some(0));
        assert_eq!(s[1].setting_at(110), Some(1));
        assert_eq!(
            emission_window(&sample_log().events, 100, 7),
            Some((110, 117))
        );
    }
}
