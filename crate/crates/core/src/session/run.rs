//! Headless runs, run directories and replay.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::accumulator::{RunAccumulator, TrialRecord};
use super::choices::{emission_window, generate_choices, ChoiceEvent, ChoiceLog};
use super::config::{ChoiceSourceKind, RunMode, SessionConfig};
use super::report::RunReport;
use super::SessionError;
use crate::photonics::PhotonGenerator;
use crate::tagstream::{
    decode_channel, match_streams, read_tags, write_tags, CoincidencePair, Side, TagFileError,
    TimeTag,
};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHOICES_FILE: &str = "choices.log";
pub const ALICE_TAGS_FILE: &str = "alice.tags";
pub const BOB_TAGS_FILE: &str = "bob.tags";
pub const PAIRS_FILE: &str = "pairs.txt";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: SessionConfig,
    pub choices: ChoiceLog,
    pub tags: [Vec<TimeTag>; 2],
    pub pairs: Vec<CoincidencePair>,
    pub trials: [Vec<TrialRecord>; 2],
    pub report: RunReport,
}

/// Accumulator preloaded with every choice prepared before `end`.
pub(crate) fn accumulator_for(
    config: &SessionConfig,
    events: &[ChoiceEvent],
    end_ps: Option<u64>,
) -> Result<RunAccumulator, SessionError> {
    let mut acc = RunAccumulator::new(
        config.timing,
        config.geometry.geometry,
        config.geometry.enforce,
    );
    let delay = config.system_delay_ps();
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| (e.time_ps, e.observer));
    for e in sorted {
        let prepared = e.time_ps + delay;
        if end_ps.is_some_and(|end| prepared < end) {
            acc.push_trial(e.observer, e.time_ps, prepared, e.setting)?;
        }
    }
    Ok(acc)
}

/// Photon tags for a choice schedule over its emission window.
pub fn simulate_tags(
    config: &SessionConfig,
    events: &[ChoiceEvent],
) -> Result<[Vec<TimeTag>; 2], SessionError> {
    let Some((t0, end)) = emission_window(events, config.system_delay_ps(), config.duration_ps())
    else {
        return Ok([Vec::new(), Vec::new()]);
    };
    let acc = accumulator_for(config, events, Some(end))?;
    let generator = PhotonGenerator::new(
        config.detection_model(),
        config.sampling.mode,
        config.seed,
        t0,
        config.segment_ps(),
    )?;
    Ok(generator.generate(end, acc.schedules())?.tags)
}

/// Match and tally persisted or freshly simulated tags.
fn evaluate(
    config: &SessionConfig,
    choices: ChoiceLog,
    tags: [Vec<TimeTag>; 2],
    started: Instant,
) -> Result<RunOutput, SessionError> {
    let window = emission_window(
        &choices.events,
        config.system_delay_ps(),
        config.duration_ps(),
    );
    let mut acc = accumulator_for(config, &choices.events, window.map(|w| w.1))?;
    for side in Side::BOTH {
        for tag in &tags[side.index()] {
            acc.add_tag(side, tag);
        }
    }
    let mut pairs = Vec::new();
    match_streams::<_, _, SessionError>(
        tags[0].iter().copied().map(Ok),
        tags[1].iter().copied().map(Ok),
        config.coincidence_config(),
        |p| pairs.push(p),
    )?;
    for p in &pairs {
        acc.add_pair(p)?;
    }
    let report = RunReport::build(config, &acc, window, started.elapsed().as_secs_f64());
    Ok(RunOutput {
        config: config.clone(),
        choices,
        tags,
        pairs,
        trials: acc.trials().clone(),
        report,
    })
}

pub fn run_headless(config: &SessionConfig) -> Result<RunOutput, SessionError> {
    let started = Instant::now();
    config.validate()?;
    if config.mode != RunMode::Headless {
        return Err(SessionError::Config(format!(
            "run_headless needs mode = \"headless\", got {:?}",
            config.mode
        )));
    }
    let events = match config.choices.source {
        ChoiceSourceKind::Rng => generate_choices(
            config.seed,
            &config.choices,
            config.system_delay_ps(),
            config.duration_ps(),
        ),
        ChoiceSourceKind::Replay => {
            let path = config.choices.replay_path.as_deref().expect("validated");
            ChoiceLog::read(path)?.events
        }
        ChoiceSourceKind::Live => unreachable!("rejected by validate"),
    };
    let tags = simulate_tags(config, &events)?;
    evaluate(
        config,
        ChoiceLog::new(config.config_hash(), events),
        tags,
        started,
    )
}

/// Evaluate a run from externally supplied choices and tags.
pub fn evaluate_run(
    config: &SessionConfig,
    choices: ChoiceLog,
    tags: [Vec<TimeTag>; 2],
) -> Result<RunOutput, SessionError> {
    evaluate(config, choices, tags, Instant::now())
}

pub fn render_pairs(pairs: &[CoincidencePair]) -> String {
    let mut out = String::from("# alice_ps alice_channel bob_ps bob_channel delta_ps\n");
    for p in pairs {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            p.alice.time, p.alice.channel, p.bob.time, p.bob.channel, p.delta_ps
        );
    }
    out
}

pub fn parse_pairs(text: &str) -> Result<Vec<CoincidencePair>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = || SessionError::CorruptPairs { line: i + 1 };
        let f: Vec<u64> = line
            .split_whitespace()
            .take(4)
            .map(|x| x.parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        if f.len() != 4 {
            return Err(bad());
        }
        let channel = |c: u64| {
            u8::try_from(c)
                .ok()
                .filter(|c| decode_channel(*c).is_some())
        };
        let (Some(ca), Some(cb)) = (channel(f[1]), channel(f[3])) else {
            return Err(bad());
        };
        out.push(CoincidencePair::new(
            TimeTag::new(f[0], ca),
            TimeTag::new(f[2], cb),
        ));
    }
    Ok(out)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), SessionError> {
    std::fs::write(path, contents).map_err(|e| SessionError::io(path, e))
}

/// Write the run directory.
pub fn persist(output: &RunOutput, dir: &Path) -> Result<(), SessionError> {
    std::fs::create_dir_all(dir).map_err(|e| SessionError::io(dir, e))?;
    write_file(&dir.join(CONFIG_FILE), output.config.to_toml()?)?;
    output.choices.write(&dir.join(CHOICES_FILE))?;
    write_tags(dir.join(ALICE_TAGS_FILE), &output.tags[0])?;
    write_tags(dir.join(BOB_TAGS_FILE), &output.tags[1])?;
    write_file(&dir.join(PAIRS_FILE), render_pairs(&output.pairs))?;
    write_file(&dir.join(REPORT_TEXT_FILE), output.report.to_text())?;
    write_file(&dir.join(REPORT_KV_FILE), output.report.to_kv())?;
    Ok(())
}

/// Recompute a run from its directory: config snapshot, choice log and tag
/// files. The log must carry the config's hash.
pub fn run_replay(dir: &Path) -> Result<RunOutput, SessionError> {
    let started = Instant::now();
    let config = SessionConfig::load(&dir.join(CONFIG_FILE), &[])?;
    let choices = ChoiceLog::read(&dir.join(CHOICES_FILE))?;
    let expected = config.config_hash();
    if choices.config_hash != expected {
        return Err(SessionError::ConfigHashMismatch {
            expected,
            found: choices.config_hash,
        });
    }
    let read = |name: &str| -> Result<Vec<TimeTag>, TagFileError> { read_tags(dir.join(name)) };
    let tags = [read(ALICE_TAGS_FILE)?, read(BOB_TAGS_FILE)?];
    evaluate(&config, choices, tags, started)
}
