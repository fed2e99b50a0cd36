//! Per-run bookkeeping shared by batch and live evaluation: trials, validity,
//! setting-resolved counts.

use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::analysis::SettingCounts;
use crate::photonics::{ScheduledSetting, SettingSchedule};
use crate::ps_to_seconds;
use crate::spacetime::{validate_trial, GeometryConfig, Loophole, TimingBudget, Validity};
use crate::tagstream::{decode_channel, CoincidencePair, Outcome, Side, TimeTag};

/// One observer choice and what became of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub observer: Side,
    pub choice_ps: u64,
    pub prepared_ps: u64,
    pub setting: u8,
    /// Earliest paired detection while this setting was active.
    pub detection_ps: Option<u64>,
    pub outcome: Option<Outcome>,
    pub validity: Option<Validity>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopholeTally {
    pub valid: u64,
    pub invalid: u64,
    pub undetected: u64,
}

impl LoopholeTally {
    pub fn total(&self) -> u64 {
        self.valid + self.invalid + self.undetected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFate {
    Counted,
    /// Outside the validity windows with geometry enforced.
    Excluded,
    /// A tag fell before its side's first prepared setting.
    Unattributed,
}

#[derive(Debug, Clone)]
pub struct RunAccumulator {
    timing: TimingBudget,
    geometry: GeometryConfig,
    enforce: bool,
    schedules: [SettingSchedule; 2],
    trials: [Vec<TrialRecord>; 2],
    counts: SettingCounts,
    tags: [u64; 2],
    matched: u64,
    counted: u64,
    excluded: u64,
    unattributed: u64,
}

impl RunAccumulator {
    pub fn new(timing: TimingBudget, geometry: GeometryConfig, enforce: bool) -> Self {
        Self {
            timing,
            geometry,
            enforce,
            schedules: Default::default(),
            trials: Default::default(),
            counts: SettingCounts::default(),
            tags: [0; 2],
            matched: 0,
            counted: 0,
            excluded: 0,
            unattributed: 0,
        }
    }

    pub fn push_trial(
        &mut self,
        observer: Side,
        choice_ps: u64,
        prepared_ps: u64,
        setting: u8,
    ) -> Result<(), SessionError> {
        self.schedules[observer.index()].push(ScheduledSetting {
            prepared_ps,
            setting,
        })?;
        self.trials[observer.index()].push(TrialRecord {
            observer,
            choice_ps,
            prepared_ps,
            setting,
            detection_ps: None,
            outcome: None,
            validity: None,
        });
        Ok(())
    }

    /// Drop trials prepared at or after `end_ps`. They cannot hold
    /// detections, since tags are only generated before the end.
    pub fn truncate_trials(&mut self, end_ps: u64) {
        for (trials, schedule) in self.trials.iter_mut().zip(self.schedules.iter_mut()) {
            let keep = trials.partition_point(|t| t.prepared_ps < end_ps);
            debug_assert!(trials[keep..].iter().all(|t| t.detection_ps.is_none()));
            trials.truncate(keep);
            schedule.truncate(keep);
        }
    }

    pub fn schedules(&self) -> [&SettingSchedule; 2] {
        [&self.schedules[0], &self.schedules[1]]
    }

    pub fn trials(&self) -> &[Vec<TrialRecord>; 2] {
        &self.trials
    }

    pub fn add_tag(&mut self, side: Side, _tag: &TimeTag) {
        self.tags[side.index()] += 1;
    }

    pub fn add_pair(&mut self, pair: &CoincidencePair) -> Result<PairFate, SessionError> {
        self.matched += 1;
        let mut resolved = [(0usize, Outcome::Plus, Validity::default()); 2];
        for (side, tag) in [(Side::Alice, &pair.alice), (Side::Bob, &pair.bob)] {
            let s = side.index();
            let (Some(idx), Some((ch_side, outcome))) = (
                self.schedules[s].active_at(tag.time),
                decode_channel(tag.channel),
            ) else {
                self.unattributed += 1;
                return Ok(PairFate::Unattributed);
            };
            if ch_side != side {
                self.unattributed += 1;
                return Ok(PairFate::Unattributed);
            }
            let trial = &self.trials[s][idx];
            let validity = validate_trial(
                ps_to_seconds(trial.prepared_ps),
                ps_to_seconds(tag.time),
                &self.timing,
                &self.geometry,
            )?;
            resolved[s] = (idx, outcome, validity);
        }
        for (s, tag) in [&pair.alice, &pair.bob].into_iter().enumerate() {
            let (idx, outcome, validity) = resolved[s];
            let trial = &mut self.trials[s][idx];
            if trial.detection_ps.is_none_or(|d| tag.time < d) {
                trial.detection_ps = Some(tag.time);
                trial.outcome = Some(outcome);
                trial.validity = Some(validity);
            }
        }
        let (ia, oa, va) = resolved[0];
        let (ib, ob, vb) = resolved[1];
        if self.enforce && !(va.combined() && vb.combined()) {
            self.excluded += 1;
            return Ok(PairFate::Excluded);
        }
        self.counts.add(
            self.trials[0][ia].setting,
            self.trials[1][ib].setting,
            oa,
            ob,
        );
        self.counted += 1;
        Ok(PairFate::Counted)
    }

    pub fn counts(&self) -> &SettingCounts {
        &self.counts
    }

    pub fn tags(&self) -> [u64; 2] {
        self.tags
    }

    pub fn matched(&self) -> u64 {
        self.matched
    }

    pub fn counted(&self) -> u64 {
        self.counted
    }

    pub fn excluded(&self) -> u64 {
        self.excluded
    }

    pub fn unattributed(&self) -> u64 {
        self.unattributed
    }

    pub fn trial_count(&self) -> [u64; 2] {
        [self.trials[0].len() as u64, self.trials[1].len() as u64]
    }

    /// Valid / invalid / undetected trials for each loophole, in
    /// [`Loophole::ALL`] order.
    pub fn tallies(&self) -> [LoopholeTally; 3] {
        let mut out = [LoopholeTally::default(); 3];
        for trial in self.trials.iter().flatten() {
            for (slot, loophole) in out.iter_mut().zip(Loophole::ALL) {
                match trial.validity {
                    None => slot.undetected += 1,
                    Some(v) if v.get(loophole) => slot.valid += 1,
                    Some(_) => slot.invalid += 1,
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagstream::channel_for;
    use crate::PS_PER_S;

    fn pair(ta: u64, oa: Outcome, tb: u64, ob: Outcome) -> CoincidencePair {
        CoincidencePair::new(
            TimeTag::new(ta, channel_for(Side::Alice, oa)),
            TimeTag::new(tb, channel_for(Side::Bob, ob)),
        )
    }

    fn acc(enforce: bool) -> RunAccumulator {
        let mut a =
            RunAccumulator::new(TimingBudget::default(), GeometryConfig::default(), enforce);
        a.push_trial(Side::Alice, 0, PS_PER_S, 1).unwrap();
        a.push_trial(Side::Bob, 0, PS_PER_S, 0).unwrap();
        a
    }

    #[test]
    fn counts_by_active_setting() {
        let mut a = acc(false);
        let p = PS_PER_S + 1000;
        assert_eq!(
            a.add_pair(&pair(p, Outcome::Plus, p, Outcome::Minus))
                .unwrap(),
            PairFate::Counted
        );
        assert_eq!(a.counts().counts[2], [0, 1, 0, 0]);
        assert_eq!(
            a.add_pair(&pair(10, Outcome::Plus, p, Outcome::Plus))
                .unwrap(),
            PairFate::Unattributed
        );
        let t = a.tallies();
        for tally in t {
            assert_eq!(tally.valid, 2);
            assert_eq!(tally.total(), 2);
        }
    }

    #[test]
    fn late_detection_is_invalid_and_excluded_when_enforced() {
        for enforce in [false, true] {
            let mut a = acc(enforce);
            // 1.0 s after preparation: beyond 0.78 s, within 2.06 s
            let late = 2 * PS_PER_S;
            let fate = a
                .add_pair(&pair(late, Outcome::Plus, late, Outcome::Plus))
                .unwrap();
            assert_eq!(fate == PairFate::Excluded, enforce);
            let t = a.tallies();
            assert_eq!(
                t[0],
                LoopholeTally {
                    valid: 0,
                    invalid: 2,
                    undetected: 0
                }
            );
            assert_eq!(
                t[1],
                LoopholeTally {
                    valid: 2,
                    invalid: 0,
                    undetected: 0
                }
            );
            let v = a.trials()[0][0].validity.unwrap();
            assert!(!v.locality_ok && v.foc_ok);
        }
    }

    #[test]
    fn earliest_detection_wins() {
        let mut a = acc(false);
        let t1 = PS_PER_S + 5000;
        let t0 = PS_PER_S + 1000;
        a.add_pair(&pair(t1, Outcome::Minus, t1, Outcome::Minus))
            .unwrap();
        a.add_pair(&pair(t0, Outcome::Plus, t0, Outcome::Plus))
            .unwrap();
        assert_eq!(a.trials()[1][0].detection_ps, Some(t0));
        assert_eq!(a.trials()[1][0].outcome, Some(Outcome::Plus));
    }
}
