//! Streaming two-party coincidence matching.
//!
//! Pairing rule (greedy-nearest-unique): among all Alice/Bob tag pairs with
//! |Δt| ≤ window, repeatedly take the one with the smallest |Δt| and retire
//! both tags. Ties break toward the earlier Bob tag, then the earlier Alice
//! tag, where "earlier" is stream position. The result is the unique greedy
//! matching under that total order on candidate pairs.
//!
//! The streaming engine reaches the same matching in one forward pass. It
//! keeps only unmatched tags that may still pair and commits the smallest
//! buffered candidate once no future tag can undercut it: every future tag is
//! at or after the watermark `W`, so a candidate (a, b) with gap `d` is final
//! when `d ≤ W − max(t_a, t_b)`. A committed candidate that is minimal among
//! all remaining candidates touching its tags is always part of the greedy
//! matching, so commit order does not change the result.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Side, TimeTag};

/// Default half-width of the coincidence window, ps (≈6× the 82 ps system FWHM).
pub const DEFAULT_WINDOW_PS: u64 = 500;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoincidenceError {
    #[error("coincidence window must be positive")]
    ZeroWindow,
    #[error("{} stream is not time-sorted at index {index}", side.name())]
    Unsorted { side: Side, index: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceConfig {
    /// Pairs need |t_bob − t_alice| ≤ window_ps.
    pub window_ps: u64,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        Self {
            window_ps: DEFAULT_WINDOW_PS,
        }
    }
}

impl CoincidenceConfig {
    pub fn new(window_ps: u64) -> Result<Self, CoincidenceError> {
        if window_ps == 0 {
            return Err(CoincidenceError::ZeroWindow);
        }
        Ok(Self { window_ps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoincidencePair {
    pub alice: TimeTag,
    pub bob: TimeTag,
    /// t_bob − t_alice, ps.
    pub delta_ps: i64,
}

impl CoincidencePair {
    pub fn new(alice: TimeTag, bob: TimeTag) -> Self {
        Self {
            alice,
            bob,
            delta_ps: bob.time as i64 - alice.time as i64,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    index: u64,
    tag: TimeTag,
}

/// Incremental matcher. Feed each side in time order with [`push`], optionally
/// promise a lower bound on all future tags with [`advance_watermark`], and
/// collect pairs (in Alice-stream order) with [`pop_ready`].
///
/// [`push`]: CoincidenceMatcher::push
/// [`advance_watermark`]: CoincidenceMatcher::advance_watermark
/// [`pop_ready`]: CoincidenceMatcher::pop_ready
#[derive(Debug)]
pub struct CoincidenceMatcher {
    window: u64,
    buffers: [VecDeque<Entry>; 2],
    pushed: [u64; 2],
    last: [Option<u64>; 2],
    closed: [bool; 2],
    floor: u64,
    committed: BinaryHeap<Reverse<(u64, u64, CoincidencePair)>>,
    peak_buffered: usize,
}

impl CoincidenceMatcher {
    pub fn new(config: CoincidenceConfig) -> Result<Self, CoincidenceError> {
        if config.window_ps == 0 {
            return Err(CoincidenceError::ZeroWindow);
        }
        Ok(Self {
            window: config.window_ps,
            buffers: [VecDeque::new(), VecDeque::new()],
            pushed: [0; 2],
            last: [None; 2],
            closed: [false; 2],
            floor: 0,
            committed: BinaryHeap::new(),
            peak_buffered: 0,
        })
    }

    pub fn window_ps(&self) -> u64 {
        self.window
    }

    /// Largest number of tags held at once (unmatched buffers plus committed
    /// pairs awaiting release).
    pub fn peak_buffered(&self) -> usize {
        self.peak_buffered
    }

    pub fn pushed(&self) -> [u64; 2] {
        self.pushed
    }

    fn watermark(&self) -> u64 {
        let mut w = u64::MAX;
        for s in 0..2 {
            let bound = if self.closed[s] {
                u64::MAX
            } else {
                self.last[s].unwrap_or(0)
            };
            w = w.min(bound);
        }
        w.max(self.floor)
    }

    pub fn push(&mut self, side: Side, tag: TimeTag) -> Result<(), CoincidenceError> {
        let s = side.index();
        let below_last = self.last[s].is_some_and(|t| tag.time < t);
        if below_last || tag.time < self.floor || self.closed[s] {
            return Err(CoincidenceError::Unsorted {
                side,
                index: self.pushed[s],
            });
        }
        self.buffers[s].push_back(Entry {
            index: self.pushed[s],
            tag,
        });
        self.pushed[s] += 1;
        self.last[s] = Some(tag.time);
        let held = self.buffers[0].len() + self.buffers[1].len() + self.committed.len();
        self.peak_buffered = self.peak_buffered.max(held);
        self.step();
        Ok(())
    }

    /// Promise that no future tag on either side is earlier than `t`.
    pub fn advance_watermark(&mut self, t: u64) {
        if t > self.floor {
            self.floor = t;
            self.step();
        }
    }

    pub fn close_side(&mut self, side: Side) {
        self.closed[side.index()] = true;
        self.step();
    }

    pub fn finish(&mut self) {
        self.closed = [true, true];
        self.floor = u64::MAX;
        self.step();
    }

    /// Smallest candidate among buffered tags as (gap, alice pos, bob pos).
    fn min_candidate(&self) -> Option<(u64, usize, usize)> {
        let [alice, bob] = &self.buffers;
        let mut best: Option<((u64, u64, u64), usize, usize)> = None;
        let mut start = 0;
        for (i, a) in alice.iter().enumerate() {
            while start < bob.len() && bob[start].tag.time.saturating_add(self.window) < a.tag.time
            {
                start += 1;
            }
            for (j, b) in bob.iter().enumerate().skip(start) {
                if b.tag.time > a.tag.time.saturating_add(self.window) {
                    break;
                }
                let key = (a.tag.time.abs_diff(b.tag.time), b.index, a.index);
                if best.is_none_or(|(k, _, _)| key < k) {
                    best = Some((key, i, j));
                }
            }
        }
        best.map(|((gap, _, _), i, j)| (gap, i, j))
    }

    fn step(&mut self) {
        let w = self.watermark();
        while let Some((gap, i, j)) = self.min_candidate() {
            let a = self.buffers[0][i];
            let b = self.buffers[1][j];
            let later = a.tag.time.max(b.tag.time);
            let safe = w == u64::MAX || (w >= later && gap <= w - later);
            if !safe {
                break;
            }
            self.buffers[0].remove(i);
            self.buffers[1].remove(j);
            let pair = CoincidencePair::new(a.tag, b.tag);
            self.committed.push(Reverse((a.tag.time, a.index, pair)));
        }
        self.evict(w);
    }

    /// Drop tags that can no longer pair with anything.
    fn evict(&mut self, w: u64) {
        let window = self.window;
        for s in 0..2 {
            let (mine, other) = if s == 0 {
                let [a, b] = &mut self.buffers;
                (a, &*b)
            } else {
                let [a, b] = &mut self.buffers;
                (b, &*a)
            };
            mine.retain(|x| {
                let stale = x.tag.time.saturating_add(window) < w;
                if !stale {
                    return true;
                }
                other
                    .iter()
                    .any(|y| y.tag.time.abs_diff(x.tag.time) <= window)
            });
        }
    }

    /// Next committed pair whose position in Alice order is final.
    pub fn pop_ready(&mut self) -> Option<CoincidencePair> {
        let w = self.watermark();
        let pending_alice = self.buffers[0].front().map(|e| (e.tag.time, e.index));
        let Reverse((time, index, _)) = self.committed.peek()?;
        let ready = *time <= w && pending_alice.is_none_or(|k| (*time, *index) < k);
        if ready {
            self.committed.pop().map(|Reverse((_, _, pair))| pair)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub tags: [u64; 2],
    pub pairs: u64,
    pub peak_buffered: usize,
}

/// Run the matcher over two fallible tag iterators, merging them by time.
pub fn match_streams<A, B, E>(
    alice: A,
    bob: B,
    config: CoincidenceConfig,
    mut on_pair: impl FnMut(CoincidencePair),
) -> Result<MatchStats, E>
where
    A: IntoIterator<Item = Result<TimeTag, E>>,
    B: IntoIterator<Item = Result<TimeTag, E>>,
    E: From<CoincidenceError>,
{
    let mut matcher = CoincidenceMatcher::new(config)?;
    let mut alice = alice.into_iter();
    let mut bob = bob.into_iter();
    let mut heads = [alice.next().transpose()?, bob.next().transpose()?];
    let mut pairs = 0u64;
    loop {
        let side = match (heads[0], heads[1]) {
            (None, None) => break,
            (Some(_), None) => Side::Alice,
            (None, Some(_)) => Side::Bob,
            (Some(a), Some(b)) => {
                if a.time <= b.time {
                    Side::Alice
                } else {
                    Side::Bob
                }
            }
        };
        let s = side.index();
        let tag = heads[s].take().expect("head present");
        matcher.advance_watermark(tag.time);
        matcher.push(side, tag)?;
        heads[s] = match side {
            Side::Alice => alice.next().transpose()?,
            Side::Bob => bob.next().transpose()?,
        };
        if heads[s].is_none() {
            matcher.close_side(side);
        }
        while let Some(pair) = matcher.pop_ready() {
            pairs += 1;
            on_pair(pair);
        }
    }
    matcher.finish();
    while let Some(pair) = matcher.pop_ready() {
        pairs += 1;
        on_pair(pair);
    }
    Ok(MatchStats {
        tags: matcher.pushed(),
        pairs,
        peak_buffered: matcher.peak_buffered(),
    })
}

/// Match two time-sorted streams held in memory.
pub fn find_coincidences(
    alice: &[TimeTag],
    bob: &[TimeTag],
    config: CoincidenceConfig,
) -> Result<Vec<CoincidencePair>, CoincidenceError> {
    let mut out = Vec::new();
    match_streams::<_, _, CoincidenceError>(
        alice.iter().copied().map(Ok),
        bob.iter().copied().map(Ok),
        config,
        |p| out.push(p),
    )?;
    Ok(out)
}

/// Expected accidental coincidence rate, 1/s, for independent singles rates
/// (1/s) and an acceptance width in ps. For the symmetric |Δt| ≤ w rule the
/// acceptance width is 2w.
pub fn accidental_rate(rate_a: f64, rate_b: f64, window_ps: f64) -> f64 {
    rate_a * rate_b * window_ps * 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(times: &[u64], channel: u8) -> Vec<TimeTag> {
        times.iter().map(|&t| TimeTag::new(t, channel)).collect()
    }

    fn cfg(w: u64) -> CoincidenceConfig {
        CoincidenceConfig::new(w).unwrap()
    }

    #[test]
    fn empty_streams() {
        assert!(find_coincidences(&[], &[], cfg(50)).unwrap().is_empty());
        assert!(find_coincidences(&tags(&[1, 2], 0), &[], cfg(50))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn single_pair() {
        let pairs = find_coincidences(&tags(&[1000], 0), &tags(&[1030], 2), cfg(50)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].delta_ps, 30);
    }

    #[test]
    fn out_of_window() {
        let pairs = find_coincidences(&tags(&[1000], 0), &tags(&[1051], 2), cfg(50)).unwrap();
        assert!(pairs.is_empty());
        let pairs = find_coincidences(&tags(&[1000], 0), &tags(&[1050], 2), cfg(50)).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn nearest_wins_over_first() {
        // b=100 is within reach of both; a=90 is closer and takes it.
        let pairs = find_coincidences(&tags(&[60, 90], 0), &tags(&[100], 2), cfg(50)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].alice.time, 90);
    }

    #[test]
    fn tie_prefers_earlier_bob() {
        let pairs = find_coincidences(&tags(&[100], 0), &tags(&[90, 110], 2), cfg(50)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].bob.time, 90);
    }

    #[test]
    fn chain_is_resolved_globally() {
        // a0=0 b0=10 a1=19 b1=40: greedy takes (b0,a1)=9 first, then a0/b1 too far.
        let pairs = find_coincidences(&tags(&[0, 19], 0), &tags(&[10, 40], 2), cfg(25)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].alice.time, pairs[0].bob.time), (19, 10));
    }

    #[test]
    fn unsorted_input_reports_position() {
        let err = find_coincidences(&tags(&[5, 10, 7], 0), &tags(&[6], 2), cfg(3)).unwrap_err();
        assert_eq!(
            err,
            CoincidenceError::Unsorted {
                side: Side::Alice,
                index: 2
            }
        );
        let err = find_coincidences(&tags(&[5], 0), &tags(&[9, 1], 2), cfg(3)).unwrap_err();
        assert_eq!(
            err,
            CoincidenceError::Unsorted {
                side: Side::Bob,
                index: 1
            }
        );
    }

    #[test]
    fn zero_window_rejected() {
        assert_eq!(CoincidenceConfig::new(0), Err(CoincidenceError::ZeroWindow));
    }

    #[test]
    fn accidental_rate_values() {
        assert_eq!(accidental_rate(1e5, 1e5, 0.0), 0.0);
        assert!((accidental_rate(1e5, 1e5, 500.0) - 5.0).abs() < 1e-12);
        assert!(
            (accidental_rate(2e5, 1e5, 500.0) - 2.0 * accidental_rate(1e5, 1e5, 500.0)).abs()
                < 1e-12
        );
    }

    #[test]
    fn incremental_feed_matches_batch() {
        let a = tags(&[0, 100, 220, 400, 405, 900], 0);
        let b = tags(&[30, 210, 230, 402, 1500], 2);
        let batch = find_coincidences(&a, &b, cfg(40)).unwrap();

        let mut m = CoincidenceMatcher::new(cfg(40)).unwrap();
        let mut out = Vec::new();
        // push all of Alice first, then Bob, with no watermark hints
        for t in &a {
            m.push(Side::Alice, *t).unwrap();
        }
        for t in &b {
            m.push(Side::Bob, *t).unwrap();
        }
        m.finish();
        while let Some(p) = m.pop_ready() {
            out.push(p);
        }
        assert_eq!(batch, out);
    }
}
