//! Time-tag streams: representation, binary storage, coincidence matching and
//! time-difference histograms.
//!
//! Channel ids carry the measurement outcome so the pairing engine never needs
//! to know about polarization: 0 = Alice +, 1 = Alice −, 2 = Bob +, 3 = Bob −.
//! Ids 4..16 are reserved.

mod coincidence;
mod histogram;
mod io;

pub use coincidence::{
    accidental_rate, find_coincidences, match_streams, CoincidenceConfig, CoincidenceError,
    CoincidenceMatcher, CoincidencePair, DEFAULT_WINDOW_PS,
};
pub use histogram::{DeltaHistogram, HistogramError};
pub use io::{
    read_tags, write_tags, TagFileError, TagReader, TagWriter, HEADER_LEN, MAGIC, RECORD_LEN,
    VERSION,
};

use serde::{Deserialize, Serialize};

/// Exclusive upper bound on channel ids.
pub const MAX_CHANNELS: u8 = 16;

/// Tag produced by a dark count rather than a photon.
pub const FLAG_DARK: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Alice,
    Bob,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Alice, Side::Bob];

    pub fn index(self) -> usize {
        match self {
            Side::Alice => 0,
            Side::Bob => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Alice => "alice",
            Side::Bob => "bob",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "alice" => Some(Side::Alice),
            "bob" => Some(Side::Bob),
            _ => None,
        }
    }
}

/// Which port of the polarizing beam splitter fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }

    pub fn flipped(self) -> Outcome {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }
}

pub fn channel_for(side: Side, outcome: Outcome) -> u8 {
    (side.index() * 2 + outcome.index()) as u8
}

pub fn decode_channel(channel: u8) -> Option<(Side, Outcome)> {
    match channel {
        0 => Some((Side::Alice, Outcome::Plus)),
        1 => Some((Side::Alice, Outcome::Minus)),
        2 => Some((Side::Bob, Outcome::Plus)),
        3 => Some((Side::Bob, Outcome::Minus)),
        _ => None,
    }
}

/// One detection event. Ordering is by time, then channel, then flags.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct TimeTag {
    /// Picoseconds since the run epoch.
    pub time: u64,
    pub channel: u8,
    pub flags: u8,
}

impl TimeTag {
    pub fn new(time: u64, channel: u8) -> Self {
        Self {
            time,
            channel,
            flags: 0,
        }
    }
}

/// Index of the first element that breaks non-decreasing time order.
pub fn first_unsorted(tags: &[TimeTag]) -> Option<usize> {
    tags.windows(2)
        .position(|w| w[1].time < w[0].time)
        .map(|i| i + 1)
}
