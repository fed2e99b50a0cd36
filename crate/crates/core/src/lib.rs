//! Simulation and analysis toolkit for Bell tests over extremely lossy
//! optical channels.
//!
//! * [`spacetime`]: Earth–Moon–L4 geometry and loophole validity windows.
//! * [`linkbudget`]: per-arm decibel accounting and channel transmittance.
//! * [`photonics`]: entangled-pair source, analyzers and detector chain,
//!   producing time-tag streams.
//! * [`tagstream`]: time tags, the binary tag file format, the streaming
//!   coincidence engine and time-difference histograms.
//! * [`analysis`]: correlations, CHSH with uncertainties, campaign planning.
//! * [`session`]: headless, replay and live (human-in-the-loop) runs with
//!   persistence.

pub mod analysis;
pub mod linkbudget;
pub mod photonics;
pub mod seed;
pub mod session;
pub mod spacetime;
pub mod tagstream;

/// Picoseconds per second.
pub const PS_PER_S: u64 = 1_000_000_000_000;

pub fn seconds_to_ps(s: f64) -> u64 {
    (s * PS_PER_S as f64).round().max(0.0) as u64
}

pub fn ps_to_seconds(ps: u64) -> f64 {
    ps as f64 / PS_PER_S as f64
}
