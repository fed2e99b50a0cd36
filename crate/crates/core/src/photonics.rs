//! Entangled-pair source, polarization analyzers and detection chain.
//!
//! Detections are produced in two steps. Generation draws every random
//! quantity (arrival time, survival, outcome uniform, timing jitter) without
//! looking at the analyzer settings; resolution then maps those draws to
//! tags using whichever setting is active at each tag's time. This split lets
//! a live session generate photons ahead of the observers' choices and still
//! reproduce a headless run bit for bit.
//!
//! Time is divided into fixed segments anchored at the emission start. Each
//! segment draws from its own ChaCha8 stream seeded with
//! `derive_seed(seed, STREAM_PHOTON_SEGMENT, segment_index)`, so segments can
//! be generated in parallel and in any order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkbudget::{transmittance, BudgetError};
use crate::seed::{rng_for, STREAM_PHOTON_SEGMENT};
use crate::tagstream::{channel_for, Outcome, Side, TimeTag, FLAG_DARK};
use crate::PS_PER_S;

/// FWHM of a Gaussian in units of its standard deviation, 2·√(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Jitter draws are clipped to ±1 µs so that tags can be released in time
/// order with a bounded look-behind.
pub const MAX_JITTER_PS: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotonicsError {
    #[error("invalid {field}: {value}")]
    InvalidParameter { field: &'static str, value: f64 },
    #[error("signal and idler group indices are equal; the pair rate is singular")]
    SingularRate,
    #[error("setting index {0} out of range (expected 0 or 1)")]
    InvalidSetting(u8),
    #[error("setting schedule goes back in time at entry {index}")]
    UnsortedSchedule { index: usize },
    #[error("no active {} setting for a photon arriving at {time_ps} ps", side.name())]
    NoActiveSetting { side: Side, time_ps: u64 },
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

fn check(field: &'static str, value: f64, ok: bool) -> Result<(), PhotonicsError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(PhotonicsError::InvalidParameter { field, value })
    }
}

/// Material parameters entering the SPDC brightness law
/// G ∝ χ_eff² / |n′_s − n′_i|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatchingSpec {
    /// Effective second-order nonlinear coefficient, any consistent unit.
    pub chi_eff: f64,
    pub n_group_signal: f64,
    pub n_group_idler: f64,
}

impl PhaseMatchingSpec {
    fn brightness(&self) -> Result<f64, PhotonicsError> {
        check("chi_eff", self.chi_eff, self.chi_eff > 0.0)?;
        check("n_group_signal", self.n_group_signal, true)?;
        check("n_group_idler", self.n_group_idler, true)?;
        let dn = (self.n_group_signal - self.n_group_idler).abs();
        if dn == 0.0 {
            return Err(PhotonicsError::SingularRate);
        }
        Ok(self.chi_eff * self.chi_eff / dn)
    }
}

/// Generation rate of `a` relative to `b`.
pub fn relative_pair_rate(
    a: &PhaseMatchingSpec,
    b: &PhaseMatchingSpec,
) -> Result<f64, PhotonicsError> {
    Ok(a.brightness()? / b.brightness()?)
}

/// Sign of the polarization correlation: +1 for a Φ⁺-like state, −1 for Φ⁻.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSign {
    #[default]
    Plus,
    Minus,
}

impl StateSign {
    pub fn value(self) -> f64 {
        match self {
            StateSign::Plus => 1.0,
            StateSign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Pairs per second.
    pub pair_rate: f64,
    pub visibility: f64,
    #[serde(default)]
    pub state_sign: StateSign,
}

/// Visibility for which the ideal CHSH value 2√2·V equals 2.28.
pub const DEFAULT_VISIBILITY: f64 = 0.806;

/// Pairs per second of the ultra-bright source.
pub const GHZ_PAIR_RATE: f64 = 1.0e9;

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            pair_rate: GHZ_PAIR_RATE,
            visibility: DEFAULT_VISIBILITY,
            state_sign: StateSign::Plus,
        }
    }
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        check("pair_rate", self.pair_rate, self.pair_rate >= 0.0)?;
        check(
            "visibility",
            self.visibility,
            (0.0..=1.0).contains(&self.visibility),
        )
    }
}

/// Analyzer angles in degrees, indexed by setting (0 or 1).
///
/// The default pair follows the hardware: a Pockels cell at 22.5° acts as a
/// switchable half-wave plate that rotates polarization by 45°, and a fixed
/// half-wave plate at 11.25° offsets one side by 22.5°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSettings {
    pub alice_deg: [f64; 2],
    pub bob_deg: [f64; 2],
}

impl Default for AnalyzerSettings {
    fn default() -> Self {
        Self {
            alice_deg: [0.0, 45.0],
            bob_deg: [22.5, 67.5],
        }
    }
}

impl AnalyzerSettings {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        for &a in self.alice_deg.iter().chain(self.bob_deg.iter()) {
            check("analyzer angle", a, (0.0..180.0).contains(&a))?;
        }
        Ok(())
    }

    pub fn angle(&self, side: Side, setting: u8) -> f64 {
        let set = match side {
            Side::Alice => &self.alice_deg,
            Side::Bob => &self.bob_deg,
        };
        set[setting as usize & 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub efficiency: f64,
    /// Detector timing jitter, ps FWHM.
    pub jitter_fwhm_ps: f64,
    /// Counts per second per channel.
    pub dark_rate: f64,
    /// Two-channel coincidence resolution of the TDC, ps FWHM. Each tag
    /// carries half of its variance, so two arms with the same TDC add the
    /// full figure to the time-difference width.
    pub tdc_fwhm_ps: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            jitter_fwhm_ps: 40.0,
            dark_rate: 0.0,
            tdc_fwhm_ps: 60.0,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        check(
            "efficiency",
            self.efficiency,
            (0.0..=1.0).contains(&self.efficiency),
        )?;
        check(
            "jitter_fwhm_ps",
            self.jitter_fwhm_ps,
            self.jitter_fwhm_ps >= 0.0,
        )?;
        check("dark_rate", self.dark_rate, self.dark_rate >= 0.0)?;
        check("tdc_fwhm_ps", self.tdc_fwhm_ps, self.tdc_fwhm_ps >= 0.0)
    }

    /// Per-tag timing spread, ps FWHM.
    pub fn tag_fwhm_ps(&self) -> f64 {
        (self.jitter_fwhm_ps.powi(2) + self.tdc_fwhm_ps.powi(2) / 2.0).sqrt()
    }

    pub fn tag_sigma_ps(&self) -> f64 {
        self.tag_fwhm_ps() / FWHM_PER_SIGMA
    }
}

/// Quadrature sum of independent Gaussian timing contributions.
pub fn system_timing_fwhm(components_ps: &[f64]) -> Result<f64, PhotonicsError> {
    for &c in components_ps {
        check("timing component", c, c >= 0.0)?;
    }
    Ok(components_ps.iter().map(|c| c * c).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointOutcome {
    pub alice: Outcome,
    pub bob: Outcome,
}

/// Joint outcome distribution, `p[alice][bob]` with index 0 = +, 1 = −.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTable {
    pub p: [[f64; 2]; 2],
}

impl JointTable {
    pub fn get(&self, o: JointOutcome) -> f64 {
        self.p[o.alice.index()][o.bob.index()]
    }

    pub fn correlation(&self) -> f64 {
        self.p[0][0] + self.p[1][1] - self.p[0][1] - self.p[1][0]
    }

    pub fn marginal(&self, side: Side, outcome: Outcome) -> f64 {
        let i = outcome.index();
        match side {
            Side::Alice => self.p[i][0] + self.p[i][1],
            Side::Bob => self.p[0][i] + self.p[1][i],
        }
    }

    /// Map a uniform draw in [0, 1) onto an outcome, scanning ++, +−, −+, −−.
    pub fn sample(&self, u: f64) -> JointOutcome {
        const ORDER: [(Outcome, Outcome); 4] = [
            (Outcome::Plus, Outcome::Plus),
            (Outcome::Plus, Outcome::Minus),
            (Outcome::Minus, Outcome::Plus),
            (Outcome::Minus, Outcome::Minus),
        ];
        let mut acc = 0.0;
        for (a, b) in ORDER {
            acc += self.p[a.index()][b.index()];
            if u < acc {
                return JointOutcome { alice: a, bob: b };
            }
        }
        JointOutcome {
            alice: Outcome::Minus,
            bob: Outcome::Minus,
        }
    }
}

/// P(s_a, s_b) = ¼·[1 + s_a·s_b·sign·V·cos 2(θ_a − θ_b)].
pub fn joint_outcome_probabilities(
    theta_a_deg: f64,
    theta_b_deg: f64,
    source: &SourceSpec,
) -> JointTable {
    let e = source.state_sign.value()
        * source.visibility
        * (2.0 * (theta_a_deg - theta_b_deg).to_radians()).cos();
    let same = 0.25 * (1.0 + e);
    let diff = 0.25 * (1.0 - e);
    JointTable {
        p: [[same, diff], [diff, same]],
    }
}

/// Homogeneous Poisson emission times in (0, duration), ps, strictly
/// increasing. Gaps are exponential draws rounded to whole picoseconds with a
/// 1 ps floor.
pub fn sample_pair_emissions(source: &SourceSpec, duration_s: f64, seed: u64) -> Vec<u64> {
    let mut out = Vec::new();
    if !(source.pair_rate > 0.0) || !(duration_s > 0.0) {
        return out;
    }
    let end = (duration_s * PS_PER_S as f64).round() as u64;
    let gap = Exp::new(source.pair_rate / PS_PER_S as f64).expect("positive rate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.reserve((source.pair_rate * duration_s * 1.01) as usize + 16);
    let mut t = 0u64;
    loop {
        let step = (gap.sample(&mut rng).round() as u64).max(1);
        t = match t.checked_add(step) {
            Some(t) if t < end => t,
            _ => break,
        };
        out.push(t);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSetting {
    pub prepared_ps: u64,
    pub setting: u8,
}

/// Piecewise-constant analyzer setting for one side: each entry is active
/// from its preparation time until the next entry's.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SettingSchedule {
    entries: Vec<ScheduledSetting>,
}

impl SettingSchedule {
    pub fn new(entries: Vec<ScheduledSetting>) -> Result<Self, PhotonicsError> {
        let mut s = Self::default();
        for e in entries {
            s.push(e)?;
        }
        Ok(s)
    }

    /// A single setting active from time 0.
    pub fn constant(setting: u8) -> Self {
        Self {
            entries: vec![ScheduledSetting {
                prepared_ps: 0,
                setting: setting & 1,
            }],
        }
    }

    pub fn push(&mut self, entry: ScheduledSetting) -> Result<(), PhotonicsError> {
        if entry.setting > 1 {
            return Err(PhotonicsError::InvalidSetting(entry.setting));
        }
        if self
            .entries
            .last()
            .is_some_and(|l| entry.prepared_ps < l.prepared_ps)
        {
            return Err(PhotonicsError::UnsortedSchedule {
                index: self.entries.len(),
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }

    pub fn entries(&self) -> &[ScheduledSetting] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the entry in force at `t`; the latest one when several share
    /// a preparation time.
    pub fn active_at(&self, t: u64) -> Option<usize> {
        self.entries
            .partition_point(|e| e.prepared_ps <= t)
            .checked_sub(1)
    }

    pub fn setting_at(&self, t: u64) -> Option<u8> {
        self.active_at(t).map(|i| self.entries[i].setting)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmChannel {
    /// Total channel attenuation for this photon, dB.
    pub loss_db: f64,
    pub detector: DetectorSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Emit every pair and thin each photon independently.
    Raw,
    /// Draw only surviving events at their reduced rates.
    #[default]
    Thinned,
}

/// Everything needed to turn emissions into detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionModel {
    pub source: SourceSpec,
    pub angles: AnalyzerSettings,
    pub arms: [ArmChannel; 2],
    /// Thinned mode only: also emit photons whose partner was lost.
    pub include_singles: bool,
}

impl DetectionModel {
    pub fn validate(&self) -> Result<(), PhotonicsError> {
        self.source.validate()?;
        self.angles.validate()?;
        for arm in &self.arms {
            transmittance(arm.loss_db)?;
            arm.detector.validate()?;
        }
        Ok(())
    }

    /// Probability that a photon on `side` produces a click.
    pub fn arm_transmission(&self, side: Side) -> f64 {
        let arm = &self.arms[side.index()];
        transmittance(arm.loss_db).unwrap_or(0.0) * arm.detector.efficiency
    }

    /// Expected both-detected pairs per second.
    pub fn pair_detection_rate(&self) -> f64 {
        self.source.pair_rate
            * self.arm_transmission(Side::Alice)
            * self.arm_transmission(Side::Bob)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PendingKind {
    Pair,
    Single(Side),
    Dark { channel: u8 },
}

/// A detection whose outcome has not been bound to a setting yet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingDetection {
    /// Arrival at the analyzers, ps.
    pub arrival_ps: u64,
    pub kind: PendingKind,
    /// Uniform draw that selects the outcome.
    pub u: f64,
    pub jitter_ps: [i64; 2],
}

impl PendingDetection {
    fn tag_time(&self, side: Side) -> u64 {
        self.arrival_ps
            .saturating_add_signed(self.jitter_ps[side.index()])
    }

    fn setting(
        &self,
        side: Side,
        tag_time: u64,
        schedule: &SettingSchedule,
    ) -> Result<u8, PhotonicsError> {
        if schedule.active_at(self.arrival_ps).is_none() {
            return Err(PhotonicsError::NoActiveSetting {
                side,
                time_ps: self.arrival_ps,
            });
        }
        Ok(schedule
            .setting_at(tag_time)
            .or_else(|| schedule.setting_at(self.arrival_ps))
            .expect("checked above"))
    }

    /// Bind the outcome to the settings in force at the tag times and append
    /// the resulting tags.
    pub fn resolve(
        &self,
        model: &DetectionModel,
        schedules: [&SettingSchedule; 2],
        out: &mut [Vec<TimeTag>; 2],
    ) -> Result<(), PhotonicsError> {
        match self.kind {
            PendingKind::Pair => {
                let ta = self.tag_time(Side::Alice);
                let tb = self.tag_time(Side::Bob);
                let sa = self.setting(Side::Alice, ta, schedules[0])?;
                let sb = self.setting(Side::Bob, tb, schedules[1])?;
                let table = joint_outcome_probabilities(
                    model.angles.angle(Side::Alice, sa),
                    model.angles.angle(Side::Bob, sb),
                    &model.source,
                );
                let o = table.sample(self.u);
                out[0].push(TimeTag::new(ta, channel_for(Side::Alice, o.alice)));
                out[1].push(TimeTag::new(tb, channel_for(Side::Bob, o.bob)));
            }
            PendingKind::Single(side) => {
                let t = self.tag_time(side);
                self.setting(side, t, schedules[side.index()])?;
                let outcome = if self.u < 0.5 {
                    Outcome::Plus
                } else {
                    Outcome::Minus
                };
                out[side.index()].push(TimeTag::new(t, channel_for(side, outcome)));
            }
            PendingKind::Dark { channel } => {
                let side = if channel < 2 { Side::Alice } else { Side::Bob };
                out[side.index()].push(TimeTag {
                    time: self.arrival_ps,
                    channel,
                    flags: FLAG_DARK,
                });
            }
        }
        Ok(())
    }
}

struct JitterSampler {
    normals: [Normal<f64>; 2],
}

impl JitterSampler {
    fn new(model: &DetectionModel) -> Self {
        let normal = |side: Side| {
            Normal::new(0.0, model.arms[side.index()].detector.tag_sigma_ps())
                .expect("validated sigma")
        };
        Self {
            normals: [normal(Side::Alice), normal(Side::Bob)],
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> [i64; 2] {
        let clip = MAX_JITTER_PS as f64;
        let mut j = [0i64; 2];
        for (slot, n) in j.iter_mut().zip(&self.normals) {
            *slot = n.sample(rng).round().clamp(-clip, clip) as i64;
        }
        j
    }
}

fn poisson_count(mean: f64, rng: &mut impl Rng) -> u64 {
    if mean > 0.0 && mean.is_finite() {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    } else {
        0
    }
}

fn uniform_times(n: u64, start: u64, end: u64, rng: &mut impl Rng) -> Vec<u64> {
    if end <= start {
        return Vec::new();
    }
    (0..n).map(|_| rng.random_range(start..end)).collect()
}

/// Surviving events in [start, end) drawn directly at their reduced rates:
/// both photons with R·t_A·t_B, and (with singles) one photon only with
/// R·t_A·(1 − t_B) and R·(1 − t_A)·t_B. Sorted by arrival.
pub fn thinned_pending(
    model: &DetectionModel,
    start: u64,
    end: u64,
    rng: &mut impl Rng,
) -> Vec<PendingDetection> {
    let span_s = end.saturating_sub(start) as f64 / PS_PER_S as f64;
    let rate = model.source.pair_rate;
    let ta = model.arm_transmission(Side::Alice);
    let tb = model.arm_transmission(Side::Bob);
    let jitter = JitterSampler::new(model);

    let mut categories = vec![(PendingKind::Pair, rate * ta * tb)];
    if model.include_singles {
        categories.push((PendingKind::Single(Side::Alice), rate * ta * (1.0 - tb)));
        categories.push((PendingKind::Single(Side::Bob), rate * (1.0 - ta) * tb));
    }

    let mut out = Vec::new();
    for (kind, r) in categories {
        let n = poisson_count(r * span_s, rng);
        for arrival_ps in uniform_times(n, start, end, rng) {
            let u = rng.random::<f64>();
            let jitter_ps = jitter.draw(rng);
            out.push(PendingDetection {
                arrival_ps,
                kind,
                u,
                jitter_ps,
            });
        }
    }
    out.sort_by_key(|p| p.arrival_ps);
    out
}

/// Thin each emitted pair photon by photon. Emissions must be sorted.
pub fn raw_pending(
    model: &DetectionModel,
    emissions: &[u64],
    rng: &mut impl Rng,
) -> Vec<PendingDetection> {
    let ta = model.arm_transmission(Side::Alice);
    let tb = model.arm_transmission(Side::Bob);
    let jitter = JitterSampler::new(model);
    let mut out = Vec::new();
    for &arrival_ps in emissions {
        let a = rng.random::<f64>() < ta;
        let b = rng.random::<f64>() < tb;
        let kind = match (a, b) {
            (true, true) => PendingKind::Pair,
            (true, false) => PendingKind::Single(Side::Alice),
            (false, true) => PendingKind::Single(Side::Bob),
            (false, false) => continue,
        };
        let u = rng.random::<f64>();
        let jitter_ps = jitter.draw(rng);
        out.push(PendingDetection {
            arrival_ps,
            kind,
            u,
            jitter_ps,
        });
    }
    out
}

/// Uniform dark counts in [start, end) on all four channels, sorted.
pub fn dark_pending(
    model: &DetectionModel,
    start: u64,
    end: u64,
    rng: &mut impl Rng,
) -> Vec<PendingDetection> {
    let span_s = end.saturating_sub(start) as f64 / PS_PER_S as f64;
    let mut out = Vec::new();
    for side in Side::BOTH {
        let rate = model.arms[side.index()].detector.dark_rate;
        for outcome in [Outcome::Plus, Outcome::Minus] {
            let channel = channel_for(side, outcome);
            let n = poisson_count(rate * span_s, rng);
            for arrival_ps in uniform_times(n, start, end, rng) {
                out.push(PendingDetection {
                    arrival_ps,
                    kind: PendingKind::Dark { channel },
                    u: 0.0,
                    jitter_ps: [0, 0],
                });
            }
        }
    }
    out.sort_by_key(|p| p.arrival_ps);
    out
}

/// Time-sorted detections, one stream per side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectedStreams {
    pub tags: [Vec<TimeTag>; 2],
}

impl DetectedStreams {
    pub fn alice(&self) -> &[TimeTag] {
        &self.tags[0]
    }

    pub fn bob(&self) -> &[TimeTag] {
        &self.tags[1]
    }

    fn sort(&mut self) {
        for s in &mut self.tags {
            s.sort_unstable();
        }
    }
}

fn resolve_all(
    pending: &[PendingDetection],
    model: &DetectionModel,
    schedules: [&SettingSchedule; 2],
) -> Result<DetectedStreams, PhotonicsError> {
    let mut out = DetectedStreams::default();
    for p in pending {
        p.resolve(model, schedules, &mut out.tags)?;
    }
    out.sort();
    Ok(out)
}

/// Raw-mode detection of explicit emissions. Dark counts are drawn over
/// `[span.0, span.1)`.
pub fn detect_stream(
    emissions: &[u64],
    schedules: [&SettingSchedule; 2],
    model: &DetectionModel,
    span: (u64, u64),
    seed: u64,
) -> Result<DetectedStreams, PhotonicsError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pending = raw_pending(model, emissions, &mut rng);
    pending.extend(dark_pending(model, span.0, span.1, &mut rng));
    resolve_all(&pending, model, schedules)
}

/// Thinned-mode detection over `[span.0, span.1)`.
pub fn detect_thinned(
    schedules: [&SettingSchedule; 2],
    model: &DetectionModel,
    span: (u64, u64),
    seed: u64,
) -> Result<DetectedStreams, PhotonicsError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pending = thinned_pending(model, span.0, span.1, &mut rng);
    pending.extend(dark_pending(model, span.0, span.1, &mut rng));
    resolve_all(&pending, model, schedules)
}

pub const DEFAULT_SEGMENT_PS: u64 = PS_PER_S;

/// Segment-seeded photon source shared by headless and live runs.
#[derive(Debug, Clone)]
pub struct PhotonGenerator {
    model: DetectionModel,
    mode: SamplingMode,
    seed: u64,
    origin_ps: u64,
    segment_ps: u64,
}

impl PhotonGenerator {
    pub fn new(
        model: DetectionModel,
        mode: SamplingMode,
        seed: u64,
        origin_ps: u64,
        segment_ps: u64,
    ) -> Result<Self, PhotonicsError> {
        model.validate()?;
        if segment_ps == 0 {
            return Err(PhotonicsError::InvalidParameter {
                field: "segment length",
                value: 0.0,
            });
        }
        Ok(Self {
            model,
            mode,
            seed,
            origin_ps,
            segment_ps,
        })
    }

    pub fn model(&self) -> &DetectionModel {
        &self.model
    }

    pub fn origin_ps(&self) -> u64 {
        self.origin_ps
    }

    pub fn segment_index(&self, t: u64) -> u64 {
        t.saturating_sub(self.origin_ps) / self.segment_ps
    }

    pub fn segment_bounds(&self, k: u64) -> (u64, u64) {
        let start = self.origin_ps + k * self.segment_ps;
        (start, start + self.segment_ps)
    }

    /// All pending detections of segment `k`, sorted by arrival.
    pub fn segment_pending(&self, k: u64) -> Vec<PendingDetection> {
        let (start, end) = self.segment_bounds(k);
        let mut rng = rng_for(self.seed, STREAM_PHOTON_SEGMENT, k);
        let mut pending = match self.mode {
            SamplingMode::Thinned => thinned_pending(&self.model, start, end, &mut rng),
            SamplingMode::Raw => {
                let emission_seed = rng.next_u64();
                let emissions: Vec<u64> = sample_pair_emissions(
                    &self.model.source,
                    self.segment_ps as f64 / PS_PER_S as f64,
                    emission_seed,
                )
                .into_iter()
                .map(|t| t + start)
                .collect();
                raw_pending(&self.model, &emissions, &mut rng)
            }
        };
        pending.extend(dark_pending(&self.model, start, end, &mut rng));
        pending.sort_by_key(|p| p.arrival_ps);
        pending
    }

    /// Detections for arrivals in `[origin, end)`, segments generated in
    /// parallel and merged into time order.
    pub fn generate(
        &self,
        end_ps: u64,
        schedules: [&SettingSchedule; 2],
    ) -> Result<DetectedStreams, PhotonicsError> {
        if end_ps <= self.origin_ps {
            return Ok(DetectedStreams::default());
        }
        let segments = (end_ps - self.origin_ps).div_ceil(self.segment_ps);
        let parts: Vec<[Vec<TimeTag>; 2]> = (0..segments)
            .into_par_iter()
            .map(|k| {
                let mut out = [Vec::new(), Vec::new()];
                for p in self.segment_pending(k) {
                    if p.arrival_ps >= end_ps {
                        break;
                    }
                    p.resolve(&self.model, schedules, &mut out)?;
                }
                Ok(out)
            })
            .collect::<Result<_, PhotonicsError>>()?;
        let mut merged = DetectedStreams::default();
        for [a, b] in parts {
            merged.tags[0].extend(a);
            merged.tags[1].extend(b);
        }
        merged.sort();
        Ok(merged)
    }
}
