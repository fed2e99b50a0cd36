//! Correlations, the CHSH statistic and campaign planning.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkbudget::transmittance;
use crate::photonics::{joint_outcome_probabilities, AnalyzerSettings, SourceSpec};
use crate::tagstream::{Outcome, Side};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("setting pair {setting} has no counts; correlation is undefined")]
    UndefinedCorrelation { setting: usize },
    #[error("visibility {visibility} cannot violate the local bound (needs V > 1/sqrt 2)")]
    NoViolation { visibility: f64 },
    #[error("invalid {field}: {value}")]
    InvalidParameter { field: &'static str, value: f64 },
}

/// Order of the four joint outcomes inside a setting row.
pub const OUTCOME_ORDER: [&str; 4] = ["++", "+-", "-+", "--"];

/// Setting pairs in row order: (a,b), (a,b′), (a′,b), (a′,b′).
pub const SETTING_LABELS: [&str; 4] = ["a,b", "a,b'", "a',b", "a',b'"];

/// Sign of each correlation in S, per setting row.
pub const CHSH_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];

pub const SIGN_CONVENTION: &str = "S=E(a,b)-E(a,b')+E(a',b)+E(a',b')";

/// Coincidence counts, `counts[2·alice_setting + bob_setting][outcome]`
/// with outcomes in [`OUTCOME_ORDER`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SettingCounts {
    pub counts: [[u64; 4]; 4],
}

pub fn setting_index(alice_setting: u8, bob_setting: u8) -> usize {
    2 * (alice_setting as usize & 1) + (bob_setting as usize & 1)
}

pub fn outcome_index(alice: Outcome, bob: Outcome) -> usize {
    2 * alice.index() + bob.index()
}

impl SettingCounts {
    pub fn add(&mut self, alice_setting: u8, bob_setting: u8, alice: Outcome, bob: Outcome) {
        self.counts[setting_index(alice_setting, bob_setting)][outcome_index(alice, bob)] += 1;
    }

    pub fn setting_total(&self, setting: usize) -> u64 {
        self.counts[setting].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..4).map(|i| self.setting_total(i)).sum()
    }

    pub fn merge(&mut self, other: &SettingCounts) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, x) in row.iter_mut().zip(o) {
                *c += x;
            }
        }
    }

    /// Relabel + ↔ − on one side in every setting.
    pub fn flip_side(&self, side: Side) -> SettingCounts {
        let mut out = SettingCounts::default();
        for (s, row) in self.counts.iter().enumerate() {
            for (o, &c) in row.iter().enumerate() {
                let (mut a, mut b) = (o / 2, o % 2);
                match side {
                    Side::Alice => a ^= 1,
                    Side::Bob => b ^= 1,
                }
                out.counts[s][2 * a + b] = c;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub value: f64,
    pub sigma: f64,
    pub n: u64,
}

/// E = (N₊₊ + N₋₋ − N₊₋ − N₋₊)/N with σ = √((1 − E²)/N).
pub fn correlation(row: &[u64; 4]) -> Option<CorrelationEstimate> {
    let n: u64 = row.iter().sum();
    if n == 0 {
        return None;
    }
    let same = (row[0] + row[3]) as f64;
    let diff = (row[1] + row[2]) as f64;
    let value = (same - diff) / n as f64;
    let sigma = ((1.0 - value * value).max(0.0) / n as f64).sqrt();
    Some(CorrelationEstimate { value, sigma, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChshResult {
    pub s_value: f64,
    pub sigma: f64,
    pub correlations: [CorrelationEstimate; 4],
    pub sign_convention: &'static str,
}

pub fn chsh(counts: &SettingCounts) -> Result<ChshResult, AnalysisError> {
    let mut correlations = [CorrelationEstimate {
        value: 0.0,
        sigma: 0.0,
        n: 0,
    }; 4];
    for (setting, slot) in correlations.iter_mut().enumerate() {
        *slot = correlation(&counts.counts[setting])
            .ok_or(AnalysisError::UndefinedCorrelation { setting })?;
    }
    let s_value = correlations
        .iter()
        .zip(CHSH_SIGNS)
        .map(|(c, s)| s * c.value)
        .sum();
    let sigma = correlations
        .iter()
        .map(|c| c.sigma * c.sigma)
        .sum::<f64>()
        .sqrt();
    Ok(ChshResult {
        s_value,
        sigma,
        correlations,
        sign_convention: SIGN_CONVENTION,
    })
}

/// S of the noiseless model for given source and analyzer angles.
pub fn model_chsh(source: &SourceSpec, angles: &AnalyzerSettings) -> f64 {
    let mut s = 0.0;
    for a in 0..2u8 {
        for b in 0..2u8 {
            let e = joint_outcome_probabilities(
                angles.angle(Side::Alice, a),
                angles.angle(Side::Bob, b),
                source,
            )
            .correlation();
            s += CHSH_SIGNS[setting_index(a, b)] * e;
        }
    }
    s
}

/// Deterministic local strategy: the ±1 answer for each setting on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalStrategy {
    pub alice: [i8; 2],
    pub bob: [i8; 2],
}

impl LocalStrategy {
    pub fn s_value(&self) -> i32 {
        let mut s = 0;
        for a in 0..2 {
            for b in 0..2 {
                let e = (self.alice[a] * self.bob[b]) as i32;
                s += CHSH_SIGNS[2 * a + b] as i32 * e;
            }
        }
        s
    }
}

/// All 16 deterministic assignments.
pub fn local_strategies() -> impl Iterator<Item = LocalStrategy> {
    (0u8..16).map(|bits| {
        let pm = |k: u8| if bits >> k & 1 == 1 { -1 } else { 1 };
        LocalStrategy {
            alice: [pm(0), pm(1)],
            bob: [pm(2), pm(3)],
        }
    })
}

/// Largest |S| over the deterministic strategies accepted by `filter`.
pub fn local_bound_over(filter: impl Fn(&LocalStrategy) -> bool) -> Option<i32> {
    local_strategies()
        .filter(|s| filter(s))
        .map(|s| s.s_value().abs())
        .max()
}

pub fn local_bound_oracle() -> i32 {
    local_bound_over(|_| true).expect("16 strategies")
}

/// Mean detected pairs: rate · 10^(−loss/10) · duration.
pub fn expected_coincidences(
    pair_rate: f64,
    pair_loss_db: f64,
    duration_s: f64,
) -> Result<f64, AnalysisError> {
    for (field, value) in [("pair_rate", pair_rate), ("duration", duration_s)] {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(AnalysisError::InvalidParameter { field, value });
        }
    }
    let t = transmittance(pair_loss_db).map_err(|_| AnalysisError::InvalidParameter {
        field: "pair_loss_db",
        value: pair_loss_db,
    })?;
    Ok(pair_rate * t * duration_s)
}

/// Campaign length needed for a k-sigma violation.
///
/// Assumes equal occupancy of the four setting pairs and the ideal model at
/// the default angles, where every |E| = V/√2. With N pairs per setting,
/// σ_S = √(4(1 − E²)/N); requiring 2√2·V − 2 ≥ k·σ_S gives
/// N = 4(1 − E²)·k² / (2√2·V − 2)².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationPlan {
    pub correlation: f64,
    pub margin: f64,
    pub pairs_per_setting: f64,
    pub total_pairs: f64,
    pub coincidence_rate: f64,
    pub seconds: f64,
    pub equal_occupancy: bool,
}

pub fn time_to_violation(
    visibility: f64,
    pair_rate: f64,
    pair_loss_db: f64,
    k_sigma: f64,
) -> Result<ViolationPlan, AnalysisError> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(AnalysisError::InvalidParameter {
            field: "visibility",
            value: visibility,
        });
    }
    if !(k_sigma > 0.0) || !k_sigma.is_finite() {
        return Err(AnalysisError::InvalidParameter {
            field: "k_sigma",
            value: k_sigma,
        });
    }
    let margin = 2.0 * std::f64::consts::SQRT_2 * visibility - 2.0;
    if margin <= 0.0 {
        return Err(AnalysisError::NoViolation { visibility });
    }
    let coincidence_rate = expected_coincidences(pair_rate, pair_loss_db, 1.0)?;
    if coincidence_rate <= 0.0 {
        return Err(AnalysisError::InvalidParameter {
            field: "pair_rate",
            value: pair_rate,
        });
    }
    let e = visibility * std::f64::consts::FRAC_1_SQRT_2;
    let pairs_per_setting = 4.0 * (1.0 - e * e) * k_sigma * k_sigma / (margin * margin);
    let total_pairs = 4.0 * pairs_per_setting;
    Ok(ViolationPlan {
        correlation: e,
        margin,
        pairs_per_setting,
        total_pairs,
        coincidence_rate,
        seconds: total_pairs / coincidence_rate,
        equal_occupancy: true,
    })
}

fn multinomial<R: Rng>(n: u64, p: &[f64; 4], rng: &mut R) -> [u64; 4] {
    let mut out = [0u64; 4];
    let mut left = n;
    let mut mass = 1.0;
    for i in 0..3 {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 {
            (p[i] / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let k = Binomial::new(left, q)
            .expect("probability in range")
            .sample(rng);
        out[i] = k;
        left -= k;
        mass -= p[i];
    }
    out[3] = left;
    out
}

/// Standard deviation of S over parametric bootstrap resamples. Each
/// setting row is redrawn multinomially with its observed total and
/// frequencies.
pub fn bootstrap_sigma<R: Rng>(
    counts: &SettingCounts,
    resamples: usize,
    rng: &mut R,
) -> Result<f64, AnalysisError> {
    chsh(counts)?;
    if resamples < 2 {
        return Err(AnalysisError::InvalidParameter {
            field: "resamples",
            value: resamples as f64,
        });
    }
    let probs: Vec<(u64, [f64; 4])> = counts
        .counts
        .iter()
        .map(|row| {
            let n: u64 = row.iter().sum();
            let mut p = [0.0; 4];
            for (pi, &c) in p.iter_mut().zip(row) {
                *pi = c as f64 / n as f64;
            }
            (n, p)
        })
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..resamples {
        let mut resampled = SettingCounts::default();
        for (row, (n, p)) in resampled.counts.iter_mut().zip(&probs) {
            *row = multinomial(*n, p, rng);
        }
        let s = chsh(&resampled)?.s_value;
        sum += s;
        sum_sq += s * s;
    }
    let m = resamples as f64;
    let var = (sum_sq - sum * sum / m) / (m - 1.0);
    Ok(var.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn correlation_trivial_cases() {
        let c = correlation(&[10, 10, 10, 10]).unwrap();
        assert_eq!(c.value, 0.0);
        assert!((c.sigma - 1.0 / 40f64.sqrt()).abs() < 1e-15);
        let c = correlation(&[20, 0, 0, 20]).unwrap();
        assert_eq!(c.value, 1.0);
        assert_eq!(c.sigma, 0.0);
        assert!(correlation(&[0; 4]).is_none());
    }

    #[test]
    fn chsh_of_balanced_counts_is_zero() {
        let counts = SettingCounts {
            counts: [[5; 4]; 4],
        };
        let r = chsh(&counts).unwrap();
        assert_eq!(r.s_value, 0.0);
        let mut missing = counts;
        missing.counts[2] = [0; 4];
        assert_eq!(
            chsh(&missing),
            Err(AnalysisError::UndefinedCorrelation { setting: 2 })
        );
    }

    #[test]
    fn model_values() {
        let ideal = SourceSpec {
            visibility: 1.0,
            ..SourceSpec::default()
        };
        let s = model_chsh(&ideal, &AnalyzerSettings::default());
        assert!((s - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-9);
        let s = model_chsh(&SourceSpec::default(), &AnalyzerSettings::default());
        assert!((s - 2.28).abs() < 0.001, "{s}");
    }

    #[test]
    fn local_bound_enumeration() {
        assert_eq!(local_strategies().count(), 16);
        assert_eq!(local_bound_oracle(), 2);
        assert!(local_bound_over(|s| s.alice[0] == s.alice[1]).unwrap() <= 2);
        for s in local_strategies() {
            assert!(matches!(s.s_value().abs(), 0 | 2));
        }
        let quantum = model_chsh(
            &SourceSpec {
                visibility: 1.0,
                ..SourceSpec::default()
            },
            &AnalyzerSettings::default(),
        );
        assert!(f64::from(local_bound_oracle()) < quantum);
    }

    #[test]
    fn expected_count_examples() {
        let n = expected_coincidences(1e9, 103.0, 10_800.0).unwrap();
        assert!((n - 541.28).abs() < 0.01, "{n}");
        assert_eq!(expected_coincidences(1e9, 103.0, 0.0).unwrap(), 0.0);
        assert_eq!(expected_coincidences(7.0, 0.0, 3.0).unwrap(), 21.0);
        assert!(expected_coincidences(-1.0, 0.0, 3.0).is_err());
    }

    #[test]
    fn planner_examples() {
        let p = time_to_violation(0.806, 1e9, 103.0, 3.0).unwrap();
        assert!((p.seconds / 2.47e4 - 1.0).abs() < 0.05, "{}", p.seconds);
        let lossier = time_to_violation(0.806, 1e9, 123.0, 3.0).unwrap();
        assert!((lossier.seconds / p.seconds - 100.0).abs() < 1e-9);
        let tiny = time_to_violation(0.806, 1e9, 103.0, 1e-6).unwrap();
        assert!(tiny.seconds < 1e-6);
        assert_eq!(
            time_to_violation(0.7, 1e9, 103.0, 3.0),
            Err(AnalysisError::NoViolation { visibility: 0.7 })
        );
        assert!(time_to_violation(0.9, 1e9, 103.0, 0.0).is_err());
    }

    #[test]
    fn bootstrap_tracks_analytic_sigma() {
        let source = SourceSpec::default();
        let angles = AnalyzerSettings::default();
        let mut counts = SettingCounts::default();
        for a in 0..2u8 {
            for b in 0..2u8 {
                let t = joint_outcome_probabilities(
                    angles.angle(Side::Alice, a),
                    angles.angle(Side::Bob, b),
                    &source,
                );
                let row = &mut counts.counts[setting_index(a, b)];
                for (i, p) in t.p.iter().flatten().enumerate() {
                    row[i] = (p * 10_000.0).round() as u64;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let boot = bootstrap_sigma(&counts, 2000, &mut rng).unwrap();
        let analytic = chsh(&counts).unwrap().sigma;
        assert!((boot / analytic - 1.0).abs() < 0.1, "{boot} vs {analytic}");
    }

    fn arb_counts() -> impl Strategy<Value = SettingCounts> {
        prop::array::uniform4(prop::array::uniform4(0u64..50)).prop_map(|mut c| {
            for row in &mut c {
                row[0] += 1;
            }
            SettingCounts { counts: c }
        })
    }

    proptest! {
        #[test]
        fn chsh_invariants(counts in arb_counts()) {
            let r = chsh(&counts).unwrap();
            prop_assert!(r.s_value.abs() <= 4.0);
            let quad: f64 = r.correlations.iter().map(|c| c.sigma * c.sigma).sum::<f64>().sqrt();
            prop_assert!((r.sigma - quad).abs() <= 1e-12);
            for c in r.correlations {
                prop_assert!(c.value.abs() <= 1.0);
                prop_assert!(c.sigma >= 0.0);
            }
            let both = counts.flip_side(Side::Alice).flip_side(Side::Bob);
            prop_assert!((chsh(&both).unwrap().s_value - r.s_value).abs() <= 1e-12);
            let one = counts.flip_side(Side::Bob);
            prop_assert!((chsh(&one).unwrap().s_value + r.s_value).abs() <= 1e-12);
        }
    }
}
