mod support;

use lunabell_core::analysis::*;
use lunabell_core::photonics::{joint_outcome_probabilities, AnalyzerSettings, SourceSpec};
use lunabell_core::tagstream::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::mean_sd;

/// Multinomial counts drawn outcome by outcome from the model table.
fn simulate_counts(source: &SourceSpec, per_setting: u64, rng: &mut impl Rng) -> SettingCounts {
    let angles = AnalyzerSettings::default();
    let mut counts = SettingCounts::default();
    for a in 0..2u8 {
        for b in 0..2u8 {
            let table = joint_outcome_probabilities(
                angles.angle(Side::Alice, a),
                angles.angle(Side::Bob, b),
                source,
            );
            for _ in 0..per_setting {
                let o = table.sample(rng.random());
                counts.add(a, b, o.alice, o.bob);
            }
        }
    }
    counts
}

#[test]
fn reported_sigma_matches_run_to_run_spread() {
    let source = SourceSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut s = Vec::new();
    let mut sig = Vec::new();
    for _ in 0..400 {
        let r = chsh(&simulate_counts(&source, 134, &mut rng)).unwrap();
        s.push(r.s_value);
        sig.push(r.sigma);
    }
    let (mean_s, sd_s) = mean_sd(&s);
    let (mean_sigma, _) = mean_sd(&sig);
    assert!(
        (sd_s / mean_sigma - 1.0).abs() < 0.2,
        "{sd_s} vs {mean_sigma}"
    );
    assert!((mean_s - 2.0 * 2f64.sqrt() * 0.806).abs() < 4.0 * sd_s / 20.0);
}

#[test]
fn correlation_converges_to_model() {
    let source = SourceSpec::default();
    let table = joint_outcome_probabilities(0.0, 22.5, &source);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut row = [0u64; 4];
    for _ in 0..400_000 {
        let o = table.sample(rng.random());
        row[outcome_index(o.alice, o.bob)] += 1;
    }
    let e = correlation(&row).unwrap();
    assert!(
        (e.value - 0.570).abs() < 4.0 * e.sigma + 5e-4,
        "{}",
        e.value
    );
}

#[test]
fn bootstrap_agrees_with_propagated_sigma_at_lab_scale() {
    let source = SourceSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let counts = simulate_counts(&source, 135, &mut rng);
        let r = chsh(&counts).unwrap();
        let boot = bootstrap_sigma(&counts, 1000, &mut rng).unwrap();
        assert!((boot / r.sigma - 1.0).abs() < 0.2, "{boot} vs {}", r.sigma);
    }
}

#[test]
fn planner_matches_closed_form() {
    let (v, rate, loss, k) = (0.806f64, 1e9f64, 103.0f64, 3.0f64);
    let e = v / 2f64.sqrt();
    let n_ps = 4.0 * (1.0 - e * e) * k * k / (2.0 * 2f64.sqrt() * v - 2.0).powi(2);
    let t = 4.0 * n_ps / (rate * 10f64.powf(-loss / 10.0));
    let plan = time_to_violation(v, rate, loss, k).unwrap();
    assert!((plan.seconds - t).abs() < 1e-9 * t);
    assert!((n_ps - 310.0).abs() < 2.0);
    assert!((plan.seconds - 2.47e4).abs() < 0.05 * 2.47e4);
}

#[test]
fn local_bound_below_quantum_maximum() {
    let q = model_chsh(
        &SourceSpec {
            visibility: 1.0,
            ..SourceSpec::default()
        },
        &AnalyzerSettings::default(),
    );
    let l = local_bound_oracle() as f64;
    assert_eq!(l, 2.0);
    assert!((q - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    assert!(l < q);
}
