mod support;

use lunabell_core::analysis::{chsh, correlation, model_chsh, setting_index, SettingCounts};
use lunabell_core::photonics::*;
use lunabell_core::tagstream::{
    accidental_rate, decode_channel, find_coincidences, CoincidenceConfig, DeltaHistogram,
    FLAG_DARK,
};
use lunabell_core::PS_PER_S;
use support::{mean_sd, welch_t};

fn model(pair_rate: f64, loss_db: [f64; 2], include_singles: bool) -> DetectionModel {
    DetectionModel {
        source: SourceSpec {
            pair_rate,
            ..SourceSpec::default()
        },
        angles: AnalyzerSettings::default(),
        arms: [
            ArmChannel {
                loss_db: loss_db[0],
                detector: DetectorSpec::default(),
            },
            ArmChannel {
                loss_db: loss_db[1],
                detector: DetectorSpec::default(),
            },
        ],
        include_singles,
    }
}

fn window() -> CoincidenceConfig {
    CoincidenceConfig::new(500).unwrap()
}

#[test]
fn timing_fwhm_monte_carlo() {
    let m = model(1e6, [0.0, 0.0], true);
    let emissions: Vec<u64> = (1..=1_000_000u64).map(|i| i * 1_000_000).collect();
    let s = SettingSchedule::constant(0);
    let tags = detect_stream(&emissions, [&s, &s], &m, (0, 0), 11).unwrap();
    let pairs = find_coincidences(tags.alice(), tags.bob(), window()).unwrap();
    assert_eq!(pairs.len(), 1_000_000);
    let h = DeltaHistogram::from_pairs(&pairs, 4, 500).unwrap();
    let fwhm = h.fwhm_ps().unwrap();
    let predicted = system_timing_fwhm(&[40.0, 40.0, 60.0]).unwrap();
    assert!((fwhm - predicted).abs() < 2.0, "{fwhm} vs {predicted}");
}

/// Per-run summary: coincidences, singles per side, E at settings (0,0).
fn summarize(tags: &DetectedStreams) -> [f64; 4] {
    let pairs = find_coincidences(tags.alice(), tags.bob(), window()).unwrap();
    let mut row = [0u64; 4];
    for p in &pairs {
        let (_, oa) = decode_channel(p.alice.channel).unwrap();
        let (_, ob) = decode_channel(p.bob.channel).unwrap();
        row[2 * oa.index() + ob.index()] += 1;
    }
    [
        pairs.len() as f64,
        tags.alice().len() as f64,
        tags.bob().len() as f64,
        correlation(&row).unwrap().value,
    ]
}

#[test]
fn raw_and_thinned_sampling_agree() {
    let m = model(2e5, [3.0, 6.0], true);
    let s = SettingSchedule::constant(0);
    let end = PS_PER_S / 5;
    let mut raw = Vec::new();
    let mut thin = Vec::new();
    for seed in 0..50 {
        let emissions = sample_pair_emissions(&m.source, 0.2, seed);
        raw.push(summarize(
            &detect_stream(&emissions, [&s, &s], &m, (0, end), seed + 1000).unwrap(),
        ));
        thin.push(summarize(
            &detect_thinned([&s, &s], &m, (0, end), seed + 2000).unwrap(),
        ));
    }
    for k in 0..4 {
        let a: Vec<f64> = raw.iter().map(|r| r[k]).collect();
        let b: Vec<f64> = thin.iter().map(|r| r[k]).collect();
        let t = welch_t(&a, &b);
        // two-sided 1% level, ~98 degrees of freedom
        assert!(t.abs() < 2.63, "statistic {k}: t = {t}");
    }
    let (mean_pairs, _) = mean_sd(&thin.iter().map(|r| r[0]).collect::<Vec<_>>());
    let expected = 2e5 * 0.2 * 10f64.powf(-0.3) * 10f64.powf(-0.6);
    assert!(
        (mean_pairs / expected - 1.0).abs() < 0.02,
        "{mean_pairs} vs {expected}"
    );
}

#[test]
fn thinned_rates_match_transmittance() {
    let m = model(1e6, [10.0, 20.0], true);
    let s = SettingSchedule::constant(1);
    let tags = detect_thinned([&s, &s], &m, (0, PS_PER_S), 5).unwrap();
    let (ta, tb) = (0.1, 0.01);
    for (n, expect) in [(tags.alice().len(), 1e6 * ta), (tags.bob().len(), 1e6 * tb)] {
        assert!(
            (n as f64 - expect).abs() < 5.0 * expect.sqrt(),
            "{n} vs {expect}"
        );
    }
    let no_singles =
        detect_thinned([&s, &s], &model(1e6, [10.0, 20.0], false), (0, PS_PER_S), 5).unwrap();
    assert_eq!(no_singles.alice().len(), no_singles.bob().len());
    let expect = 1e6 * ta * tb;
    assert!((no_singles.alice().len() as f64 - expect).abs() < 5.0 * expect.sqrt());
}

#[test]
fn dark_counts_are_flagged_and_uniform() {
    let mut m = model(0.0, [0.0, 0.0], true);
    m.arms[0].detector.dark_rate = 1000.0;
    let s = SettingSchedule::constant(0);
    let tags = detect_thinned([&s, &s], &m, (0, 10 * PS_PER_S), 9).unwrap();
    assert!(tags.bob().is_empty());
    let n = tags.alice().len() as f64;
    assert!((n - 20_000.0).abs() < 5.0 * 20_000f64.sqrt());
    assert!(tags.alice().iter().all(|t| t.flags == FLAG_DARK));
}

fn counts_for(m: &DetectionModel, seconds: u64, seed: u64) -> SettingCounts {
    // each of the four setting pairs gets a quarter of the time
    let mut counts = SettingCounts::default();
    for a in 0..2u8 {
        for b in 0..2u8 {
            let (sa, sb) = (SettingSchedule::constant(a), SettingSchedule::constant(b));
            let end = seconds * PS_PER_S / 4;
            let seed = seed * 10 + setting_index(a, b) as u64;
            let tags = detect_thinned([&sa, &sb], m, (0, end), seed).unwrap();
            for p in find_coincidences(tags.alice(), tags.bob(), window()).unwrap() {
                let (_, oa) = decode_channel(p.alice.channel).unwrap();
                let (_, ob) = decode_channel(p.bob.channel).unwrap();
                counts.add(a, b, oa, ob);
            }
        }
    }
    counts
}

#[test]
fn uncorrelated_singles_dilute_s() {
    let with = model(1e8, [20.0, 20.0], true);
    let without = model(1e8, [20.0, 20.0], false);
    let c_with = counts_for(&with, 4, 1);
    let c_without = counts_for(&without, 4, 2);
    let s_with = chsh(&c_with).unwrap();
    let s_without = chsh(&c_without).unwrap();

    let true_rate = 1e8 * 1e-4;
    let singles = 1e8 * 1e-2;
    let acc = accidental_rate(singles, singles, 1000.0);
    let diluted = model_chsh(&with.source, &with.angles) * true_rate / (true_rate + acc);
    assert!((s_without.s_value - 2.2797).abs() < 4.0 * s_without.sigma);
    assert!(
        (s_with.s_value - diluted).abs() < 4.0 * s_with.sigma,
        "{} vs {diluted}",
        s_with.s_value
    );
    assert!(s_without.s_value - s_with.s_value > 3.0 * s_with.sigma);
}

#[test]
fn lab_singles_would_match_the_true_rate() {
    // 1e9 pairs/s at 51.5 dB per photon
    let singles = 1e9 * 10f64.powf(-5.15);
    let true_rate = 1e9 * 10f64.powf(-10.3);
    let acc = accidental_rate(singles, singles, 2.0 * 500.0);
    assert!((acc / true_rate - 1.0).abs() < 1e-9);
}
