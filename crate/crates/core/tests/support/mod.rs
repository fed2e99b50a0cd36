//! Test-only oracles and stream generators.

#![allow(dead_code)]

use lunabell_core::tagstream::{CoincidencePair, TimeTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// O(n²) greedy-nearest-unique matching: list every candidate, sort by
/// (|Δt|, bob position, alice position), take greedily.
pub fn brute_force_pairs(alice: &[TimeTag], bob: &[TimeTag], window: u64) -> Vec<CoincidencePair> {
    let mut cands = Vec::new();
    for (i, a) in alice.iter().enumerate() {
        for (j, b) in bob.iter().enumerate() {
            let d = a.time.abs_diff(b.time);
            if d <= window {
                cands.push((d, j, i));
            }
        }
    }
    cands.sort_unstable();
    let mut used_a = vec![false; alice.len()];
    let mut used_b = vec![false; bob.len()];
    let mut out = Vec::new();
    for (_, j, i) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, CoincidencePair::new(alice[i], bob[j])));
        }
    }
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, p)| p).collect()
}

/// Two sorted streams of `n` tags each: half correlated pairs with ~200 ps
/// spread, half uncorrelated, packed densely enough that windows overlap.
pub fn contested_streams(seed: u64, n: usize) -> (Vec<TimeTag>, Vec<TimeTag>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = n as u64 * 2_000;
    let spread = Normal::<f64>::new(0.0, 200.0).unwrap();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let t = rng.random_range(1_000..span);
        let d = spread.sample(&mut rng).round() as i64;
        a.push(TimeTag::new(t, rng.random_range(0..2)));
        b.push(TimeTag::new(
            t.saturating_add_signed(d),
            rng.random_range(2..4),
        ));
    }
    while a.len() < n {
        a.push(TimeTag::new(
            rng.random_range(0..span),
            rng.random_range(0..2),
        ));
    }
    while b.len() < n {
        b.push(TimeTag::new(
            rng.random_range(0..span),
            rng.random_range(2..4),
        ));
    }
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

pub fn pairs_digest(pairs: &[CoincidencePair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(format!(
            "{} {} {} {}\n",
            p.alice.time, p.alice.channel, p.bob.time, p.bob.channel
        ));
    }
    format!("{:x}", h.finalize())
}

pub fn golden_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/coincidence_golden.txt")
}

pub const GOLDEN_SEEDS: u64 = 100;
pub const GOLDEN_TAGS: usize = 1000;
pub const GOLDEN_WINDOW: u64 = 500;

/// `seed count digest` lines from the frozen file.
pub fn load_golden() -> Vec<(u64, usize, String)> {
    let text = std::fs::read_to_string(golden_path()).expect("golden file present");
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].to_string(),
            )
        })
        .collect()
}

/// Sample mean and unbiased standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Welch two-sample t statistic.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    (ma - mb) / (sa * sa / a.len() as f64 + sb * sb / b.len() as f64).sqrt()
}
