use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::accumulator::{LoopholeTally, RunAccumulator};
use super::config::SessionConfig;
use crate::analysis::{
    bootstrap_sigma, chsh, expected_coincidences, ChshResult, SettingCounts, OUTCOME_ORDER,
    SETTING_LABELS,
};
use crate::photonics::SamplingMode;
use crate::ps_to_seconds;
use crate::seed::{rng_for, STREAM_BOOTSTRAP};
use crate::spacetime::Loophole;
use crate::tagstream::Side;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Key excluded from the report hash.
const WALL_TIME_KEY: &str = "wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub preset: String,
    pub seed: u64,
    pub config_hash: String,
    pub pair_rate: f64,
    pub visibility: f64,
    pub arm_loss_db: [f64; 2],
    pub pair_loss_db: f64,
    pub sampling: SamplingMode,
    pub include_singles: bool,
    pub window_ps: u64,
    pub geometry_enforced: bool,
    pub emission_start_ps: Option<u64>,
    pub emission_end_ps: Option<u64>,
    pub duration_s: f64,
    pub trials: [u64; 2],
    pub tallies: [LoopholeTally; 3],
    pub tags: [u64; 2],
    pub matched_pairs: u64,
    pub counted_pairs: u64,
    pub excluded_pairs: u64,
    pub unattributed_pairs: u64,
    pub expected_pairs: f64,
    pub counts: SettingCounts,
    #[serde(skip)]
    pub chsh: Option<ChshResult>,
    pub bootstrap_sigma: Option<f64>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn build(
        config: &SessionConfig,
        acc: &RunAccumulator,
        window: Option<(u64, u64)>,
        wall_time_s: f64,
    ) -> Self {
        let duration_s = window.map_or(0.0, |(a, b)| ps_to_seconds(b - a));
        let efficiency = config.detectors.alice.efficiency * config.detectors.bob.efficiency;
        let expected_pairs =
            expected_coincidences(config.source.pair_rate, config.pair_loss_db(), duration_s)
                .unwrap_or(f64::NAN)
                * efficiency;
        let counts = *acc.counts();
        let chsh = chsh(&counts).ok();
        let bootstrap_sigma = chsh.and_then(|_| {
            let mut rng = rng_for(config.seed, STREAM_BOOTSTRAP, 0);
            bootstrap_sigma(&counts, BOOTSTRAP_RESAMPLES, &mut rng).ok()
        });
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            preset: config.preset.clone(),
            seed: config.seed,
            config_hash: config.config_hash(),
            pair_rate: config.source.pair_rate,
            visibility: config.source.visibility,
            arm_loss_db: config.arm_losses_db(),
            pair_loss_db: config.pair_loss_db(),
            sampling: config.sampling.mode,
            include_singles: config.sampling.include_singles,
            window_ps: config.coincidence.window_ps,
            geometry_enforced: config.geometry.enforce,
            emission_start_ps: window.map(|w| w.0),
            emission_end_ps: window.map(|w| w.1),
            duration_s,
            trials: acc.trial_count(),
            tallies: acc.tallies(),
            tags: acc.tags(),
            matched_pairs: acc.matched(),
            counted_pairs: acc.counted(),
            excluded_pairs: acc.excluded(),
            unattributed_pairs: acc.unattributed(),
            expected_pairs,
            counts,
            chsh,
            bootstrap_sigma,
            wall_time_s,
        }
    }

    pub fn total_trials(&self) -> u64 {
        self.trials.iter().sum()
    }

    pub fn to_kv(&self) -> String {
        let mut o = String::new();
        let opt = |v: Option<u64>| v.map_or("none".to_string(), |x| x.to_string());
        let sampling = match self.sampling {
            SamplingMode::Raw => "raw",
            SamplingMode::Thinned => "thinned",
        };
        let _ = writeln!(o, "schema_version={}", self.schema_version);
        let _ = writeln!(o, "preset={}", self.preset);
        let _ = writeln!(o, "seed={}", self.seed);
        let _ = writeln!(o, "config_hash={}", self.config_hash);
        let _ = writeln!(o, "pair_rate={}", self.pair_rate);
        let _ = writeln!(o, "visibility={}", self.visibility);
        for side in Side::BOTH {
            let _ = writeln!(
                o,
                "arm_loss_db.{}={}",
                side.name(),
                self.arm_loss_db[side.index()]
            );
        }
        let _ = writeln!(o, "pair_loss_db={}", self.pair_loss_db);
        let _ = writeln!(o, "sampling={sampling}");
        let _ = writeln!(o, "include_singles={}", self.include_singles);
        let _ = writeln!(o, "window_ps={}", self.window_ps);
        let _ = writeln!(o, "geometry_enforced={}", self.geometry_enforced);
        let _ = writeln!(o, "emission_start_ps={}", opt(self.emission_start_ps));
        let _ = writeln!(o, "emission_end_ps={}", opt(self.emission_end_ps));
        let _ = writeln!(o, "duration_s={}", self.duration_s);
        for side in Side::BOTH {
            let _ = writeln!(o, "trials.{}={}", side.name(), self.trials[side.index()]);
        }
        for (t, l) in self.tallies.iter().zip(Loophole::ALL) {
            let _ = writeln!(o, "tally.{}.valid={}", l.name(), t.valid);
            let _ = writeln!(o, "tally.{}.invalid={}", l.name(), t.invalid);
            let _ = writeln!(o, "tally.{}.undetected={}", l.name(), t.undetected);
        }
        for side in Side::BOTH {
            let _ = writeln!(o, "tags.{}={}", side.name(), self.tags[side.index()]);
        }
        let _ = writeln!(o, "pairs.matched={}", self.matched_pairs);
        let _ = writeln!(o, "pairs.counted={}", self.counted_pairs);
        let _ = writeln!(o, "pairs.excluded={}", self.excluded_pairs);
        let _ = writeln!(o, "pairs.unattributed={}", self.unattributed_pairs);
        let _ = writeln!(o, "pairs.expected={}", self.expected_pairs);
        for (row, label) in self.counts.counts.iter().zip(SETTING_LABELS) {
            for (c, out) in row.iter().zip(OUTCOME_ORDER) {
                let _ = writeln!(o, "counts.{label}.{out}={c}");
            }
        }
        match &self.chsh {
            Some(r) => {
                let _ = writeln!(o, "chsh.s={}", r.s_value);
                let _ = writeln!(o, "chsh.sigma={}", r.sigma);
                for (e, label) in r.correlations.iter().zip(SETTING_LABELS) {
                    let _ = writeln!(o, "chsh.e.{label}={}", e.value);
                }
                let _ = writeln!(o, "chsh.convention={}", r.sign_convention);
            }
            None => {
                let _ = writeln!(o, "chsh.s=none");
            }
        }
        let _ = writeln!(
            o,
            "chsh.bootstrap_sigma={}",
            self.bootstrap_sigma
                .map_or("none".into(), |s| s.to_string())
        );
        let _ = writeln!(o, "{WALL_TIME_KEY}={}", self.wall_time_s);
        o
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "run report (preset {}, seed {})", self.preset, self.seed);
        let _ = writeln!(
            o,
            "loss        {:.2} dB per pair ({:.2} + {:.2} dB)",
            self.pair_loss_db, self.arm_loss_db[0], self.arm_loss_db[1]
        );
        let _ = writeln!(o, "duration    {:.3} s", self.duration_s);
        let _ = writeln!(
            o,
            "pairs       {} counted, {} expected, {} excluded, {} unattributed",
            self.counted_pairs,
            format_args!("{:.1}", self.expected_pairs),
            self.excluded_pairs,
            self.unattributed_pairs
        );
        let _ = writeln!(
            o,
            "trials      alice {}, bob {}",
            self.trials[0], self.trials[1]
        );
        for (t, l) in self.tallies.iter().zip(Loophole::ALL) {
            let _ = writeln!(
                o,
                "  {:<18} valid {:>8}  invalid {:>8}  undetected {:>8}",
                l.name(),
                t.valid,
                t.invalid,
                t.undetected
            );
        }
        let _ = writeln!(
            o,
            "{:<8}{:>8}{:>8}{:>8}{:>8}{:>10}",
            "setting", "++", "+-", "-+", "--", "E"
        );
        for (i, (row, label)) in self.counts.counts.iter().zip(SETTING_LABELS).enumerate() {
            let e = self.chsh.map_or("-".to_string(), |r| {
                format!("{:.4}", r.correlations[i].value)
            });
            let _ = writeln!(
                o,
                "{:<8}{:>8}{:>8}{:>8}{:>8}{:>10}",
                label, row[0], row[1], row[2], row[3], e
            );
        }
        match (&self.chsh, self.bootstrap_sigma) {
            (Some(r), boot) => {
                let _ = write!(o, "S = {:.3} ± {:.3}", r.s_value, r.sigma);
                if let Some(b) = boot {
                    let _ = write!(o, " (bootstrap {:.3})", b);
                }
                let _ = writeln!(o);
            }
            (None, _) => {
                let _ = writeln!(o, "S undefined: a setting pair has no counts");
            }
        }
        o
    }

    pub fn hash(&self) -> String {
        kv_hash(&self.to_kv())
    }
}

/// SHA-256 of a `key=value` report, ignoring the wall-time line.
pub fn kv_hash(kv: &str) -> String {
    let mut h = Sha256::new();
    for line in kv.lines() {
        if line
            .split_once('=')
            .is_some_and(|(k, _)| k == WALL_TIME_KEY)
        {
            continue;
        }
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}
