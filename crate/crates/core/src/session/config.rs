use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SessionError;
use crate::linkbudget::{lab_103db_arms, table1_arms, ArmBudget};
use crate::photonics::{
    AnalyzerSettings, ArmChannel, DetectionModel, DetectorSpec, SamplingMode, SourceSpec,
    DEFAULT_SEGMENT_PS,
};
use crate::spacetime::{GeometryConfig, TimingBudget};
use crate::tagstream::{CoincidenceConfig, DEFAULT_WINDOW_PS};
use crate::{seconds_to_ps, PS_PER_S};

pub const PRESET_LAB_103DB: &str = "paper_lab_103db";
pub const PRESET_INTERACTIVE_90DB: &str = "interactive_90db";
pub const PRESET_EARTH_MOON: &str = "earth_moon";
pub const PRESETS: [&str; 3] = [PRESET_LAB_103DB, PRESET_INTERACTIVE_90DB, PRESET_EARTH_MOON];

/// Simulated length of the lab experiment, s.
pub const LAB_DURATION_S: f64 = 10_800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Headless,
    Interactive,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceSourceKind {
    #[default]
    Rng,
    Replay,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceConfig {
    pub source: ChoiceSourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    /// Per-observer choice rate drawn uniformly from [min, max] for every gap.
    pub min_rate_hz: f64,
    pub max_rate_hz: f64,
}

impl Default for ChoiceConfig {
    fn default() -> Self {
        Self {
            source: ChoiceSourceKind::Rng,
            replay_path: None,
            min_rate_hz: 2.0,
            max_rate_hz: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub arms: [ArmBudget; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorPair {
    pub alice: DetectorSpec,
    pub bob: DetectorSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub include_singles: bool,
    pub segment_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSettings {
    pub window_ps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometrySettings {
    /// Drop pairs whose detections fall outside the validity windows.
    pub enforce: bool,
    #[serde(flatten)]
    pub geometry: GeometryConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub preset: String,
    pub seed: u64,
    pub duration_s: f64,
    pub mode: RunMode,
    pub time_compression: f64,
    pub source: SourceSpec,
    pub angles: AnalyzerSettings,
    pub link: LinkConfig,
    pub detectors: DetectorPair,
    pub sampling: SamplingConfig,
    pub coincidence: CoincidenceSettings,
    pub geometry: GeometrySettings,
    pub timing: TimingBudget,
    pub choices: ChoiceConfig,
}

fn lab_detector() -> DetectorSpec {
    // detector efficiency is carried by the arm budget
    DetectorSpec {
        efficiency: 1.0,
        jitter_fwhm_ps: 40.0,
        dark_rate: 0.0,
        tdc_fwhm_ps: 60.0,
    }
}

fn interactive_arms() -> [ArmBudget; 2] {
    let arm = |label: &str| ArmBudget {
        label: label.into(),
        geometric_db: 32.0,
        atmospheric_db: 0.0,
        optics_db: 3.0,
        detector_db: 10.0,
    };
    [arm("alice"), arm("bob")]
}

pub fn preset(name: &str) -> Result<SessionConfig, SessionError> {
    let base = SessionConfig {
        preset: PRESET_LAB_103DB.into(),
        seed: 0,
        duration_s: LAB_DURATION_S,
        mode: RunMode::Headless,
        time_compression: 1.0,
        source: SourceSpec::default(),
        angles: AnalyzerSettings::default(),
        link: LinkConfig {
            arms: lab_103db_arms(),
        },
        detectors: DetectorPair {
            alice: lab_detector(),
            bob: lab_detector(),
        },
        sampling: SamplingConfig {
            mode: SamplingMode::Thinned,
            include_singles: false,
            segment_s: DEFAULT_SEGMENT_PS as f64 / PS_PER_S as f64,
        },
        coincidence: CoincidenceSettings {
            window_ps: DEFAULT_WINDOW_PS,
        },
        geometry: GeometrySettings {
            enforce: false,
            geometry: GeometryConfig::default(),
        },
        timing: TimingBudget::default(),
        choices: ChoiceConfig::default(),
    };
    match name {
        PRESET_LAB_103DB => Ok(base),
        PRESET_INTERACTIVE_90DB => Ok(SessionConfig {
            preset: name.into(),
            duration_s: 0.0,
            mode: RunMode::Interactive,
            link: LinkConfig {
                arms: interactive_arms(),
            },
            geometry: GeometrySettings {
                enforce: true,
                ..base.geometry
            },
            choices: ChoiceConfig {
                source: ChoiceSourceKind::Live,
                ..base.choices
            },
            ..base
        }),
        PRESET_EARTH_MOON => Ok(SessionConfig {
            preset: name.into(),
            duration_s: 3600.0,
            link: LinkConfig {
                arms: table1_arms(),
            },
            geometry: GeometrySettings {
                enforce: true,
                ..base.geometry
            },
            ..base
        }),
        other => Err(SessionError::Config(format!(
            "unknown preset `{other}` (known: {})",
            PRESETS.join(", ")
        ))),
    }
}

/// Recursively overlay `top` onto `base`. Tables merge key by key; any other
/// value replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse the right-hand side of `key=value` as a TOML value, falling back to
/// a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), SessionError> {
    let bad = || SessionError::Config(format!("cannot set `{key}`"));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad());
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| bad())?;
                let slot = a.get_mut(idx).ok_or_else(bad)?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad()),
        };
    }
    Err(bad())
}

/// Split `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), SessionError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| SessionError::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Serialize)]
struct HashKey<'a> {
    seed: u64,
    duration_s: f64,
    source: &'a SourceSpec,
    angles: &'a AnalyzerSettings,
    link: &'a LinkConfig,
    detectors: &'a DetectorPair,
    sampling: &'a SamplingConfig,
    coincidence: &'a CoincidenceSettings,
    geometry: &'a GeometrySettings,
    timing: &'a TimingBudget,
    min_rate_hz: f64,
    max_rate_hz: f64,
}

impl SessionConfig {
    /// Build from TOML text. The `preset` key (default `paper_lab_103db`)
    /// supplies every field not given; `overrides` are `key=value` pairs with
    /// dotted keys applied last.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self, SessionError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| SessionError::Config(e.to_string()))?;
        let mut user = toml::Value::Table(user);
        for (k, v) in overrides.iter().filter(|(k, _)| k == "preset") {
            set_path(&mut user, k, parse_override_value(v))?;
        }
        let name = user
            .get("preset")
            .and_then(|v| v.as_str())
            .unwrap_or(PRESET_LAB_103DB)
            .to_string();
        let mut merged = toml::Value::try_from(preset(&name)?)
            .map_err(|e| SessionError::Config(e.to_string()))?;
        merge(&mut merged, user);
        for (k, v) in overrides {
            set_path(&mut merged, k, parse_override_value(v))?;
        }
        let config: SessionConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| SessionError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_preset(name: &str, overrides: &[(String, String)]) -> Result<Self, SessionError> {
        Self::from_toml_str(&format!("preset = \"{name}\""), overrides)
    }

    pub fn to_toml(&self) -> Result<String, SessionError> {
        toml::to_string(self).map_err(|e| SessionError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let err = |m: String| Err(SessionError::Config(m));
        if self.seed > i64::MAX as u64 {
            return err(format!("seed {} exceeds 2^63 - 1", self.seed));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return err(format!("duration_s must be >= 0, got {}", self.duration_s));
        }
        if !(self.time_compression >= 1.0 && self.time_compression.is_finite()) {
            return err(format!(
                "time_compression must be >= 1, got {}",
                self.time_compression
            ));
        }
        match self.mode {
            RunMode::Interactive => {
                if self.time_compression != 1.0 {
                    return err("interactive mode requires time_compression = 1".into());
                }
                if self.choices.source != ChoiceSourceKind::Live {
                    return err("interactive mode requires choices.source = \"live\"".into());
                }
            }
            RunMode::Headless | RunMode::Replay => {
                if self.choices.source == ChoiceSourceKind::Live {
                    return err("live choices need interactive mode".into());
                }
            }
        }
        if self.choices.source == ChoiceSourceKind::Replay && self.choices.replay_path.is_none() {
            return err("choices.source = \"replay\" needs choices.replay_path".into());
        }
        let c = &self.choices;
        if !(c.min_rate_hz > 0.0 && c.min_rate_hz <= c.max_rate_hz && c.max_rate_hz.is_finite()) {
            return err(format!(
                "choice rates must satisfy 0 < min <= max, got {}..{}",
                c.min_rate_hz, c.max_rate_hz
            ));
        }
        if self.coincidence.window_ps == 0 {
            return err("coincidence.window_ps must be positive".into());
        }
        if !(self.sampling.segment_s > 0.0) || seconds_to_ps(self.sampling.segment_s) == 0 {
            return err("sampling.segment_s must be positive".into());
        }
        self.geometry.geometry.validate()?;
        self.timing.validate()?;
        for arm in &self.link.arms {
            arm.validate()?;
        }
        self.detection_model().validate()?;
        Ok(())
    }

    pub fn arm_losses_db(&self) -> [f64; 2] {
        [
            self.link.arms[0].total().unwrap_or(f64::NAN),
            self.link.arms[1].total().unwrap_or(f64::NAN),
        ]
    }

    pub fn pair_loss_db(&self) -> f64 {
        self.arm_losses_db().iter().sum()
    }

    pub fn detection_model(&self) -> DetectionModel {
        let [la, lb] = self.arm_losses_db();
        DetectionModel {
            source: self.source,
            angles: self.angles,
            arms: [
                ArmChannel {
                    loss_db: la,
                    detector: self.detectors.alice,
                },
                ArmChannel {
                    loss_db: lb,
                    detector: self.detectors.bob,
                },
            ],
            include_singles: self.sampling.include_singles,
        }
    }

    pub fn coincidence_config(&self) -> CoincidenceConfig {
        CoincidenceConfig {
            window_ps: self.coincidence.window_ps,
        }
    }

    pub fn system_delay_ps(&self) -> u64 {
        seconds_to_ps(self.timing.system_delay)
    }

    pub fn duration_ps(&self) -> u64 {
        seconds_to_ps(self.duration_s)
    }

    pub fn segment_ps(&self) -> u64 {
        seconds_to_ps(self.sampling.segment_s)
    }

    /// SHA-256 over everything that determines the physics of a run: seed,
    /// duration and scenario. Mode, choice source and time compression are
    /// left out so a live run and its headless twin share a hash.
    pub fn config_hash(&self) -> String {
        let key = HashKey {
            seed: self.seed,
            duration_s: self.duration_s,
            source: &self.source,
            angles: &self.angles,
            link: &self.link,
            detectors: &self.detectors,
            sampling: &self.sampling,
            coincidence: &self.coincidence,
            geometry: &self.geometry,
            timing: &self.timing,
            min_rate_hz: self.choices.min_rate_hz,
            max_rate_hz: self.choices.max_rate_hz,
        };
        let text = toml::to_string(&key).expect("plain data serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = SessionConfig::from_preset(name, &[]).unwrap();
            assert_eq!(c.preset, name);
            let text = c.to_toml().unwrap();
            let back = SessionConfig::from_toml_str(&text, &[]).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn preset_losses() {
        let lab = preset(PRESET_LAB_103DB).unwrap();
        assert_eq!(lab.arm_losses_db(), [51.5, 51.5]);
        assert_eq!(lab.pair_loss_db(), 103.0);
        assert_eq!(
            preset(PRESET_INTERACTIVE_90DB).unwrap().pair_loss_db(),
            90.0
        );
        assert_eq!(preset(PRESET_EARTH_MOON).unwrap().pair_loss_db(), 101.5);
    }

    #[test]
    fn overrides_and_partial_files() {
        let c = SessionConfig::from_toml_str(
            "seed = 9\n[source]\nvisibility = 0.9\n",
            &[
                ("duration_s".into(), "12.5".into()),
                ("link.arms.0.geometric_db".into(), "40".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.source.visibility, 0.9);
        assert_eq!(c.source.pair_rate, 1e9);
        assert_eq!(c.duration_s, 12.5);
        assert_eq!(c.link.arms[0].geometric_db, 40.0);
        let c =
            SessionConfig::from_preset(PRESET_LAB_103DB, &[("preset".into(), "earth_moon".into())])
                .unwrap();
        assert_eq!(c.preset, PRESET_EARTH_MOON);
    }

    #[test]
    fn invalid_configs() {
        let bad = |o: &[(&str, &str)]| {
            let o: Vec<_> = o
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect();
            SessionConfig::from_preset(PRESET_LAB_103DB, &o).is_err()
        };
        assert!(bad(&[("mode", "interactive")]));
        assert!(bad(&[
            ("mode", "interactive"),
            ("choices.source", "live"),
            ("time_compression", "2")
        ]));
        assert!(!bad(&[("mode", "interactive"), ("choices.source", "live")]));
        assert!(bad(&[("choices.source", "live")]));
        assert!(bad(&[("choices.source", "replay")]));
        assert!(bad(&[("coincidence.window_ps", "0")]));
        assert!(bad(&[("source.visibility", "1.5")]));
        assert!(bad(&[("duration_s", "-1")]));
        assert!(bad(&[("preset", "nope")]));
        assert!(bad(&[("choices.min_rate_hz", "5")]));
        assert!(bad(&[("link.arms.0.optics_db", "-3")]));
    }

    #[test]
    fn hash_ignores_mode_but_not_physics() {
        let a = preset(PRESET_INTERACTIVE_90DB).unwrap();
        let mut b = a.clone();
        b.mode = RunMode::Headless;
        b.choices.source = ChoiceSourceKind::Rng;
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
