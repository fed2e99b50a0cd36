//! Earth–Moon–Lagrange geometry, interval classification and the photon
//! validity windows that keep setting choices space-like separated from the
//! remote measurement and from the pair emission.
//!
//! The source sits at the origin; Earth and Moon lie in the xy-plane so that
//! the three bodies form an equilateral triangle (the L4 or L5 configuration).
//! Only pairwise distances enter any computation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, km/s.
pub const LIGHT_SPEED_KM_S: f64 = 299_792.458;

/// Side of the Earth–Moon–L4 triangle, km.
pub const EARTH_MOON_SIDE_KM: f64 = 3.8e5;

/// Rounded one-way light time between the bodies, s. The exact value for
/// [`EARTH_MOON_SIDE_KM`] is 1.2675 s; the rounded figure is what the
/// published windows (0.78 s / 2.06 s) are derived from.
pub const ROUNDED_LIGHT_TIME_S: f64 = 1.28;

/// Default tolerance for interval classification, s.
pub const DEFAULT_INTERVAL_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpacetimeError {
    #[error("side length must be positive and finite, got {0} km")]
    InvalidSideLength(f64),
    #[error("light speed must be positive and finite, got {0} km/s")]
    InvalidLightSpeed(f64),
    #[error("event `{label}` has a non-finite coordinate")]
    NonFiniteEvent { label: String },
    #[error("invalid timing budget: {0}")]
    InvalidTiming(&'static str),
    #[error("detection at {detection} s precedes setting preparation at {prepared} s")]
    DetectionBeforePreparation { prepared: f64, detection: f64 },
}

/// A labelled point in space-time: position in km, time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeEvent {
    pub label: String,
    pub position: [f64; 3],
    pub time: f64,
}

impl SpacetimeEvent {
    pub fn new(
        label: impl Into<String>,
        position: [f64; 3],
        time: f64,
    ) -> Result<Self, SpacetimeError> {
        let label = label.into();
        if !time.is_finite() || position.iter().any(|x| !x.is_finite()) {
            return Err(SpacetimeError::NonFiniteEvent { label });
        }
        Ok(Self {
            label,
            position,
            time,
        })
    }

    pub fn distance_to(&self, other: &SpacetimeEvent) -> f64 {
        self.position
            .iter()
            .zip(other.position.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    /// Triangle side, km.
    pub side_length_km: f64,
    /// km/s.
    pub light_speed_km_s: f64,
    /// Drive the windows from [`ROUNDED_LIGHT_TIME_S`] instead of side/c.
    pub use_rounded_light_time: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            side_length_km: EARTH_MOON_SIDE_KM,
            light_speed_km_s: LIGHT_SPEED_KM_S,
            use_rounded_light_time: true,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<(), SpacetimeError> {
        if !(self.side_length_km > 0.0 && self.side_length_km.is_finite()) {
            return Err(SpacetimeError::InvalidSideLength(self.side_length_km));
        }
        if !(self.light_speed_km_s > 0.0 && self.light_speed_km_s.is_finite()) {
            return Err(SpacetimeError::InvalidLightSpeed(self.light_speed_km_s));
        }
        Ok(())
    }

    /// Exact one-way light time side/c, s.
    pub fn exact_light_time(&self) -> f64 {
        self.side_length_km / self.light_speed_km_s
    }

    /// Light time that drives the validity windows.
    pub fn one_way_light_time(&self) -> f64 {
        if self.use_rounded_light_time {
            ROUNDED_LIGHT_TIME_S
        } else {
            self.exact_light_time()
        }
    }
}

/// Delay budget between a setting choice (a) and the setting being ready (a′).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBudget {
    /// Human choice latency, s.
    pub reaction_time: f64,
    /// Keypress to setting-ready, s.
    pub system_delay: f64,
    /// Total a→a′ delay used against the light-time budget, s.
    pub delta_t: f64,
}

impl Default for TimingBudget {
    /// 0.45 s reaction allowance plus 50 ms system delay: the 0.5 s upper
    /// bound used for the published windows.
    fn default() -> Self {
        Self {
            reaction_time: 0.45,
            system_delay: 0.05,
            delta_t: 0.5,
        }
    }
}

impl TimingBudget {
    /// Budget whose total delay is the sum of its parts.
    pub fn from_parts(reaction_time: f64, system_delay: f64) -> Result<Self, SpacetimeError> {
        let budget = Self {
            reaction_time,
            system_delay,
            delta_t: reaction_time + system_delay,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), SpacetimeError> {
        let all = [self.reaction_time, self.system_delay, self.delta_t];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SpacetimeError::InvalidTiming(
                "all delays must be finite and non-negative",
            ));
        }
        if self.delta_t < self.system_delay {
            return Err(SpacetimeError::InvalidTiming(
                "delta_t must be at least the system delay",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalClass {
    SpaceLike,
    TimeLike,
    LightLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loophole {
    Locality,
    FreedomOfChoice,
    Combined,
}

impl Loophole {
    pub const ALL: [Loophole; 3] = [
        Loophole::Locality,
        Loophole::FreedomOfChoice,
        Loophole::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Loophole::Locality => "locality",
            Loophole::FreedomOfChoice => "freedom-of-choice",
            Loophole::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopholeWindow {
    pub loophole: Loophole,
    /// Maximum prepared-to-detection delay for a valid photon, s.
    pub window: f64,
}

/// Which of the two Earth–Moon triangular points hosts the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagrangePoint {
    #[default]
    L4,
    L5,
}

/// Earth, Moon and source positions at time 0.
///
/// The source is the origin, Earth sits on the +x axis and the Moon closes
/// the equilateral triangle above (L4) or below (L5) it.
pub fn lagrange_positions(
    config: &GeometryConfig,
    point: LagrangePoint,
) -> Result<[SpacetimeEvent; 3], SpacetimeError> {
    config.validate()?;
    let s = config.side_length_km;
    let h = s * 3f64.sqrt() / 2.0;
    let moon_y = match point {
        LagrangePoint::L4 => h,
        LagrangePoint::L5 => -h,
    };
    Ok([
        SpacetimeEvent::new("earth", [s, 0.0, 0.0], 0.0)?,
        SpacetimeEvent::new("moon", [s / 2.0, moon_y, 0.0], 0.0)?,
        SpacetimeEvent::new("source", [0.0, 0.0, 0.0], 0.0)?,
    ])
}

/// Classify the interval between two events with a time tolerance `tol`.
///
/// Space-like iff |Δx| > c·|Δt| + c·tol, time-like iff |Δx| < c·|Δt| − c·tol,
/// light-like otherwise.
pub fn classify_interval(
    e1: &SpacetimeEvent,
    e2: &SpacetimeEvent,
    light_speed_km_s: f64,
    tol: f64,
) -> IntervalClass {
    let dx = e1.distance_to(e2);
    let ct = light_speed_km_s * (e1.time - e2.time).abs();
    let margin = light_speed_km_s * tol.max(0.0);
    if dx > ct + margin {
        IntervalClass::SpaceLike
    } else if dx < ct - margin {
        IntervalClass::TimeLike
    } else {
        IntervalClass::LightLike
    }
}

pub fn admissible_window(
    loophole: Loophole,
    timing: &TimingBudget,
    config: &GeometryConfig,
) -> LoopholeWindow {
    let light = config.one_way_light_time();
    let locality = (light - timing.delta_t).max(0.0);
    let foc = (2.0 * light - timing.delta_t).max(0.0);
    let window = match loophole {
        Loophole::Locality => locality,
        Loophole::FreedomOfChoice => foc,
        Loophole::Combined => locality.min(foc),
    };
    LoopholeWindow { loophole, window }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Validity {
    pub locality_ok: bool,
    pub foc_ok: bool,
}

impl Validity {
    pub fn combined(&self) -> bool {
        self.locality_ok && self.foc_ok
    }

    pub fn get(&self, loophole: Loophole) -> bool {
        match loophole {
            Loophole::Locality => self.locality_ok,
            Loophole::FreedomOfChoice => self.foc_ok,
            Loophole::Combined => self.combined(),
        }
    }
}

/// Check a detection against both windows, measured from setting preparation.
pub fn validate_trial(
    prepared_time: f64,
    detection_time: f64,
    timing: &TimingBudget,
    config: &GeometryConfig,
) -> Result<Validity, SpacetimeError> {
    if detection_time < prepared_time {
        return Err(SpacetimeError::DetectionBeforePreparation {
            prepared: prepared_time,
            detection: detection_time,
        });
    }
    let delay = detection_time - prepared_time;
    Ok(Validity {
        locality_ok: delay <= admissible_window(Loophole::Locality, timing, config).window,
        foc_ok: delay <= admissible_window(Loophole::FreedomOfChoice, timing, config).window,
    })
}
