//! Decibel accounting for the two entanglement-distribution arms.
//!
//! Geometric loss uses a uniform top-hat spot of diameter
//! `divergence · distance`; the collected fraction is the ratio of aperture
//! area to spot area, floored at full capture.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("arm `{arm}`: {field} must be a non-negative finite dB value, got {value}")]
    NegativeComponent {
        arm: String,
        field: &'static str,
        value: f64,
    },
    #[error("attenuation must be a non-negative finite dB value, got {0}")]
    NegativeAttenuation(f64),
    #[error("unknown link-budget preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmBudget {
    pub label: String,
    /// Channel loss. In the lab presets this holds the variable attenuator.
    pub geometric_db: f64,
    pub atmospheric_db: f64,
    pub optics_db: f64,
    pub detector_db: f64,
}

impl ArmBudget {
    pub fn new(
        label: impl Into<String>,
        geometric_db: f64,
        atmospheric_db: f64,
        optics_db: f64,
        detector_db: f64,
    ) -> Result<Self, BudgetError> {
        let arm = Self {
            label: label.into(),
            geometric_db,
            atmospheric_db,
            optics_db,
            detector_db,
        };
        arm.validate()?;
        Ok(arm)
    }

    pub fn zero(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            geometric_db: 0.0,
            atmospheric_db: 0.0,
            optics_db: 0.0,
            detector_db: 0.0,
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 4] {
        [
            ("geometric_db", self.geometric_db),
            ("atmospheric_db", self.atmospheric_db),
            ("optics_db", self.optics_db),
            ("detector_db", self.detector_db),
        ]
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        for (field, value) in self.components() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(BudgetError::NegativeComponent {
                    arm: self.label.clone(),
                    field,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Exact sum of the four components.
    pub fn total(&self) -> Result<f64, BudgetError> {
        self.validate()?;
        Ok(self.geometric_db + self.atmospheric_db + self.optics_db + self.detector_db)
    }
}

pub fn arm_total(arm: &ArmBudget) -> Result<f64, BudgetError> {
    arm.total()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureLink {
    /// Full beam divergence, rad.
    pub divergence_rad: f64,
    pub distance_m: f64,
    pub aperture_diameter_m: f64,
}

impl ApertureLink {
    pub fn spot_diameter_m(&self) -> f64 {
        self.divergence_rad * self.distance_m
    }
}

pub fn geometric_loss_db(link: &ApertureLink) -> Result<f64, BudgetError> {
    for (field, value) in [
        ("divergence_rad", link.divergence_rad),
        ("distance_m", link.distance_m),
        ("aperture_diameter_m", link.aperture_diameter_m),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(BudgetError::NonPositive { field, value });
        }
    }
    let ratio = link.spot_diameter_m() / link.aperture_diameter_m;
    Ok((20.0 * ratio.log10()).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkScenario {
    pub arms: [ArmBudget; 2],
    pub pair_loss_db: f64,
}

impl LinkScenario {
    pub fn arm_totals(&self) -> [f64; 2] {
        // arms were validated when the scenario was built
        [
            self.arms[0].total().unwrap_or(f64::NAN),
            self.arms[1].total().unwrap_or(f64::NAN),
        ]
    }

    /// Table-style text rendering.
    pub fn render(&self) -> String {
        let [a, b] = &self.arms;
        let mut out = String::new();
        out.push_str(&format!("{:<24}{:>14}{:>14}\n", "", a.label, b.label));
        let rows = [
            ("Geometric / channel", a.geometric_db, b.geometric_db),
            ("Atmosphere", a.atmospheric_db, b.atmospheric_db),
            ("Optical components", a.optics_db, b.optics_db),
            ("Detection efficiency", a.detector_db, b.detector_db),
        ];
        for (name, x, y) in rows {
            out.push_str(&format!("{name:<24}{:>11.2} dB{:>11.2} dB\n", x, y));
        }
        let [ta, tb] = self.arm_totals();
        out.push_str(&format!(
            "{:<24}{:>11.2} dB{:>11.2} dB\n",
            "Total loss", ta, tb
        ));
        out.push_str(&format!(
            "Two arms total loss: {:.2} dB\n",
            self.pair_loss_db
        ));
        out
    }

    /// `key=value` lines.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        for (i, arm) in self.arms.iter().enumerate() {
            out.push_str(&format!("arm{i}.label={}\n", arm.label));
            for (field, value) in arm.components() {
                out.push_str(&format!("arm{i}.{field}={value}\n"));
            }
            out.push_str(&format!("arm{i}.total_db={}\n", self.arm_totals()[i]));
        }
        out.push_str(&format!("pair_loss_db={}\n", self.pair_loss_db));
        out
    }
}

pub fn scenario_total(arms: [ArmBudget; 2]) -> Result<LinkScenario, BudgetError> {
    let pair_loss_db = arms[0].total()? + arms[1].total()?;
    Ok(LinkScenario { arms, pair_loss_db })
}

/// Linear transmission for a loss in dB: 10^(−dB/10).
pub fn transmittance(db: f64) -> Result<f64, BudgetError> {
    if !(db >= 0.0 && db.is_finite()) {
        return Err(BudgetError::NegativeAttenuation(db));
    }
    Ok(10f64.powf(-db / 10.0))
}

pub const PRESET_TABLE1: &str = "paper_table1";
pub const PRESET_LAB_103DB: &str = "paper_lab_103db";

/// Earth and Moon arms of the Earth–Moon distribution estimate.
pub fn table1_arms() -> [ArmBudget; 2] {
    [
        ArmBudget {
            label: "earth".into(),
            geometric_db: 32.0,
            atmospheric_db: 3.0,
            optics_db: 6.0,
            detector_db: 0.5,
        },
        ArmBudget {
            label: "moon".into(),
            geometric_db: 53.5,
            atmospheric_db: 0.0,
            optics_db: 6.0,
            detector_db: 0.5,
        },
    ]
}

/// Lab simulation: 38.5 dB attenuator, 3 dB fibre coupling and 10 dB
/// detector efficiency per photon.
pub fn lab_103db_arms() -> [ArmBudget; 2] {
    let arm = |label: &str| ArmBudget {
        label: label.into(),
        geometric_db: 38.5,
        atmospheric_db: 0.0,
        optics_db: 3.0,
        detector_db: 10.0,
    };
    [arm("alice"), arm("bob")]
}

pub fn preset_arms(name: &str) -> Result<[ArmBudget; 2], BudgetError> {
    match name {
        PRESET_TABLE1 => Ok(table1_arms()),
        PRESET_LAB_103DB => Ok(lab_103db_arms()),
        other => Err(BudgetError::UnknownPreset(other.to_string())),
    }
}

/// Geometric links behind the Earth and Moon arms: 3 µrad divergence over
/// 3.8e5 km into 30 m and 2.4 m apertures.
pub fn table1_links() -> [ApertureLink; 2] {
    [
        ApertureLink {
            divergence_rad: 3e-6,
            distance_m: 3.8e8,
            aperture_diameter_m: 30.0,
        },
        ApertureLink {
            divergence_rad: 3e-6,
            distance_m: 3.8e8,
            aperture_diameter_m: 2.4,
        },
    ]
}
