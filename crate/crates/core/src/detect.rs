//! Near-source air concentration from vapor pressure, psychometric detection
//! probability and a composite detectability ranking.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::Medium;

/// Gas constant, J·mol⁻¹·K⁻¹.
pub const R_GAS: f64 = 8.314;
/// Milligrams per gram.
const MG_PER_G: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("compound {key}: threshold basis {basis} cannot be compared with an air concentration")]
    UnitMismatch { key: String, basis: Medium },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Partition {
    /// Liquid mixture with mole fraction `x`.
    Raoult { x: f64 },
    /// Dilute solution with activity `a` and Henry constant `h` in Pa.
    Henry { a: f64, h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub temperature_k: f64,
    pub p_tot: f64,
    pub partition: Partition,
    /// Psychometric slope; no default.
    pub gamma: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidScenario(m));
        if !(self.temperature_k > 0.0) {
            return bad(format!("temperature {} K", self.temperature_k));
        }
        if !(self.p_tot > 0.0) {
            return bad(format!("total pressure {} Pa", self.p_tot));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("slope {}", self.gamma));
        }
        match self.partition {
            Partition::Raoult { x } if !(0.0..=1.0).contains(&x) => bad(format!("mole fraction {x}")),
            Partition::Henry { a, h } if !(a >= 0.0 && h > 0.0) => bad(format!("activity {a}, Henry constant {h}")),
            _ => Ok(()),
        }
    }

    pub fn from_toml(text: &str) -> Result<Scenario, DetectError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Gas-phase concentration in mol·m⁻³: `y · P_tot / (R T)` with
/// `y = x P*/P_tot` (Raoult) or `y = a/H` (Henry).
pub fn c_air(p_star: f64, s: &Scenario) -> Result<f64, DetectError> {
    s.validate()?;
    if !(p_star >= 0.0) {
        return Err(DetectError::InvalidScenario(format!("vapor pressure {p_star} Pa")));
    }
    let y = match s.partition {
        Partition::Raoult { x } => x * p_star / s.p_tot,
        Partition::Henry { a, h } => a / h,
    };
    Ok(y * s.p_tot / (R_GAS * s.temperature_k))
}

/// `1 / (1 + (C50/C)^γ)`, 0 at `C = 0`.
pub fn p_detect(c: f64, c50: f64, gamma: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + (c50 / c).powf(gamma))
}

/// Predicted properties of one compound in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compound {
    pub molecule_key: String,
    /// log10 of the vapor pressure in Pa.
    pub log10_vp_pa: f64,
    /// log10 of the odor threshold in the basis of `medium`.
    pub log10_c50: f64,
    pub medium: Medium,
    /// g·mol⁻¹
    pub molar_mass: f64,
}

impl Compound {
    /// Threshold in mol·m⁻³; only air thresholds (mg·m⁻³) qualify.
    pub fn c50_mol_m3(&self) -> Result<f64, DetectError> {
        if self.medium != Medium::Air {
            return Err(DetectError::UnitMismatch { key: self.molecule_key.clone(), basis: self.medium });
        }
        Ok(10f64.powf(self.log10_c50) / MG_PER_G / self.molar_mass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub rank: usize,
    pub molecule_key: String,
    pub c_air: f64,
    pub c50: f64,
    pub ratio: f64,
    pub p_detect: f64,
}

/// Order compounds by `C_air / C50`, highest first; ties by detection
/// probability, then key.
pub fn rank_detectability(compounds: &[Compound], s: &Scenario) -> Result<Vec<Ranked>, DetectError> {
    s.validate()?;
    let mut out = Vec::with_capacity(compounds.len());
    for c in compounds {
        let air = c_air(10f64.powf(c.log10_vp_pa), s)?;
        let c50 = c.c50_mol_m3()?;
        out.push(Ranked {
            rank: 0,
            molecule_key: c.molecule_key.clone(),
            c_air: air,
            c50,
            ratio: air / c50,
            p_detect: p_detect(air, c50, s.gamma),
        });
    }
    out.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then(b.p_detect.total_cmp(&a.p_detect))
            .then_with(|| a.molecule_key.cmp(&b.molecule_key))
    });
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(out)
}

pub fn read_compounds(path: &Path) -> Result<Vec<Compound>, DetectError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_compounds(compounds: &[Compound], path: &Path) -> Result<(), DetectError> {
    let mut w = csv::Writer::from_path(path)?;
    for c in compounds {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ranking(rows: &[Ranked], path: &Path) -> Result<(), DetectError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
