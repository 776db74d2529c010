//! Unit harmonization, duplicate aggregation, winsorization and scaling.
//!
//! Every statistic here is meant to be fitted on the training fold only; the
//! fitted objects are plain data so they can be written to the run manifest
//! and re-applied bit-exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PA_PER_MMHG: f64 = 133.322;
pub const PA_PER_ATM: f64 = 101_325.0;
pub const PA_PER_BAR: f64 = 100_000.0;
pub const PA_PER_KPA: f64 = 1_000.0;
/// Ideal-gas molar volume at 25 °C and 101325 Pa, L/mol.
pub const MOLAR_VOLUME_L: f64 = 24.45;
/// Floor applied to robust (MAD) scales.
pub const MAD_EPS: f64 = 1e-8;
/// Smallest standard deviation accepted when standardizing targets.
pub const MIN_STD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("pressure must be positive, got {0}")]
    NonPositivePressure(f64),
    #[error("concentration must be positive, got {0}")]
    NonPositiveConcentration(f64),
    #[error("odor threshold record without an air/water medium")]
    MissingMedium,
    #[error("vapor pressure record without a temperature")]
    MissingTemperature,
    #[error("winsorization needs at least {need} values, got {n}")]
    TooFewSamples { n: usize, need: usize },
    #[error("winsorization level {0} outside (0, 0.5)")]
    InvalidAlpha(f64),
    #[error("standard deviation {std:e} below {MIN_STD:e} for {what}")]
    DegenerateScale { what: String, std: f64 },
    #[error("cannot fit a scale on an empty set ({0})")]
    EmptyFit(String),
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(String),
    #[error("line {line}: {source}")]
    Smiles { line: usize, source: crate::smiles::SmilesError },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    #[serde(rename = "VP")]
    Vp,
    #[serde(rename = "OA")]
    Oa,
    #[serde(rename = "OW")]
    Ow,
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Endpoint, PreprocessError> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VP" => Ok(Endpoint::Vp),
            "OA" | "OT_AIR" => Ok(Endpoint::Oa),
            "OW" | "OT_WATER" => Ok(Endpoint::Ow),
            _ => Err(PreprocessError::UnknownEndpoint(s.to_string())),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::Vp => "VP",
            Endpoint::Oa => "OA",
            Endpoint::Ow => "OW",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Medium {
    Air,
    Water,
    None,
}

impl Medium {
    pub fn parse(s: &str) -> Medium {
        match s.trim().to_ascii_lowercase().as_str() {
            "air" => Medium::Air,
            "water" => Medium::Water,
            _ => Medium::None,
        }
    }
}

impl fmt::Display for Medium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Medium::Air => "air",
            Medium::Water => "water",
            Medium::None => "none",
        })
    }
}

/// One row of the dataset CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub smiles: String,
    pub endpoint: Endpoint,
    pub value: f64,
    pub unit: String,
    pub temperature_k: Option<f64>,
    pub medium: Medium,
    pub n_reports: Option<u32>,
    pub iqr: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    smiles: String,
    #[serde(rename = "temperature_K", default)]
    temperature_k: Option<f64>,
    endpoint: String,
    value: f64,
    unit: String,
    #[serde(default)]
    medium: String,
    #[serde(default)]
    n_reports: Option<u32>,
    #[serde(default)]
    iqr: Option<f64>,
    #[serde(default)]
    sigma: Option<f64>,
}

pub const CSV_HEADER: [&str; 9] =
    ["smiles", "temperature_K", "endpoint", "value", "unit", "medium", "n_reports", "iqr", "sigma"];

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>, PreprocessError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row?;
        out.push(RawRecord {
            smiles: row.smiles,
            endpoint: Endpoint::parse(&row.endpoint)?,
            value: row.value,
            unit: row.unit,
            temperature_k: row.temperature_k,
            medium: Medium::parse(&row.medium),
            n_reports: row.n_reports,
            iqr: row.iqr,
            sigma: row.sigma,
        });
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<(), PreprocessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(CsvRow {
            smiles: r.smiles.clone(),
            temperature_k: r.temperature_k,
            endpoint: r.endpoint.to_string(),
            value: r.value,
            unit: r.unit.clone(),
            medium: r.medium.to_string(),
            n_reports: r.n_reports,
            iqr: r.iqr,
            sigma: r.sigma,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Lowercase, drop whitespace and normalize micro signs and exponents.
fn normalize_unit(unit: &str) -> String {
    unit.trim()
        .replace(['µ', 'μ'], "u")
        .replace("⁻³", "-3")
        .replace('³', "3")
        .replace("^", "")
        .replace(['·', ' '], "")
        .to_ascii_lowercase()
        .replace("m-3", "/m3")
        .replace("l-1", "/l")
        .replace("//", "/")
}

fn pascal_factor(unit: &str) -> Option<f64> {
    match normalize_unit(unit).as_str() {
        "pa" => Some(1.0),
        "kpa" => Some(PA_PER_KPA),
        "mmhg" | "torr" => Some(PA_PER_MMHG),
        "atm" => Some(PA_PER_ATM),
        "bar" => Some(PA_PER_BAR),
        _ => None,
    }
}

/// Convert a vapor pressure to log10 Pa.
pub fn harmonize_vp(value: f64, unit: &str) -> Result<f64, PreprocessError> {
    let factor = pascal_factor(unit).ok_or_else(|| PreprocessError::UnknownUnit(unit.to_string()))?;
    if !(value > 0.0) {
        return Err(PreprocessError::NonPositivePressure(value));
    }
    Ok((value * factor).log10())
}

/// Convert an odor threshold to log10 of the medium basis unit: mg/m³ in air,
/// µg/L in water. Mixing ratios in air use the molar mass in g/mol.
pub fn harmonize_op(value: f64, unit: &str, medium: Medium, molar_mass: f64) -> Result<f64, PreprocessError> {
    let unknown = || PreprocessError::UnknownUnit(unit.to_string());
    let u = normalize_unit(unit);
    let factor = match medium {
        Medium::Air => match u.as_str() {
            "mg/m3" => 1.0,
            "ug/m3" => 1e-3,
            "ng/m3" => 1e-6,
            "g/m3" => 1e3,
            "ppm" | "ppmv" => molar_mass / MOLAR_VOLUME_L,
            "ppb" | "ppbv" => molar_mass / MOLAR_VOLUME_L * 1e-3,
            _ => return Err(unknown()),
        },
        Medium::Water => match u.as_str() {
            "ug/l" | "ppb" => 1.0,
            "ng/l" | "ppt" => 1e-3,
            "mg/l" | "ppm" => 1e3,
            "g/l" => 1e6,
            _ => return Err(unknown()),
        },
        Medium::None => return Err(PreprocessError::MissingMedium),
    };
    if !(value > 0.0) {
        return Err(PreprocessError::NonPositiveConcentration(value));
    }
    Ok((value * factor).log10())
}

/// Sample quantile with linear interpolation between order statistics
/// (position `q·(n−1)` in the sorted data). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub value: f64,
    pub n: u32,
    pub iqr: f64,
}

/// Collapse replicate log-space values into their median, count and IQR.
pub fn aggregate_duplicates(values: &[f64]) -> Aggregate {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Aggregate {
        value: quantile_sorted(&v, 0.5),
        n: v.len() as u32,
        iqr: quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorBounds {
    pub alpha: f64,
    pub lo: f64,
    pub hi: f64,
}

impl WinsorBounds {
    pub fn clip(&self, y: f64) -> f64 {
        y.clamp(self.lo, self.hi)
    }
}

/// Fit clipping bounds at the `alpha` and `1 − alpha` quantiles of the
/// training values and return them with the clipped values.
pub fn winsorize(train_values: &[f64], alpha: f64) -> Result<(WinsorBounds, Vec<f64>), PreprocessError> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(PreprocessError::InvalidAlpha(alpha));
    }
    let need = (1.0 / alpha).ceil() as usize;
    if train_values.len() < need {
        return Err(PreprocessError::TooFewSamples { n: train_values.len(), need });
    }
    let mut sorted = train_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bounds = WinsorBounds {
        alpha,
        lo: quantile_sorted(&sorted, alpha),
        hi: quantile_sorted(&sorted, 1.0 - alpha),
    };
    let clipped = train_values.iter().map(|&y| bounds.clip(y)).collect();
    Ok((bounds, clipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    MeanStd,
    MedianMad,
}

/// Affine standardizer `(y − center) / scale`, fitted once and re-applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScaleKind,
    pub center: f64,
    pub scale: f64,
}

impl Scaler {
    pub fn identity() -> Scaler {
        Scaler { kind: ScaleKind::MeanStd, center: 0.0, scale: 1.0 }
    }

    /// Mean and population standard deviation; fails below [`MIN_STD`].
    pub fn fit_mean_std(values: &[f64], what: &str) -> Result<Scaler, PreprocessError> {
        if values.is_empty() {
            return Err(PreprocessError::EmptyFit(what.to_string()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < MIN_STD {
            return Err(PreprocessError::DegenerateScale { what: what.to_string(), std });
        }
        Ok(Scaler { kind: ScaleKind::MeanStd, center: mean, scale: std })
    }

    /// Like [`Scaler::fit_mean_std`] but a degenerate spread falls back to a
    /// unit scale instead of failing. Used for input channels.
    pub fn fit_mean_std_or_unit(values: &[f64]) -> Scaler {
        if values.is_empty() {
            return Scaler::identity();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        Scaler { kind: ScaleKind::MeanStd, center: mean, scale: if std < MIN_STD { 1.0 } else { std } }
    }

    /// Median and MAD, the MAD floored at [`MAD_EPS`].
    pub fn fit_median_mad(values: &[f64], what: &str) -> Result<Scaler, PreprocessError> {
        if values.is_empty() {
            return Err(PreprocessError::EmptyFit(what.to_string()));
        }
        let med = median(values);
        let deviations: Vec<f64> = values.iter().map(|y| (y - med).abs()).collect();
        let mad = median(&deviations);
        if mad < MAD_EPS {
            log::warn!("MAD of {what} is {mad:e}; floored at {MAD_EPS:e}");
        }
        Ok(Scaler { kind: ScaleKind::MedianMad, center: med, scale: mad.max(MAD_EPS) })
    }

    pub fn fit(kind: ScaleKind, values: &[f64], what: &str) -> Result<Scaler, PreprocessError> {
        match kind {
            ScaleKind::MeanStd => Scaler::fit_mean_std(values, what),
            ScaleKind::MedianMad => Scaler::fit_median_mad(values, what),
        }
    }

    pub fn transform(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.scale + self.center
    }
}

/// Robust standardization of `values` by their own median and MAD.
pub fn robust_scale(values: &[f64]) -> Result<(Scaler, Vec<f64>), PreprocessError> {
    let s = Scaler::fit_median_mad(values, "values")?;
    Ok((s, values.iter().map(|&y| s.transform(y)).collect()))
}

/// Per-record loss weight `alpha / (alpha + sigma)`; 1 for a perfectly
/// known label, never above 1.
pub fn uncertainty_weight(sigma: f64, alpha: f64) -> f64 {
    alpha / (alpha + sigma.max(0.0))
}

/// Conversion constants as recorded in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub pa_per_mmhg: f64,
    pub pa_per_atm: f64,
    pub pa_per_bar: f64,
    pub pa_per_kpa: f64,
    pub molar_volume_l: f64,
    pub mad_eps: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            pa_per_mmhg: PA_PER_MMHG,
            pa_per_atm: PA_PER_ATM,
            pa_per_bar: PA_PER_BAR,
            pa_per_kpa: PA_PER_KPA,
            molar_volume_l: MOLAR_VOLUME_L,
            mad_eps: MAD_EPS,
        }
    }
}

/// Everything needed to re-apply preprocessing to new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub version: u32,
    pub units_seen: BTreeMap<String, usize>,
    pub constants: Constants,
    pub winsor_alpha: Option<f64>,
    pub winsor: BTreeMap<Endpoint, WinsorBounds>,
    pub target_scalers: BTreeMap<Endpoint, Scaler>,
    pub temperature_scaler: Scaler,
    pub node_scalers: Vec<Scaler>,
    pub uncertainty_alpha: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vp_units() {
        assert!((harmonize_vp(1.0, "mmHg").unwrap() - 133.322f64.log10()).abs() < 1e-15);
        assert!((harmonize_vp(1.0, "mmHg").unwrap() - 2.1249).abs() < 1e-4);
        assert_eq!(harmonize_vp(1.0, "Pa").unwrap(), 0.0);
        assert!((harmonize_vp(1.0, "atm").unwrap() - 5.0057).abs() < 1e-4);
        assert!((harmonize_vp(2.0, "kPa").unwrap() - 2000f64.log10()).abs() < 1e-15);
        assert!(matches!(harmonize_vp(1.0, "psi"), Err(PreprocessError::UnknownUnit(_))));
        assert!(matches!(harmonize_vp(0.0, "Pa"), Err(PreprocessError::NonPositivePressure(_))));
    }

    #[test]
    fn op_units() {
        assert_eq!(harmonize_op(1.0, "mg/m3", Medium::Air, 50.0).unwrap(), 0.0);
        assert_eq!(harmonize_op(1.0, "mg·m⁻³", Medium::Air, 50.0).unwrap(), 0.0);
        let ppm = harmonize_op(1.0, "ppm", Medium::Air, 100.0).unwrap();
        assert!((10f64.powf(ppm) - 100.0 / 24.45).abs() < 1e-12);
        assert!((ppm - 0.6117).abs() < 1e-4);
        assert!(harmonize_op(1000.0, "ng/L", Medium::Water, 1.0).unwrap().abs() < 1e-15);
        assert!(harmonize_op(1.0, "µg/L", Medium::Water, 1.0).unwrap().abs() < 1e-15);
        assert!(matches!(harmonize_op(1.0, "ppm", Medium::None, 1.0), Err(PreprocessError::MissingMedium)));
        assert!(matches!(harmonize_op(1.0, "furlong", Medium::Air, 1.0), Err(PreprocessError::UnknownUnit(_))));
    }

    fn brute_quantile(values: &[f64], q: f64) -> f64 {
        // h = (n-1)q, interpolate between floor and floor+1 order statistics
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = (v.len() as f64 - 1.0) * q;
        let k = h.floor() as usize;
        if k + 1 >= v.len() {
            return v[k];
        }
        v[k] + (h - k as f64) * (v[k + 1] - v[k])
    }

    #[test]
    fn aggregation() {
        let a = aggregate_duplicates(&[3.5]);
        assert_eq!((a.value, a.n, a.iqr), (3.5, 1, 0.0));
        assert_eq!(aggregate_duplicates(&[1.0, 2.0, 10.0]).value, 2.0);
        let v = [0.0, 1.0, 2.0, 100.0];
        let a = aggregate_duplicates(&v);
        assert_eq!(a.value, 1.5);
        assert_eq!(a.n, 4);
        assert_eq!(a.iqr, brute_quantile(&v, 0.75) - brute_quantile(&v, 0.25));
        assert_eq!(a.iqr, 26.5 - 0.75);
    }

    #[test]
    fn winsor_examples() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.618_033_988_75).fract()).collect();
        let (b, clipped) = winsorize(&values, 0.025).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let altered = values.iter().zip(&clipped).filter(|(a, b)| a != b).count();
        let oracle = sorted.iter().filter(|&&v| v < b.lo || v > b.hi).count();
        assert_eq!(altered, oracle);
        assert_eq!(altered, 50);
        let min = sorted[0];
        let imin = values.iter().position(|&v| v == min).unwrap();
        assert_eq!(clipped[imin], b.lo);
        let inside = values.iter().position(|&v| v > b.lo && v < b.hi).unwrap();
        assert_eq!(clipped[inside], values[inside]);
        assert!(matches!(winsorize(&values[..10], 0.025), Err(PreprocessError::TooFewSamples { n: 10, need: 40 })));
    }

    #[test]
    fn robust_scaling() {
        let (s, z) = robust_scale(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.center, s.scale), (2.0, 1.0));
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);
        let (s, z) = robust_scale(&[4.0; 5]).unwrap();
        assert_eq!(s.scale, MAD_EPS);
        assert!(z.iter().all(|&v| v == 0.0));
        let (s, _) = robust_scale(&[0.0, 0.0, 0.0, 10.0]).unwrap();
        assert_eq!((s.center, s.scale), (0.0, MAD_EPS));
    }

    #[test]
    fn standardization_examples() {
        let s = Scaler::fit_mean_std(&[0.0, 2.0], "vp").unwrap();
        assert_eq!((s.center, s.scale), (1.0, 1.0));
        assert_eq!((s.transform(0.0), s.transform(2.0)), (-1.0, 1.0));
        assert_eq!(s.transform(1.0), 0.0);
        assert!(matches!(Scaler::fit_mean_std(&[3.0, 3.0, 3.0], "vp"), Err(PreprocessError::DegenerateScale { .. })));
        let t = Scaler { kind: ScaleKind::MeanStd, center: 298.15, scale: 25.0 };
        assert_eq!(t.transform(298.15), 0.0);
    }

    #[test]
    fn uncertainty_weights() {
        assert_eq!(uncertainty_weight(0.0, 0.1), 1.0);
        assert_eq!(uncertainty_weight(0.1, 0.1), 0.5);
        assert!((uncertainty_weight(0.9, 0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn leakage_changes_statistics() {
        let train = [0.0, 1.0, 2.0, 3.0];
        let test = [50.0];
        let all: Vec<f64> = train.iter().chain(&test).copied().collect();
        let fit_train = Scaler::fit_mean_std(&train, "vp").unwrap();
        let fit_all = Scaler::fit_mean_std(&all, "vp").unwrap();
        assert_ne!(fit_train, fit_all);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let recs = vec![
            RawRecord {
                smiles: "CCO".into(),
                endpoint: Endpoint::Vp,
                value: 5800.0,
                unit: "Pa".into(),
                temperature_k: Some(293.15),
                medium: Medium::None,
                n_reports: None,
                iqr: None,
                sigma: None,
            },
            RawRecord {
                smiles: "CCO".into(),
                endpoint: Endpoint::Oa,
                value: 0.3,
                unit: "ppm".into(),
                temperature_k: None,
                medium: Medium::Air,
                n_reports: Some(3),
                iqr: Some(0.2),
                sigma: Some(0.1),
            },
        ];
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn harmonization_is_monotone(a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
            let (ya, yb) = (harmonize_vp(a, "mmHg").unwrap(), harmonize_vp(b, "mmHg").unwrap());
            prop_assert_eq!(a < b, ya < yb);
            let (oa, ob) = (harmonize_op(a, "ppb", Medium::Air, 88.1).unwrap(), harmonize_op(b, "ppb", Medium::Air, 88.1).unwrap());
            prop_assert_eq!(a < b, oa < ob);
        }

        #[test]
        fn standardize_round_trip(values in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
            prop_assume!(Scaler::fit_mean_std(&values, "y").is_ok());
            let s = Scaler::fit_mean_std(&values, "y").unwrap();
            for &y in &values {
                let back = s.inverse(s.transform(y));
                prop_assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }

        #[test]
        fn quantile_matches_oracle(values in proptest::collection::vec(-50f64..50.0, 1..30), q in 0f64..1.0) {
            prop_assert!((quantile(&values, q) - brute_quantile(&values, q)).abs() < 1e-12);
        }
    }
}
