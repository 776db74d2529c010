//! Synthetic corpus with planted targets.
//!
//! Molecules are drawn from a small grammar (chains, branched alkanes,
//! substituted carbocycles and heteroaromatics, fused rings). Targets are
//! linear in atom-count statistics that a sum-pooled message-passing model
//! can represent exactly:
//!
//! ```text
//! y_vp(T) = 6.0 − 0.40·heavy − 0.80·donors − 0.10·aromatic + 0.60·(T − 298.15)/25 + ε_vp
//! y_oa    = 2.0 − 0.30·heavy + 0.50·hetero − 0.80·donors + ε_op
//! y_ow    = y_oa − 1.0 + 0.30·donors + ε_op'
//! ```
//!
//! `y_vp` is log10 Pa, `y_oa` log10 mg/m³, `y_ow` log10 µg/L. Values are
//! written in a mix of units so ingestion exercises harmonization.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::preprocess::{Endpoint, Medium, RawRecord, MOLAR_VOLUME_L, PA_PER_MMHG};
use crate::smiles::{parse_smiles, Element, Molecule};

pub const MIN_MOLECULES: usize = 50;
pub const T_REF: f64 = 298.15;
pub const T_SCALE: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sigma_vp: f64,
    pub sigma_op: f64,
    /// Probability that a molecule carries any odor threshold.
    pub op_rate: f64,
    /// Given OP coverage, probability of an air / water value.
    pub air_rate: f64,
    pub water_rate: f64,
    /// VP rows per molecule, inclusive range.
    pub vp_rows: (usize, usize),
    pub t_range: (f64, f64),
    /// Probability that an OP record is replaced by a gross outlier.
    pub corruption_rate: f64,
    /// Magnitude (log10 units) of a corrupted label's offset.
    pub corruption_shift: f64,
    /// Probability of emitting 2–3 replicate OP reports.
    pub replicate_rate: f64,
    /// Write values in assorted units instead of Pa / mg·m⁻³ / µg·L⁻¹.
    pub mixed_units: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sigma_vp: 0.05,
            sigma_op: 0.25,
            op_rate: 0.56,
            air_rate: 0.8,
            water_rate: 0.5,
            vp_rows: (1, 4),
            t_range: (253.15, 373.15),
            corruption_rate: 0.0,
            corruption_shift: 4.0,
            replicate_rate: 0.0,
            mixed_units: true,
        }
    }
}

/// Graph statistics the planted functions read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedStats {
    pub heavy: f64,
    pub donors: f64,
    pub aromatic: f64,
    pub hetero: f64,
}

impl PlantedStats {
    pub fn of(mol: &Molecule) -> PlantedStats {
        let count = |f: &dyn Fn(usize) -> bool| (0..mol.atoms.len()).filter(|&i| f(i)).count() as f64;
        let polar = |e: Element| matches!(e, Element::N | Element::O);
        PlantedStats {
            heavy: mol.atoms.len() as f64,
            donors: count(&|i| polar(mol.atoms[i].element) && mol.atoms[i].total_h() > 0),
            aromatic: count(&|i| mol.atoms[i].aromatic),
            hetero: count(&|i| matches!(mol.atoms[i].element, Element::N | Element::O | Element::S)),
        }
    }

    pub fn vp(&self, temperature_k: f64) -> f64 {
        6.0 - 0.40 * self.heavy - 0.80 * self.donors - 0.10 * self.aromatic + 0.60 * (temperature_k - T_REF) / T_SCALE
    }

    pub fn oa(&self) -> f64 {
        2.0 - 0.30 * self.heavy + 0.50 * self.hetero - 0.80 * self.donors
    }

    pub fn ow(&self) -> f64 {
        self.oa() - 1.0 + 0.30 * self.donors
    }
}

/// Noise-free labels kept next to the emitted records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub key: String,
    pub smiles: String,
    pub stats: PlantedStats,
    pub vp_temperatures: Vec<f64>,
    /// Clean OP values when the molecule is OP-labelled.
    pub oa: Option<f64>,
    pub ow: Option<f64>,
    /// Whether any of this molecule's OP records were corrupted.
    pub corrupted: bool,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<RawRecord>,
    pub truth: Vec<Truth>,
}

const SUBSTITUENTS: &[&str] = &[
    "C", "CC", "CCC", "C(C)C", "O", "OC", "N", "Cl", "F", "Br", "C=O", "C(=O)O", "C(=O)OC", "CCO", "C#N", "OCC",
    "C(C)(C)C", "C=C", "S", "C(F)(F)F", "/C=C/C", "CC(C)C", "N(C)C",
];

/// Ring templates: space-separated atom tokens; a trailing `!` marks an
/// atom that takes no substituent.
const CORES: &[&str] = &[
    "c1 c c c c c1",
    "c1 c c n! c c1",
    "c1 c n! c n! c1",
    "c1 c c o! c1",
    "c1 c c s! c1",
    "c1 c c [nH]! c1",
    "c1 s! c n! c1",
    "C1 C C C C C1",
    "C1 C C C C1",
    "C1 C C C C C C1",
    "C1 C C1",
    "O=C1! C C C C C1",
    "C1 C C O! C1",
    "C1 C C N C C1",
    "c1 c c c2! c c c c c2! c1",
    "c1 c c c2! C C C c2! c1",
    "c1 c c c2! C C C C c2! c1",
    "c1 c c c(-c2ccccc2)! c c1",
    "c1 c c c(Cc2ccccc2)! c c1",
    "C1 C C2! C C C1! C2",
    "O=C1! O! C C C1",
];

fn ring_molecule(rng: &mut ChaCha8Rng) -> String {
    let core = CORES.choose(rng).unwrap();
    let tokens: Vec<&str> = core.split(' ').collect();
    let mut sites: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].ends_with('!')).collect();
    sites.shuffle(rng);
    let k = rng.gen_range(0..=3.min(sites.len()));
    let chosen: HashSet<usize> = sites[..k].iter().copied().collect();
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        s.push_str(t.trim_end_matches('!'));
        if chosen.contains(&i) {
            s.push('(');
            s.push_str(SUBSTITUENTS.choose(rng).unwrap());
            s.push(')');
        }
    }
    s
}

const END_GROUPS: &[&str] = &["", "", "O", "N", "C=O", "C(=O)O", "Cl", "OC(C)=O", "C#N", "S", "Br", "OC", "F"];

fn chain_molecule(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(2..=10);
    let mut s = String::new();
    let alkene = len >= 4 && rng.gen_bool(0.25);
    let db_at = if alkene { rng.gen_range(1..len - 2) } else { usize::MAX };
    for i in 0..len {
        if alkene && i == db_at {
            s.push_str(match rng.gen_range(0..3) {
                0 => "/C=C/",
                1 => "/C=C\\",
                _ => "C=C",
            });
            continue;
        }
        s.push('C');
        if i > 0 && i + 1 < len && rng.gen_bool(0.2) {
            s.push_str(if rng.gen_bool(0.8) { "(C)" } else { "(CC)" });
        }
    }
    s.push_str(END_GROUPS.choose(rng).unwrap());
    s
}

fn random_smiles(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.25) {
        chain_molecule(rng)
    } else {
        ring_molecule(rng)
    }
}

/// Generate `n_molecules` distinct molecules with records. Identical
/// `(seed, n_molecules, config)` give identical output; corruption draws use
/// their own stream, so a corrupted corpus differs from the clean one only
/// in the corrupted labels.
pub fn generate(seed: u64, n_molecules: usize, config: &SynthConfig) -> SynthCorpus {
    assert!(n_molecules >= MIN_MOLECULES, "at least {MIN_MOLECULES} molecules required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corrupt_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ff_ee00_dead_beef);
    let noise_vp = Normal::new(0.0, config.sigma_vp.max(0.0)).unwrap();
    let noise_op = Normal::new(0.0, config.sigma_op.max(0.0)).unwrap();

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut truth = Vec::new();
    let mut attempts = 0usize;
    while truth.len() < n_molecules {
        attempts += 1;
        assert!(attempts < 200 * n_molecules, "grammar cannot supply {n_molecules} distinct molecules");
        let smiles = random_smiles(&mut rng);
        let Ok(mol) = parse_smiles(&smiles) else {
            continue;
        };
        if mol.atoms.len() > 24 || !seen.insert(mol.canonical_key.clone()) {
            continue;
        }
        let stats = PlantedStats::of(&mol);
        let mass = mol.molar_mass();

        let n_vp = rng.gen_range(config.vp_rows.0..=config.vp_rows.1);
        let mut temps = Vec::new();
        for _ in 0..n_vp {
            let t = (rng.gen_range(config.t_range.0..=config.t_range.1) * 100.0).round() / 100.0;
            let log_pa = stats.vp(t) + noise_vp.sample(&mut rng);
            let (value, unit) = match (config.mixed_units, rng.gen_range(0..3)) {
                (true, 1) => (10f64.powf(log_pa) / 1000.0, "kPa"),
                (true, 2) => (10f64.powf(log_pa) / PA_PER_MMHG, "mmHg"),
                _ => (10f64.powf(log_pa), "Pa"),
            };
            temps.push(t);
            records.push(RawRecord {
                smiles: smiles.clone(),
                endpoint: Endpoint::Vp,
                value,
                unit: unit.into(),
                temperature_k: Some(t),
                medium: Medium::None,
                n_reports: None,
                iqr: None,
                sigma: None,
            });
        }

        let mut entry = Truth {
            key: mol.canonical_key.clone(),
            smiles: smiles.clone(),
            stats,
            vp_temperatures: temps,
            oa: None,
            ow: None,
            corrupted: false,
        };
        if rng.gen_bool(config.op_rate) {
            let mut media = Vec::new();
            let air = rng.gen_bool(config.air_rate);
            let water = rng.gen_bool(config.water_rate);
            if air || !water {
                media.push(Medium::Air);
            }
            if water {
                media.push(Medium::Water);
            }
            for medium in media {
                let clean = if medium == Medium::Air { stats.oa() } else { stats.ow() };
                let reps = if rng.gen_bool(config.replicate_rate) { rng.gen_range(2..=3) } else { 1 };
                let sigma = (config.sigma_op * rng.gen_range(0.5..1.5) * 100.0).round() / 100.0;
                for _ in 0..reps {
                    let mut y = clean + noise_op.sample(&mut rng);
                    if corrupt_rng.gen_bool(config.corruption_rate) {
                        let sign = if corrupt_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        y += sign * config.corruption_shift;
                        entry.corrupted = true;
                    }
                    let (value, unit, endpoint) = match (medium, config.mixed_units, rng.gen_range(0..2)) {
                        (Medium::Air, true, 1) => (10f64.powf(y) / (mass / MOLAR_VOLUME_L), "ppm", Endpoint::Oa),
                        (Medium::Air, _, _) => (10f64.powf(y), "mg/m3", Endpoint::Oa),
                        (_, true, 1) => (10f64.powf(y) * 1000.0, "ng/L", Endpoint::Ow),
                        _ => (10f64.powf(y), "ug/L", Endpoint::Ow),
                    };
                    records.push(RawRecord {
                        smiles: smiles.clone(),
                        endpoint,
                        value,
                        unit: unit.into(),
                        temperature_k: None,
                        medium,
                        n_reports: Some(1),
                        iqr: None,
                        sigma: Some(sigma),
                    });
                }
                match medium {
                    Medium::Air => entry.oa = Some(clean),
                    _ => entry.ow = Some(clean),
                }
            }
        }
        truth.push(entry);
    }
    SynthCorpus { records, truth }
}
