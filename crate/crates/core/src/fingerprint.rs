//! Hashed circular (ECFP-style) fingerprints and Tanimoto similarity.
//!
//! Atom identifiers start from (atomic number, degree, charge, H count,
//! in_ring, aromatic) and are rehashed `radius` times together with the
//! sorted (bond order, neighbour identifier) pairs. Every identifier from
//! every iteration sets bit `id % nbits`. The mixing function is a fixed
//! 64-bit finalizer, so fingerprints are stable across runs and platforms.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::preprocess::quantile_sorted;
use crate::scaffold::{Fold, FoldAssignment};
use crate::smiles::Molecule;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_NBITS: usize = 2048;

/// Max-similarity bins `[0,0.3) [0.3,0.5) [0.5,0.7) [0.7,1.0]`.
pub const SIM_BIN_EDGES: [f64; 5] = [0.0, 0.3, 0.5, 0.7, 1.0];
pub const SIM_BIN_LABELS: [&str; 4] = ["[0,0.3)", "[0.3,0.5)", "[0.5,0.7)", "[0.7,1.0]"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("no training fingerprints to compare against")]
    EmptyTrainSet,
    #[error("no fingerprint for molecule {0}")]
    MissingFingerprint(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    nbits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(nbits: usize) -> Fingerprint {
        assert!(nbits.is_power_of_two(), "nbits must be a power of two");
        Fingerprint { nbits, words: vec![0; nbits.div_ceil(64)] }
    }

    pub fn from_bits(nbits: usize, bits: &[usize]) -> Fingerprint {
        let mut fp = Fingerprint::empty(nbits);
        for &b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.get(b))
    }

    /// Bits as 0/1 floats, for the fingerprint-concat model variant.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.nbits).map(|b| if self.get(b) { 1.0 } else { 0.0 }).collect()
    }
}

const SEED: u64 = 0x5bd1_e995_7f4a_7c15;

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn hash_seq(values: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = SEED;
    for v in values {
        h = mix(h ^ mix(v));
    }
    h
}

/// Per-iteration atom identifiers, `[radius + 1][n_atoms]`.
pub fn atom_identifiers(mol: &Molecule, radius: usize) -> Vec<Vec<u64>> {
    let n = mol.atoms.len();
    let mut layers = Vec::with_capacity(radius + 1);
    let initial: Vec<u64> = mol
        .atoms
        .iter()
        .map(|a| {
            hash_seq([
                u64::from(a.element.atomic_number()),
                u64::from(a.degree),
                (i64::from(a.formal_charge) + 8) as u64,
                u64::from(a.total_h()),
                u64::from(a.in_ring),
                u64::from(a.aromatic),
            ])
        })
        .collect();
    layers.push(initial);
    for r in 1..=radius {
        let prev = &layers[r - 1];
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut env: Vec<(u64, u64)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(j, bi)| (mol.bonds[bi].order.slot() as u64, prev[j]))
                    .collect();
                env.sort_unstable();
                hash_seq(
                    [r as u64, prev[i]]
                        .into_iter()
                        .chain(env.into_iter().flat_map(|(o, h)| [o, h])),
                )
            })
            .collect();
        layers.push(next);
    }
    layers
}

pub fn ecfp(mol: &Molecule, radius: usize, nbits: usize) -> Fingerprint {
    let mut fp = Fingerprint::empty(nbits);
    for layer in atom_identifiers(mol, radius) {
        for id in layer {
            fp.set((id % nbits as u64) as usize);
        }
    }
    fp
}

/// `|a ∧ b| / |a ∨ b|`, defined as 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::WidthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 { 1.0 } else { f64::from(inter) / f64::from(union) })
}

pub fn max_similarity_to_train(query: &Fingerprint, train: &[&Fingerprint]) -> Result<f64, FingerprintError> {
    if train.is_empty() {
        return Err(FingerprintError::EmptyTrainSet);
    }
    let mut best = 0.0f64;
    for t in train {
        best = best.max(tanimoto(query, t)?);
    }
    Ok(best)
}

/// Index of the similarity bin holding `s`; the last bin is closed.
pub fn sim_bin(s: f64) -> usize {
    match s {
        s if s < 0.3 => 0,
        s if s < 0.5 => 1,
        s if s < 0.7 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSimilarity {
    pub n: usize,
    pub median: f64,
    pub iqr: f64,
    pub p95: f64,
    pub bin_counts: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub folds: BTreeMap<String, FoldSimilarity>,
    /// `(molecule_key, fold, max_sim, bin)` per non-train molecule.
    pub rows: Vec<(String, Fold, f64, usize)>,
}

/// Max similarity of every validation and test molecule to the training
/// fold, summarized per fold.
pub fn similarity_report(
    fold: &FoldAssignment,
    fps: &BTreeMap<String, Fingerprint>,
) -> Result<SimilarityReport, FingerprintError> {
    let lookup = |k: &str| fps.get(k).ok_or_else(|| FingerprintError::MissingFingerprint(k.to_string()));
    let train: Vec<&Fingerprint> =
        fold.keys_in(Fold::Train).map(lookup).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut folds = BTreeMap::new();
    for f in [Fold::Val, Fold::Test] {
        let mut sims = Vec::new();
        for k in fold.keys_in(f) {
            let s = max_similarity_to_train(lookup(k)?, &train)?;
            rows.push((k.to_string(), f, s, sim_bin(s)));
            sims.push(s);
        }
        if sims.is_empty() {
            continue;
        }
        let mut bin_counts = [0; 4];
        for &s in &sims {
            bin_counts[sim_bin(s)] += 1;
        }
        sims.sort_by(f64::total_cmp);
        folds.insert(
            f.to_string(),
            FoldSimilarity {
                n: sims.len(),
                median: quantile_sorted(&sims, 0.5),
                iqr: quantile_sorted(&sims, 0.75) - quantile_sorted(&sims, 0.25),
                p95: quantile_sorted(&sims, 0.95),
                bin_counts,
            },
        );
    }
    Ok(SimilarityReport { folds, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;
    use proptest::prelude::*;

    fn fp(s: &str) -> Fingerprint {
        ecfp(&parse_smiles(s).unwrap(), DEFAULT_RADIUS, DEFAULT_NBITS)
    }

    #[test]
    fn determinism_and_difference() {
        assert_eq!(fp("CCO"), fp("OCC"));
        assert_ne!(fp("C"), fp("CC"));
    }

    #[test]
    fn benzene_environments_are_identical() {
        let m = parse_smiles("c1ccccc1").unwrap();
        let ids = atom_identifiers(&m, 2);
        for layer in &ids {
            assert!(layer.iter().all(|&h| h == layer[0]));
        }
        assert!(fp("c1ccccc1").count_ones() <= 3);
    }

    #[test]
    fn tanimoto_examples() {
        let a = Fingerprint::from_bits(64, &[1, 2, 3]);
        let b = Fingerprint::from_bits(64, &[2, 3, 4]);
        let c = Fingerprint::from_bits(64, &[10, 11]);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        assert_eq!(tanimoto(&Fingerprint::empty(64), &Fingerprint::empty(64)).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &Fingerprint::empty(128)), Err(FingerprintError::WidthMismatch(64, 128)));
    }

    #[test]
    fn max_similarity() {
        let q = fp("CCCO");
        let t = [fp("CCO"), fp("CCCO"), fp("c1ccccc1")];
        let refs: Vec<&Fingerprint> = t.iter().collect();
        assert_eq!(max_similarity_to_train(&q, &refs).unwrap(), 1.0);
        assert_eq!(max_similarity_to_train(&q, &refs[..1]).unwrap(), tanimoto(&q, &t[0]).unwrap());
        let q2 = fp("CCCCO");
        let brute = t.iter().map(|x| tanimoto(&q2, x).unwrap()).fold(f64::MIN, f64::max);
        assert_eq!(max_similarity_to_train(&q2, &refs).unwrap(), brute);
        assert_eq!(max_similarity_to_train(&q, &[]), Err(FingerprintError::EmptyTrainSet));
    }

    #[test]
    fn bins() {
        assert_eq!(sim_bin(0.0), 0);
        assert_eq!(sim_bin(0.3), 1);
        assert_eq!(sim_bin(0.5), 2);
        assert_eq!(sim_bin(0.7), 3);
        assert_eq!(sim_bin(1.0), 3);
    }

    fn arb_fp() -> impl Strategy<Value = Fingerprint> {
        proptest::collection::vec(0usize..128, 0..20).prop_map(|b| Fingerprint::from_bits(128, &b))
    }

    proptest! {
        #[test]
        fn tanimoto_properties(a in arb_fp(), b in arb_fp()) {
            let ab = tanimoto(&a, &b).unwrap();
            prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
            prop_assert!(a.count_ones() <= a.nbits());
        }
    }
}
