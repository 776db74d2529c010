//! Bemis–Murcko scaffolds, capacity-first scaffold splitting, leakage
//! checks and frozen split files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::smiles::{default_implicit_h, BondOrder, BondStereo, Molecule};

/// Scaffold key shared by all acyclic molecules.
pub const EMPTY_SCAFFOLD: &str = "";

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("molecule {key} appears in more than one fold")]
    LeakageDetected { key: String, identity_overlap: usize },
    #[error("split file checksum mismatch (expected {expected}, found {found})")]
    ChecksumMismatch { expected: String, found: String },
    #[error("molecule {0} has no fold in the split file")]
    MissingKey(String),
    #[error("malformed split file: {0}")]
    Malformed(String),
    #[error("ratio must have three non-negative parts summing to 1, got {0:?}")]
    BadRatio([f64; 3]),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Reduce a molecule to its ring systems and linkers, keeping atoms
/// double-bonded to them, and return the canonical key of that framework.
pub fn murcko_scaffold(mol: &Molecule) -> String {
    let n = mol.atoms.len();
    if !mol.atoms.iter().any(|a| a.in_ring) {
        return EMPTY_SCAFFOLD.to_string();
    }
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| mol.neighbors(i).len()).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1 && !mol.atoms[i].in_ring).collect();
    while let Some(v) = queue.pop() {
        if !alive[v] {
            continue;
        }
        alive[v] = false;
        for &(w, _) in mol.neighbors(v) {
            if alive[w] {
                degree[w] -= 1;
                if degree[w] <= 1 && !mol.atoms[w].in_ring {
                    queue.push(w);
                }
            }
        }
    }
    // exocyclic and exo-linker double bonds stay with the framework
    let core = alive.clone();
    for (i, keep) in alive.iter_mut().enumerate() {
        if !*keep
            && mol
                .neighbors(i)
                .iter()
                .any(|&(w, bi)| core[w] && matches!(mol.bonds[bi].order, BondOrder::Double))
            && mol.neighbors(i).len() == 1
        {
            *keep = true;
        }
    }
    substructure_key(mol, &alive)
}

/// Canonical key of the induced subgraph on `keep`; removed neighbours are
/// replaced by hydrogens.
fn substructure_key(mol: &Molecule, keep: &[bool]) -> String {
    let mut index = vec![usize::MAX; mol.atoms.len()];
    let mut atoms = Vec::new();
    for (i, a) in mol.atoms.iter().enumerate() {
        if keep[i] {
            index[i] = atoms.len();
            atoms.push(a.clone());
        }
    }
    let mut bonds = Vec::new();
    for b in &mol.bonds {
        let (u, v) = b.atoms;
        if keep[u] && keep[v] {
            let mut nb = b.clone();
            nb.atoms = (index[u], index[v]);
            nb.stereo = BondStereo::None;
            nb.stereo_atoms = None;
            bonds.push(nb);
        }
    }
    for (i, a) in mol.atoms.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let new = &mut atoms[index[i]];
        let removed: u8 = mol
            .neighbors(i)
            .iter()
            .filter(|&&(w, _)| !keep[w])
            .map(|&(_, bi)| mol.bonds[bi].order.valence())
            .sum();
        match a.explicit_h {
            Some(h) => new.explicit_h = Some(h + removed),
            None => {
                let sum: u8 = mol
                    .neighbors(i)
                    .iter()
                    .filter(|&&(w, _)| keep[w])
                    .map(|&(_, bi)| mol.bonds[bi].order.valence())
                    .sum();
                new.implicit_h = default_implicit_h(a.element, a.aromatic, sum).unwrap_or(a.implicit_h + removed);
            }
        }
    }
    match Molecule::from_parts(atoms, bonds) {
        Ok(m) => m.canonical_key,
        Err(e) => {
            log::warn!("scaffold of {} could not be rebuilt ({e}); using the full molecule", mol.canonical_key);
            mol.canonical_key.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scaffold {
    pub key: String,
    /// Canonical keys of the member molecules, sorted.
    pub member_keys: Vec<String>,
}

/// Group molecules (given as `(molecule_key, scaffold_key)`) by scaffold.
/// Groups and members come out sorted by key.
pub fn group_by_scaffold<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Vec<Scaffold> {
    let mut map: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (m, s) in pairs {
        map.entry(s).or_default().insert(m);
    }
    map.into_iter()
        .map(|(k, members)| Scaffold { key: k.to_string(), member_keys: members.into_iter().map(String::from).collect() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Val,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Val, Fold::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Fold> {
        match s {
            "train" => Some(Fold::Train),
            "val" => Some(Fold::Val),
            "test" => Some(Fold::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitDiagnostics {
    pub identity_overlap: usize,
    /// Distinct val/test scaffolds that also occur in train.
    pub scaffold_overlap: usize,
    /// Fraction of test molecules whose scaffold occurs in train.
    pub test_scaffold_seen_fraction: f64,
    pub fold_counts: [usize; 3],
    pub fold_fractions: [f64; 3],
    pub n_groups: usize,
    pub max_group_size: usize,
}

/// Molecule → fold map. Stored as a key-sorted list so that a corrupted
/// assignment (a key listed twice) can still be represented and detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub entries: Vec<(String, Fold)>,
    pub target_ratio: [f64; 3],
    pub seed: u64,
    pub diagnostics: SplitDiagnostics,
}

impl FoldAssignment {
    pub fn get(&self, key: &str) -> Option<Fold> {
        self.entries
            .binary_search_by(|(k, _)| k.as_str().cmp(key))
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn keys_in(&self, fold: Fold) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(move |(_, f)| *f == fold).map(|(k, _)| k.as_str())
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for (_, f) in &self.entries {
            c[f.index()] += 1;
        }
        c
    }
}

fn check_ratio(ratio: [f64; 3]) -> Result<(), SplitError> {
    if ratio.iter().any(|r| !(*r >= 0.0)) || (ratio.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadRatio(ratio));
    }
    Ok(())
}

/// Assign whole scaffold groups, largest first, to the fold with the most
/// remaining capacity (target count minus current count). Ties go to train,
/// then val, then test. Equal-sized groups are ordered by a seeded shuffle.
pub fn capacity_split(groups: &[Scaffold], ratio: [f64; 3], seed: u64) -> Result<FoldAssignment, SplitError> {
    check_ratio(ratio)?;
    let n: usize = groups.iter().map(|g| g.member_keys.len()).sum();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| groups[a].key.cmp(&groups[b].key));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| groups[b].member_keys.len().cmp(&groups[a].member_keys.len()));

    let target: Vec<f64> = ratio.iter().map(|r| r * n as f64).collect();
    let mut count = [0usize; 3];
    let mut entries = Vec::with_capacity(n);
    for &g in &order {
        let mut best = 0;
        for f in 1..3 {
            let cap = target[f] - count[f] as f64;
            if cap > target[best] - count[best] as f64 {
                best = f;
            }
        }
        count[best] += groups[g].member_keys.len();
        entries.extend(groups[g].member_keys.iter().map(|k| (k.clone(), Fold::ALL[best])));
    }
    entries.sort();
    if n > 0 && (count[1] == 0 || count[2] == 0) {
        log::warn!("scaffold split left a fold empty (counts {count:?}); a single group dominates the corpus");
    }
    let mut fold = FoldAssignment { entries, target_ratio: ratio, seed, diagnostics: SplitDiagnostics::default() };
    let scaffold_of: HashMap<&str, &str> = groups
        .iter()
        .flat_map(|g| g.member_keys.iter().map(move |m| (m.as_str(), g.key.as_str())))
        .collect();
    fold.diagnostics = diagnostics(&fold, &scaffold_of);
    fold.diagnostics.n_groups = groups.len();
    fold.diagnostics.max_group_size = groups.iter().map(|g| g.member_keys.len()).max().unwrap_or(0);
    Ok(fold)
}

fn diagnostics(fold: &FoldAssignment, scaffold_of: &HashMap<&str, &str>) -> SplitDiagnostics {
    let mut folds_of: BTreeMap<&str, BTreeSet<Fold>> = BTreeMap::new();
    for (k, f) in &fold.entries {
        folds_of.entry(k.as_str()).or_default().insert(*f);
    }
    let identity_overlap = folds_of.values().filter(|fs| fs.len() > 1).count();
    let scaffolds_in = |f: Fold| -> BTreeSet<&str> {
        fold.entries
            .iter()
            .filter(|(_, g)| *g == f)
            .filter_map(|(k, _)| scaffold_of.get(k.as_str()).copied())
            .collect()
    };
    let train = scaffolds_in(Fold::Train);
    let mut other = scaffolds_in(Fold::Val);
    other.extend(scaffolds_in(Fold::Test));
    let scaffold_overlap = other.intersection(&train).count();
    let test: Vec<&str> = fold.keys_in(Fold::Test).collect();
    let seen = test.iter().filter(|k| scaffold_of.get(*k).is_some_and(|s| train.contains(s))).count();
    let counts = fold.counts();
    let total = counts.iter().sum::<usize>().max(1) as f64;
    SplitDiagnostics {
        identity_overlap,
        scaffold_overlap,
        test_scaffold_seen_fraction: if test.is_empty() { 0.0 } else { seen as f64 / test.len() as f64 },
        fold_counts: counts,
        fold_fractions: counts.map(|c| c as f64 / total),
        n_groups: 0,
        max_group_size: 0,
    }
}

/// Recompute overlap diagnostics; any molecule placed in two folds is a
/// hard error.
pub fn verify_no_leakage(fold: &FoldAssignment, scaffolds: &[Scaffold]) -> Result<SplitDiagnostics, SplitError> {
    let scaffold_of: HashMap<&str, &str> = scaffolds
        .iter()
        .flat_map(|g| g.member_keys.iter().map(move |m| (m.as_str(), g.key.as_str())))
        .collect();
    let mut d = diagnostics(fold, &scaffold_of);
    d.n_groups = scaffolds.len();
    d.max_group_size = scaffolds.iter().map(|g| g.member_keys.len()).max().unwrap_or(0);
    if d.identity_overlap > 0 {
        let mut seen: HashMap<&str, Fold> = HashMap::new();
        for (k, f) in &fold.entries {
            if seen.insert(k.as_str(), *f).is_some_and(|prev| prev != *f) {
                return Err(SplitError::LeakageDetected { key: k.clone(), identity_overlap: d.identity_overlap });
            }
        }
    }
    Ok(d)
}

const SPLIT_MAGIC: &str = "# odorgraph-split v1";

fn split_body(fold: &FoldAssignment) -> Result<Vec<u8>, SplitError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["molecule_key", "fold"])?;
    for (k, f) in &fold.entries {
        w.write_record([k.as_str(), &f.to_string()])?;
    }
    w.into_inner().map_err(|e| SplitError::Io(e.into_error()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Persist the assignment as CSV preceded by a header line carrying the seed,
/// ratio and the SHA-256 of the CSV body.
pub fn freeze_split(fold: &FoldAssignment, path: &Path) -> Result<(), SplitError> {
    let body = split_body(fold)?;
    let [a, b, c] = fold.target_ratio;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{SPLIT_MAGIC} seed={} ratio={a},{b},{c} sha256={}", fold.seed, sha256_hex(&body))?;
    f.write_all(&body)?;
    Ok(())
}

/// Read a frozen split, verifying its checksum.
pub fn load_split(path: &Path) -> Result<FoldAssignment, SplitError> {
    let text = std::fs::read(path)?;
    let nl = text.iter().position(|&b| b == b'\n').ok_or_else(|| SplitError::Malformed("no header line".into()))?;
    let header = std::str::from_utf8(&text[..nl]).map_err(|_| SplitError::Malformed("header not UTF-8".into()))?;
    let body = &text[nl + 1..];
    let rest = header
        .strip_prefix(SPLIT_MAGIC)
        .ok_or_else(|| SplitError::Malformed(format!("unexpected header {header:?}")))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for tok in rest.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            fields.insert(k, v);
        }
    }
    let field = |k: &str| fields.get(k).copied().ok_or_else(|| SplitError::Malformed(format!("missing {k}")));
    let expected = field("sha256")?.to_string();
    let found = sha256_hex(body);
    if expected != found {
        return Err(SplitError::ChecksumMismatch { expected, found });
    }
    let seed = field("seed")?.parse().map_err(|_| SplitError::Malformed("seed".into()))?;
    let ratio: Vec<f64> = field("ratio")?
        .split(',')
        .map(|r| r.parse().map_err(|_| SplitError::Malformed("ratio".into())))
        .collect::<Result<_, _>>()?;
    let ratio: [f64; 3] = ratio.try_into().map_err(|_| SplitError::Malformed("ratio".into()))?;
    let mut reader = csv::Reader::from_reader(body);
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let fold = Fold::parse(&rec[1]).ok_or_else(|| SplitError::Malformed(format!("fold {:?}", &rec[1])))?;
        entries.push((rec[0].to_string(), fold));
    }
    entries.sort();
    let mut fold = FoldAssignment { entries, target_ratio: ratio, seed, diagnostics: SplitDiagnostics::default() };
    fold.diagnostics.fold_counts = fold.counts();
    let total = fold.entries.len().max(1) as f64;
    fold.diagnostics.fold_fractions = fold.diagnostics.fold_counts.map(|c| c as f64 / total);
    Ok(fold)
}

/// [`load_split`] plus a check that every corpus molecule has a fold.
pub fn load_split_for<'a>(path: &Path, corpus: impl IntoIterator<Item = &'a str>) -> Result<FoldAssignment, SplitError> {
    let fold = load_split(path)?;
    for k in corpus {
        if fold.get(k).is_none() {
            return Err(SplitError::MissingKey(k.to_string()));
        }
    }
    Ok(fold)
}
