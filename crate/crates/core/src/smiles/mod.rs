//! SMILES parsing into sanitized molecular graphs.
//!
//! Supported subset: organic-subset atoms (aromatic lowercase included),
//! bracket atoms with isotope, chirality mark, hydrogen count, charge and
//! atom class, branches, ring closures (`1`..`9` and `%nn`), the bond
//! symbols `- = # : / \` and dot-separated components (the largest heavy
//! component is kept).
//!
//! Tetrahedral marks only set [`Atom::chiral_center`]; `/` and `\` are
//! resolved to [`BondStereo::Cis`] / [`BondStereo::Trans`] on the double bond
//! they flank.

mod canon;
mod element;
mod parser;
mod rings;
mod writer;


use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use element::Element;
pub use parser::parse_smiles;
pub use writer::{write_smiles, WriteOptions};

pub(crate) use element::HYDROGEN_MASS;
pub(crate) use parser::default_implicit_h;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("non-ASCII byte at offset {offset}")]
    NonAscii { offset: usize },
    #[error("unbalanced ring closure at offset {offset}")]
    UnbalancedRingClosure { offset: usize },
    #[error("unbalanced branch at offset {offset}")]
    UnbalancedBranch { offset: usize },
    #[error("unknown atom token at offset {offset}")]
    UnknownAtomToken { offset: usize },
    #[error("valence violation at offset {offset}")]
    ValenceViolation { offset: usize },
    #[error("unexpected token at offset {offset}")]
    UnexpectedToken { offset: usize },
    #[error("bond symbol at offset {offset} is not followed by an atom")]
    DanglingBond { offset: usize },
    #[error("duplicate bond or self-loop at offset {offset}")]
    DuplicateBond { offset: usize },
    #[error("aromatic atom outside any ring at offset {offset}")]
    NonRingAromatic { offset: usize },
    #[error("no heavy atoms")]
    NoHeavyAtoms,
    #[error("several different components share the largest heavy-atom count")]
    AmbiguousComponents,
}

impl SmilesError {
    /// Byte offset of the offending token, when the error has one.
    pub fn offset(&self) -> Option<usize> {
        match *self {
            SmilesError::NonAscii { offset }
            | SmilesError::UnbalancedRingClosure { offset }
            | SmilesError::UnbalancedBranch { offset }
            | SmilesError::UnknownAtomToken { offset }
            | SmilesError::ValenceViolation { offset }
            | SmilesError::UnexpectedToken { offset }
            | SmilesError::DanglingBond { offset }
            | SmilesError::DuplicateBond { offset }
            | SmilesError::NonRingAromatic { offset } => Some(offset),
            SmilesError::Empty | SmilesError::NoHeavyAtoms | SmilesError::AmbiguousComponents => {
                None
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's bond-order sum; the extra aromatic electron
    /// is accounted for separately.
    pub(crate) fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn slot(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        self.slot() as u8 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondStereo {
    None,
    Any,
    Z,
    E,
    Cis,
    Trans,
}

impl BondStereo {
    pub fn slot(self) -> usize {
        match self {
            BondStereo::None => 0,
            BondStereo::Any => 1,
            BondStereo::Z => 2,
            BondStereo::E => 3,
            BondStereo::Cis => 4,
            BondStereo::Trans => 5,
        }
    }

    pub(crate) fn flipped(self) -> BondStereo {
        match self {
            BondStereo::Cis => BondStereo::Trans,
            BondStereo::Trans => BondStereo::Cis,
            other => other,
        }
    }
}

/// Ring-size membership bucketed as 3, 4, 5, 6 and "7 or more".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingSizes(u8);

impl RingSizes {
    pub const BUCKETS: usize = 5;

    fn bucket(size: usize) -> Option<usize> {
        match size {
            0..=2 => None,
            3..=6 => Some(size - 3),
            _ => Some(4),
        }
    }

    pub fn insert(&mut self, size: usize) {
        if let Some(b) = Self::bucket(size) {
            self.0 |= 1 << b;
        }
    }

    /// True when the atom/bond lies in a ring whose size falls in the same
    /// bucket as `size` (so `contains(9)` asks about the "7 or more" bucket).
    pub fn contains(&self, size: usize) -> bool {
        Self::bucket(size).is_some_and(|b| self.0 & (1 << b) != 0)
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn buckets(&self) -> [bool; Self::BUCKETS] {
        std::array::from_fn(|b| self.0 & (1 << b) != 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Other,
}

impl Hybridization {
    pub fn slot(self) -> usize {
        match self {
            Hybridization::Sp => 0,
            Hybridization::Sp2 => 1,
            Hybridization::Sp3 => 2,
            Hybridization::Other => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    /// Formal charge, clipped to `-2..=2`.
    pub formal_charge: i8,
    pub aromatic: bool,
    /// Hydrogens given explicitly (bracket count plus folded `[H]` atoms).
    pub explicit_h: Option<u8>,
    /// Hydrogens implied by the valence model (always 0 for bracket atoms).
    pub implicit_h: u8,
    pub in_ring: bool,
    pub ring_sizes: RingSizes,
    pub chiral_center: bool,
    /// Number of heavy-atom neighbours.
    pub degree: u8,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h.unwrap_or(0) + self.implicit_h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub atoms: (usize, usize),
    pub order: BondOrder,
    pub conjugated: bool,
    pub in_ring: bool,
    pub ring_sizes: RingSizes,
    pub stereo: BondStereo,
    /// Reference neighbours `(x, y)` for a Cis/Trans label: `x` bonded to
    /// `atoms.0`, `y` bonded to `atoms.1`.
    pub stereo_atoms: Option<(usize, usize)>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.atoms.0 == atom {
            self.atoms.1
        } else {
            self.atoms.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Canonical SMILES; equal for isomorphic inputs.
    pub canonical_key: String,
    adjacency: Vec<Vec<(usize, usize)>>,
    rings: Vec<Vec<usize>>,
    canonical_ranks: Vec<usize>,
}

impl Molecule {
    /// `(neighbour, bond index)` pairs of `atom`.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    /// Rings of the relevant-cycle set, as atom index cycles.
    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    /// Position of each atom in the canonical order.
    pub fn canonical_ranks(&self) -> &[usize] {
        &self.canonical_ranks
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a].iter().find(|&&(n, _)| n == b).map(|&(_, bi)| bi)
    }

    /// Average molar mass in g/mol including hydrogens.
    pub fn molar_mass(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.element.mass() + f64::from(a.total_h()) * HYDROGEN_MASS)
            .sum()
    }

    pub fn hybridization(&self, atom: usize) -> Hybridization {
        infer_hybridization(self, atom)
    }

    /// Assemble a molecule from already-sanitized atoms and bonds, recomputing
    /// degrees, rings, conjugation and the canonical key. Bond stereo labels
    /// are kept when their reference atoms remain valid.
    pub(crate) fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Molecule, SmilesError> {
        let drafts = bonds
            .into_iter()
            .map(|b| parser::DraftBond { bond: b, dir: None })
            .collect();
        let offsets = vec![0; atoms.len()];
        parser::assemble(atoms, drafts, offsets)
    }
}

/// sp for a triple bond or two double bonds, sp2 for aromatic atoms or one
/// double bond, sp3 for saturated C/N/O/S, other otherwise.
pub fn infer_hybridization(mol: &Molecule, atom: usize) -> Hybridization {
    let a = &mol.atoms[atom];
    let mut doubles = 0;
    let mut triples = 0;
    for &(_, bi) in mol.neighbors(atom) {
        match mol.bonds[bi].order {
            BondOrder::Double => doubles += 1,
            BondOrder::Triple => triples += 1,
            _ => {}
        }
    }
    if triples > 0 || doubles >= 2 {
        Hybridization::Sp
    } else if a.aromatic || doubles == 1 {
        Hybridization::Sp2
    } else if matches!(a.element, Element::C | Element::N | Element::O | Element::S) {
        Hybridization::Sp3
    } else {
        Hybridization::Other
    }
}

/// Recompute ring membership and ring-size buckets for every atom and bond
/// from a fresh relevant-cycle search. Acyclic molecules end up with empty
/// sets everywhere.
pub fn perceive_rings(mut mol: Molecule) -> Molecule {
    let info = rings::find_rings(mol.atoms.len(), &mol.bonds, &mol.adjacency);
    rings::apply(&info, &mut mol.atoms, &mut mol.bonds);
    mol.rings = info.cycles;
    mol
}

/// Canonical key of an already parsed molecule.
pub fn canonical_key(mol: &Molecule) -> String {
    mol.canonical_key.clone()
}
