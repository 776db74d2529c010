use serde::{Deserialize, Serialize};

/// Element identity as used by the node featurizer. Everything outside the
/// nine named elements collapses into `Other`, which keeps its atomic number
/// so masses and symbols survive a round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    F,
    Cl,
    Br,
    I,
    S,
    P,
    Other(u8),
}

struct ElementInfo {
    symbol: &'static str,
    number: u8,
    mass: f64,
}

// Standard atomic weights (g/mol), rounded to 3 decimals.
const TABLE: &[ElementInfo] = &[
    ElementInfo { symbol: "H", number: 1, mass: 1.008 },
    ElementInfo { symbol: "He", number: 2, mass: 4.003 },
    ElementInfo { symbol: "Li", number: 3, mass: 6.94 },
    ElementInfo { symbol: "Be", number: 4, mass: 9.012 },
    ElementInfo { symbol: "B", number: 5, mass: 10.81 },
    ElementInfo { symbol: "C", number: 6, mass: 12.011 },
    ElementInfo { symbol: "N", number: 7, mass: 14.007 },
    ElementInfo { symbol: "O", number: 8, mass: 15.999 },
    ElementInfo { symbol: "F", number: 9, mass: 18.998 },
    ElementInfo { symbol: "Ne", number: 10, mass: 20.180 },
    ElementInfo { symbol: "Na", number: 11, mass: 22.990 },
    ElementInfo { symbol: "Mg", number: 12, mass: 24.305 },
    ElementInfo { symbol: "Al", number: 13, mass: 26.982 },
    ElementInfo { symbol: "Si", number: 14, mass: 28.085 },
    ElementInfo { symbol: "P", number: 15, mass: 30.974 },
    ElementInfo { symbol: "S", number: 16, mass: 32.06 },
    ElementInfo { symbol: "Cl", number: 17, mass: 35.45 },
    ElementInfo { symbol: "Ar", number: 18, mass: 39.948 },
    ElementInfo { symbol: "K", number: 19, mass: 39.098 },
    ElementInfo { symbol: "Ca", number: 20, mass: 40.078 },
    ElementInfo { symbol: "Ti", number: 22, mass: 47.867 },
    ElementInfo { symbol: "Cr", number: 24, mass: 51.996 },
    ElementInfo { symbol: "Mn", number: 25, mass: 54.938 },
    ElementInfo { symbol: "Fe", number: 26, mass: 55.845 },
    ElementInfo { symbol: "Co", number: 27, mass: 58.933 },
    ElementInfo { symbol: "Ni", number: 28, mass: 58.693 },
    ElementInfo { symbol: "Cu", number: 29, mass: 63.546 },
    ElementInfo { symbol: "Zn", number: 30, mass: 65.38 },
    ElementInfo { symbol: "Ge", number: 32, mass: 72.630 },
    ElementInfo { symbol: "As", number: 33, mass: 74.922 },
    ElementInfo { symbol: "Se", number: 34, mass: 78.971 },
    ElementInfo { symbol: "Br", number: 35, mass: 79.904 },
    ElementInfo { symbol: "Kr", number: 36, mass: 83.798 },
    ElementInfo { symbol: "Rb", number: 37, mass: 85.468 },
    ElementInfo { symbol: "Sr", number: 38, mass: 87.62 },
    ElementInfo { symbol: "Ag", number: 47, mass: 107.868 },
    ElementInfo { symbol: "Cd", number: 48, mass: 112.414 },
    ElementInfo { symbol: "Sn", number: 50, mass: 118.710 },
    ElementInfo { symbol: "Sb", number: 51, mass: 121.760 },
    ElementInfo { symbol: "Te", number: 52, mass: 127.60 },
    ElementInfo { symbol: "I", number: 53, mass: 126.904 },
    ElementInfo { symbol: "Xe", number: 54, mass: 131.293 },
    ElementInfo { symbol: "Cs", number: 55, mass: 132.905 },
    ElementInfo { symbol: "Ba", number: 56, mass: 137.327 },
    ElementInfo { symbol: "Pt", number: 78, mass: 195.084 },
    ElementInfo { symbol: "Au", number: 79, mass: 196.967 },
    ElementInfo { symbol: "Hg", number: 80, mass: 200.592 },
    ElementInfo { symbol: "Pb", number: 82, mass: 207.2 },
    ElementInfo { symbol: "Bi", number: 83, mass: 208.980 },
];

pub(crate) const HYDROGEN_MASS: f64 = 1.008;

fn info_by_number(z: u8) -> Option<&'static ElementInfo> {
    TABLE.iter().find(|e| e.number == z)
}

/// Atomic number for a bracket-atom symbol (case sensitive, `H` included).
pub(crate) fn atomic_number(symbol: &str) -> Option<u8> {
    TABLE.iter().find(|e| e.symbol == symbol).map(|e| e.number)
}

impl Element {
    pub fn from_atomic_number(z: u8) -> Element {
        match z {
            6 => Element::C,
            7 => Element::N,
            8 => Element::O,
            9 => Element::F,
            17 => Element::Cl,
            35 => Element::Br,
            53 => Element::I,
            16 => Element::S,
            15 => Element::P,
            other => Element::Other(other),
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
            Element::S => 16,
            Element::P => 15,
            Element::Other(z) => z,
        }
    }

    pub fn symbol(self) -> &'static str {
        info_by_number(self.atomic_number()).map_or("*", |e| e.symbol)
    }

    pub fn mass(self) -> f64 {
        info_by_number(self.atomic_number()).map_or(0.0, |e| e.mass)
    }

    /// Position in the 10-way element one-hot block.
    pub fn slot(self) -> usize {
        match self {
            Element::C => 0,
            Element::N => 1,
            Element::O => 2,
            Element::F => 3,
            Element::Cl => 4,
            Element::Br => 5,
            Element::I => 6,
            Element::S => 7,
            Element::P => 8,
            Element::Other(_) => 9,
        }
    }

    /// Elements that may be written without brackets.
    pub(crate) fn in_organic_subset(self) -> bool {
        matches!(
            self,
            Element::C
                | Element::N
                | Element::O
                | Element::F
                | Element::Cl
                | Element::Br
                | Element::I
                | Element::S
                | Element::P
                | Element::Other(5)
        )
    }

    /// Normal valences of the organic subset, smallest first.
    pub(crate) fn normal_valences(self) -> &'static [u8] {
        match self {
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::S => &[2, 4, 6],
            Element::P => &[3, 5],
            Element::F => &[1],
            Element::Cl | Element::Br | Element::I => &[1, 3, 5, 7],
            Element::Other(5) => &[3],
            Element::Other(_) => &[],
        }
    }

    /// Largest valence allowed for a bracket atom carrying `charge`, or
    /// `None` when the element has no valence model.
    pub(crate) fn max_valence(self, charge: i8) -> Option<i32> {
        let q = i32::from(charge);
        let v = match self {
            Element::C => 4 - q.abs(),
            Element::N if q == 0 => 5,
            Element::N => 3 + q,
            Element::P => 5 + q.max(0),
            Element::O => 2 + q,
            Element::S => 6 + q,
            Element::F => 1 + q,
            Element::Cl | Element::Br | Element::I => 7 + q,
            Element::Other(5) => 3 - q,
            Element::Other(_) => return None,
        };
        Some(v.max(0))
    }
}
