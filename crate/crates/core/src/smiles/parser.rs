use std::collections::HashMap;

use super::element::{atomic_number, Element};
use super::{canon, rings, Atom, Bond, BondOrder, BondStereo, Molecule, RingSizes, SmilesError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSymbol {
    Single,
    Double,
    Triple,
    Aromatic,
    Up,
    Down,
}

impl BondSymbol {
    fn from_byte(b: u8) -> Option<BondSymbol> {
        Some(match b {
            b'-' => BondSymbol::Single,
            b'=' => BondSymbol::Double,
            b'#' => BondSymbol::Triple,
            b':' => BondSymbol::Aromatic,
            b'/' => BondSymbol::Up,
            b'\\' => BondSymbol::Down,
            _ => return None,
        })
    }
}

/// Direction mark of a single bond: `up` is `/`, written going `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Direction {
    pub up: bool,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DraftBond {
    pub bond: Bond,
    pub dir: Option<Direction>,
}

#[derive(Debug, Clone)]
struct RawAtom {
    element: Element,
    hydrogen: bool,
    aromatic: bool,
    charge: i8,
    explicit_h: Option<u8>,
    chiral: bool,
    offset: usize,
}

struct RawBond {
    a: usize,
    b: usize,
    symbol: Option<BondSymbol>,
    dir_from: usize,
    offset: usize,
}

struct RingOpen {
    atom: usize,
    symbol: Option<BondSymbol>,
    offset: usize,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<RawAtom>,
    bonds: Vec<RawBond>,
    prev: Option<usize>,
    pending: Option<(BondSymbol, usize)>,
    branches: Vec<(Option<usize>, usize)>,
    open_rings: HashMap<u32, RingOpen>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(SmilesError::UnbalancedBranch { offset: start });
                    }
                    self.branches.push((self.prev, start));
                    self.pos += 1;
                    match self.peek() {
                        Some(b')') => return Err(SmilesError::UnbalancedBranch { offset: self.pos }),
                        Some(b'(') => return Err(SmilesError::UnexpectedToken { offset: self.pos }),
                        _ => {}
                    }
                }
                b')' => {
                    let Some((atom, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedBranch { offset: start });
                    };
                    if let Some((_, off)) = self.pending {
                        return Err(SmilesError::DanglingBond { offset: off });
                    }
                    self.prev = atom;
                    self.pos += 1;
                }
                b'.' => {
                    if let Some((_, off)) = self.pending {
                        return Err(SmilesError::DanglingBond { offset: off });
                    }
                    if self.prev.is_none() {
                        return Err(SmilesError::UnexpectedToken { offset: start });
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                _ if BondSymbol::from_byte(c).is_some() => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(SmilesError::UnexpectedToken { offset: start });
                    }
                    self.pending = Some((BondSymbol::from_byte(c).unwrap(), start));
                    self.pos += 1;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.push_atom(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.push_atom(atom)?;
                }
            }
        }
        if let Some((_, off)) = self.pending {
            return Err(SmilesError::DanglingBond { offset: off });
        }
        if let Some(&(_, off)) = self.branches.first() {
            return Err(SmilesError::UnbalancedBranch { offset: off });
        }
        if let Some(open) = self.open_rings.values().min_by_key(|r| r.offset) {
            return Err(SmilesError::UnbalancedRingClosure { offset: open.offset });
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        Ok(())
    }

    fn push_atom(&mut self, atom: RawAtom) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        let offset = atom.offset;
        self.atoms.push(atom);
        if let Some(p) = self.prev {
            let (symbol, off) = match self.pending.take() {
                Some((sym, off)) => (Some(sym), off),
                None => (None, offset),
            };
            self.bonds.push(RawBond { a: p, b: idx, symbol, dir_from: p, offset: off });
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let start = self.pos;
        let Some(current) = self.prev else {
            return Err(SmilesError::UnexpectedToken { offset: start });
        };
        let number = if self.peek() == Some(b'%') {
            let digits = self.s.get(start + 1..start + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
                }
                _ => return Err(SmilesError::UnbalancedRingClosure { offset: start }),
            }
        } else {
            self.pos += 1;
            u32::from(self.s[start] - b'0')
        };
        let symbol = self.pending.take().map(|(s, _)| s);
        match self.open_rings.remove(&number) {
            None => {
                self.open_rings.insert(number, RingOpen { atom: current, symbol, offset: start });
            }
            Some(open) => {
                let (symbol, dir_from) = match (open.symbol, symbol) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(SmilesError::UnexpectedToken { offset: start });
                    }
                    (Some(a), _) => (Some(a), open.atom),
                    (None, Some(b)) => (Some(b), current),
                    (None, None) => (None, open.atom),
                };
                if open.atom == current
                    || self.bonds.iter().any(|b| {
                        (b.a == open.atom && b.b == current) || (b.b == open.atom && b.a == current)
                    })
                {
                    return Err(SmilesError::DuplicateBond { offset: start });
                }
                self.bonds.push(RawBond { a: open.atom, b: current, symbol, dir_from, offset: start });
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<RawAtom, SmilesError> {
        let start = self.pos;
        let c = self.s[start];
        let next = self.s.get(start + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'B', _) => (Element::Other(5), false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::Other(5), true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            _ => return Err(SmilesError::UnknownAtomToken { offset: start }),
        };
        self.pos += len;
        Ok(RawAtom {
            element,
            hydrogen: false,
            aromatic,
            charge: 0,
            explicit_h: None,
            chiral: false,
            offset: start,
        })
    }

    fn bracket_atom(&mut self) -> Result<RawAtom, SmilesError> {
        let start = self.pos;
        let unknown = SmilesError::UnknownAtomToken { offset: start };
        self.pos += 1;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        // element symbol
        let c = self.peek().ok_or(unknown.clone())?;
        let (symbol, aromatic) = if c.is_ascii_uppercase() {
            let two = self.s.get(self.pos..self.pos + 2).and_then(|t| std::str::from_utf8(t).ok());
            match two {
                Some(t) if t.as_bytes()[1].is_ascii_lowercase() && atomic_number(t).is_some() => {
                    self.pos += 2;
                    (t.to_string(), false)
                }
                _ => {
                    self.pos += 1;
                    ((c as char).to_string(), false)
                }
            }
        } else if c.is_ascii_lowercase() {
            let two = self.s.get(self.pos..self.pos + 2);
            match two {
                Some(b"se") | Some(b"as") => {
                    self.pos += 2;
                    let t = std::str::from_utf8(two.unwrap()).unwrap();
                    (format!("{}{}", t[..1].to_ascii_uppercase(), &t[1..]), true)
                }
                _ if matches!(c, b'b' | b'c' | b'n' | b'o' | b'p' | b's') => {
                    self.pos += 1;
                    ((c.to_ascii_uppercase() as char).to_string(), true)
                }
                _ => return Err(unknown),
            }
        } else {
            return Err(unknown);
        };
        let z = atomic_number(&symbol).ok_or(unknown.clone())?;
        let hydrogen = z == 1;

        let mut chiral = false;
        if self.peek() == Some(b'@') {
            chiral = true;
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            }
        }
        let mut explicit_h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            explicit_h = 1;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                explicit_h = d - b'0';
                self.pos += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                charge = unit * i32::from(d - b'0');
                self.pos += 1;
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
                return Err(unknown);
            }
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if self.peek() != Some(b']') {
            return Err(unknown);
        }
        self.pos += 1;
        Ok(RawAtom {
            element: Element::from_atomic_number(z),
            hydrogen,
            aromatic,
            charge: charge.clamp(-9, 9) as i8,
            explicit_h: Some(explicit_h),
            chiral,
            offset: start,
        })
    }
}

/// Hydrogens implied for an unbracketed atom whose bond-order sum is
/// `bond_sum` (aromatic bonds counted as 1). `None` signals a valence
/// violation.
pub(crate) fn default_implicit_h(element: Element, aromatic: bool, bond_sum: u8) -> Option<u8> {
    let valences = element.normal_valences();
    if aromatic {
        // o, s and friends donate a lone pair to the ring and take no H.
        if matches!(element, Element::O | Element::S) || matches!(element, Element::Other(34)) {
            return (bond_sum <= *valences.last()?).then_some(0);
        }
        let need = bond_sum + 1;
        return match valences.iter().find(|&&v| v >= need) {
            Some(&v) => Some(v - need),
            None if bond_sum <= *valences.last()? => Some(0),
            None => None,
        };
    }
    valences.iter().find(|&&v| v >= bond_sum).map(|&v| v - bond_sum)
}

fn bond_order_of(symbol: Option<BondSymbol>, a: &RawAtom, b: &RawAtom) -> BondOrder {
    match symbol {
        Some(BondSymbol::Double) => BondOrder::Double,
        Some(BondSymbol::Triple) => BondOrder::Triple,
        Some(BondSymbol::Aromatic) => BondOrder::Aromatic,
        Some(BondSymbol::Single | BondSymbol::Up | BondSymbol::Down) => BondOrder::Single,
        None if a.aromatic && b.aromatic => BondOrder::Aromatic,
        None => BondOrder::Single,
    }
}

fn empty_bond(a: usize, b: usize, order: BondOrder) -> Bond {
    Bond {
        atoms: (a, b),
        order,
        conjugated: false,
        in_ring: false,
        ring_sizes: RingSizes::default(),
        stereo: BondStereo::None,
        stereo_atoms: None,
    }
}

/// Parse a SMILES string into a sanitized [`Molecule`].
pub fn parse_smiles(input: &str) -> Result<Molecule, SmilesError> {
    let s = input.trim_end_matches(['\n', '\r']).as_bytes();
    if s.is_empty() {
        return Err(SmilesError::Empty);
    }
    if let Some(offset) = s.iter().position(|b| !b.is_ascii()) {
        return Err(SmilesError::NonAscii { offset });
    }
    if let Some(offset) = s.iter().position(|b| b.is_ascii_whitespace()) {
        return Err(SmilesError::UnexpectedToken { offset });
    }
    let mut p = Parser {
        s,
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        open_rings: HashMap::new(),
    };
    p.run()?;
    let Parser { atoms: raw_atoms, bonds: raw_bonds, .. } = p;

    // Valence model over the full graph, explicit hydrogens included.
    let n = raw_atoms.len();
    let mut bond_sum = vec![0u8; n];
    let mut orders = Vec::with_capacity(raw_bonds.len());
    for rb in &raw_bonds {
        let order = bond_order_of(rb.symbol, &raw_atoms[rb.a], &raw_atoms[rb.b]);
        if order == BondOrder::Aromatic && !(raw_atoms[rb.a].aromatic && raw_atoms[rb.b].aromatic) {
            return Err(SmilesError::UnexpectedToken { offset: rb.offset });
        }
        orders.push(order);
        bond_sum[rb.a] = bond_sum[rb.a].saturating_add(order.valence());
        bond_sum[rb.b] = bond_sum[rb.b].saturating_add(order.valence());
    }
    let mut implicit = vec![0u8; n];
    for (i, ra) in raw_atoms.iter().enumerate() {
        match ra.explicit_h {
            None => {
                implicit[i] = default_implicit_h(ra.element, ra.aromatic, bond_sum[i])
                    .ok_or(SmilesError::ValenceViolation { offset: ra.offset })?;
            }
            Some(h) => {
                if ra.hydrogen {
                    if bond_sum[i] + h > 1 {
                        return Err(SmilesError::ValenceViolation { offset: ra.offset });
                    }
                    continue;
                }
                if let Some(max) = ra.element.max_valence(ra.charge) {
                    if i32::from(bond_sum[i]) + i32::from(h) > max {
                        return Err(SmilesError::ValenceViolation { offset: ra.offset });
                    }
                }
            }
        }
    }

    // Fold hydrogen atoms into their heavy neighbour.
    let mut extra_h = vec![0u8; n];
    let mut keep = vec![true; n];
    for (i, ra) in raw_atoms.iter().enumerate() {
        if !ra.hydrogen {
            continue;
        }
        keep[i] = false;
        for (rb, _) in raw_bonds.iter().zip(&orders) {
            let other = if rb.a == i {
                rb.b
            } else if rb.b == i {
                rb.a
            } else {
                continue;
            };
            if raw_atoms[other].hydrogen {
                continue;
            }
            extra_h[other] += 1;
        }
    }
    if keep.iter().all(|k| !k) {
        return Err(SmilesError::NoHeavyAtoms);
    }

    // Connected components of heavy atoms.
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if !keep[s] || comp[s] != usize::MAX {
            continue;
        }
        let c = sizes.len();
        let mut size = 0;
        let mut stack = vec![s];
        comp[s] = c;
        while let Some(v) = stack.pop() {
            size += 1;
            for rb in &raw_bonds {
                let w = if rb.a == v {
                    rb.b
                } else if rb.b == v {
                    rb.a
                } else {
                    continue;
                };
                if keep[w] && comp[w] == usize::MAX {
                    comp[w] = c;
                    stack.push(w);
                }
            }
        }
        sizes.push(size);
    }
    let largest = *sizes.iter().max().unwrap();
    let candidates: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] == largest).collect();

    let build = |c: usize| -> Result<Molecule, SmilesError> {
        let mut index = vec![usize::MAX; n];
        let mut atoms = Vec::new();
        let mut offsets = Vec::new();
        for (i, ra) in raw_atoms.iter().enumerate() {
            if keep[i] && comp[i] == c {
                index[i] = atoms.len();
                offsets.push(ra.offset);
                let explicit_h = match ra.explicit_h {
                    Some(h) => Some(h + extra_h[i]),
                    None if extra_h[i] > 0 => Some(extra_h[i]),
                    None => None,
                };
                let implicit_h = if ra.explicit_h.is_some() {
                    0
                } else {
                    implicit[i]
                };
                atoms.push(Atom {
                    element: ra.element,
                    formal_charge: ra.charge.clamp(-2, 2),
                    aromatic: ra.aromatic,
                    explicit_h,
                    implicit_h,
                    in_ring: false,
                    ring_sizes: RingSizes::default(),
                    chiral_center: ra.chiral,
                    degree: 0,
                });
            }
        }
        let mut drafts = Vec::new();
        for (rb, &order) in raw_bonds.iter().zip(&orders) {
            let (a, b) = (index[rb.a], index[rb.b]);
            if a == usize::MAX || b == usize::MAX {
                continue;
            }
            let dir = match rb.symbol {
                Some(BondSymbol::Up | BondSymbol::Down) => {
                    let from = index[rb.dir_from];
                    let to = if from == a { b } else { a };
                    Some(Direction { up: rb.symbol == Some(BondSymbol::Up), from, to })
                }
                _ => None,
            };
            drafts.push(DraftBond { bond: empty_bond(a, b, order), dir });
        }
        assemble(atoms, drafts, offsets)
    };

    let first = build(candidates[0])?;
    for &c in &candidates[1..] {
        let other = build(c)?;
        if other.canonical_key != first.canonical_key {
            return Err(SmilesError::AmbiguousComponents);
        }
    }
    Ok(first)
}

/// Finish a molecule: degrees, rings, aromaticity checks, double-bond
/// stereo, conjugation and the canonical key.
pub(crate) fn assemble(
    mut atoms: Vec<Atom>,
    drafts: Vec<DraftBond>,
    atom_offsets: Vec<usize>,
) -> Result<Molecule, SmilesError> {
    let n = atoms.len();
    if n == 0 {
        return Err(SmilesError::NoHeavyAtoms);
    }
    let mut bonds: Vec<Bond> = drafts.iter().map(|d| d.bond.clone()).collect();
    let mut adjacency = vec![Vec::new(); n];
    for (bi, b) in bonds.iter().enumerate() {
        adjacency[b.atoms.0].push((b.atoms.1, bi));
        adjacency[b.atoms.1].push((b.atoms.0, bi));
    }
    for (a, adj) in atoms.iter_mut().zip(&adjacency) {
        a.degree = adj.len() as u8;
    }

    let info = rings::find_rings(n, &bonds, &adjacency);
    rings::apply(&info, &mut atoms, &mut bonds);
    perceive_kekule_aromaticity(&mut atoms, &mut bonds, &info);

    for b in bonds.iter_mut() {
        if b.order == BondOrder::Aromatic && !b.in_ring {
            b.order = BondOrder::Single;
        }
    }
    for (i, a) in atoms.iter().enumerate() {
        if a.aromatic && !a.in_ring {
            return Err(SmilesError::NonRingAromatic { offset: atom_offsets[i] });
        }
    }

    assign_double_bond_stereo(&mut bonds, &drafts, &adjacency);
    assign_conjugation(&atoms, &mut bonds, &adjacency);

    let mut mol = Molecule {
        atoms,
        bonds,
        canonical_key: String::new(),
        adjacency,
        rings: info.cycles,
        canonical_ranks: Vec::new(),
    };
    canon::canonicalize(&mut mol);
    Ok(mol)
}

/// Mark Kekulé-written rings aromatic: 6-rings whose atoms each carry one
/// in-ring double bond (or are already aromatic) with six pi electrons, and
/// 5-rings with two double bonds plus one lone-pair donor (N, O, S).
fn perceive_kekule_aromaticity(atoms: &mut [Atom], bonds: &mut [Bond], info: &rings::RingInfo) {
    let mut changed = true;
    while changed {
        changed = false;
        for (cycle, cbonds) in info.cycles.iter().zip(&info.cycle_bonds) {
            let size = cycle.len();
            if !(size == 5 || size == 6) || cbonds.iter().all(|&b| bonds[b].order == BondOrder::Aromatic) {
                continue;
            }
            let mut electrons = 0;
            let mut donors = 0;
            let mut ok = true;
            for &a in cycle {
                let atom = &atoms[a];
                if !matches!(atom.element, Element::C | Element::N | Element::O | Element::S) || atom.formal_charge != 0 {
                    ok = false;
                    break;
                }
                let ring_double = cbonds.iter().filter(|&&b| {
                    bonds[b].order == BondOrder::Double && (bonds[b].atoms.0 == a || bonds[b].atoms.1 == a)
                });
                let n_double = ring_double.count();
                if n_double == 1 {
                    electrons += 1;
                } else if n_double == 0 && atom.aromatic {
                    electrons += 1;
                } else if n_double == 0
                    && size == 5
                    && matches!(atom.element, Element::N | Element::O | Element::S)
                {
                    donors += 1;
                    electrons += 2;
                } else {
                    ok = false;
                    break;
                }
            }
            let aromatic = ok && electrons == 6 && (size == 6 && donors == 0 || size == 5 && donors == 1);
            if aromatic {
                for &a in cycle {
                    atoms[a].aromatic = true;
                }
                for &b in cbonds {
                    bonds[b].order = BondOrder::Aromatic;
                }
                changed = true;
            }
        }
    }
}

fn assign_double_bond_stereo(bonds: &mut [Bond], drafts: &[DraftBond], adjacency: &[Vec<(usize, usize)>]) {
    let dir_value = |bi: usize, center: usize, outward: bool| -> Option<bool> {
        let d = drafts[bi].dir?;
        // value relative to the double-bond atom `center`: written x -> center
        // for the left side, center -> y for the right side.
        let towards_center = d.to == center;
        Some(if towards_center != outward { d.up } else { !d.up })
    };
    for bi in 0..bonds.len() {
        if bonds[bi].order != BondOrder::Double {
            continue;
        }
        if bonds[bi].in_ring && bonds[bi].ring_sizes.buckets()[..4].iter().any(|&b| b) {
            continue;
        }
        let (a, b) = bonds[bi].atoms;
        let left = adjacency[a]
            .iter()
            .filter(|&&(x, xb)| x != b && xb != bi)
            .find_map(|&(x, xb)| dir_value(xb, a, false).map(|v| (x, v)));
        let right = adjacency[b]
            .iter()
            .filter(|&&(y, yb)| y != a && yb != bi)
            .find_map(|&(y, yb)| dir_value(yb, b, true).map(|v| (y, v)));
        if let (Some((x, lv)), Some((y, rv))) = (left, right) {
            bonds[bi].stereo = if lv == rv { BondStereo::Trans } else { BondStereo::Cis };
            bonds[bi].stereo_atoms = Some((x, y));
        }
    }
}

fn assign_conjugation(atoms: &[Atom], bonds: &mut [Bond], adjacency: &[Vec<(usize, usize)>]) {
    let unsaturated: Vec<bool> = (0..atoms.len())
        .map(|a| adjacency[a].iter().any(|&(_, bi)| bonds[bi].order != BondOrder::Single))
        .collect();
    let donor = |a: usize| {
        matches!(atoms[a].element, Element::N | Element::O | Element::S) && !unsaturated[a]
    };
    let mut conj = vec![false; bonds.len()];
    for (bi, b) in bonds.iter().enumerate() {
        let (u, v) = b.atoms;
        conj[bi] = match b.order {
            BondOrder::Aromatic => true,
            BondOrder::Single => {
                (unsaturated[u] && unsaturated[v]) || (unsaturated[u] && donor(v)) || (unsaturated[v] && donor(u))
            }
            _ => false,
        };
    }
    for (bi, b) in bonds.iter().enumerate() {
        if matches!(b.order, BondOrder::Double | BondOrder::Triple) {
            let (u, v) = b.atoms;
            conj[bi] = adjacency[u]
                .iter()
                .chain(&adjacency[v])
                .any(|&(_, other)| other != bi && conj[other] && bonds[other].order == BondOrder::Single);
        }
    }
    for (b, c) in bonds.iter_mut().zip(conj) {
        b.conjugated = c;
    }
}
