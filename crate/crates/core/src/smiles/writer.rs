use std::collections::{BTreeSet, HashMap};

use super::parser::default_implicit_h;
use super::{canon, BondOrder, BondStereo, Molecule};

/// Controls traversal order. With the defaults the output is the canonical
/// SMILES; `root` and `priorities` produce alternative spellings of the same
/// molecule (useful for re-rooting tests).
#[derive(Debug, Clone, Default)]
pub struct WriteOptions {
    pub root: Option<usize>,
    /// Lower value = visited first. Defaults to the canonical ranks.
    pub priorities: Option<Vec<usize>>,
}

struct Layout {
    /// DFS children per atom, in output order.
    children: Vec<Vec<(usize, usize)>>,
    /// Ring bonds opened at an atom: (bond, partner).
    openings: Vec<Vec<(usize, usize)>>,
    /// Ring bonds closed at an atom: (bond, partner).
    closings: Vec<Vec<(usize, usize)>>,
    /// Output orientation of each bond: the atom written first.
    written_from: Vec<usize>,
}

fn layout(mol: &Molecule, root: usize, prio: &[usize]) -> Layout {
    let n = mol.atoms.len();
    let mut visited = vec![false; n];
    let mut used = vec![false; mol.bonds.len()];
    let mut layout = Layout {
        children: vec![Vec::new(); n],
        openings: vec![Vec::new(); n],
        closings: vec![Vec::new(); n],
        written_from: vec![usize::MAX; mol.bonds.len()],
    };
    // Iterative DFS with an explicit neighbour cursor.
    let sorted_nb = |v: usize| {
        let mut nb: Vec<(usize, usize)> = mol.neighbors(v).to_vec();
        nb.sort_by_key(|&(w, _)| prio[w]);
        nb
    };
    let mut stack: Vec<(usize, Vec<(usize, usize)>, usize)> = vec![(root, sorted_nb(root), 0)];
    visited[root] = true;
    while let Some(top) = stack.last_mut() {
        let (v, ref nbs, ref mut cursor) = *top;
        if *cursor >= nbs.len() {
            stack.pop();
            continue;
        }
        let (w, bi) = nbs[*cursor];
        *cursor += 1;
        if used[bi] {
            continue;
        }
        used[bi] = true;
        if visited[w] {
            // back edge: w was written before v, ring opens at w
            layout.openings[w].push((bi, v));
            layout.closings[v].push((bi, w));
            layout.written_from[bi] = w;
        } else {
            visited[w] = true;
            layout.children[v].push((w, bi));
            layout.written_from[bi] = v;
            stack.push((w, sorted_nb(w), 0));
        }
    }
    layout
}

fn bond_sum(mol: &Molecule, atom: usize) -> u8 {
    mol.neighbors(atom).iter().map(|&(_, bi)| mol.bonds[bi].order.valence()).sum()
}

fn atom_text(mol: &Molecule, i: usize) -> String {
    let a = &mol.atoms[i];
    let symbol = a.element.symbol();
    let symbol = if a.aromatic { symbol.to_ascii_lowercase() } else { symbol.to_string() };
    let bare_ok = a.element.in_organic_subset()
        && a.formal_charge == 0
        && !a.chiral_center
        && default_implicit_h(a.element, a.aromatic, bond_sum(mol, i)) == Some(a.total_h());
    if bare_ok {
        return symbol;
    }
    let mut s = String::from("[");
    s.push_str(&symbol);
    if a.chiral_center {
        s.push('@');
    }
    match a.total_h() {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.formal_charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        q if q > 0 => s.push_str(&format!("+{q}")),
        q => s.push_str(&format!("-{}", -q)),
    }
    s.push(']');
    s
}

/// Pick `/` or `\` marks for single bonds so that every Cis/Trans double
/// bond is reproduced when the string is parsed back. Double bonds are
/// handled in output order so that a mark shared along a conjugated chain is
/// always fixed by the bond written first.
fn direction_marks(mol: &Molecule, lay: &Layout, root: usize, prio: &[usize]) -> HashMap<usize, bool> {
    let mut position = vec![usize::MAX; mol.atoms.len()];
    let mut stack = vec![root];
    let mut next = 0;
    while let Some(v) = stack.pop() {
        position[v] = next;
        next += 1;
        stack.extend(lay.children[v].iter().rev().map(|&(w, _)| w));
    }

    let ranks = mol.canonical_ranks();
    let mut stereo: Vec<(usize, usize, usize, usize, usize, BondStereo)> = (0..mol.bonds.len())
        .filter_map(|bi| {
            let (cx, cy, label) = canon::normalized_stereo(mol, bi, ranks)?;
            let (a, b) = mol.bonds[bi].atoms;
            Some(if position[a] < position[b] {
                (position[a], a, b, cx, cy, label)
            } else {
                (position[b], b, a, cy, cx, label)
            })
        })
        .collect();
    stereo.sort_by_key(|s| s.0);

    let mut marks: HashMap<usize, bool> = HashMap::new();
    for (_, a, b, cx, cy, label) in stereo {
        let pick = |center: usize, partner: usize, marks: &HashMap<usize, bool>| {
            let singles: Vec<(usize, usize)> = mol
                .neighbors(center)
                .iter()
                .filter(|&&(x, xb)| x != partner && mol.bonds[xb].order == BondOrder::Single)
                .copied()
                .collect();
            singles
                .iter()
                .find(|&&(_, xb)| marks.contains_key(&xb))
                .or_else(|| singles.iter().min_by_key(|&&(x, _)| prio[x]))
                .copied()
        };
        let (Some((x, xb)), Some((y, yb))) = (pick(a, b, &marks), pick(b, a, &marks)) else {
            continue;
        };
        // label relative to the chosen references
        let mut want = label;
        if x != cx {
            want = want.flipped();
        }
        if y != cy {
            want = want.flipped();
        }
        // value of a mark relative to the double bond (see parser); both
        // maps are involutions in `up`
        let left_value = |up: bool| if lay.written_from[xb] == x { up } else { !up };
        let right_value = |up: bool| if lay.written_from[yb] == b { up } else { !up };
        let trans = want == BondStereo::Trans;
        match (marks.get(&xb).copied(), marks.get(&yb).copied()) {
            (Some(_), Some(_)) => {}
            (Some(up), None) => {
                let lv = left_value(up);
                marks.insert(yb, right_value(if trans { lv } else { !lv }));
            }
            (None, Some(up)) => {
                let rv = right_value(up);
                marks.insert(xb, left_value(if trans { rv } else { !rv }));
            }
            (None, None) => {
                marks.insert(xb, left_value(true));
                marks.insert(yb, right_value(trans));
            }
        }
    }
    marks
}

fn bond_text(mol: &Molecule, bi: usize, marks: &HashMap<usize, bool>) -> &'static str {
    let bond = &mol.bonds[bi];
    match bond.order {
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => "",
        BondOrder::Single => match marks.get(&bi) {
            Some(true) => "/",
            Some(false) => "\\",
            None => {
                let (a, b) = bond.atoms;
                if mol.atoms[a].aromatic && mol.atoms[b].aromatic {
                    "-"
                } else {
                    ""
                }
            }
        },
    }
}

fn ring_label(d: usize) -> String {
    if d < 10 {
        d.to_string()
    } else {
        format!("%{d:02}")
    }
}

/// Write `mol` as SMILES. Hydrogens are implicit wherever the parser's
/// valence model reproduces them; every other atom is bracketed.
pub fn write_smiles(mol: &Molecule, opts: &WriteOptions) -> String {
    let n = mol.atoms.len();
    if n == 0 {
        return String::new();
    }
    let prio: Vec<usize> = match &opts.priorities {
        Some(p) => p.clone(),
        None if mol.canonical_ranks().len() == n => mol.canonical_ranks().to_vec(),
        None => (0..n).collect(),
    };
    let root = opts.root.unwrap_or_else(|| (0..n).min_by_key(|&i| prio[i]).unwrap());
    let lay = layout(mol, root, &prio);
    let marks = direction_marks(mol, &lay, root, &prio);

    let mut out = String::new();
    let mut free: BTreeSet<usize> = (1..100).collect();
    let mut digit_of: HashMap<usize, usize> = HashMap::new();

    enum Step {
        Atom(usize, Option<usize>),
        Text(&'static str),
    }
    let mut stack = vec![Step::Atom(root, None)];
    while let Some(step) = stack.pop() {
        let (v, via) = match step {
            Step::Text(t) => {
                out.push_str(t);
                continue;
            }
            Step::Atom(v, via) => (v, via),
        };
        if let Some(bi) = via {
            out.push_str(bond_text(mol, bi, &marks));
        }
        out.push_str(&atom_text(mol, v));
        let mut released = Vec::new();
        for &(bi, _) in &lay.closings[v] {
            let d = digit_of.remove(&bi).expect("ring opened before closing");
            out.push_str(&ring_label(d));
            released.push(d);
        }
        for &(bi, _) in &lay.openings[v] {
            let d = *free.iter().next().expect("fewer than 100 open rings");
            free.remove(&d);
            digit_of.insert(bi, d);
            out.push_str(bond_text(mol, bi, &marks));
            out.push_str(&ring_label(d));
        }
        free.extend(released);

        let kids = &lay.children[v];
        // push in reverse so the first child is written first
        for (k, &(w, bi)) in kids.iter().enumerate().rev() {
            let last = k + 1 == kids.len();
            if !last {
                stack.push(Step::Text(")"));
            }
            stack.push(Step::Atom(w, Some(bi)));
            if !last {
                stack.push(Step::Text("("));
            }
        }
    }
    out
}
