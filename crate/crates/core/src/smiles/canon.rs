//! Canonical atom ordering.
//!
//! Atom classes start from local invariants and are refined Morgan-style
//! (class, sorted neighbour classes) until stable. Remaining ties are broken
//! by individualizing every atom of the smallest tied class in turn; each
//! complete ordering is serialized and the lexicographically smallest code
//! wins. Exploring all branches makes the result a true canonical form
//! rather than a heuristic.

use super::{writer, BondOrder, BondStereo, Molecule};

fn atom_invariant(mol: &Molecule, i: usize) -> [i32; 6] {
    let a = &mol.atoms[i];
    [
        i32::from(a.degree),
        i32::from(a.element.atomic_number()),
        i32::from(a.aromatic),
        i32::from(a.formal_charge),
        i32::from(a.total_h()),
        i32::from(a.chiral_center),
    ]
}

/// Dense ranks of `keys`: equal keys share a rank, ranks follow key order.
fn dense_ranks<K: Ord>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut next = 0;
    for (pos, &i) in idx.iter().enumerate() {
        if pos > 0 && keys[idx[pos - 1]] != keys[i] {
            next += 1;
        }
        ranks[i] = next;
    }
    let count = if keys.is_empty() { 0 } else { next + 1 };
    (ranks, count)
}

fn refine(mol: &Molecule, mut classes: Vec<usize>) -> Vec<usize> {
    let n = classes.len();
    let mut count = {
        let mut c = classes.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    };
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(j, bi)| (classes[j], mol.bonds[bi].order.code()))
                    .collect();
                nb.sort_unstable();
                (classes[i], nb)
            })
            .collect();
        let (next, next_count) = dense_ranks(&keys);
        classes = next;
        if next_count == count {
            return classes;
        }
        count = next_count;
    }
}

fn individualize(classes: &[usize], atom: usize) -> Vec<usize> {
    let c = classes[atom];
    classes
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if k > c || (k == c && i != atom) {
                k + 1
            } else {
                k
            }
        })
        .collect()
}

fn stereo_code(s: BondStereo) -> u32 {
    match s {
        BondStereo::Cis => 1,
        BondStereo::Trans => 2,
        _ => 0,
    }
}

/// Label of a stereo bond re-expressed against the reference neighbours that
/// come first under `ranks`.
pub(crate) fn normalized_stereo(mol: &Molecule, bi: usize, ranks: &[usize]) -> Option<(usize, usize, BondStereo)> {
    let bond = &mol.bonds[bi];
    let (x, y) = bond.stereo_atoms?;
    if !matches!(bond.stereo, BondStereo::Cis | BondStereo::Trans) {
        return None;
    }
    let (a, b) = bond.atoms;
    let best = |center: usize, partner: usize| {
        mol.neighbors(center)
            .iter()
            .filter(|&&(n, _)| n != partner)
            .min_by_key(|&&(n, _)| ranks[n])
            .map(|&(n, _)| n)
    };
    let bx = best(a, b)?;
    let by = best(b, a)?;
    let mut label = bond.stereo;
    if bx != x {
        label = label.flipped();
    }
    if by != y {
        label = label.flipped();
    }
    Some((bx, by, label))
}

fn serialize(mol: &Molecule, ranks: &[usize]) -> Vec<u32> {
    let n = ranks.len();
    let mut order = vec![0; n];
    for (i, &r) in ranks.iter().enumerate() {
        order[r] = i;
    }
    let mut code = Vec::with_capacity(n * 10);
    for &i in &order {
        code.extend(atom_invariant(mol, i).iter().map(|&v| (v + 16) as u32));
        let mut nb: Vec<(u32, u32)> = mol
            .neighbors(i)
            .iter()
            .map(|&(j, bi)| (ranks[j] as u32, u32::from(mol.bonds[bi].order.code())))
            .collect();
        nb.sort_unstable();
        for (r, o) in nb {
            code.push(r);
            code.push(o);
        }
    }
    let mut stereo: Vec<[u32; 3]> = (0..mol.bonds.len())
        .filter_map(|bi| {
            let (_, _, label) = normalized_stereo(mol, bi, ranks)?;
            let (a, b) = mol.bonds[bi].atoms;
            let (ra, rb) = (ranks[a] as u32, ranks[b] as u32);
            Some([ra.min(rb), ra.max(rb), stereo_code(label)])
        })
        .collect();
    stereo.sort_unstable();
    code.push(u32::MAX);
    code.extend(stereo.into_iter().flatten());
    code
}

fn search(mol: &Molecule, classes: Vec<usize>, best: &mut Option<(Vec<u32>, Vec<usize>)>) {
    let n = classes.len();
    let mut sizes = vec![0usize; n];
    for &c in &classes {
        sizes[c] += 1;
    }
    let target = (0..n).filter(|&c| sizes[c] > 1).min_by_key(|&c| (sizes[c], c));
    match target {
        None => {
            let code = serialize(mol, &classes);
            if best.as_ref().is_none_or(|(b, _)| code < *b) {
                *best = Some((code, classes));
            }
        }
        Some(c) => {
            for atom in (0..n).filter(|&i| classes[i] == c) {
                let next = refine(mol, individualize(&classes, atom));
                search(mol, next, best);
            }
        }
    }
}

/// Fill `canonical_ranks`, normalize stereo references and write the key.
pub(crate) fn canonicalize(mol: &mut Molecule) {
    let n = mol.atoms.len();
    let invariants: Vec<[i32; 6]> = (0..n).map(|i| atom_invariant(mol, i)).collect();
    let (initial, _) = dense_ranks(&invariants);
    let classes = refine(mol, initial);

    // A double bond with two equivalent substituents on one end has no
    // geometric isomer.
    for bi in 0..mol.bonds.len() {
        if mol.bonds[bi].order != BondOrder::Double || mol.bonds[bi].stereo_atoms.is_none() {
            continue;
        }
        let (a, b) = mol.bonds[bi].atoms;
        let symmetric_end = |center: usize, partner: usize| {
            let others: Vec<usize> = mol
                .neighbors(center)
                .iter()
                .filter(|&&(x, _)| x != partner)
                .map(|&(x, _)| classes[x])
                .collect();
            others.len() == 2 && others[0] == others[1]
        };
        if symmetric_end(a, b) || symmetric_end(b, a) {
            mol.bonds[bi].stereo = BondStereo::None;
            mol.bonds[bi].stereo_atoms = None;
        }
    }

    let mut best = None;
    search(mol, classes, &mut best);
    let (_, ranks) = best.expect("search always reaches a leaf");

    for bi in 0..mol.bonds.len() {
        if let Some((x, y, label)) = normalized_stereo(mol, bi, &ranks) {
            mol.bonds[bi].stereo_atoms = Some((x, y));
            mol.bonds[bi].stereo = label;
        }
    }
    mol.canonical_ranks = ranks;
    mol.canonical_key = writer::write_smiles(mol, &writer::WriteOptions::default());
}
