//! Ring perception.
//!
//! Candidate cycles come from Horton's construction (shortest path from a
//! root to both ends of an edge, kept when the two paths only meet at the
//! root). A candidate is *relevant* when it is independent, over GF(2), of
//! all strictly shorter candidates. The relevant set contains every minimum
//! cycle basis, so a bond shared by two fused rings carries both sizes.

use std::collections::{HashSet, VecDeque};

use super::{Atom, Bond};

pub(crate) struct RingInfo {
    pub cycles: Vec<Vec<usize>>,
    pub cycle_bonds: Vec<Vec<usize>>,
}

type BitRow = Vec<u64>;

fn highest_bit(row: &BitRow) -> Option<usize> {
    row.iter()
        .enumerate()
        .rev()
        .find(|(_, &w)| w != 0)
        .map(|(i, &w)| i * 64 + 63 - w.leading_zeros() as usize)
}

#[derive(Default)]
struct Gf2Basis {
    pivots: std::collections::HashMap<usize, BitRow>,
}

impl Gf2Basis {
    /// Reduce `row` against the basis; returns the residue when independent.
    fn reduce(&self, mut row: BitRow) -> Option<(usize, BitRow)> {
        while let Some(b) = highest_bit(&row) {
            match self.pivots.get(&b) {
                Some(p) => row.iter_mut().zip(p).for_each(|(w, pw)| *w ^= pw),
                None => return Some((b, row)),
            }
        }
        None
    }

    fn insert(&mut self, row: BitRow) -> bool {
        match self.reduce(row) {
            Some((b, residue)) => {
                self.pivots.insert(b, residue);
                true
            }
            None => false,
        }
    }
}

struct Bfs {
    dist: Vec<usize>,
    parent: Vec<Option<(usize, usize)>>,
}

fn bfs(root: usize, adjacency: &[Vec<(usize, usize)>]) -> Bfs {
    let n = adjacency.len();
    let mut dist = vec![usize::MAX; n];
    let mut parent = vec![None; n];
    let mut queue = VecDeque::new();
    dist[root] = 0;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        for &(w, bi) in &adjacency[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                parent[w] = Some((v, bi));
                queue.push_back(w);
            }
        }
    }
    Bfs { dist, parent }
}

/// Path from `v` back to the BFS root as (atoms, bonds), atoms starting at `v`.
fn path_to_root(tree: &Bfs, mut v: usize) -> (Vec<usize>, Vec<usize>) {
    let mut atoms = vec![v];
    let mut bonds = Vec::new();
    while let Some((p, bi)) = tree.parent[v] {
        atoms.push(p);
        bonds.push(bi);
        v = p;
    }
    (atoms, bonds)
}

pub(crate) fn find_rings(n_atoms: usize, bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) -> RingInfo {
    let m = bonds.len();
    let words = m.div_ceil(64).max(1);
    // Cyclomatic number zero means no rings at all.
    let components = count_components(n_atoms, adjacency);
    if m + components <= n_atoms {
        return RingInfo { cycles: Vec::new(), cycle_bonds: Vec::new() };
    }

    let mut seen: HashSet<BitRow> = HashSet::new();
    let mut candidates: Vec<(usize, BitRow, Vec<usize>, Vec<usize>)> = Vec::new();
    for root in 0..n_atoms {
        let tree = bfs(root, adjacency);
        for (bi, bond) in bonds.iter().enumerate() {
            let (x, y) = bond.atoms;
            if tree.dist[x] == usize::MAX || tree.dist[y] == usize::MAX {
                continue;
            }
            if tree.parent[x].is_some_and(|(_, pb)| pb == bi) || tree.parent[y].is_some_and(|(_, pb)| pb == bi) {
                continue;
            }
            let (px, bx) = path_to_root(&tree, x);
            let (py, by) = path_to_root(&tree, y);
            let set_x: HashSet<usize> = px[..px.len() - 1].iter().copied().collect();
            if py[..py.len() - 1].iter().any(|a| set_x.contains(a)) {
                continue;
            }
            let mut row = vec![0u64; words];
            for &b in bx.iter().chain(&by).chain(std::iter::once(&bi)) {
                row[b / 64] |= 1 << (b % 64);
            }
            if !seen.insert(row.clone()) {
                continue;
            }
            // x .. root .. y, closing through bond bi
            let mut atoms: Vec<usize> = px.clone();
            atoms.extend(py[..py.len() - 1].iter().rev());
            let mut cyc_bonds = bx.clone();
            cyc_bonds.extend(by.iter().rev());
            cyc_bonds.push(bi);
            candidates.push((atoms.len(), row, atoms, cyc_bonds));
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut basis = Gf2Basis::default();
    let mut cycles = Vec::new();
    let mut cycle_bonds = Vec::new();
    let mut i = 0;
    while i < candidates.len() {
        let len = candidates[i].0;
        let mut j = i;
        while j < candidates.len() && candidates[j].0 == len {
            j += 1;
        }
        let relevant: Vec<usize> = (i..j).filter(|&k| basis.reduce(candidates[k].1.clone()).is_some()).collect();
        for k in relevant {
            basis.insert(candidates[k].1.clone());
            cycles.push(candidates[k].2.clone());
            cycle_bonds.push(candidates[k].3.clone());
        }
        i = j;
    }
    RingInfo { cycles, cycle_bonds }
}

fn count_components(n: usize, adjacency: &[Vec<(usize, usize)>]) -> usize {
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(v) = stack.pop() {
            for &(w, _) in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

pub(crate) fn apply(info: &RingInfo, atoms: &mut [Atom], bonds: &mut [Bond]) {
    for a in atoms.iter_mut() {
        a.in_ring = false;
        a.ring_sizes = Default::default();
    }
    for b in bonds.iter_mut() {
        b.in_ring = false;
        b.ring_sizes = Default::default();
    }
    for (cycle, cbonds) in info.cycles.iter().zip(&info.cycle_bonds) {
        let size = cycle.len();
        for &a in cycle {
            atoms[a].ring_sizes.insert(size);
            atoms[a].in_ring = true;
        }
        for &b in cbonds {
            bonds[b].ring_sizes.insert(size);
            bonds[b].in_ring = true;
        }
    }
}
