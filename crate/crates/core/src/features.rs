//! A20 atom and E17 bond encodings, the molecule-level graph store and
//! per-sample [`MolGraph`] materialization.
//!
//! Node layout (20):
//! `[element ×10 | degree | charge | hybridization ×4 | aromatic | in_ring | total_H | chiral]`
//! with element slots C, N, O, F, Cl, Br, I, S, P, other and hybridization
//! slots sp, sp2, sp3, other.
//!
//! Edge layout (17):
//! `[order ×4 | conjugated | in_ring | stereo ×6 | ring size ×5]`
//! with orders single, double, triple, aromatic; stereo NONE, ANY, Z, E, CIS,
//! TRANS; ring sizes 3, 4, 5, 6, 7+.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{Endpoint, PreprocessError, Scaler};
use crate::smiles::{Bond, Molecule};

pub const NODE_DIM: usize = 20;
pub const EDGE_DIM: usize = 17;

pub const DEGREE: usize = 10;
pub const CHARGE: usize = 11;
pub const HYBRIDIZATION: usize = 12;
pub const AROMATIC: usize = 16;
pub const IN_RING: usize = 17;
pub const TOTAL_H: usize = 18;
pub const CHIRAL: usize = 19;
/// Node channels that are standardized; the rest stay binary.
pub const SCALAR_CHANNELS: [usize; 3] = [DEGREE, CHARGE, TOTAL_H];

pub const BOND_ORDER: usize = 0;
pub const CONJUGATED: usize = 4;
pub const BOND_IN_RING: usize = 5;
pub const STEREO: usize = 6;
pub const RING_SIZE: usize = 12;

pub const MAX_DEGREE: u8 = 5;
pub const MAX_H: u8 = 4;

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("graph store: {0}")]
    Store(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Raw A20 row: one-hots and binaries as 0/1, scalar channels clipped but
/// not yet standardized.
pub fn encode_atom(mol: &Molecule, atom: usize) -> [f64; NODE_DIM] {
    let a = &mol.atoms[atom];
    let mut v = [0.0; NODE_DIM];
    v[a.element.slot()] = 1.0;
    v[DEGREE] = f64::from(a.degree.min(MAX_DEGREE));
    v[CHARGE] = f64::from(a.formal_charge.clamp(-2, 2));
    v[HYBRIDIZATION + mol.hybridization(atom).slot()] = 1.0;
    v[AROMATIC] = f64::from(u8::from(a.aromatic));
    v[IN_RING] = f64::from(u8::from(a.in_ring));
    v[TOTAL_H] = f64::from(a.total_h().min(MAX_H));
    v[CHIRAL] = f64::from(u8::from(a.chiral_center));
    v
}

pub fn encode_bond(bond: &Bond) -> [f64; EDGE_DIM] {
    let mut v = [0.0; EDGE_DIM];
    v[BOND_ORDER + bond.order.slot()] = 1.0;
    v[CONJUGATED] = f64::from(u8::from(bond.conjugated));
    v[BOND_IN_RING] = f64::from(u8::from(bond.in_ring));
    v[STEREO + bond.stereo.slot()] = 1.0;
    for (k, hot) in bond.ring_sizes.buckets().into_iter().enumerate() {
        v[RING_SIZE + k] = f64::from(u8::from(hot));
    }
    v
}

/// Node rows, directed edge list (each bond twice, `u→v` then `v→u`) and the
/// shared edge rows.
pub fn encode_graph(mol: &Molecule) -> (Vec<[f64; NODE_DIM]>, Vec<(usize, usize)>, Vec<[f64; EDGE_DIM]>) {
    let nodes = (0..mol.atoms.len()).map(|i| encode_atom(mol, i)).collect();
    let mut edges = Vec::with_capacity(2 * mol.bonds.len());
    let mut feats = Vec::with_capacity(2 * mol.bonds.len());
    for b in &mol.bonds {
        let e = encode_bond(b);
        edges.push(b.atoms);
        edges.push((b.atoms.1, b.atoms.0));
        feats.push(e);
        feats.push(e);
    }
    (nodes, edges, feats)
}

/// Standardizes the scalar node channels with train-fold statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScaler {
    pub channels: Vec<usize>,
    pub scalers: Vec<Scaler>,
}

impl NodeScaler {
    /// Fit on every atom row of the given (training) graphs. A channel with
    /// no spread keeps unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64; NODE_DIM]>) -> NodeScaler {
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); SCALAR_CHANNELS.len()];
        for row in rows {
            for (k, &c) in SCALAR_CHANNELS.iter().enumerate() {
                cols[k].push(row[c]);
            }
        }
        NodeScaler {
            channels: SCALAR_CHANNELS.to_vec(),
            scalers: cols.iter().map(|c| Scaler::fit_mean_std_or_unit(c)).collect(),
        }
    }

    pub fn identity() -> NodeScaler {
        NodeScaler { channels: SCALAR_CHANNELS.to_vec(), scalers: vec![Scaler::identity(); SCALAR_CHANNELS.len()] }
    }

    pub fn apply(&self, row: &[f64; NODE_DIM]) -> [f64; NODE_DIM] {
        let mut out = *row;
        for (&c, s) in self.channels.iter().zip(&self.scalers) {
            out[c] = s.transform(row[c]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpPoint {
    pub temperature_k: f64,
    /// log10 Pa
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpLabel {
    /// log10 of mg/m³ (air) or µg/L (water)
    pub value: f64,
    pub n: u32,
    pub iqr: f64,
    pub sigma: Option<f64>,
}

/// Molecule-level entry of the graph store: raw encodings plus harmonized
/// log-space labels. Standardization happens later, per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub key: String,
    pub molar_mass: f64,
    pub node_feats: Vec<[f64; NODE_DIM]>,
    pub edge_index: Vec<(usize, usize)>,
    pub edge_feats: Vec<[f64; EDGE_DIM]>,
    pub vp: Vec<VpPoint>,
    pub oa: Option<OpLabel>,
    pub ow: Option<OpLabel>,
}

impl GraphRecord {
    pub fn from_molecule(mol: &Molecule) -> GraphRecord {
        let (node_feats, edge_index, edge_feats) = encode_graph(mol);
        GraphRecord {
            key: mol.canonical_key.clone(),
            molar_mass: mol.molar_mass(),
            node_feats,
            edge_index,
            edge_feats,
            vp: Vec::new(),
            oa: None,
            ow: None,
        }
    }

    pub fn op(&self, endpoint: Endpoint) -> Option<&OpLabel> {
        match endpoint {
            Endpoint::Oa => self.oa.as_ref(),
            Endpoint::Ow => self.ow.as_ref(),
            Endpoint::Vp => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    version: u32,
    records: usize,
}

/// Write the JSON-lines graph store: a header line, then one record per line.
pub fn write_store(path: &Path, records: &[GraphRecord]) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = StoreHeader { format: "odorgraph-graphs".into(), version: STORE_VERSION, records: records.len() };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<Vec<GraphRecord>, FeatureError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header: StoreHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(FeatureError::Store("empty file".into())),
    };
    if header.format != "odorgraph-graphs" || header.version != STORE_VERSION {
        return Err(FeatureError::Store(format!("unsupported header {} v{}", header.format, header.version)));
    }
    let mut out = Vec::with_capacity(header.records);
    for line in lines {
        let line = line?;
        if !line.is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    if out.len() != header.records {
        return Err(FeatureError::Store(format!("header announces {} records, found {}", header.records, out.len())));
    }
    Ok(out)
}

/// Standardized graph tensors shared by every sample of one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    pub key: String,
    pub node_feats: Vec<[f64; NODE_DIM]>,
    pub edge_index: Vec<(usize, usize)>,
    pub edge_feats: Vec<[f64; EDGE_DIM]>,
}

/// One training sample. The VP target is per temperature row; OP targets
/// ride on a single sample per molecule so they are not over-counted.
#[derive(Debug, Clone)]
pub struct MolGraph {
    pub graph: Arc<GraphData>,
    /// Index of the molecule in the store.
    pub molecule: usize,
    pub temperature_k: f64,
    pub t_std: f64,
    pub y_vp: f64,
    pub y_oa: f64,
    pub y_ow: f64,
    pub m_vp: f64,
    pub m_oa: f64,
    pub m_ow: f64,
    pub w_oa: f64,
    pub w_ow: f64,
    pub op_n: Option<u32>,
    pub op_iqr: Option<f64>,
}

/// How odor thresholds from the two media reach the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OpMode {
    /// Separate OA and OW heads.
    #[default]
    PerMedium,
    /// One OP target per molecule: the median of its standardized per-medium
    /// values, carried in the OA slot.
    Pooled,
}

/// Fitted target scalers. `vp` is required; OP scalers exist when the
/// training fold has labels for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScalers {
    pub vp: Scaler,
    pub oa: Option<Scaler>,
    pub ow: Option<Scaler>,
    pub temperature: Scaler,
}

impl TargetScalers {
    pub fn get(&self, endpoint: Endpoint) -> Option<&Scaler> {
        match endpoint {
            Endpoint::Vp => Some(&self.vp),
            Endpoint::Oa => self.oa.as_ref(),
            Endpoint::Ow => self.ow.as_ref(),
        }
    }
}

/// Fit `(μ, σ)` per endpoint on the training records only. VP uses every
/// temperature row; OP uses one value per molecule. The temperature scaler
/// falls back to unit scale when all training temperatures coincide.
pub fn standardize_targets(
    records: &[GraphRecord],
    train: &[usize],
    kind: crate::preprocess::ScaleKind,
) -> Result<TargetScalers, FeatureError> {
    let vp: Vec<f64> = train.iter().flat_map(|&i| records[i].vp.iter().map(|p| p.value)).collect();
    let temps: Vec<f64> = train.iter().flat_map(|&i| records[i].vp.iter().map(|p| p.temperature_k)).collect();
    let fit_op = |e: Endpoint| -> Result<Option<Scaler>, FeatureError> {
        let v: Vec<f64> = train.iter().filter_map(|&i| records[i].op(e).map(|l| l.value)).collect();
        if v.is_empty() {
            return Ok(None);
        }
        Ok(Some(Scaler::fit(kind, &v, &e.to_string())?))
    };
    Ok(TargetScalers {
        vp: Scaler::fit(kind, &vp, "VP")?,
        oa: fit_op(Endpoint::Oa)?,
        ow: fit_op(Endpoint::Ow)?,
        temperature: Scaler::fit_mean_std_or_unit(&temps),
    })
}

/// Options for turning store records into samples.
#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub op_mode: OpMode,
    /// Uncertainty weighting constant; `None` gives unit weights.
    pub uncertainty_alpha: Option<f64>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { op_mode: OpMode::PerMedium, uncertainty_alpha: None }
    }
}

/// Standardize records `ids` into samples. A molecule with VP rows yields one
/// sample per row, OP targets attached to the first; a molecule without VP
/// rows yields one OP-only sample with `t_std = 0`.
pub fn materialize(
    records: &[GraphRecord],
    ids: &[usize],
    nodes: &NodeScaler,
    targets: &TargetScalers,
    opts: SampleOptions,
) -> Vec<MolGraph> {
    let mut out = Vec::new();
    for &i in ids {
        let r = &records[i];
        let graph = Arc::new(GraphData {
            key: r.key.clone(),
            node_feats: r.node_feats.iter().map(|row| nodes.apply(row)).collect(),
            edge_index: r.edge_index.clone(),
            edge_feats: r.edge_feats.clone(),
        });
        let weight = |l: &OpLabel| match (opts.uncertainty_alpha, l.sigma) {
            (Some(a), Some(s)) => crate::preprocess::uncertainty_weight(s, a),
            _ => 1.0,
        };
        let scaled = |e: Endpoint| -> Option<(f64, f64, &OpLabel)> {
            let l = r.op(e)?;
            let s = targets.get(e)?;
            Some((s.transform(l.value), weight(l), l))
        };
        let (mut oa, mut ow) = (scaled(Endpoint::Oa), scaled(Endpoint::Ow));
        if opts.op_mode == OpMode::Pooled {
            let vals: Vec<&(f64, f64, &OpLabel)> = oa.iter().chain(ow.iter()).collect();
            oa = match vals.as_slice() {
                [] => None,
                [one] => Some(**one),
                [a, b] => Some(((a.0 + b.0) / 2.0, a.1.min(b.1), a.2)),
                _ => unreachable!(),
            };
            ow = None;
        }
        let op_n = oa.or(ow).map(|(_, _, l)| l.n);
        let op_iqr = oa.or(ow).map(|(_, _, l)| l.iqr);
        let base = MolGraph {
            graph: Arc::clone(&graph),
            molecule: i,
            temperature_k: 0.0,
            t_std: 0.0,
            y_vp: 0.0,
            y_oa: oa.map_or(0.0, |o| o.0),
            y_ow: ow.map_or(0.0, |o| o.0),
            m_vp: 0.0,
            m_oa: if oa.is_some() { 1.0 } else { 0.0 },
            m_ow: if ow.is_some() { 1.0 } else { 0.0 },
            w_oa: oa.map_or(1.0, |o| o.1),
            w_ow: ow.map_or(1.0, |o| o.1),
            op_n,
            op_iqr,
        };
        if r.vp.is_empty() {
            if oa.is_some() || ow.is_some() {
                out.push(base);
            }
            continue;
        }
        for (k, p) in r.vp.iter().enumerate() {
            let mut s = base.clone();
            s.temperature_k = p.temperature_k;
            s.t_std = targets.temperature.transform(p.temperature_k);
            s.y_vp = targets.vp.transform(p.value);
            s.m_vp = 1.0;
            if k > 0 {
                s.m_oa = 0.0;
                s.m_ow = 0.0;
                s.y_oa = 0.0;
                s.y_ow = 0.0;
            }
            out.push(s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::ScaleKind;
    use crate::smiles::parse_smiles;
    use proptest::prelude::*;

    fn mol(s: &str) -> Molecule {
        parse_smiles(s).unwrap()
    }

    /// Hand-written A20 row from named fields.
    fn a20(element: usize, degree: f64, charge: f64, hyb: usize, aromatic: bool, ring: bool, h: f64, chiral: bool) -> [f64; 20] {
        let mut v = [0.0; 20];
        v[element] = 1.0;
        v[10] = degree;
        v[11] = charge;
        v[12 + hyb] = 1.0;
        v[16] = aromatic as u8 as f64;
        v[17] = ring as u8 as f64;
        v[18] = h;
        v[19] = chiral as u8 as f64;
        v
    }

    #[test]
    fn atom_examples() {
        let benzene = mol("c1ccccc1");
        assert_eq!(encode_atom(&benzene, 0), a20(0, 2.0, 0.0, 1, true, true, 1.0, false));
        let ccl = mol("CCl");
        assert_eq!(encode_atom(&ccl, 1), a20(4, 1.0, 0.0, 3, false, false, 0.0, false));
        let se = mol("C[Se]C");
        assert_eq!(encode_atom(&se, 1)[9], 1.0);
        assert_eq!(encode_atom(&se, 1)[..9].iter().sum::<f64>(), 0.0);
        let neo = mol("CC(C)(C)C(C)(C)C");
        assert_eq!(encode_atom(&neo, 1)[DEGREE], 4.0);
    }

    fn e17(order: usize, conj: bool, ring: bool, stereo: usize, sizes: &[usize]) -> [f64; 17] {
        let mut v = [0.0; 17];
        v[order] = 1.0;
        v[4] = conj as u8 as f64;
        v[5] = ring as u8 as f64;
        v[6 + stereo] = 1.0;
        for &s in sizes {
            v[12 + s.min(7) - 3] = 1.0;
        }
        v
    }

    #[test]
    fn bond_examples() {
        let benzene = mol("c1ccccc1");
        assert_eq!(encode_bond(&benzene.bonds[0]), e17(3, true, true, 0, &[6]));
        let butene = mol("C/C=C/C");
        let db = butene.bonds.iter().find(|b| b.order == crate::smiles::BondOrder::Double).unwrap();
        assert_eq!(encode_bond(db), e17(1, false, false, 5, &[]));
        // ethane: single, acyclic; the stereo block carries its NONE slot
        let ethane = mol("CC");
        assert_eq!(encode_bond(&ethane.bonds[0]), e17(0, false, false, 0, &[]));
    }

    #[test]
    fn edges_come_in_pairs() {
        let m = mol("c1ccc2c(c1)CCC2O");
        let (nodes, edges, feats) = encode_graph(&m);
        assert_eq!(nodes.len(), m.atoms.len());
        assert_eq!(edges.len() % 2, 0);
        for k in (0..edges.len()).step_by(2) {
            assert_eq!(edges[k], (edges[k + 1].1, edges[k + 1].0));
            assert_eq!(feats[k], feats[k + 1]);
        }
    }

    fn record(s: &str, vp: &[(f64, f64)], oa: Option<f64>) -> GraphRecord {
        let mut r = GraphRecord::from_molecule(&mol(s));
        r.vp = vp.iter().map(|&(t, v)| VpPoint { temperature_k: t, value: v }).collect();
        r.oa = oa.map(|v| OpLabel { value: v, n: 1, iqr: 0.0, sigma: Some(0.1) });
        r
    }

    #[test]
    fn target_standardization_uses_train_only() {
        let recs = vec![
            record("CC", &[(290.0, 0.0)], Some(1.0)),
            record("CCC", &[(300.0, 2.0)], Some(3.0)),
            record("CCCC", &[(310.0, 1.0)], None),
        ];
        let s = standardize_targets(&recs, &[0, 1], ScaleKind::MeanStd).unwrap();
        assert_eq!((s.vp.center, s.vp.scale), (1.0, 1.0));
        let with_test = standardize_targets(&recs, &[0, 1, 2], ScaleKind::MeanStd).unwrap();
        assert_ne!(s.vp, with_test.vp);
        let samples = materialize(&recs, &[2], &NodeScaler::identity(), &s, SampleOptions::default());
        assert_eq!(samples[0].y_vp, 0.0);
        let flat = vec![record("CC", &[(290.0, 1.0)], None), record("CCC", &[(290.0, 1.0)], None)];
        assert!(standardize_targets(&flat, &[0, 1], ScaleKind::MeanStd).is_err());
    }

    #[test]
    fn samples_and_masks() {
        let recs = vec![
            record("CCO", &[(280.0, 3.0), (300.0, 3.5), (320.0, 4.0)], Some(0.5)),
            record("CCN", &[], Some(1.5)),
            record("CCC", &[], None),
        ];
        let s = standardize_targets(&recs, &[0, 1], ScaleKind::MeanStd).unwrap();
        let opts = SampleOptions { op_mode: OpMode::PerMedium, uncertainty_alpha: Some(0.1) };
        let samples = materialize(&recs, &[0, 1, 2], &NodeScaler::identity(), &s, opts);
        assert_eq!(samples.len(), 4);
        let op_rows: f64 = samples.iter().map(|m| m.m_oa).sum();
        assert_eq!(op_rows, 2.0);
        assert_eq!(samples[0].m_oa, 1.0);
        assert_eq!(samples[1].m_oa, 0.0);
        assert_eq!(samples[3].m_vp, 0.0);
        assert_eq!(samples[3].t_std, 0.0);
        assert_eq!(samples[0].w_oa, 0.5);
        assert!(Arc::ptr_eq(&samples[0].graph, &samples[2].graph));
        assert_ne!(samples[0].t_std, samples[2].t_std);
    }

    #[test]
    fn node_scaler_touches_only_scalars() {
        let recs = [record("CC(=O)O", &[], None), record("c1ccccc1", &[], None)];
        let ns = NodeScaler::fit(recs.iter().flat_map(|r| r.node_feats.iter()));
        let row = recs[0].node_feats[1];
        let out = ns.apply(&row);
        for c in 0..NODE_DIM {
            if SCALAR_CHANNELS.contains(&c) {
                continue;
            }
            assert_eq!(out[c], row[c]);
        }
        // charge is zero everywhere: unit scale, centered
        assert_eq!(ns.scalers[1].scale, 1.0);
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.jsonl");
        let mut r = record("CC(=O)OC", &[(298.15, 1.0 / 3.0)], Some(0.1 + 0.2));
        r.molar_mass = 74.079_000_000_000_01;
        write_store(&p, std::slice::from_ref(&r)).unwrap();
        assert_eq!(read_store(&p).unwrap(), vec![r]);
    }

    const SMILES: &[&str] = &["CCO", "c1ccc2c(c1)CCC2", "C/C=C/C(=O)O", "C[N+](C)(C)C", "c1ccncc1Cl", "OC1CCCCC1"];

    proptest! {
        #[test]
        fn encodings_are_well_formed(idx in 0..SMILES.len()) {
            let m = mol(SMILES[idx]);
            let (nodes, _, feats) = encode_graph(&m);
            for n in &nodes {
                prop_assert_eq!(n[0..10].iter().sum::<f64>(), 1.0);
                prop_assert_eq!(n[12..16].iter().sum::<f64>(), 1.0);
            }
            for e in &feats {
                prop_assert_eq!(e[0..4].iter().sum::<f64>(), 1.0);
                prop_assert_eq!(e[6..12].iter().sum::<f64>(), 1.0);
                prop_assert_eq!(e[5] == 1.0, e[12..17].iter().any(|&x| x == 1.0));
            }
        }

        #[test]
        fn relabeling_permutes_rows(idx in 0..SMILES.len(), seed in any::<u64>()) {
            use crate::smiles::{write_smiles, WriteOptions};
            let m = mol(SMILES[idx]);
            let n = m.atoms.len();
            let prio: Vec<usize> = (0..n).map(|i| ((i as u64 + 1).wrapping_mul(seed | 1) >> 7) as usize % 1000 * n + i).collect();
            let other = mol(&write_smiles(&m, &WriteOptions { root: Some(seed as usize % n), priorities: Some(prio) }));
            let sorted = |mm: &Molecule| {
                let (nodes, _, feats) = encode_graph(mm);
                let mut nodes: Vec<Vec<u64>> = nodes.iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
                let mut feats: Vec<Vec<u64>> = feats.iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
                nodes.sort();
                feats.sort();
                (nodes, feats)
            };
            prop_assert_eq!(sorted(&m), sorted(&other));
        }
    }
}
