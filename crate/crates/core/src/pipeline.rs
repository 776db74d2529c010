//! From raw dataset rows to standardized samples of one split.
//!
//! Ingestion parses every SMILES, harmonizes units and collapses replicates
//! into per-molecule [`GraphRecord`]s. [`prepare`] then fits winsor bounds,
//! target scalers, node scalers and the PNA degree constant on the training
//! fold only and materializes all three folds.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{materialize, standardize_targets, FeatureError, GraphRecord, MolGraph, NodeScaler, OpLabel, OpMode, SampleOptions, TargetScalers, VpPoint};
use crate::fingerprint::{ecfp, Fingerprint};
use crate::gnn::{pna_delta, GnnError};
use crate::preprocess::{
    aggregate_duplicates, harmonize_op, harmonize_vp, median, winsorize, Constants, Endpoint, PreprocessError, PreprocessManifest,
    RawRecord, ScaleKind, WinsorBounds,
};
use crate::scaffold::{murcko_scaffold, Fold, FoldAssignment};
use crate::smiles::{parse_smiles, Molecule};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error("molecule {0} has no fold in the split")]
    MissingSplit(String),
    #[error("preprocessing fit on molecule {key} from the {fold} fold")]
    Leakage { key: String, fold: Fold },
    #[error("training fold is empty")]
    EmptyTrain,
}

/// Temperatures closer than this (K) count as the same condition when
/// collapsing VP replicates.
const TEMPERATURE_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub molecules: usize,
    pub units_seen: BTreeMap<String, usize>,
    /// Replicate groups collapsed into one label.
    pub merged_groups: usize,
}

/// Parse, harmonize and aggregate dataset rows into one record per
/// canonical molecule, sorted by key. VP replicates at the same temperature
/// and OP replicates per medium collapse to their log-space median. A single
/// OP row that already carries `n_reports`/`iqr` keeps them.
pub fn ingest(rows: &[RawRecord]) -> Result<(Vec<GraphRecord>, IngestReport), PipelineError> {
    let mut parsed: HashMap<&str, usize> = HashMap::new();
    let mut molecules: Vec<Molecule> = Vec::new();
    let mut by_key: BTreeMap<String, usize> = BTreeMap::new();
    let mut report = IngestReport { rows: rows.len(), ..IngestReport::default() };
    // molecule -> temperature bucket -> values; molecule -> endpoint -> rows
    let mut vp: Vec<BTreeMap<i64, (f64, Vec<f64>)>> = Vec::new();
    let mut op: Vec<BTreeMap<Endpoint, Vec<(f64, &RawRecord)>>> = Vec::new();
    let mut row_mol = Vec::with_capacity(rows.len());

    for (i, r) in rows.iter().enumerate() {
        let m = match parsed.get(r.smiles.as_str()) {
            Some(&m) => m,
            None => {
                let mol = parse_smiles(&r.smiles).map_err(|source| PreprocessError::Smiles { line: i + 2, source })?;
                let m = *by_key.entry(mol.canonical_key.clone()).or_insert_with(|| {
                    molecules.push(mol);
                    vp.push(BTreeMap::new());
                    op.push(BTreeMap::new());
                    molecules.len() - 1
                });
                parsed.insert(&r.smiles, m);
                m
            }
        };
        row_mol.push(m);
        *report.units_seen.entry(r.unit.trim().to_string()).or_default() += 1;
    }

    for (r, &m) in rows.iter().zip(&row_mol) {
        match r.endpoint {
            Endpoint::Vp => {
                let t = r.temperature_k.ok_or(PreprocessError::MissingTemperature)?;
                let y = harmonize_vp(r.value, &r.unit)?;
                let bucket = (t / TEMPERATURE_RESOLUTION).round() as i64;
                vp[m].entry(bucket).or_insert_with(|| (t, Vec::new())).1.push(y);
            }
            Endpoint::Oa | Endpoint::Ow => {
                let y = harmonize_op(r.value, &r.unit, r.medium, molecules[m].molar_mass())?;
                op[m].entry(r.endpoint).or_default().push((y, r));
            }
        }
    }

    let mut out = Vec::with_capacity(by_key.len());
    for &m in by_key.values() {
        let mut rec = GraphRecord::from_molecule(&molecules[m]);
        for (t, values) in vp[m].values() {
            report.merged_groups += (values.len() > 1) as usize;
            rec.vp.push(VpPoint { temperature_k: *t, value: aggregate_duplicates(values).value });
        }
        for (&endpoint, entries) in &op[m] {
            let values: Vec<f64> = entries.iter().map(|e| e.0).collect();
            let agg = aggregate_duplicates(&values);
            let sigmas: Vec<f64> = entries.iter().filter_map(|e| e.1.sigma).collect();
            let label = match entries.as_slice() {
                [(y, r)] => OpLabel { value: *y, n: r.n_reports.unwrap_or(1), iqr: r.iqr.unwrap_or(0.0), sigma: r.sigma },
                _ => {
                    report.merged_groups += 1;
                    OpLabel { value: agg.value, n: agg.n, iqr: agg.iqr, sigma: (!sigmas.is_empty()).then(|| median(&sigmas)) }
                }
            };
            match endpoint {
                Endpoint::Oa => rec.oa = Some(label),
                Endpoint::Ow => rec.ow = Some(label),
                Endpoint::Vp => unreachable!(),
            }
        }
        out.push(rec);
    }
    report.molecules = out.len();
    Ok((out, report))
}

/// Murcko scaffold of every record, re-derived from its canonical key.
pub fn scaffolds(records: &[GraphRecord]) -> Result<Vec<String>, PipelineError> {
    records
        .iter()
        .map(|r| {
            let mol = parse_smiles(&r.key).map_err(|source| PreprocessError::Smiles { line: 0, source })?;
            Ok(murcko_scaffold(&mol))
        })
        .collect()
}

/// ECFP bit vectors of every record.
pub fn fingerprints(records: &[GraphRecord], radius: usize, nbits: usize) -> Result<Vec<Fingerprint>, PipelineError> {
    records
        .iter()
        .map(|r| {
            let mol = parse_smiles(&r.key).map_err(|source| PreprocessError::Smiles { line: 0, source })?;
            Ok(ecfp(&mol, radius, nbits))
        })
        .collect()
}

/// Record indices per fold, in record order.
pub fn fold_ids(records: &[GraphRecord], fold: &FoldAssignment) -> Result<[Vec<usize>; 3], PipelineError> {
    let mut ids: [Vec<usize>; 3] = Default::default();
    for (i, r) in records.iter().enumerate() {
        let f = fold.get(&r.key).ok_or_else(|| PipelineError::MissingSplit(r.key.clone()))?;
        ids[f.index()].push(i);
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub scale: ScaleKind,
    /// Winsorization level for OP targets; `None` disables it.
    pub winsor_alpha: Option<f64>,
    /// Also winsorize VP (sensitivity runs only).
    pub winsor_vp: bool,
    pub op_mode: OpMode,
    pub uncertainty_alpha: Option<f64>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig { scale: ScaleKind::MeanStd, winsor_alpha: None, winsor_vp: false, op_mode: OpMode::PerMedium, uncertainty_alpha: None }
    }
}

/// Train-fold statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub winsor: BTreeMap<Endpoint, WinsorBounds>,
    pub targets: TargetScalers,
    pub nodes: NodeScaler,
    pub delta: f64,
}

/// Fit every preprocessing statistic on `train_ids`. Each id must belong to
/// the training fold; anything else is rejected as leakage. Returns the
/// fitted statistics and the records with training labels winsorized.
pub fn fit_train_only(
    records: &[GraphRecord],
    train_ids: &[usize],
    fold: &FoldAssignment,
    cfg: &PrepConfig,
) -> Result<(Fitted, Vec<GraphRecord>), PipelineError> {
    if train_ids.is_empty() {
        return Err(PipelineError::EmptyTrain);
    }
    for &i in train_ids {
        let key = &records[i].key;
        match fold.get(key) {
            Some(Fold::Train) => {}
            Some(f) => return Err(PipelineError::Leakage { key: key.clone(), fold: f }),
            None => return Err(PipelineError::MissingSplit(key.clone())),
        }
    }
    let mut clipped = records.to_vec();
    let mut bounds = BTreeMap::new();
    if let Some(alpha) = cfg.winsor_alpha {
        for endpoint in [Endpoint::Oa, Endpoint::Ow] {
            let have: Vec<usize> = train_ids.iter().copied().filter(|&i| records[i].op(endpoint).is_some()).collect();
            if have.is_empty() {
                continue;
            }
            let values: Vec<f64> = have.iter().map(|&i| records[i].op(endpoint).unwrap().value).collect();
            let (b, new) = winsorize(&values, alpha)?;
            for (&i, y) in have.iter().zip(new) {
                let slot = if endpoint == Endpoint::Oa { &mut clipped[i].oa } else { &mut clipped[i].ow };
                slot.as_mut().unwrap().value = y;
            }
            bounds.insert(endpoint, b);
        }
        if cfg.winsor_vp {
            let values: Vec<f64> = train_ids.iter().flat_map(|&i| records[i].vp.iter().map(|p| p.value)).collect();
            let (b, _) = winsorize(&values, alpha)?;
            for &i in train_ids {
                for p in &mut clipped[i].vp {
                    p.value = b.clip(p.value);
                }
            }
            bounds.insert(Endpoint::Vp, b);
        }
    }
    let targets = standardize_targets(&clipped, train_ids, cfg.scale)?;
    let nodes = NodeScaler::fit(train_ids.iter().flat_map(|&i| clipped[i].node_feats.iter()));
    let graphs: Vec<crate::features::GraphData> = train_ids
        .iter()
        .map(|&i| crate::features::GraphData {
            key: String::new(),
            node_feats: clipped[i].node_feats.clone(),
            edge_index: clipped[i].edge_index.clone(),
            edge_feats: Vec::new(),
        })
        .collect();
    let delta = pna_delta(graphs.iter())?;
    Ok((Fitted { winsor: bounds, targets, nodes, delta }, clipped))
}

/// Standardized samples of all three folds plus everything needed to
/// reproduce them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ids: [Vec<usize>; 3],
    pub samples: [Vec<MolGraph>; 3],
    pub fitted: Fitted,
    pub manifest: PreprocessManifest,
}

impl Prepared {
    pub fn fold(&self, f: Fold) -> &[MolGraph] {
        &self.samples[f.index()]
    }
}

pub fn prepare(
    records: &[GraphRecord],
    fold: &FoldAssignment,
    cfg: &PrepConfig,
    units_seen: BTreeMap<String, usize>,
) -> Result<Prepared, PipelineError> {
    let ids = fold_ids(records, fold)?;
    let (fitted, clipped) = fit_train_only(records, &ids[0], fold, cfg)?;
    let opts = SampleOptions { op_mode: cfg.op_mode, uncertainty_alpha: cfg.uncertainty_alpha };
    let samples = [
        materialize(&clipped, &ids[0], &fitted.nodes, &fitted.targets, opts),
        materialize(records, &ids[1], &fitted.nodes, &fitted.targets, opts),
        materialize(records, &ids[2], &fitted.nodes, &fitted.targets, opts),
    ];
    let mut target_scalers = BTreeMap::new();
    target_scalers.insert(Endpoint::Vp, fitted.targets.vp);
    for (e, s) in [(Endpoint::Oa, fitted.targets.oa), (Endpoint::Ow, fitted.targets.ow)] {
        if let Some(s) = s {
            target_scalers.insert(e, s);
        }
    }
    let manifest = PreprocessManifest {
        version: MANIFEST_VERSION,
        units_seen,
        constants: Constants::default(),
        winsor_alpha: cfg.winsor_alpha,
        winsor: fitted.winsor.clone(),
        target_scalers,
        temperature_scaler: fitted.targets.temperature,
        node_scalers: fitted.nodes.scalers.clone(),
        uncertainty_alpha: cfg.uncertainty_alpha,
    };
    Ok(Prepared { ids, samples, fitted, manifest })
}
