//! Command-line workflow: synth → featurize → split → train → eval → detect,
//! plus diag. Every command writes a manifest recording its configuration,
//! input and output hashes, seed and tool version.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{read_compounds, rank_detectability, write_ranking, Compound, DetectError, Scenario};
use crate::eval::{
    binned_mse, export_parity, mean_std, task_metrics, EvalError, MetricsReport, ParityRow, BOOTSTRAP_REPLICATES,
};
use crate::features::{read_store, write_store, FeatureError, GraphRecord, MolGraph};
use crate::fingerprint::{max_similarity_to_train, sim_bin, similarity_report, Fingerprint};
use crate::gnn::{degree_histogram, GnnError, Model, ModelConfig};
use crate::pipeline::{fingerprints, fold_ids, ingest, prepare, scaffolds, PipelineError, PrepConfig, Prepared};
use crate::preprocess::{read_records, write_records, Medium, PreprocessError, PreprocessManifest};
use crate::safemt::{predict_samples, train_seeds, write_curves, LossKind, OptimConfig, ScheduleConfig, TrainConfig, TrainData, TrainError};
use crate::scaffold::{capacity_split, freeze_split, group_by_scaffold, load_split_for, verify_no_leakage, Fold, SplitError};
use crate::synthdata::{generate, SynthConfig};

pub const DEFAULTS_TOML: &str = include_str!("../defaults.toml");

/// Reference temperature for exported VP predictions.
pub const REFERENCE_T: f64 = 298.15;

/// Configuration error; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Everything `train` needs besides data and seed; the TOML layout of
/// `defaults.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prep: PrepConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub optim: OptimConfig,
    pub loss_vp: LossKind,
    pub loss_op: LossKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            prep: PrepConfig::default(),
            model: t.model,
            schedule: t.schedule,
            optim: t.optim,
            loss_vp: t.loss_vp,
            loss_op: t.loss_op,
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            schedule: self.schedule.clone(),
            optim: self.optim.clone(),
            loss_vp: self.loss_vp,
            loss_op: self.loss_op,
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<RunConfig> {
        let cfg: RunConfig = match toml::from_str(text) {
            Ok(c) => c,
            Err(e) => return usage(format!("config: {e}")),
        };
        if let Err(e) = cfg.model.validate() {
            return usage(format!("config: {e}"));
        }
        if let Err(e) = cfg.schedule.validate() {
            return usage(format!("config: {e}"));
        }
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "odorgraph", version, about = "Vapor-pressure and odor-threshold modeling on molecular graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with planted targets.
    Synth(SynthArgs),
    /// Parse, harmonize and aggregate a dataset CSV into a graph store.
    Featurize(FeaturizeArgs),
    /// Scaffold split of a graph store, frozen to CSV.
    Split(SplitArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Metrics, parity and similarity-bin exports for a training run.
    Eval(EvalArgs),
    /// Rank compounds by C_air / C50 for a scenario.
    Detect(DetectArgs),
    /// Split and similarity diagnostics.
    Diag(DiagArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// TOML overriding generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the planted ground truth as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratio: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds, trained in parallel into `out/seed-N`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory, or a directory of `seed-N` runs.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub fold: String,
    #[arg(long, default_value_t = BOOTSTRAP_REPLICATES)]
    pub bootstrap: usize,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DiagArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, FileRef>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn manifest(command: &str, seed: Option<u64>, config: &impl Serialize, inputs: &[(&str, &Path)]) -> anyhow::Result<RunManifest> {
    let config = serde_json::to_value(config)?;
    let mut ins = BTreeMap::new();
    for (name, p) in inputs {
        ins.insert(name.to_string(), FileRef { path: p.to_path_buf(), sha256: sha256_file(p)? });
    }
    Ok(RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed,
        config_sha256: hex::encode(Sha256::digest(serde_json::to_vec(&config)?)),
        config,
        inputs: ins,
        outputs: BTreeMap::new(),
    })
}

/// Hash the outputs and write the manifest to `path`.
fn finish(mut m: RunManifest, outputs: &[(&str, &Path)], path: &Path) -> anyhow::Result<()> {
    for (name, p) in outputs {
        m.outputs.insert(name.to_string(), sha256_file(p)?);
    }
    fs::write(path, serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = match fs::read_to_string(p) {
                Ok(t) => t,
                Err(e) => return usage(format!("config {}: {e}", p.display())),
            };
            toml::from_str(&text).or_else(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let cfg: SynthConfig = read_config(a.config.as_deref())?;
    if a.n < 50 {
        return usage(format!("--n must be at least 50, got {}", a.n));
    }
    let corpus = generate(a.seed, a.n, &cfg);
    write_records(&a.out, &corpus.records)?;
    let mut outs = vec![("dataset", a.out.as_path())];
    if let Some(t) = &a.truth {
        write_json(t, &corpus.truth)?;
        outs.push(("truth", t.as_path()));
    }
    let m = manifest("synth", Some(a.seed), &(&cfg, a.n), &[])?;
    finish(m, &outs, &sidecar(&a.out, ".manifest.json"))
}

pub fn cmd_featurize(a: &FeaturizeArgs) -> anyhow::Result<()> {
    let rows = read_records(&a.input)?;
    let (records, report) = ingest(&rows)?;
    write_store(&a.out, &records)?;
    let report_path = sidecar(&a.out, ".report.json");
    write_json(&report_path, &report)?;
    log::info!("{} rows -> {} molecules", report.rows, report.molecules);
    let m = manifest("featurize", None, &(), &[("dataset", &a.input)])?;
    finish(m, &[("graphs", &a.out), ("report", &report_path)], &sidecar(&a.out, ".manifest.json"))
}

fn parse_ratio(s: &str) -> anyhow::Result<[f64; 3]> {
    let parts: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match parts.ok().and_then(|p| <[f64; 3]>::try_from(p).ok()) {
        Some(r) => Ok(r),
        None => usage(format!("--ratio expects three comma-separated numbers, got {s:?}")),
    }
}

fn scaffold_groups(records: &[GraphRecord]) -> anyhow::Result<Vec<crate::scaffold::Scaffold>> {
    let scafs = scaffolds(records)?;
    Ok(group_by_scaffold(records.iter().zip(&scafs).map(|(r, s)| (r.key.as_str(), s.as_str()))))
}

pub fn cmd_split(a: &SplitArgs) -> anyhow::Result<()> {
    let ratio = parse_ratio(&a.ratio)?;
    let records = read_store(&a.graphs)?;
    let groups = scaffold_groups(&records)?;
    let fold = match capacity_split(&groups, ratio, a.seed) {
        Err(SplitError::BadRatio(r)) => return usage(format!("bad ratio {r:?}")),
        other => other?,
    };
    freeze_split(&fold, &a.out)?;
    let diag_path = sidecar(&a.out, ".diagnostics.json");
    write_json(&diag_path, &fold.diagnostics)?;
    let m = manifest("split", Some(a.seed), &ratio, &[("graphs", &a.graphs)])?;
    finish(m, &[("split", &a.out), ("diagnostics", &diag_path)], &sidecar(&a.out, ".manifest.json"))
}

/// Graph store and frozen split, both checked; a missing split file is a
/// usage error.
fn load_inputs(graphs: &Path, split: &Path) -> anyhow::Result<(Vec<GraphRecord>, crate::scaffold::FoldAssignment)> {
    if !split.exists() {
        return Err(TrainError::MissingSplit(split.display().to_string()).into());
    }
    let records = read_store(graphs)?;
    let fold = load_split_for(split, records.iter().map(|r| r.key.as_str()))?;
    Ok((records, fold))
}

fn dense_fps(records: &[GraphRecord], cfg: &ModelConfig) -> anyhow::Result<Option<Vec<Vec<f64>>>> {
    if !cfg.fp_concat {
        return Ok(None);
    }
    Ok(Some(fingerprints(records, cfg.fp_radius, cfg.fp_bits)?.iter().map(Fingerprint::to_dense).collect()))
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = match &a.config {
        None => RunConfig::default(),
        Some(p) => match fs::read_to_string(p) {
            Ok(t) => RunConfig::from_toml(&t)?,
            Err(e) => return usage(format!("config {}: {e}", p.display())),
        },
    };
    let (records, fold) = load_inputs(&a.graphs, &a.split)?;
    let prepared = prepare(&records, &fold, &cfg.prep, BTreeMap::new())?;
    let fps = dense_fps(&records, &cfg.model)?;
    let tc = cfg.train_config();
    let data = TrainData {
        train: prepared.fold(Fold::Train),
        val: prepared.fold(Fold::Val),
        fingerprints: fps.as_deref(),
        delta: prepared.fitted.delta,
    };
    let (seeds, nested) = match (&a.seeds, a.seed) {
        (Some(s), _) if !s.is_empty() => (s.clone(), true),
        (_, s) => (vec![s.unwrap_or(0)], false),
    };
    let results = train_seeds(&data, &tc, &seeds);
    fs::create_dir_all(&a.out)?;
    for (seed, res) in seeds.iter().zip(results) {
        let out = res.with_context(|| format!("seed {seed}"))?;
        let dir = if nested { a.out.join(format!("seed-{seed}")) } else { a.out.clone() };
        fs::create_dir_all(&dir)?;
        let mut outputs: Vec<(String, PathBuf)> = Vec::new();
        let mut save = |name: &str, value: &str| -> anyhow::Result<()> {
            let p = dir.join(name);
            fs::write(&p, value)?;
            outputs.push((name.to_string(), p));
            Ok(())
        };
        save("preprocess.json", &serde_json::to_string_pretty(&prepared.manifest)?)?;
        save("config.toml", &toml::to_string(&cfg)?)?;
        save("checkpoint_final.json", &out.final_model.to_checkpoint(out.curves.len()).to_json())?;
        if let Some(b) = &out.best_vp {
            save("checkpoint_vp.json", &b.model.to_checkpoint(b.epoch).to_json())?;
        }
        if let Some(b) = &out.best_op {
            save("checkpoint_op.json", &b.model.to_checkpoint(b.epoch).to_json())?;
        }
        let summary = serde_json::json!({
            "seed": seed,
            "epochs": out.curves.len(),
            "stop": out.stop,
            "best_vp": out.best_vp.as_ref().map(|b| (b.epoch, b.metric)),
            "best_op": out.best_op.as_ref().map(|b| (b.epoch, b.metric)),
            "param_hashes": out.curves.iter().map(|c| c.param_hash.clone()).collect::<Vec<_>>(),
        });
        save("metrics.json", &serde_json::to_string_pretty(&summary)?)?;
        let curves = dir.join("curves.csv");
        write_curves(&curves, &out.curves)?;
        outputs.push(("curves.csv".into(), curves));
        let m = manifest("train", Some(*seed), &cfg, &[("graphs", &a.graphs), ("split", &a.split)])?;
        let outs: Vec<(&str, &Path)> = outputs.iter().map(|(n, p)| (n.as_str(), p.as_path())).collect();
        finish(m, &outs, &dir.join("manifest.json"))?;
    }
    Ok(())
}

/// A trained run reloaded from its directory.
pub struct LoadedRun {
    pub config: RunConfig,
    pub seed: u64,
    pub records: Vec<GraphRecord>,
    pub prepared: Prepared,
    pub fold: crate::scaffold::FoldAssignment,
    pub vp_model: Option<Model>,
    pub op_model: Option<Model>,
}

pub fn load_run(dir: &Path) -> anyhow::Result<LoadedRun> {
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).context("run manifest")?)?;
    let config = RunConfig::from_toml(&fs::read_to_string(dir.join("config.toml"))?)?;
    let path = |k: &str| -> anyhow::Result<&FileRef> { m.inputs.get(k).with_context(|| format!("manifest lacks input {k}")) };
    let (g, s) = (path("graphs")?, path("split")?);
    for f in [g, s] {
        if sha256_file(&f.path)? != f.sha256 {
            bail!("{} changed since training", f.path.display());
        }
    }
    let (records, fold) = load_inputs(&g.path, &s.path)?;
    let prepared = prepare(&records, &fold, &config.prep, BTreeMap::new())?;
    let saved: PreprocessManifest = serde_json::from_str(&fs::read_to_string(dir.join("preprocess.json"))?)?;
    if saved != prepared.manifest {
        bail!("preprocessing does not reproduce the saved manifest");
    }
    let load = |name: &str| -> anyhow::Result<Option<Model>> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let ck = crate::autodiff::Checkpoint::from_json(&fs::read_to_string(p)?).map_err(GnnError::from)?;
        Ok(Some(Model::from_checkpoint(config.model.clone(), &ck)?))
    };
    let final_model = load("checkpoint_final.json")?;
    let vp_model = if config.model.heads.vp { load("checkpoint_vp.json")?.or_else(|| final_model.clone()) } else { None };
    let op_model = if config.model.heads.any_op() { load("checkpoint_op.json")?.or_else(|| final_model.clone()) } else { None };
    Ok(LoadedRun { config, seed: m.seed.unwrap_or(0), records, prepared, fold, vp_model, op_model })
}

/// Metrics, parity rows and per-row similarity of one run on `fold`.
pub struct Evaluation {
    pub report: MetricsReport,
    pub parity: Vec<ParityRow>,
    pub compounds: Vec<Compound>,
}

pub fn evaluate_run(run: &LoadedRun, fold: Fold, bootstrap: usize) -> anyhow::Result<Evaluation> {
    let fps = dense_fps(&run.records, &run.config.model)?;
    let ecfp = fingerprints(&run.records, crate::fingerprint::DEFAULT_RADIUS, crate::fingerprint::DEFAULT_NBITS)?;
    let ids = fold_ids(&run.records, &run.fold)?;
    let train_fps: Vec<&Fingerprint> = ids[0].iter().map(|&i| &ecfp[i]).collect();
    let mut max_sim = BTreeMap::new();
    for f in [Fold::Val, Fold::Test] {
        for &i in &ids[f.index()] {
            max_sim.insert(i, max_similarity_to_train(&ecfp[i], &train_fps)?);
        }
    }
    let samples: &[MolGraph] = run.prepared.fold(fold);
    let targets = &run.prepared.fitted.targets;
    let chunk = run.config.optim.eval_batch;
    let mut report = MetricsReport {
        seed: run.seed,
        split: format!("seed={} ratio={:?}", run.fold.seed, run.fold.target_ratio),
        vp: None,
        oa: None,
        ow: None,
        op: None,
        vp_pa: None,
        vp_bins: Vec::new(),
    };
    let mut parity = Vec::new();
    if let Some(model) = &run.vp_model {
        for f in [Fold::Val, Fold::Test] {
            let s = run.prepared.fold(f);
            let p = predict_samples(model, s, fps.as_deref(), chunk)?.vp.context("VP head")?;
            for (x, y) in s.iter().zip(&p).filter(|(x, _)| x.m_vp > 0.0) {
                parity.push(ParityRow {
                    molecule_key: x.graph.key.clone(),
                    temperature: x.temperature_k,
                    y_true: x.y_vp,
                    y_pred: *y,
                    fold: f,
                    max_sim: max_sim.get(&x.molecule).copied().unwrap_or(1.0),
                });
            }
        }
        let rows: Vec<&ParityRow> = parity.iter().filter(|r| r.fold == fold).collect();
        if !rows.is_empty() {
            let pred: Vec<f64> = rows.iter().map(|r| r.y_pred).collect();
            let truth: Vec<f64> = rows.iter().map(|r| r.y_true).collect();
            let mol: Vec<usize> = samples.iter().filter(|x| x.m_vp > 0.0).map(|x| x.molecule).collect();
            report.vp = Some(task_metrics(&pred, &truth, &mol, bootstrap, run.seed)?);
            report.vp_pa = Some(crate::eval::back_transform_vp(&pred, &truth, &targets.vp)?);
            let res: Vec<f64> = rows.iter().map(|r| r.y_pred - r.y_true).collect();
            let sims: Vec<f64> = rows.iter().map(|r| r.max_sim).collect();
            report.vp_bins = binned_mse(&res, &sims)?;
        }
    }
    if let Some(model) = &run.op_model {
        let p = predict_samples(model, samples, fps.as_deref(), chunk)?;
        let mut pooled = (Vec::new(), Vec::new(), Vec::new());
        for (slot, preds, get) in [
            (&mut report.oa, p.oa.as_ref(), (|x: &MolGraph| (x.m_oa, x.y_oa)) as fn(&MolGraph) -> (f64, f64)),
            (&mut report.ow, p.ow.as_ref(), |x: &MolGraph| (x.m_ow, x.y_ow)),
        ] {
            let Some(preds) = preds else { continue };
            let (mut pr, mut tr, mut mo) = (Vec::new(), Vec::new(), Vec::new());
            for (x, y) in samples.iter().zip(preds) {
                let (m, t) = get(x);
                if m > 0.0 {
                    pr.push(*y);
                    tr.push(t);
                    mo.push(x.molecule);
                }
            }
            if !pr.is_empty() {
                *slot = Some(task_metrics(&pr, &tr, &mo, bootstrap, run.seed)?);
                pooled.0.extend(pr);
                pooled.1.extend(tr);
                pooled.2.extend(mo);
            }
        }
        if !pooled.0.is_empty() {
            report.op = Some(task_metrics(&pooled.0, &pooled.1, &pooled.2, bootstrap, run.seed)?);
        }
    }
    let compounds = export_compounds(run, fold, fps.as_deref())?;
    Ok(Evaluation { report, parity, compounds })
}

/// VP at [`REFERENCE_T`] and the air threshold of each molecule in `fold`,
/// in native units, for `detect`. Empty unless both heads exist.
fn export_compounds(run: &LoadedRun, fold: Fold, fps: Option<&[Vec<f64>]>) -> anyhow::Result<Vec<Compound>> {
    let (Some(vp_model), Some(op_model)) = (&run.vp_model, &run.op_model) else {
        return Ok(Vec::new());
    };
    let targets = &run.prepared.fitted.targets;
    let Some(oa_scaler) = targets.oa.as_ref() else {
        return Ok(Vec::new());
    };
    if !run.config.model.heads.oa {
        return Ok(Vec::new());
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut probes: Vec<MolGraph> = Vec::new();
    for s in run.prepared.fold(fold) {
        if seen.insert(s.molecule) {
            let mut p = s.clone();
            p.temperature_k = REFERENCE_T;
            p.t_std = targets.temperature.transform(REFERENCE_T);
            probes.push(p);
        }
    }
    let chunk = run.config.optim.eval_batch;
    let vp = predict_samples(vp_model, &probes, fps, chunk)?.vp.context("VP head")?;
    let oa = predict_samples(op_model, &probes, fps, chunk)?.oa.context("OA head")?;
    Ok(probes
        .iter()
        .zip(vp.iter().zip(&oa))
        .map(|(p, (v, o))| Compound {
            molecule_key: p.graph.key.clone(),
            log10_vp_pa: targets.vp.inverse(*v),
            log10_c50: oa_scaler.inverse(*o),
            medium: Medium::Air,
            molar_mass: run.records[p.molecule].molar_mass,
        })
        .collect())
}

fn write_eval(ev: &Evaluation, dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    fs::create_dir_all(dir)?;
    let mut outs = Vec::new();
    let parity = dir.join("parity.csv");
    export_parity(&ev.parity, &parity)?;
    outs.push(("parity.csv".to_string(), parity));
    let rvs = dir.join("residual_vs_sim.csv");
    let mut w = csv::Writer::from_path(&rvs)?;
    w.write_record(["molecule_key", "fold", "temperature", "residual", "max_sim", "bin"])?;
    for r in &ev.parity {
        w.write_record([
            r.molecule_key.clone(),
            r.fold.to_string(),
            r.temperature.to_string(),
            (r.y_pred - r.y_true).to_string(),
            r.max_sim.to_string(),
            crate::fingerprint::SIM_BIN_LABELS[sim_bin(r.max_sim)].to_string(),
        ])?;
    }
    w.flush()?;
    outs.push(("residual_vs_sim.csv".into(), rvs));
    let bins = dir.join("bins.csv");
    let mut w = csv::Writer::from_path(&bins)?;
    for b in &ev.report.vp_bins {
        w.serialize(b)?;
    }
    w.flush()?;
    outs.push(("bins.csv".into(), bins));
    if !ev.compounds.is_empty() {
        let p = dir.join("predictions.csv");
        crate::detect::write_compounds(&ev.compounds, &p)?;
        outs.push(("predictions.csv".into(), p));
    }
    Ok(outs)
}

#[derive(Debug, Serialize)]
struct SeedSummary {
    seeds: Vec<u64>,
    /// `(mean, sample std with n − 1)` per metric.
    metrics: BTreeMap<String, (f64, f64)>,
    runs: Vec<MetricsReport>,
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let Some(fold) = Fold::parse(&a.fold) else {
        return usage(format!("--fold must be train, val or test, got {:?}", a.fold));
    };
    let mut dirs: Vec<PathBuf> = Vec::new();
    if a.run.join("manifest.json").exists() {
        dirs.push(a.run.clone());
    } else {
        for entry in fs::read_dir(&a.run).with_context(|| format!("run directory {}", a.run.display()))? {
            let p = entry?.path();
            if p.join("manifest.json").exists() {
                dirs.push(p);
            }
        }
        dirs.sort();
        if dirs.is_empty() {
            return usage(format!("{} holds no training run", a.run.display()));
        }
    }
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reports = Vec::new();
    let mut outputs = Vec::new();
    for d in &dirs {
        let run = load_run(d)?;
        let ev = evaluate_run(&run, fold, a.bootstrap)?;
        let sub = if dirs.len() == 1 { out_dir.clone() } else { out_dir.join(d.file_name().unwrap_or_default()) };
        outputs.extend(write_eval(&ev, &sub)?);
        reports.push(ev.report);
    }
    if reports.len() == 1 {
        write_json(&a.out, &reports[0])?;
    } else {
        let mut metrics = BTreeMap::new();
        let mut add = |name: &str, vals: Vec<f64>| {
            if vals.len() == reports.len() {
                metrics.insert(name.to_string(), mean_std(&vals));
            }
        };
        add("vp_mse", reports.iter().filter_map(|r| r.vp.as_ref().map(|m| m.mse)).collect());
        add("vp_mae", reports.iter().filter_map(|r| r.vp.as_ref().map(|m| m.mae)).collect());
        add("vp_r2", reports.iter().filter_map(|r| r.vp.as_ref().and_then(|m| m.r2)).collect());
        add("op_mse", reports.iter().filter_map(|r| r.op.as_ref().map(|m| m.mse)).collect());
        add("op_mae", reports.iter().filter_map(|r| r.op.as_ref().map(|m| m.mae)).collect());
        let seeds = reports.iter().map(|r| r.seed).collect();
        write_json(&a.out, &SeedSummary { seeds, metrics, runs: reports })?;
    }
    let m = manifest("eval", None, &(&a.fold, a.bootstrap), &[])?;
    let mut outs: Vec<(&str, &Path)> = outputs.iter().map(|(n, p)| (n.as_str(), p.as_path())).collect();
    outs.push(("metrics", &a.out));
    finish(m, &outs, &sidecar(&a.out, ".manifest.json"))
}

pub fn cmd_detect(a: &DetectArgs) -> anyhow::Result<()> {
    let text = match fs::read_to_string(&a.scenario) {
        Ok(t) => t,
        Err(e) => return usage(format!("scenario {}: {e}", a.scenario.display())),
    };
    let scenario = match Scenario::from_toml(&text) {
        Ok(s) => s,
        Err(e) => return usage(format!("scenario: {e}")),
    };
    let compounds = read_compounds(&a.predictions)?;
    let ranked = rank_detectability(&compounds, &scenario)?;
    write_ranking(&ranked, &a.out)?;
    let m = manifest("detect", None, &scenario, &[("scenario", &a.scenario), ("predictions", &a.predictions)])?;
    finish(m, &[("ranking", &a.out)], &sidecar(&a.out, ".manifest.json"))
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    split: crate::scaffold::SplitDiagnostics,
    similarity: BTreeMap<String, crate::fingerprint::FoldSimilarity>,
    degree_histogram: Vec<usize>,
    /// Molecules per fold with VP / OA / OW labels.
    label_counts: BTreeMap<String, [usize; 3]>,
}

pub fn cmd_diag(a: &DiagArgs) -> anyhow::Result<()> {
    let (records, fold) = load_inputs(&a.graphs, &a.split)?;
    let groups = scaffold_groups(&records)?;
    let split = verify_no_leakage(&fold, &groups)?;
    let fps: BTreeMap<String, Fingerprint> = records
        .iter()
        .zip(fingerprints(&records, crate::fingerprint::DEFAULT_RADIUS, crate::fingerprint::DEFAULT_NBITS)?)
        .map(|(r, f)| (r.key.clone(), f))
        .collect();
    let sim = similarity_report(&fold, &fps)?;
    let ids = fold_ids(&records, &fold)?;
    let graphs: Vec<crate::features::GraphData> = ids[0]
        .iter()
        .map(|&i| crate::features::GraphData {
            key: String::new(),
            node_feats: records[i].node_feats.clone(),
            edge_index: records[i].edge_index.clone(),
            edge_feats: Vec::new(),
        })
        .collect();
    let mut label_counts = BTreeMap::new();
    for f in Fold::ALL {
        let rs = ids[f.index()].iter().map(|&i| &records[i]);
        let mut c = [0; 3];
        for r in rs {
            c[0] += !r.vp.is_empty() as usize;
            c[1] += r.oa.is_some() as usize;
            c[2] += r.ow.is_some() as usize;
        }
        label_counts.insert(f.to_string(), c);
    }
    let diag = Diagnostics { split, similarity: sim.folds.clone(), degree_histogram: degree_histogram(graphs.iter()), label_counts };
    fs::create_dir_all(&a.out)?;
    let json = a.out.join("diag.json");
    write_json(&json, &diag)?;
    let csv_path = a.out.join("similarity.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["molecule_key", "fold", "max_sim", "bin"])?;
    for (k, f, s, b) in &sim.rows {
        w.write_record([k.clone(), f.to_string(), s.to_string(), crate::fingerprint::SIM_BIN_LABELS[*b].to_string()])?;
    }
    w.flush()?;
    let m = manifest("diag", None, &(), &[("graphs", &a.graphs), ("split", &a.split)])?;
    finish(m, &[("diag", &json), ("similarity", &csv_path)], &a.out.join("manifest.json"))
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Featurize(a) => cmd_featurize(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Diag(a) => cmd_diag(a),
    }
}

/// Module that raised the error, for the structured message.
fn module_of(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        let name = if cause.is::<UsageError>() {
            "config"
        } else if cause.is::<PreprocessError>() {
            "preprocess"
        } else if cause.is::<PipelineError>() {
            "preprocess"
        } else if cause.is::<FeatureError>() {
            "features"
        } else if cause.is::<SplitError>() {
            "scaffold"
        } else if cause.is::<TrainError>() {
            "safemt"
        } else if cause.is::<GnnError>() {
            "gnn"
        } else if cause.is::<EvalError>() {
            "eval"
        } else if cause.is::<DetectError>() {
            "detect"
        } else {
            continue;
        };
        return name;
    }
    "io"
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.is::<UsageError>() || matches!(c.downcast_ref(), Some(TrainError::MissingSplit(_))))
}

/// Parse `args`, run the command and return the process exit status:
/// 0 success, 1 runtime error, 2 usage or configuration error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = if is_usage(&e) { 2 } else { 1 };
            eprintln!("error [{}]: {e:#}", module_of(&e));
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_file_matches_code() {
        assert_eq!(RunConfig::from_toml(DEFAULTS_TOML).unwrap(), RunConfig::default());
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        let e = RunConfig::from_toml("[model]\nhidden = 0\n").unwrap_err();
        assert!(e.is::<UsageError>());
        let e = RunConfig::from_toml("[modle]\n").unwrap_err();
        assert!(e.is::<UsageError>());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("0.8, 0.1,0.1").unwrap(), [0.8, 0.1, 0.1]);
        assert!(parse_ratio("0.8,0.2").unwrap_err().is::<UsageError>());
    }

    #[test]
    fn help_and_usage_exit_codes() {
        for sub in ["synth", "featurize", "split", "train", "eval", "detect", "diag"] {
            assert_eq!(main_with_args(["odorgraph", sub, "--help"]), 0, "{sub}");
        }
        assert_eq!(main_with_args(["odorgraph", "--help"]), 0);
        assert_eq!(main_with_args(["odorgraph", "frobnicate"]), 2);
        assert_eq!(main_with_args(["odorgraph", "split"]), 2);
    }
}
