//! GINE and PNA message passing, sum readout, late temperature fusion and
//! per-endpoint heads.
//!
//! Node states start as a linear embedding of the A20 rows. Each layer
//! computes an update `u` (GINE or PNA), then
//! `h ← dropout(h + relu(BN(u)))`. The pooled embedding is the per-graph sum
//! of final states, optionally concatenated with an ECFP bit vector. VP reads
//! `z = relu(W_f [h_pool; t̃] + b_f)`; OP heads read the pooled embedding
//! through a small hidden layer and never see the temperature channel.

use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, ParamStore, SegmentMode, Tape, Tensor, Var};
use crate::features::{MolGraph, EDGE_DIM, NODE_DIM};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mean log-degree of the training graphs is zero")]
    ZeroDelta,
    #[error("head {0} is not enabled in this model")]
    MissingHead(&'static str),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gine,
    Pna,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Max,
    Min,
    Std,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeScaler {
    Identity,
    Amplification,
    Attenuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heads {
    pub vp: bool,
    pub oa: bool,
    pub ow: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { vp: true, oa: true, ow: true };
    pub const VP: Heads = Heads { vp: true, oa: false, ow: false };
    pub const OP: Heads = Heads { vp: false, oa: true, ow: true };

    pub fn any_op(&self) -> bool {
        self.oa || self.ow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub n_layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub heads: Heads,
    pub fp_concat: bool,
    pub fp_bits: usize,
    pub fp_radius: usize,
    pub aggregators: Vec<Aggregator>,
    pub scalers: Vec<DegreeScaler>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::Pna,
            n_layers: 4,
            hidden: 128,
            dropout: 0.1,
            heads: Heads::ALL,
            fp_concat: false,
            fp_bits: 2048,
            fp_radius: 2,
            aggregators: vec![Aggregator::Mean, Aggregator::Max, Aggregator::Min, Aggregator::Std],
            scalers: vec![DegreeScaler::Identity, DegreeScaler::Amplification, DegreeScaler::Attenuation],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |m: &str| Err(GnnError::Config(m.into()));
        if !(self.heads.vp || self.heads.any_op()) {
            return bad("at least one head must be enabled");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.backbone == Backbone::Pna && (self.aggregators.is_empty() || self.scalers.is_empty()) {
            return bad("PNA needs at least one aggregator and one scaler");
        }
        if self.fp_concat && !self.fp_bits.is_power_of_two() {
            return bad("fp_bits must be a power of two");
        }
        Ok(())
    }

    /// Width of the PNA aggregated message `m_v`.
    pub fn pna_message_width(&self) -> usize {
        self.aggregators.len() * self.scalers.len() * self.hidden
    }

    /// Width of the pooled embedding the heads read.
    pub fn embedding_width(&self) -> usize {
        self.hidden + if self.fp_concat { self.fp_bits } else { 0 }
    }
}

/// `δ`: mean of `log(d + 1)` over every atom of the training graphs.
pub fn pna_delta<'a>(graphs: impl IntoIterator<Item = &'a crate::features::GraphData>) -> Result<f64, GnnError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for g in graphs {
        let mut deg = vec![0usize; g.node_feats.len()];
        for &(_, v) in &g.edge_index {
            deg[v] += 1;
        }
        sum += deg.iter().map(|&d| (d as f64 + 1.0).ln()).sum::<f64>();
        n += deg.len();
    }
    let delta = if n == 0 { 0.0 } else { sum / n as f64 };
    if delta > 0.0 {
        Ok(delta)
    } else {
        Err(GnnError::ZeroDelta)
    }
}

/// Counts of atoms per in-degree over the given graphs.
pub fn degree_histogram<'a>(graphs: impl IntoIterator<Item = &'a crate::features::GraphData>) -> Vec<usize> {
    let mut hist = Vec::new();
    for g in graphs {
        let mut deg = vec![0usize; g.node_feats.len()];
        for &(_, v) in &g.edge_index {
            deg[v] += 1;
        }
        for d in deg {
            if hist.len() <= d {
                hist.resize(d + 1, 0);
            }
            hist[d] += 1;
        }
    }
    hist
}

/// Disjoint union of the graphs behind a set of samples. Graphs shared by
/// several samples (temperature rows of one molecule) appear once.
#[derive(Debug, Clone)]
pub struct Batch {
    pub node_feats: Tensor,
    pub edge_feats: Tensor,
    pub edge_src: Rc<[usize]>,
    pub edge_dst: Rc<[usize]>,
    pub node_graph: Rc<[usize]>,
    pub in_degree: Vec<f64>,
    pub n_graphs: usize,
    /// Molecule index of each graph.
    pub graph_molecule: Vec<usize>,
    pub sample_graph: Rc<[usize]>,
    pub t_std: Tensor,
    /// `[n_graphs × fp_bits]` when the model concatenates fingerprints.
    pub fingerprints: Option<Tensor>,
    pub y_vp: Vec<f64>,
    pub y_oa: Vec<f64>,
    pub y_ow: Vec<f64>,
    pub m_vp: Vec<f64>,
    pub m_oa: Vec<f64>,
    pub m_ow: Vec<f64>,
    pub w_oa: Vec<f64>,
    pub w_ow: Vec<f64>,
}

impl Batch {
    /// `fingerprints`, when given, is indexed by molecule.
    pub fn new(samples: &[&MolGraph], fingerprints: Option<&[Vec<f64>]>) -> Batch {
        let mut graph_of: HashMap<usize, usize> = HashMap::new();
        let mut graphs: Vec<&MolGraph> = Vec::new();
        let mut sample_graph = Vec::with_capacity(samples.len());
        for s in samples {
            let g = *graph_of.entry(s.molecule).or_insert_with(|| {
                graphs.push(s);
                graphs.len() - 1
            });
            sample_graph.push(g);
        }
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let (mut src, mut dst, mut node_graph) = (Vec::new(), Vec::new(), Vec::new());
        for (gi, s) in graphs.iter().enumerate() {
            let offset = node_graph.len();
            for row in &s.graph.node_feats {
                nodes.extend_from_slice(row);
                node_graph.push(gi);
            }
            for (&(u, v), e) in s.graph.edge_index.iter().zip(&s.graph.edge_feats) {
                src.push(u + offset);
                dst.push(v + offset);
                edges.extend_from_slice(e);
            }
        }
        let n = node_graph.len();
        let mut in_degree = vec![0.0; n];
        for &v in &dst {
            in_degree[v] += 1.0;
        }
        let col = |f: fn(&MolGraph) -> f64| samples.iter().map(|s| f(s)).collect::<Vec<f64>>();
        let fps = fingerprints.map(|fp| {
            let rows: Vec<Vec<f64>> = graphs.iter().map(|s| fp[s.molecule].clone()).collect();
            Tensor::from_rows(&rows)
        });
        Batch {
            node_feats: Tensor::new(n, NODE_DIM, nodes),
            edge_feats: Tensor::new(src.len(), EDGE_DIM, edges),
            edge_src: src.into(),
            edge_dst: dst.into(),
            node_graph: node_graph.into(),
            in_degree,
            n_graphs: graphs.len(),
            graph_molecule: graphs.iter().map(|s| s.molecule).collect(),
            sample_graph: sample_graph.into(),
            t_std: Tensor::column(col(|s| s.t_std)),
            fingerprints: fps,
            y_vp: col(|s| s.y_vp),
            y_oa: col(|s| s.y_oa),
            y_ow: col(|s| s.y_ow),
            m_vp: col(|s| s.m_vp),
            m_oa: col(|s| s.m_oa),
            m_ow: col(|s| s.m_ow),
            w_oa: col(|s| s.w_oa),
            w_ow: col(|s| s.w_ow),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.sample_graph.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_graph.len()
    }
}

pub enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    /// `[n_graphs × embedding_width]`
    pub embedding: Var,
    /// Per-sample predictions `[n_samples × 1]`.
    pub vp: Option<Var>,
    pub oa: Option<Var>,
    pub ow: Option<Var>,
    /// Batch mean and biased variance per layer (train mode only).
    pub bn_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Plain per-sample predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub vp: Option<Vec<f64>>,
    pub oa: Option<Vec<f64>>,
    pub ow: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Running `(mean, var)` of each layer's batch norm.
    pub running: Vec<(Vec<f64>, Vec<f64>)>,
    /// PNA degree constant from the training split (1 for GINE).
    pub delta: f64,
}

fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    ChaCha8Rng::from_seed(digest.into())
}

fn uniform(seed: u64, name: &str, rows: usize, cols: usize, limit: f64) -> Tensor {
    let mut rng = init_rng(seed, name);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect())
}

/// Parameter name prefixes owned by the OP heads.
pub const OP_PREFIXES: [&str; 3] = ["op.", "head.oa.", "head.ow."];

impl Model {
    /// Fresh model. Every tensor draws from its own stream keyed by `(seed,
    /// name)`, so enabling or disabling a head leaves the others unchanged.
    pub fn new(config: ModelConfig, delta: f64, seed: u64) -> Result<Model, GnnError> {
        config.validate()?;
        if config.backbone == Backbone::Pna && delta <= 0.0 {
            return Err(GnnError::ZeroDelta);
        }
        let h = config.hidden;
        let mut p = ParamStore::new();
        let linear = |p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / fan_in as f64).sqrt();
            p.add(format!("{name}.w"), uniform(seed, name, fan_in, fan_out, limit));
            p.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        };
        linear(&mut p, "input", NODE_DIM, h);
        for k in 0..config.n_layers {
            let l = format!("layer{k}");
            match config.backbone {
                Backbone::Gine => {
                    p.add(format!("{l}.eps"), Tensor::scalar(0.0));
                    linear(&mut p, &format!("{l}.msg_h"), h, h);
                    linear(&mut p, &format!("{l}.msg_e"), EDGE_DIM, h);
                    linear(&mut p, &format!("{l}.mlp1"), h, h);
                }
                Backbone::Pna => {
                    linear(&mut p, &format!("{l}.msg_h"), h, h);
                    linear(&mut p, &format!("{l}.msg_e"), EDGE_DIM, h);
                    linear(&mut p, &format!("{l}.mlp1"), h + config.pna_message_width(), h);
                }
            }
            linear(&mut p, &format!("{l}.mlp2"), h, h);
            p.add(format!("{l}.bn.gamma"), Tensor::full(1, h, 1.0));
            p.add(format!("{l}.bn.beta"), Tensor::zeros(1, h));
        }
        let emb = config.embedding_width();
        if config.heads.vp {
            linear(&mut p, "fuse", emb + 1, h);
            linear(&mut p, "head.vp", h, 1);
        }
        if config.heads.any_op() {
            linear(&mut p, "op", emb, h);
        }
        if config.heads.oa {
            linear(&mut p, "head.oa", h, 1);
        }
        if config.heads.ow {
            linear(&mut p, "head.ow", h, 1);
        }
        let running = (0..config.n_layers).map(|_| (vec![0.0; h], vec![1.0; h])).collect();
        let delta = if config.backbone == Backbone::Pna { delta } else { 1.0 };
        Ok(Model { config, params: p, running, delta })
    }

    /// Whether a parameter belongs to an OP head (including its hidden layer).
    pub fn is_op_param(&self, id: usize) -> bool {
        let name = self.params.name(id);
        OP_PREFIXES.iter().any(|p| name.starts_with(p))
    }

    /// Parameters of the message-passing encoder.
    pub fn is_backbone_param(&self, id: usize) -> bool {
        let name = self.params.name(id);
        name.starts_with("input.") || name.starts_with("layer")
    }

    fn pid(&self, name: &str) -> usize {
        self.params.id(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    fn p(&self, t: &mut Tape, name: &str) -> Var {
        t.param(&self.params, self.pid(name))
    }

    fn linear(&self, t: &mut Tape, x: Var, name: &str) -> Result<Var, GnnError> {
        let w = self.p(t, &format!("{name}.w"));
        let b = self.p(t, &format!("{name}.b"));
        let y = t.matmul(x, w)?;
        Ok(t.add_row(y, b)?)
    }

    /// `relu(W_h h_u + W_e e_uv + b)` for every directed edge `u→v`.
    fn messages(&self, t: &mut Tape, h: Var, e: Var, batch: &Batch, l: &str) -> Result<Var, GnnError> {
        let wh = self.p(t, &format!("{l}.msg_h.w"));
        let hw = t.matmul(h, wh)?;
        let hu = t.gather(hw, batch.edge_src.clone())?;
        let ew = self.linear(t, e, &format!("{l}.msg_e"))?;
        let bh = self.p(t, &format!("{l}.msg_h.b"));
        let s = t.add(hu, ew)?;
        let s = t.add_row(s, bh)?;
        Ok(t.relu(s))
    }

    /// Pre-normalization update of one GINE layer:
    /// `MLP((1 + ε) h_v + Σ_u ψ(h_u, e_uv))`.
    pub fn gine_update(&self, t: &mut Tape, h: Var, e: Var, batch: &Batch, k: usize) -> Result<Var, GnnError> {
        let l = format!("layer{k}");
        let msg = self.messages(t, h, e, batch, &l)?;
        let agg = t.segment_reduce(msg, batch.edge_dst.clone(), batch.n_nodes(), SegmentMode::Sum)?;
        let eps = self.p(t, &format!("{l}.eps"));
        let eh = t.mul_scalar(h, eps)?;
        let self_term = t.add(h, eh)?;
        let x = t.add(self_term, agg)?;
        self.mlp(t, x, &l)
    }

    /// Pre-normalization update of one PNA layer: `MLP([h_v ; SCALE(AGG(φ))])`.
    pub fn pna_update(&self, t: &mut Tape, h: Var, e: Var, batch: &Batch, k: usize) -> Result<Var, GnnError> {
        let l = format!("layer{k}");
        let n = batch.n_nodes();
        let msg = self.messages(t, h, e, batch, &l)?;
        let seg = batch.edge_dst.clone();
        let mut aggs = Vec::new();
        for a in &self.config.aggregators {
            aggs.push(match a {
                Aggregator::Mean => t.segment_reduce(msg, seg.clone(), n, SegmentMode::Mean)?,
                Aggregator::Max => t.segment_reduce(msg, seg.clone(), n, SegmentMode::Max)?,
                Aggregator::Min => t.segment_reduce(msg, seg.clone(), n, SegmentMode::Min)?,
                Aggregator::Std => t.segment_std(msg, seg.clone(), n, STD_EPS)?,
            });
        }
        let agg = if aggs.len() == 1 { aggs[0] } else { t.concat(&aggs)? };
        let mut parts = vec![h];
        for s in &self.config.scalers {
            let f = match s {
                DegreeScaler::Identity => {
                    parts.push(agg);
                    continue;
                }
                DegreeScaler::Amplification => {
                    batch.in_degree.iter().map(|d| amplification(*d, self.delta)).collect()
                }
                DegreeScaler::Attenuation => batch.in_degree.iter().map(|d| attenuation(*d, self.delta)).collect(),
            };
            let col = t.leaf(Tensor::column(f));
            parts.push(t.mul_col(agg, col)?);
        }
        let x = t.concat(&parts)?;
        self.mlp(t, x, &l)
    }

    fn mlp(&self, t: &mut Tape, x: Var, l: &str) -> Result<Var, GnnError> {
        let y = self.linear(t, x, &format!("{l}.mlp1"))?;
        let y = t.relu(y);
        self.linear(t, y, &format!("{l}.mlp2"))
    }

    /// Run the encoder and every enabled head. `detach_op` cuts the OP heads
    /// off from the encoder at the pooled embedding.
    pub fn forward(&self, t: &mut Tape, batch: &Batch, mut mode: Mode, detach_op: bool) -> Result<Forward, GnnError> {
        let cfg = &self.config;
        if cfg.fp_concat != batch.fingerprints.is_some() {
            return Err(GnnError::ShapeMismatch("fingerprint input does not match fp_concat".into()));
        }
        if let Some(fp) = &batch.fingerprints {
            if fp.cols != cfg.fp_bits {
                return Err(GnnError::ShapeMismatch(format!("fingerprint width {} != {}", fp.cols, cfg.fp_bits)));
            }
        }
        let x = t.leaf(batch.node_feats.clone());
        let e = t.leaf(batch.edge_feats.clone());
        let mut h = self.linear(t, x, "input")?;
        let mut bn_stats = Vec::new();
        for k in 0..cfg.n_layers {
            let u = match cfg.backbone {
                Backbone::Gine => self.gine_update(t, h, e, batch, k)?,
                Backbone::Pna => self.pna_update(t, h, e, batch, k)?,
            };
            let gamma = self.p(t, &format!("layer{k}.bn.gamma"));
            let beta = self.p(t, &format!("layer{k}.bn.beta"));
            let normed = match &mode {
                Mode::Train { .. } => {
                    let (y, mean, var) = t.batch_norm(u, gamma, beta, BN_EPS)?;
                    bn_stats.push((mean, var));
                    y
                }
                Mode::Eval => {
                    let (rm, rv) = &self.running[k];
                    let shift = t.leaf(Tensor::new(1, rm.len(), rm.iter().map(|m| -m).collect()));
                    let inv = t.leaf(Tensor::new(1, rv.len(), rv.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect()));
                    let y = t.add_row(u, shift)?;
                    let y = t.mul_row(y, inv)?;
                    let y = t.mul_row(y, gamma)?;
                    t.add_row(y, beta)?
                }
            };
            let act = t.relu(normed);
            let res = t.add(h, act)?;
            h = match &mut mode {
                Mode::Train { rng } => t.dropout(res, cfg.dropout, rng),
                Mode::Eval => res,
            };
        }
        let pooled = t.segment_reduce(h, batch.node_graph.clone(), batch.n_graphs, SegmentMode::Sum)?;
        let embedding = match &batch.fingerprints {
            Some(fp) => {
                let f = t.leaf(fp.clone());
                t.concat(&[pooled, f])?
            }
            None => pooled,
        };
        let mut out = Forward { embedding, vp: None, oa: None, ow: None, bn_stats };
        if cfg.heads.vp {
            let per_sample = t.gather(embedding, batch.sample_graph.clone())?;
            let temp = t.leaf(batch.t_std.clone());
            let zin = t.concat(&[per_sample, temp])?;
            let z = self.linear(t, zin, "fuse")?;
            let z = t.relu(z);
            out.vp = Some(self.linear(t, z, "head.vp")?);
        }
        if cfg.heads.any_op() {
            let g = if detach_op { t.detach(embedding) } else { embedding };
            let o = self.linear(t, g, "op")?;
            let o = t.relu(o);
            if cfg.heads.oa {
                let y = self.linear(t, o, "head.oa")?;
                out.oa = Some(t.gather(y, batch.sample_graph.clone())?);
            }
            if cfg.heads.ow {
                let y = self.linear(t, o, "head.ow")?;
                out.ow = Some(t.gather(y, batch.sample_graph.clone())?);
            }
        }
        Ok(out)
    }

    /// Fold one training step's batch statistics into the running averages.
    pub fn update_running(&mut self, stats: &[(Vec<f64>, Vec<f64>)]) {
        for ((rm, rv), (m, v)) in self.running.iter_mut().zip(stats) {
            for i in 0..rm.len() {
                rm[i] = (1.0 - BN_MOMENTUM) * rm[i] + BN_MOMENTUM * m[i];
                rv[i] = (1.0 - BN_MOMENTUM) * rv[i] + BN_MOMENTUM * v[i];
            }
        }
    }

    /// Eval-mode predictions for every enabled head.
    pub fn predict(&self, batch: &Batch) -> Result<Predictions, GnnError> {
        let mut t = Tape::new();
        let f = self.forward(&mut t, batch, Mode::Eval, false)?;
        let read = |v: Option<Var>| v.map(|v| t.value(v).data.clone());
        Ok(Predictions { vp: read(f.vp), oa: read(f.oa), ow: read(f.ow) })
    }

    /// Predictions of one head, or `MissingHead`.
    pub fn predict_head(&self, batch: &Batch, head: crate::preprocess::Endpoint) -> Result<Vec<f64>, GnnError> {
        use crate::preprocess::Endpoint;
        let p = self.predict(batch)?;
        match head {
            Endpoint::Vp => p.vp.ok_or(GnnError::MissingHead("vp")),
            Endpoint::Oa => p.oa.ok_or(GnnError::MissingHead("oa")),
            Endpoint::Ow => p.ow.ok_or(GnnError::MissingHead("ow")),
        }
    }

    pub fn to_checkpoint(&self, epoch: usize) -> Checkpoint {
        let mut ck = Checkpoint::new(epoch, &self.params);
        for (k, (m, v)) in self.running.iter().enumerate() {
            ck.buffers.insert(format!("layer{k}.bn.running_mean"), Tensor::new(1, m.len(), m.clone()));
            ck.buffers.insert(format!("layer{k}.bn.running_var"), Tensor::new(1, v.len(), v.clone()));
        }
        ck.buffers.insert("pna.delta".into(), Tensor::scalar(self.delta));
        ck
    }

    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> Result<Model, GnnError> {
        let missing = |n: &str| GnnError::Autodiff(AutodiffError::Checkpoint(format!("missing buffer {n}")));
        let delta = ck.buffers.get("pna.delta").ok_or_else(|| missing("pna.delta"))?.item();
        let mut model = Model::new(config, if delta > 0.0 { delta } else { 1.0 }, 0)?;
        model.delta = delta;
        ck.load_into(&mut model.params)?;
        for k in 0..model.config.n_layers {
            let get = |s: &str| {
                let n = format!("layer{k}.bn.{s}");
                ck.buffers.get(&n).map(|t| t.data.clone()).ok_or_else(|| missing(&n))
            };
            model.running[k] = (get("running_mean")?, get("running_var")?);
        }
        Ok(model)
    }

    /// SHA-256 over parameter names and the bit patterns of their values.
    pub fn param_hash(&self) -> String {
        self.hash_where(|_| true)
    }

    /// Hash of every parameter the OP heads do not own.
    pub fn shared_hash(&self) -> String {
        self.hash_where(|i| !self.is_op_param(i))
    }

    fn hash_where(&self, keep: impl Fn(usize) -> bool) -> String {
        let mut h = Sha256::new();
        for (_, (name, t)) in self.params.iter().enumerate().filter(|&(i, _)| keep(i)) {
            h.update(name.as_bytes());
            for v in &t.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// `log(d + 1) / δ`
pub fn amplification(degree: f64, delta: f64) -> f64 {
    (degree + 1.0).ln() / delta
}

/// `δ / log(d + 1)`, with `d` floored at 1 so isolated atoms stay finite.
pub fn attenuation(degree: f64, delta: f64) -> f64 {
    delta / (degree.max(1.0) + 1.0).ln()
}
