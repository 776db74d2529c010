//! Losses and the safe multitask training loop.
//!
//! The total loss is `L = L_VP + λ_eff(e) · L_OP` with
//! `λ_eff(e) = λ · min(1, (e − e0)/E_warm)₊`. With `detach_op` the OP heads
//! read a stop-gradient copy of the pooled embedding, so OP gradients never
//! reach the encoder. VP and OP keep separate best-on-validation checkpoints
//! and separate patience counters.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{clip_global_norm, clip_norm_where, cosine_lr, Adam, Tape, Tensor, Var};
use crate::features::MolGraph;
use crate::gnn::{Batch, GnnError, Model, ModelConfig, Mode, Predictions};

pub use crate::autodiff::huber;

pub const MASK_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("no split available: {0}")]
    MissingSplit(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training samples carry a label for the enabled heads")]
    NoTrainingLabels,
    #[error("invalid schedule: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// Final auxiliary weight `λ`.
    pub lambda: f64,
    /// OP late-start epoch `e0`.
    pub e0: usize,
    /// Warm-up length `E_warm`; 0 switches to `λ` at `e0`.
    pub e_warm: usize,
    pub detach_op: bool,
    pub max_epochs: usize,
    pub patience_vp: usize,
    pub patience_op: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { lambda: 1e-3, e0: 30, e_warm: 90, detach_op: true, max_epochs: 300, patience_vp: 40, patience_op: 40 }
    }
}

impl ScheduleConfig {
    /// Single-task VP: no OP term at all.
    pub fn single_task() -> ScheduleConfig {
        ScheduleConfig { lambda: 0.0, ..ScheduleConfig::default() }
    }

    /// OP from the first epoch at full weight, sharing the encoder.
    pub fn naive_mt() -> ScheduleConfig {
        ScheduleConfig { lambda: 1.0, e0: 0, e_warm: 0, detach_op: false, ..ScheduleConfig::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// `λ · min(1, (e − e0)/E_warm)₊`; `E_warm = 0` steps straight to `λ` at `e0`.
pub fn lambda_eff(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    if epoch < cfg.e0 {
        return 0.0;
    }
    if cfg.e_warm == 0 {
        return cfg.lambda;
    }
    let ramp = (epoch - cfg.e0) as f64 / cfg.e_warm as f64;
    cfg.lambda * ramp.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LossKind {
    Mse,
    Huber { delta: f64 },
}

fn pointwise(r: f64, kind: LossKind) -> f64 {
    match kind {
        LossKind::Mse => r * r,
        LossKind::Huber { delta } => huber(r, delta),
    }
}

/// Mean pointwise loss over a batch.
pub fn loss_vp(pred: &[f64], y: &[f64], kind: LossKind) -> Result<f64, TrainError> {
    if pred.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    Ok(pred.iter().zip(y).map(|(p, t)| pointwise(p - t, kind)).sum::<f64>() / pred.len() as f64)
}

/// `Σ mᵢ wᵢ ℓᵢ / (Σ mᵢ + ε)`; unit weights when `w` is `None`.
pub fn loss_op_masked(pred: &[f64], y: &[f64], m: &[f64], w: Option<&[f64]>, kind: LossKind) -> f64 {
    let mut num = 0.0;
    for i in 0..pred.len() {
        num += m[i] * w.map_or(1.0, |w| w[i]) * pointwise(pred[i] - y[i], kind);
    }
    num / (m.iter().sum::<f64>() + MASK_EPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub eval_batch: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr_max: 1e-3, lr_min: 1e-5, batch_size: 64, clip_norm: 5.0, eval_batch: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub optim: OptimConfig,
    pub loss_vp: LossKind,
    pub loss_op: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            optim: OptimConfig::default(),
            loss_vp: LossKind::Mse,
            loss_op: LossKind::Mse,
        }
    }
}

/// Samples of one run. `fingerprints` is indexed by molecule and required
/// when the model concatenates fingerprints.
pub struct TrainData<'a> {
    pub train: &'a [MolGraph],
    pub val: &'a [MolGraph],
    pub fingerprints: Option<&'a [Vec<f64>]>,
    /// PNA degree constant from the training graphs.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_vp: Option<f64>,
    pub train_op: Option<f64>,
    pub val_vp: Option<f64>,
    pub val_op: Option<f64>,
    pub lambda_eff: f64,
    pub lr: f64,
    pub param_hash: String,
    /// Hash of the parameters outside the OP heads.
    pub shared_hash: String,
}

#[derive(Debug, Clone)]
pub struct TaskBest {
    pub epoch: usize,
    pub metric: f64,
    pub model: Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    PatienceExhausted,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: Model,
    pub best_vp: Option<TaskBest>,
    pub best_op: Option<TaskBest>,
    pub curves: Vec<EpochLog>,
    pub stop: StopReason,
    /// Epochs where a task checkpoint was replaced, with the new metric.
    pub checkpoint_events: Vec<(String, usize, f64)>,
}

/// Masked loss of one head as `(Σ mᵢwᵢℓᵢ, Σ mᵢ)` on the tape.
fn masked_sum(t: &mut Tape, pred: Var, y: &[f64], m: &[f64], w: Option<&[f64]>, kind: LossKind) -> Result<(Var, f64), GnnError> {
    let target = t.leaf(Tensor::column(y.to_vec()));
    let r = t.sub(pred, target)?;
    let per = match kind {
        LossKind::Mse => t.square(r),
        LossKind::Huber { delta } => t.huber(r, delta),
    };
    let weights: Vec<f64> = (0..m.len()).map(|i| m[i] * w.map_or(1.0, |w| w[i])).collect();
    let wl = t.leaf(Tensor::column(weights));
    let weighted = t.mul(per, wl)?;
    Ok((t.sum(weighted), m.iter().sum()))
}

/// VP and OP losses for one batch. VP is the mean over VP-labelled samples
/// (absent when there are none); OP is the ε-guarded masked mean over both
/// media.
pub struct BatchLosses {
    pub vp: Option<Var>,
    pub op: Option<Var>,
}

pub fn batch_losses(t: &mut Tape, out: &crate::gnn::Forward, batch: &Batch, cfg: &TrainConfig) -> Result<BatchLosses, GnnError> {
    let mut vp = None;
    if let Some(pred) = out.vp {
        let (num, n) = masked_sum(t, pred, &batch.y_vp, &batch.m_vp, None, cfg.loss_vp)?;
        if n > 0.0 {
            vp = Some(t.scale(num, 1.0 / n));
        }
    }
    let mut parts = Vec::new();
    let mut count = 0.0;
    if let Some(pred) = out.oa {
        let (num, n) = masked_sum(t, pred, &batch.y_oa, &batch.m_oa, Some(&batch.w_oa), cfg.loss_op)?;
        parts.push(num);
        count += n;
    }
    if let Some(pred) = out.ow {
        let (num, n) = masked_sum(t, pred, &batch.y_ow, &batch.m_ow, Some(&batch.w_ow), cfg.loss_op)?;
        parts.push(num);
        count += n;
    }
    let op = match parts.as_slice() {
        [] => None,
        _ if count == 0.0 => None,
        [one] => Some(t.scale(*one, 1.0 / (count + MASK_EPS))),
        [a, b] => {
            let s = t.add(*a, *b)?;
            Some(t.scale(s, 1.0 / (count + MASK_EPS)))
        }
        _ => unreachable!(),
    };
    Ok(BatchLosses { vp, op })
}

/// Eval-mode predictions for `samples`, in order.
pub fn predict_samples(model: &Model, samples: &[MolGraph], fps: Option<&[Vec<f64>]>, chunk: usize) -> Result<Predictions, GnnError> {
    let mut all = Predictions { vp: None, oa: None, ow: None };
    for part in samples.chunks(chunk.max(1)) {
        let refs: Vec<&MolGraph> = part.iter().collect();
        let p = model.predict(&Batch::new(&refs, fps))?;
        for (dst, src) in [(&mut all.vp, p.vp), (&mut all.oa, p.oa), (&mut all.ow, p.ow)] {
            if let Some(v) = src {
                dst.get_or_insert_with(Vec::new).extend(v);
            }
        }
    }
    Ok(all)
}

/// Plain masked MSE of VP and of OP (both media pooled) in standardized
/// space. `None` when no sample carries the label.
pub fn validation_mse(p: &Predictions, samples: &[MolGraph]) -> (Option<f64>, Option<f64>) {
    let mse = |pairs: Vec<(f64, f64)>| {
        if pairs.is_empty() {
            None
        } else {
            Some(pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pairs.len() as f64)
        }
    };
    let vp = p.vp.as_ref().and_then(|v| {
        mse(samples.iter().zip(v).filter(|(s, _)| s.m_vp > 0.0).map(|(s, &y)| (y, s.y_vp)).collect())
    });
    let mut op = Vec::new();
    if let Some(v) = &p.oa {
        op.extend(samples.iter().zip(v).filter(|(s, _)| s.m_oa > 0.0).map(|(s, &y)| (y, s.y_oa)));
    }
    if let Some(v) = &p.ow {
        op.extend(samples.iter().zip(v).filter(|(s, _)| s.m_ow > 0.0).map(|(s, &y)| (y, s.y_ow)));
    }
    (vp, mse(op))
}

fn has_op(s: &MolGraph) -> bool {
    s.m_oa > 0.0 || s.m_ow > 0.0
}

/// Train one model. VP-only, OP-only and multitask runs are selected by the
/// heads enabled in `cfg.model`; an OP-only run trains on OP-labelled
/// samples with `L = L_OP`.
pub fn train(data: &TrainData, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    cfg.schedule.validate()?;
    let heads = cfg.model.heads;
    let op_only = !heads.vp;
    let train: Vec<&MolGraph> = data.train.iter().filter(|s| !op_only || has_op(s)).collect();
    let labelled = train.iter().any(|s| (heads.vp && s.m_vp > 0.0) || (heads.any_op() && has_op(s)));
    if !labelled {
        return Err(TrainError::NoTrainingLabels);
    }
    let mut model = Model::new(cfg.model.clone(), data.delta, seed)?;
    let mut opt = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs = cfg.optim.batch_size.max(1);
    let per_epoch = train.len().div_ceil(bs);
    let total_steps = cfg.schedule.max_epochs * per_epoch;
    let val_has_vp = heads.vp && data.val.iter().any(|s| s.m_vp > 0.0);
    let val_has_op = heads.any_op() && data.val.iter().any(has_op);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let mut curves = Vec::new();
    let mut events = Vec::new();
    let (mut best_vp, mut best_op): (Option<TaskBest>, Option<TaskBest>) = (None, None);
    let (mut stale_vp, mut stale_op) = (0usize, 0usize);
    let mut stop = StopReason::MaxEpochs;

    for epoch in 0..cfg.schedule.max_epochs {
        let lam = if op_only { 1.0 } else { lambda_eff(epoch, &cfg.schedule) };
        let op_active = heads.any_op() && lam > 0.0;
        order.shuffle(&mut rng);
        let (mut sum_vp, mut n_vp, mut sum_op, mut n_op) = (0.0, 0usize, 0.0, 0usize);
        let mut lr = cfg.optim.lr_max;
        for chunk in order.chunks(bs) {
            let samples: Vec<&MolGraph> = chunk.iter().map(|&i| train[i]).collect();
            let batch = Batch::new(&samples, data.fingerprints);
            let mut t = Tape::new();
            let out = model.forward(&mut t, &batch, Mode::Train { rng: &mut rng }, cfg.schedule.detach_op)?;
            let losses = batch_losses(&mut t, &out, &batch, cfg)?;
            let vp_term = if op_only { None } else { losses.vp };
            let op_term = if op_active { losses.op } else { None };
            for (term, sum, n) in [(vp_term, &mut sum_vp, &mut n_vp), (op_term, &mut sum_op, &mut n_op)] {
                if let Some(v) = term {
                    let x = t.value(v).item();
                    if !x.is_finite() {
                        return Err(TrainError::DivergenceDetected { epoch });
                    }
                    *sum += x;
                    *n += 1;
                }
            }
            let total = match (vp_term, op_term) {
                (Some(v), None) => Some(v),
                (None, Some(o)) if op_only => Some(o),
                (None, Some(o)) => Some(t.scale(o, lam)),
                (Some(v), Some(o)) => {
                    let w = t.scale(o, lam);
                    Some(t.add(v, w).map_err(GnnError::from)?)
                }
                (None, None) => None,
            };
            lr = cosine_lr(step, total_steps, cfg.optim.lr_max, cfg.optim.lr_min);
            step += 1;
            model.update_running(&out.bn_stats);
            let Some(total) = total else {
                continue;
            };
            model.params.zero_grad();
            t.backward(total, &mut model.params).map_err(GnnError::from)?;
            if cfg.schedule.detach_op {
                // separate norms, so the auxiliary cannot rescale the shared update
                let op: Vec<bool> = (0..model.params.len()).map(|i| model.is_op_param(i)).collect();
                clip_norm_where(&mut model.params, cfg.optim.clip_norm, |i| op[i]);
                clip_norm_where(&mut model.params, cfg.optim.clip_norm, |i| !op[i]);
            } else {
                clip_global_norm(&mut model.params, cfg.optim.clip_norm);
            }
            opt.step(&mut model.params, lr);
        }

        let preds = predict_samples(&model, data.val, data.fingerprints, cfg.optim.eval_batch)?;
        let (val_vp, val_op) = validation_mse(&preds, data.val);
        for v in [val_vp, val_op].into_iter().flatten() {
            if !v.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch });
            }
        }
        if let Some(v) = val_vp {
            if best_vp.as_ref().is_none_or(|b| v < b.metric) {
                best_vp = Some(TaskBest { epoch, metric: v, model: model.clone() });
                events.push(("vp".to_string(), epoch, v));
                stale_vp = 0;
            } else {
                stale_vp += 1;
            }
        }
        if let (Some(v), true) = (val_op, op_active) {
            if best_op.as_ref().is_none_or(|b| v < b.metric) {
                best_op = Some(TaskBest { epoch, metric: v, model: model.clone() });
                events.push(("op".to_string(), epoch, v));
                stale_op = 0;
            } else {
                stale_op += 1;
            }
        }
        curves.push(EpochLog {
            epoch,
            train_vp: (n_vp > 0).then(|| sum_vp / n_vp as f64),
            train_op: (n_op > 0).then(|| sum_op / n_op as f64),
            val_vp,
            val_op: if op_active { val_op } else { None },
            lambda_eff: if op_only { 0.0 } else { lam },
            lr,
            param_hash: model.param_hash(),
            shared_hash: model.shared_hash(),
        });
        log::debug!("epoch {epoch}: val_vp={val_vp:?} val_op={val_op:?} lambda={lam}");

        let vp_done = !val_has_vp || stale_vp >= cfg.schedule.patience_vp;
        let op_never = !heads.any_op() || !val_has_op || (!op_only && cfg.schedule.lambda == 0.0);
        let op_done = op_never || (op_active && stale_op >= cfg.schedule.patience_op);
        if vp_done && op_done {
            stop = StopReason::PatienceExhausted;
            break;
        }
    }
    Ok(TrainOutcome { final_model: model, best_vp, best_op, curves, stop, checkpoint_events: events })
}

/// Run several seeds on scoped threads; results come back in seed order.
pub fn train_seeds(data: &TrainData, cfg: &TrainConfig, seeds: &[u64]) -> Vec<Result<TrainOutcome, TrainError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || train(data, cfg, s))).collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    })
}

pub const CURVES_HEADER: &str = "epoch,train_loss_vp,train_loss_op,val_loss_vp,val_loss_op,lambda_eff,lr";

/// Learning curves as CSV; absent values are empty fields.
pub fn write_curves(path: &Path, curves: &[EpochLog]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CURVES_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in curves {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            c.epoch,
            opt(c.train_vp),
            opt(c.train_op),
            opt(c.val_vp),
            opt(c.val_op),
            c.lambda_eff,
            c.lr
        )?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{encode_graph, GraphData};
    use crate::gnn::{Backbone, Heads};
    use crate::smiles::parse_smiles;
    use std::sync::Arc;

    #[test]
    fn lambda_examples() {
        let cfg = ScheduleConfig { lambda: 1e-3, e0: 30, e_warm: 90, ..ScheduleConfig::default() };
        assert_eq!(lambda_eff(30, &cfg), 0.0);
        assert_eq!(lambda_eff(120, &cfg), 1e-3);
        assert_eq!(lambda_eff(75, &cfg), 1e-3 * 45.0 / 90.0);
        assert!((lambda_eff(75, &cfg) - 5e-4).abs() < 1e-18);
        assert_eq!(lambda_eff(0, &cfg), 0.0);
        assert_eq!(lambda_eff(500, &cfg), 1e-3);
        let naive = ScheduleConfig::naive_mt();
        assert_eq!(lambda_eff(0, &naive), 1.0);
    }

    #[test]
    fn lambda_is_monotone_and_bounded() {
        for (e0, w) in [(0, 1), (5, 3), (30, 90), (2, 0)] {
            let cfg = ScheduleConfig { lambda: 0.7, e0, e_warm: w, ..ScheduleConfig::default() };
            let mut prev = 0.0;
            for e in 0..200 {
                let l = lambda_eff(e, &cfg);
                assert!(l >= prev && l <= 0.7);
                prev = l;
            }
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_vp(&[1.0, 2.0], &[1.0, 2.0], LossKind::Mse).unwrap(), 0.0);
        assert_eq!(loss_vp(&[1.0, -1.0], &[0.0, 0.0], LossKind::Mse).unwrap(), 1.0);
        assert_eq!(loss_vp(&[0.0, 3.0], &[0.0, 0.0], LossKind::Mse).unwrap(), 4.5);
        assert!(matches!(loss_vp(&[], &[], LossKind::Mse), Err(TrainError::EmptyBatch)));

        assert_eq!(loss_op_masked(&[5.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], None, LossKind::Mse), 0.0);
        let one = loss_op_masked(&[2.0, 9.0], &[0.0, 0.0], &[1.0, 0.0], None, LossKind::Mse);
        assert!((one - 4.0).abs() < 1e-7);
        let three = loss_op_masked(&[1.0, 2.0, 100.0], &[0.0; 3], &[1.0, 1.0, 0.0], None, LossKind::Mse);
        assert!((three - 2.5).abs() < 1e-7);
        let weighted = loss_op_masked(&[1.0, 2.0], &[0.0; 2], &[1.0, 1.0], Some(&[0.5, 1.0]), LossKind::Mse);
        assert!((weighted - 2.25).abs() < 1e-7);
    }

    fn sample(smiles: &str, molecule: usize, t: f64, y: f64, op: Option<f64>) -> MolGraph {
        let mol = parse_smiles(smiles).unwrap();
        let (node_feats, edge_index, edge_feats) = encode_graph(&mol);
        MolGraph {
            graph: Arc::new(GraphData { key: mol.canonical_key.clone(), node_feats, edge_index, edge_feats }),
            molecule,
            temperature_k: 0.0,
            t_std: t,
            y_vp: y,
            y_oa: op.unwrap_or(0.0),
            y_ow: 0.0,
            m_vp: 1.0,
            m_oa: op.map_or(0.0, |_| 1.0),
            m_ow: 0.0,
            w_oa: 1.0,
            w_ow: 1.0,
            op_n: None,
            op_iqr: None,
        }
    }

    fn toy() -> (Vec<MolGraph>, Vec<MolGraph>) {
        let smiles = ["CC", "CCC", "CCCC", "CCO", "CCCO", "c1ccccc1", "Cc1ccccc1", "CC(C)C", "CCN", "OCCO"];
        let mut rows = Vec::new();
        for (i, s) in smiles.iter().enumerate() {
            let n = s.len() as f64;
            rows.push(sample(s, i, -0.5, 1.0 - 0.2 * n, (i % 2 == 0).then_some(0.5 - 0.1 * n)));
            rows.push(sample(s, i, 0.5, 1.5 - 0.2 * n, None));
        }
        let val = vec![sample("CCCCC", 20, 0.0, 0.2, Some(0.0)), sample("CCCN", 21, 0.1, 0.4, Some(0.1))];
        (rows, val)
    }

    fn tiny_cfg(heads: Heads, schedule: ScheduleConfig) -> TrainConfig {
        TrainConfig {
            model: ModelConfig { backbone: Backbone::Gine, n_layers: 2, hidden: 8, dropout: 0.1, heads, ..ModelConfig::default() },
            schedule: ScheduleConfig { max_epochs: 12, ..schedule },
            optim: OptimConfig { batch_size: 4, lr_max: 5e-3, ..OptimConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lambda_zero_matches_single_task() {
        let (rows, val) = toy();
        let data = TrainData { train: &rows, val: &val, fingerprints: None, delta: 1.0 };
        let st = train_seeds(&data, &tiny_cfg(Heads::VP, ScheduleConfig::single_task()), &[3]).pop().unwrap().unwrap();
        let mt_sched = ScheduleConfig { lambda: 0.0, e0: 0, e_warm: 0, detach_op: false, ..ScheduleConfig::default() };
        let mt = train(&data, &tiny_cfg(Heads::ALL, mt_sched), 3).unwrap();
        assert_eq!(st.curves.len(), mt.curves.len());
        for (a, b) in st.curves.iter().zip(&mt.curves) {
            assert_eq!(a.val_vp, b.val_vp);
            assert_eq!(a.train_vp, b.train_vp);
        }
        for (name, v) in st.final_model.params.iter() {
            let id = mt.final_model.params.id(name).unwrap();
            assert_eq!(mt.final_model.params.value(id), v, "{name}");
        }
    }

    #[test]
    fn detached_auxiliary_leaves_vp_trajectory_unchanged() {
        let (rows, val) = toy();
        let data = TrainData { train: &rows, val: &val, fingerprints: None, delta: 1.0 };
        let tight = |mut c: TrainConfig| {
            c.optim.clip_norm = 0.05;
            c
        };
        let st = train(&data, &tight(tiny_cfg(Heads::VP, ScheduleConfig::single_task())), 5).unwrap();
        let safe = ScheduleConfig { lambda: 0.5, e0: 1, e_warm: 2, ..ScheduleConfig::default() };
        let mt = train(&data, &tight(tiny_cfg(Heads::ALL, safe.clone())), 5).unwrap();
        for (a, b) in st.curves.iter().zip(&mt.curves) {
            assert_eq!(a.val_vp, b.val_vp);
        }
        for (name, v) in st.final_model.params.iter() {
            let id = mt.final_model.params.id(name).unwrap();
            assert_eq!(mt.final_model.params.value(id), v, "{name}");
        }
        // without isolation the auxiliary does move the shared weights
        let naive = train(&data, &tight(tiny_cfg(Heads::ALL, ScheduleConfig { detach_op: false, ..safe })), 5).unwrap();
        assert_ne!(naive.final_model.params.value(0), st.final_model.params.value(0));
    }

    #[test]
    fn checkpoints_only_improve() {
        let (rows, val) = toy();
        let data = TrainData { train: &rows, val: &val, fingerprints: None, delta: 1.0 };
        let cfg = tiny_cfg(Heads::ALL, ScheduleConfig { lambda: 0.5, e0: 2, e_warm: 3, ..ScheduleConfig::default() });
        let out = train(&data, &cfg, 1).unwrap();
        for task in ["vp", "op"] {
            let metrics: Vec<f64> = out.checkpoint_events.iter().filter(|e| e.0 == task).map(|e| e.2).collect();
            assert!(!metrics.is_empty());
            assert!(metrics.windows(2).all(|w| w[1] < w[0]));
        }
        let op_epochs: Vec<usize> = out.checkpoint_events.iter().filter(|e| e.0 == "op").map(|e| e.1).collect();
        assert!(op_epochs.iter().all(|&e| e > 2));
        assert_eq!(out.curves[1].lambda_eff, 0.0);
        assert!((out.curves[4].lambda_eff - 0.5 * 2.0 / 3.0).abs() < 1e-15);
        let best = out.best_vp.unwrap();
        let p = predict_samples(&best.model, &val, None, 64).unwrap();
        assert_eq!(validation_mse(&p, &val).0.unwrap(), best.metric);
    }

    #[test]
    fn detach_keeps_backbone_fixed_on_op_only_data() {
        let (rows, val) = toy();
        let op_rows: Vec<MolGraph> = rows.iter().filter(|s| has_op(s)).cloned().map(|mut s| {
            s.m_vp = 0.0;
            s
        }).collect();
        let data = TrainData { train: &op_rows, val: &val, fingerprints: None, delta: 1.0 };
        let sched = ScheduleConfig { lambda: 1.0, e0: 0, e_warm: 0, detach_op: true, max_epochs: 2, ..ScheduleConfig::default() };
        let cfg = tiny_cfg(Heads::ALL, sched);
        let init = Model::new(cfg.model.clone(), 1.0, 9).unwrap();
        let out = train(&data, &TrainConfig { schedule: ScheduleConfig { max_epochs: 2, ..cfg.schedule.clone() }, ..cfg }, 9).unwrap();
        let m = &out.final_model;
        let mut op_moved = false;
        for i in 0..m.params.len() {
            let same = m.params.value(i) == init.params.value(i);
            if m.is_op_param(i) {
                op_moved |= !same;
            } else {
                assert!(same, "{}", m.params.name(i));
            }
        }
        assert!(op_moved);
    }

    #[test]
    fn learns_toy_vp() {
        let (rows, val) = toy();
        let data = TrainData { train: &rows, val: &val, fingerprints: None, delta: 1.0 };
        let mut cfg = tiny_cfg(Heads::VP, ScheduleConfig::single_task());
        cfg.schedule.max_epochs = 60;
        let out = train(&data, &cfg, 0).unwrap();
        let first = out.curves[0].train_vp.unwrap();
        let last = out.curves.last().unwrap().train_vp.unwrap();
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn divergence_is_reported() {
        let (mut rows, val) = toy();
        rows[0].y_vp = f64::NAN;
        let data = TrainData { train: &rows, val: &val, fingerprints: None, delta: 1.0 };
        let cfg = tiny_cfg(Heads::VP, ScheduleConfig::single_task());
        assert!(matches!(train_fn(&data, &cfg), Err(TrainError::DivergenceDetected { epoch: 0 })));
    }

    fn train_fn(data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
        train(data, cfg, 0)
    }

    #[test]
    fn curves_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let logs = vec![EpochLog {
            epoch: 0,
            train_vp: Some(0.5),
            train_op: None,
            val_vp: Some(0.25),
            val_op: None,
            lambda_eff: 0.0,
            lr: 1e-3,
            param_hash: String::new(),
            shared_hash: String::new(),
        }];
        write_curves(&path, &logs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CURVES_HEADER}\n0,0.5,,0.25,,0,0.001\n"));
    }
}
