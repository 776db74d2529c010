//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints one PASS/FAIL line; any failure makes the binary
//! exit nonzero. Pass criterion numbers as arguments to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use odorgraph::autodiff::{gradient_check, ParamStore, SegmentMode, Tape, Tensor, Var};
use odorgraph::detect::{c_air, p_detect, Partition, Scenario};
use odorgraph::eval::{binned_mse, bootstrap_ci, mae, mse, r2};
use odorgraph::features::{encode_graph, GraphData, GraphRecord, MolGraph};
use odorgraph::gnn::{Backbone, Batch, Heads, Mode, Model, ModelConfig};
use odorgraph::pipeline::{ingest, prepare, scaffolds, PrepConfig, Prepared};
use odorgraph::preprocess::{harmonize_vp, PA_PER_MMHG};
use odorgraph::safemt::{
    batch_losses, lambda_eff, predict_samples, train, LossKind, OptimConfig, ScheduleConfig, TrainConfig, TrainData,
};
use odorgraph::scaffold::{
    capacity_split, freeze_split, group_by_scaffold, load_split, verify_no_leakage, Fold, FoldAssignment, Scaffold,
};
use odorgraph::smiles::{canonical_key, parse_smiles, write_smiles, SmilesError, WriteOptions};
use odorgraph::synthdata::{generate, SynthConfig, Truth};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- helpers

struct Corpus {
    records: Vec<GraphRecord>,
    fold: FoldAssignment,
    groups: Vec<Scaffold>,
    truth: Vec<Truth>,
}

fn corpus(seed: u64, n: usize, cfg: &SynthConfig) -> Corpus {
    let synth = generate(seed, n, cfg);
    let (records, _) = ingest(&synth.records).expect("ingest");
    let scafs = scaffolds(&records).expect("scaffolds");
    let groups = group_by_scaffold(records.iter().zip(&scafs).map(|(r, s)| (r.key.as_str(), s.as_str())));
    let fold = capacity_split(&groups, [0.8, 0.1, 0.1], 0).expect("split");
    Corpus { records, fold, groups, truth: synth.truth }
}

fn molgraph(smiles: &str, molecule: usize, t_std: f64) -> MolGraph {
    let mol = parse_smiles(smiles).expect("parse");
    let (node_feats, edge_index, edge_feats) = encode_graph(&mol);
    MolGraph {
        graph: Arc::new(GraphData { key: mol.canonical_key.clone(), node_feats, edge_index, edge_feats }),
        molecule,
        temperature_k: 298.15,
        t_std,
        y_vp: 0.4 - t_std,
        y_oa: -0.3,
        y_ow: 0.8,
        m_vp: 1.0,
        m_oa: 1.0,
        m_ow: 1.0,
        w_oa: 1.0,
        w_ow: 0.7,
        op_n: None,
        op_iqr: None,
    }
}

fn data<'a>(p: &'a Prepared) -> TrainData<'a> {
    TrainData { train: p.fold(Fold::Train), val: p.fold(Fold::Val), fingerprints: None, delta: p.fitted.delta }
}

fn vp_pairs(model: &Model, samples: &[MolGraph]) -> (Vec<f64>, Vec<f64>) {
    let pred = predict_samples(model, samples, None, 512).expect("predict").vp.expect("vp head");
    samples.iter().zip(pred).filter(|(s, _)| s.m_vp > 0.0).map(|(s, p)| (p, s.y_vp)).unzip()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 1

const FD_H: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-4;
const FD_TOL: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Check `op` applied to a random 12×3 input, contracted with fixed weights.
fn check_op(name: &str, seed: u64, op: &dyn Fn(&mut Tape, Var) -> Var) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&mut rng, 12, 3));
    let w = rand_tensor(&mut rng, 12, 36);
    let f = |t: &mut Tape, s: &ParamStore| {
        let v = t.param(s, x);
        let y = op(t, v);
        let (r, c) = t.shape(y);
        let wl = t.leaf(Tensor::new(r, c, w.data[..r * c].to_vec()));
        let p = t.mul(y, wl).unwrap();
        t.sum(p)
    };
    let err = gradient_check(&mut store, &f, FD_H, FD_FLOOR);
    if err < FD_TOL {
        Ok(err)
    } else {
        Err(format!("{name}: relative error {err:.2e}"))
    }
}

fn op_checks() -> Result<(usize, f64), String> {
    let seg: Rc<[usize]> = (0..12).map(|i| (i * 5) % 4).collect();
    let idx: Rc<[usize]> = vec![0, 11, 4, 4, 7].into();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let other = rand_tensor(&mut rng, 12, 3);
    let right = rand_tensor(&mut rng, 3, 5);
    let row = rand_tensor(&mut rng, 1, 3);
    let col = rand_tensor(&mut rng, 12, 1);
    let leaf = |t: &mut Tape, m: &Tensor| t.leaf(m.clone());
    type Op<'a> = Box<dyn Fn(&mut Tape, Var) -> Var + 'a>;
    let mut ops: Vec<(&str, Op)> = vec![
        ("matmul", Box::new(|t, x| {
            let r = leaf(t, &right);
            t.matmul(x, r).unwrap()
        })),
        ("add", Box::new(|t, x| {
            let o = leaf(t, &other);
            t.add(x, o).unwrap()
        })),
        ("sub", Box::new(|t, x| {
            let o = leaf(t, &other);
            t.sub(o, x).unwrap()
        })),
        ("mul", Box::new(|t, x| t.mul(x, x).unwrap())),
        ("add_row", Box::new(|t, x| {
            let r = leaf(t, &row);
            t.add_row(x, r).unwrap()
        })),
        ("mul_col", Box::new(|t, x| {
            let c = leaf(t, &col);
            t.mul_col(x, c).unwrap()
        })),
        ("mul_row", Box::new(|t, x| {
            let r = leaf(t, &row);
            t.mul_row(x, r).unwrap()
        })),
        ("mul_scalar", Box::new(|t, x| {
            let s = t.sum(x);
            t.mul_scalar(x, s).unwrap()
        })),
        ("scale", Box::new(|t, x| t.scale(x, -2.5))),
        ("add_const", Box::new(|t, x| {
            let y = t.add_const(x, 0.75);
            t.square(y)
        })),
        ("relu", Box::new(|t, x| t.relu(x))),
        ("sqrt", Box::new(|t, x| {
            let s = t.square(x);
            let s = t.add_const(s, 0.2);
            t.sqrt(s)
        })),
        ("square", Box::new(|t, x| t.square(x))),
        ("huber", Box::new(|t, x| t.huber(x, 0.4))),
        ("concat", Box::new(|t, x| {
            let s = t.square(x);
            t.concat(&[x, s]).unwrap()
        })),
        ("gather", Box::new(|t, x| t.gather(x, idx.clone()).unwrap())),
        ("segment_std", Box::new(|t, x| t.segment_std(x, seg.clone(), 4, 1e-8).unwrap())),
        ("dropout", Box::new(|t, x| {
            let mut r = ChaCha8Rng::seed_from_u64(4);
            t.dropout(x, 0.25, &mut r)
        })),
        ("batch_norm", Box::new(|t, x| {
            let g = leaf(t, &row);
            let b = t.leaf(Tensor::new(1, 3, vec![0.1, -0.2, 0.3]));
            t.batch_norm(x, g, b, 1e-5).unwrap().0
        })),
        ("sum", Box::new(|t, x| {
            let s = t.square(x);
            t.sum(s)
        })),
        ("mean", Box::new(|t, x| {
            let s = t.square(x);
            t.mean(s)
        })),
    ];
    for mode in [SegmentMode::Sum, SegmentMode::Mean, SegmentMode::Max, SegmentMode::Min] {
        let seg = seg.clone();
        ops.push(("segment_reduce", Box::new(move |t, x| t.segment_reduce(x, seg.clone(), 4, mode).unwrap())));
    }
    let mut worst = 0.0f64;
    for (i, (name, op)) in ops.iter().enumerate() {
        worst = worst.max(check_op(name, 100 + i as u64, op.as_ref())?);
    }
    Ok((ops.len(), worst))
}

fn small_smiles(n: usize) -> Vec<String> {
    let synth = generate(3, 400, &SynthConfig::default());
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in &synth.truth {
        let mol = parse_smiles(&t.smiles).unwrap();
        if (3..=9).contains(&mol.atoms.len()) && seen.insert(mol.canonical_key.clone()) {
            out.push(t.smiles.clone());
        }
        if out.len() == n {
            break;
        }
    }
    out
}

fn layer_check(backbone: Backbone, smiles: &str, seed: u64) -> Result<f64, String> {
    let cfg = ModelConfig { backbone, n_layers: 2, hidden: 4, dropout: 0.1, ..ModelConfig::default() };
    let mut model = Model::new(cfg, 0.9, seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..model.params.len() {
        for v in &mut model.params.value_mut(i).data {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let s = [molgraph(smiles, 0, 0.3), molgraph(smiles, 0, -0.6)];
    let refs: Vec<&MolGraph> = s.iter().collect();
    let batch = Batch::new(&refs, None);
    let tc = TrainConfig { loss_op: LossKind::Huber { delta: 0.5 }, ..TrainConfig::default() };
    let mut store = model.params.clone();
    let f = |t: &mut Tape, p: &ParamStore| {
        let m = Model { params: p.clone(), ..model.clone() };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let out = m.forward(t, &batch, Mode::Train { rng: &mut r }, false).unwrap();
        let l = batch_losses(t, &out, &batch, &tc).unwrap();
        let op = t.scale(l.op.unwrap(), 0.7);
        t.add(l.vp.unwrap(), op).unwrap()
    };
    let err = gradient_check(&mut store, &f, FD_H, FD_FLOOR);
    if err < FD_TOL {
        Ok(err)
    } else {
        Err(format!("{backbone:?} on {smiles} (seed {seed}): relative error {err:.2e}"))
    }
}

fn criterion_1() -> Outcome {
    let (n_ops, op_worst) = op_checks()?;
    let graphs = small_smiles(20);
    ensure(graphs.len() == 20, "fewer than 20 small graphs")?;
    let mut worst = 0.0f64;
    for (i, s) in graphs.iter().enumerate() {
        for backbone in [Backbone::Gine, Backbone::Pna] {
            worst = worst.max(layer_check(backbone, s, i as u64)?);
        }
    }
    Ok(format!("{n_ops} ops worst {op_worst:.1e}; GINE+PNA on {} graphs worst {worst:.1e}", graphs.len()))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let c = corpus(21, 1000, &SynthConfig::default());
    let n = c.records.len();
    let d = verify_no_leakage(&c.fold, &c.groups).map_err(|e| e.to_string())?;
    ensure(d.identity_overlap == 0, format!("identity overlap {}", d.identity_overlap))?;
    ensure(d.scaffold_overlap == 0, format!("scaffold overlap {}", d.scaffold_overlap))?;
    let counts = c.fold.counts();
    let slack = d.max_group_size as f64 / n as f64;
    for (k, target) in [0.8, 0.1, 0.1].into_iter().enumerate() {
        let frac = counts[k] as f64 / n as f64;
        ensure((frac - target).abs() <= slack, format!("fold {k} fraction {frac} vs {target} ± {slack}"))?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    freeze_split(&c.fold, &a).map_err(|e| e.to_string())?;
    let back = load_split(&a).map_err(|e| e.to_string())?;
    let same = back.entries == c.fold.entries && back.seed == c.fold.seed && back.target_ratio == c.fold.target_ratio;
    ensure(same, "reloaded assignment differs")?;
    ensure(verify_no_leakage(&back, &c.groups).map_err(|e| e.to_string())? == d, "reloaded diagnostics differ")?;
    freeze_split(&back, &b).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap(), "re-frozen file differs")?;
    Ok(format!("n={n}, counts {counts:?}, max group {}, bit-exact round trip", d.max_group_size))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let cfg = ScheduleConfig { lambda: 1e-3, e0: 30, e_warm: 90, ..ScheduleConfig::default() };
    for e in 0..=300usize {
        let ramp = (e as f64 - 30.0) / 90.0;
        let want = if ramp <= 0.0 { 0.0 } else { 1e-3 * ramp.min(1.0) };
        let got = lambda_eff(e, &cfg);
        ensure(got.to_bits() == want.to_bits(), format!("epoch {e}: {got} vs {want}"))?;
    }
    let c = corpus(5, 80, &SynthConfig::default());
    let p = prepare(&c.records, &c.fold, &PrepConfig::default(), BTreeMap::new()).map_err(|e| e.to_string())?;
    let model = ModelConfig { backbone: Backbone::Gine, n_layers: 2, hidden: 8, ..ModelConfig::default() };
    let run = |heads, schedule| {
        let cfg = TrainConfig { model: ModelConfig { heads, ..model.clone() }, schedule, ..TrainConfig::default() };
        train(&data(&p), &cfg, 17).expect("train")
    };
    let fixed = ScheduleConfig { max_epochs: 20, patience_vp: 100, patience_op: 100, ..ScheduleConfig::default() };
    let st = run(Heads::VP, ScheduleConfig { lambda: 0.0, ..fixed.clone() });
    let zero = run(Heads::ALL, ScheduleConfig { lambda: 0.0, e0: 0, e_warm: 0, detach_op: false, ..fixed });
    ensure(st.curves.len() == 20 && zero.curves.len() == 20, "expected 20 epochs")?;
    for (a, b) in st.curves.iter().zip(&zero.curves) {
        ensure(a.shared_hash == b.shared_hash, format!("epoch {}: shared parameters diverge", a.epoch))?;
        ensure(a.param_hash == a.shared_hash, "single-task model owns OP parameters")?;
    }
    Ok("lambda_eff exact on 0..=300; 20 epoch hashes identical".into())
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let cfg = ModelConfig { backbone: Backbone::Pna, n_layers: 2, hidden: 8, ..ModelConfig::default() };
    let model = Model::new(cfg, 0.9, 3).map_err(|e| e.to_string())?;
    let mut s: Vec<MolGraph> = ["CCOC(C)=O", "c1ccc(O)cc1", "CC(C)CN"].iter().enumerate().map(|(i, m)| molgraph(m, i, 0.0)).collect();
    for x in &mut s {
        x.m_vp = 0.0;
    }
    let refs: Vec<&MolGraph> = s.iter().collect();
    let batch = Batch::new(&refs, None);
    let mut t = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut t, &batch, Mode::Train { rng: &mut rng }, true).map_err(|e| e.to_string())?;
    let losses = batch_losses(&mut t, &out, &batch, &TrainConfig::default()).map_err(|e| e.to_string())?;
    ensure(losses.vp.is_none(), "OP-only batch produced a VP loss")?;
    let mut store = model.params.clone();
    t.backward(losses.op.ok_or("no OP loss")?, &mut store).map_err(|e| e.to_string())?;
    let mut backbone = 0;
    for i in 0..store.len() {
        if model.is_backbone_param(i) {
            backbone += 1;
            ensure(store.grad(i).data.iter().all(|g| g.to_bits() == 0), format!("{} has a gradient", store.name(i)))?;
        }
    }
    let op_nonzero = (0..store.len()).filter(|&i| model.is_op_param(i)).any(|i| store.grad(i).data.iter().any(|g| *g != 0.0));
    ensure(op_nonzero, "OP head gradients are all zero")?;
    Ok(format!("{backbone} backbone tensors bitwise zero, OP heads nonzero"))
}

// ---------------------------------------------------------------- 5

fn learn(backbone: Backbone, p: &Prepared) -> Result<f64, String> {
    let cfg = TrainConfig {
        model: ModelConfig { backbone, n_layers: 3, hidden: 32, dropout: 0.1, heads: Heads::VP, ..ModelConfig::default() },
        schedule: ScheduleConfig { max_epochs: 200, patience_vp: 200, ..ScheduleConfig::single_task() },
        optim: OptimConfig { lr_max: 3e-3, ..OptimConfig::default() },
        ..TrainConfig::default()
    };
    let out = train(&data(p), &cfg, 0).map_err(|e| e.to_string())?;
    let best = out.best_vp.ok_or("no VP checkpoint")?;
    let (pred, y) = vp_pairs(&best.model, p.fold(Fold::Val));
    r2(&pred, &y).map_err(|e| e.to_string())
}

fn criterion_5() -> Outcome {
    let c = corpus(7, 500, &SynthConfig::default());
    let p = prepare(&c.records, &c.fold, &PrepConfig::default(), BTreeMap::new()).map_err(|e| e.to_string())?;
    let pna = learn(Backbone::Pna, &p)?;
    let gine = learn(Backbone::Gine, &p)?;
    ensure(pna > 0.95 && gine > 0.90, format!("validation R² PNA {pna:.4} (> 0.95), GINE {gine:.4} (> 0.90)"))?;
    Ok(format!("validation R² PNA {pna:.4}, GINE {gine:.4}"))
}

// ---------------------------------------------------------------- 6

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn criterion_6() -> Outcome {
    let sc = SynthConfig { sigma_vp: 0.05, sigma_op: 0.25, ..SynthConfig::default() };
    let c = corpus(11, 300, &sc);
    let p = prepare(&c.records, &c.fold, &PrepConfig::default(), BTreeMap::new()).map_err(|e| e.to_string())?;
    let base = ScheduleConfig { max_epochs: 80, patience_vp: 80, patience_op: 80, ..ScheduleConfig::default() };
    let model = ModelConfig { backbone: Backbone::Gine, n_layers: 3, hidden: 32, dropout: 0.1, ..ModelConfig::default() };
    let regimes = [
        ("single", Heads::VP, ScheduleConfig { lambda: 0.0, ..base.clone() }),
        ("naive", Heads::ALL, ScheduleConfig { lambda: 1.0, e0: 0, e_warm: 0, detach_op: false, ..base.clone() }),
        ("safe", Heads::ALL, base),
    ];
    let mut means = BTreeMap::new();
    for (name, heads, schedule) in regimes {
        let cfg = TrainConfig {
            model: ModelConfig { heads, ..model.clone() },
            schedule,
            optim: OptimConfig { lr_max: 3e-3, ..OptimConfig::default() },
            ..TrainConfig::default()
        };
        let mut per_seed = Vec::new();
        for seed in SEEDS {
            let out = train(&data(&p), &cfg, seed).map_err(|e| e.to_string())?;
            let (pred, y) = vp_pairs(&out.best_vp.ok_or("no VP checkpoint")?.model, p.fold(Fold::Test));
            per_seed.push(mse(&pred, &y).map_err(|e| e.to_string())?);
        }
        means.insert(name, mean(&per_seed));
    }
    let (single, naive, safe) = (means["single"], means["naive"], means["safe"]);
    let summary = format!("VP test MSE naive {naive:.4}, safe {safe:.4}, single {single:.4}");
    ensure(naive >= safe && safe <= 1.02 * single, summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 7

/// Pooled OA/OW test MSE in log10 units against the observed labels.
fn op_test_mse(model: &Model, p: &Prepared, records: &[GraphRecord]) -> Result<f64, String> {
    let test = p.fold(Fold::Test);
    let pr = predict_samples(model, test, None, 512).map_err(|e| e.to_string())?;
    let (oa, ow) = (pr.oa.ok_or("no OA head")?, pr.ow.ok_or("no OW head")?);
    let t = &p.fitted.targets;
    let mut seen = BTreeSet::new();
    let (mut sum, mut n) = (0.0, 0.0);
    for (i, s) in test.iter().enumerate() {
        if !seen.insert(s.molecule) {
            continue;
        }
        let r = &records[s.molecule];
        for (label, scaler, z) in [(&r.oa, &t.oa, oa[i]), (&r.ow, &t.ow, ow[i])] {
            if let (Some(l), Some(sc)) = (label, scaler) {
                sum += (sc.inverse(z) - l.value).powi(2);
                n += 1.0;
            }
        }
    }
    ensure(n > 0.0, "no OP test labels")?;
    Ok(sum / n)
}

fn criterion_7() -> Outcome {
    let c = corpus(11, 1000, &SynthConfig { corruption_rate: 0.05, ..SynthConfig::default() });
    let corrupted = c.truth.iter().filter(|t| t.corrupted).count();
    let mut means = Vec::new();
    for (prep, loss) in [
        (PrepConfig::default(), LossKind::Mse),
        (PrepConfig { winsor_alpha: Some(0.025), ..PrepConfig::default() }, LossKind::Huber { delta: 1.5 }),
    ] {
        let p = prepare(&c.records, &c.fold, &prep, BTreeMap::new()).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            model: ModelConfig { backbone: Backbone::Gine, n_layers: 3, hidden: 32, dropout: 0.1, heads: Heads::OP, ..ModelConfig::default() },
            schedule: ScheduleConfig { max_epochs: 100, patience_op: 100, ..ScheduleConfig::default() },
            optim: OptimConfig { lr_max: 3e-3, ..OptimConfig::default() },
            loss_op: loss,
            ..TrainConfig::default()
        };
        let mut per_seed = Vec::new();
        for seed in SEEDS {
            let out = train(&data(&p), &cfg, seed).map_err(|e| e.to_string())?;
            per_seed.push(op_test_mse(&out.best_op.ok_or("no OP checkpoint")?.model, &p, &c.records)?);
        }
        means.push(mean(&per_seed));
    }
    let summary = format!("OP test MSE huber+winsor {:.4} vs mse {:.4} ({corrupted} corrupted molecules)", means[1], means[0]);
    ensure(means[1] <= means[0], summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let s = Scenario { temperature_k: 298.15, p_tot: 101_325.0, partition: Partition::Raoult { x: 1.0 }, gamma: 2.0 };
    let c = c_air(101_325.0, &s).map_err(|e| e.to_string())?;
    ensure((c - 40.87).abs() <= 0.01, format!("c_air {c}"))?;
    for (c50, g) in [(1.0, 2.0), (3.7e-4, 0.8), (12.5, 3.3)] {
        ensure(p_detect(c50, c50, g) == 0.5, format!("p_detect at C50 = {c50}"))?;
    }
    ensure(PA_PER_MMHG == 133.322, "mmHg constant")?;
    let v = harmonize_vp(1.0, "mmHg").map_err(|e| e.to_string())?;
    ensure(v == 133.322f64.log10(), format!("1 mmHg -> log10 Pa {v}"))?;
    Ok(format!("c_air {c:.4} mol/m³, p_detect(C50) = 0.5, 1 mmHg = 133.322 Pa"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(3..60);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let (mut se, mut ae, mut ybar) = (0.0, 0.0, 0.0);
        for i in 0..n {
            se += (p[i] - y[i]) * (p[i] - y[i]);
            ae += (p[i] - y[i]).abs();
            ybar += y[i];
        }
        ybar /= n as f64;
        let mut tot = 0.0;
        for v in &y {
            tot += (v - ybar) * (v - ybar);
        }
        let oracle = [se / n as f64, ae / n as f64, 1.0 - se / tot];
        let got = [mse(&p, &y).unwrap(), mae(&p, &y).unwrap(), r2(&p, &y).unwrap()];
        for (g, o) in got.iter().zip(oracle) {
            worst = worst.max((g - o).abs());
        }
        let sims: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let res: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a - b).collect();
        let bins = binned_mse(&res, &sims).unwrap();
        let weighted: f64 = bins.iter().filter_map(|b| b.mse.map(|m| m * b.n as f64)).sum::<f64>() / n as f64;
        ensure(bins.iter().map(|b| b.n).sum::<usize>() == n, "bin counts do not cover the residuals")?;
        worst = worst.max((weighted - got[0]).abs());
    }
    ensure(worst <= 1e-12, format!("worst deviation {worst:.2e}"))?;
    let groups: Vec<Vec<f64>> = (0..40).map(|i| (0..1 + i % 4).map(|k| ((i * 7 + k) % 11) as f64 * 0.1).collect()).collect();
    let a = bootstrap_ci(&groups, 2000, 0.95, 42).unwrap();
    let b = bootstrap_ci(&groups, 2000, 0.95, 42).unwrap();
    ensure(a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits(), "bootstrap not reproducible")?;
    Ok(format!("metric/bin identities within {worst:.1e}; bootstrap CI ({:.4}, {:.4}) bit-reproducible", a.0, a.1))
}

// ---------------------------------------------------------------- 10

const MALFORMED: [(&str, SmilesError); 20] = [
    ("C1CC", SmilesError::UnbalancedRingClosure { offset: 1 }),
    ("c1ccccc1C2CC", SmilesError::UnbalancedRingClosure { offset: 9 }),
    ("C1CCC1C1", SmilesError::UnbalancedRingClosure { offset: 7 }),
    ("CC(C", SmilesError::UnbalancedBranch { offset: 2 }),
    ("CC)C", SmilesError::UnbalancedBranch { offset: 2 }),
    ("C(C)C)", SmilesError::UnbalancedBranch { offset: 5 }),
    ("(C)C", SmilesError::UnbalancedBranch { offset: 0 }),
    ("C[C@@H](Cl", SmilesError::UnbalancedBranch { offset: 7 }),
    ("CXC", SmilesError::UnknownAtomToken { offset: 1 }),
    ("C[Xx]C", SmilesError::UnknownAtomToken { offset: 1 }),
    ("CBrX", SmilesError::UnknownAtomToken { offset: 3 }),
    ("CC(=O)(=O)C", SmilesError::ValenceViolation { offset: 1 }),
    ("O=C=O=C", SmilesError::ValenceViolation { offset: 4 }),
    ("F=C", SmilesError::ValenceViolation { offset: 0 }),
    ("CC=", SmilesError::DanglingBond { offset: 2 }),
    ("C=#C", SmilesError::UnexpectedToken { offset: 2 }),
    ("CC((C))", SmilesError::UnexpectedToken { offset: 3 }),
    ("C11", SmilesError::DuplicateBond { offset: 2 }),
    ("ccC", SmilesError::NonRingAromatic { offset: 0 }),
    ("Cé", SmilesError::NonAscii { offset: 1 }),
];

fn criterion_10() -> Outcome {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/corpus.smi")).map_err(|e| e.to_string())?;
    let corpus: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
    ensure(corpus.len() >= 150, format!("corpus has {} entries", corpus.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for s in &corpus {
        let mol = parse_smiles(s).map_err(|e| format!("{s}: {e}"))?;
        let key = canonical_key(&mol);
        let n = mol.atoms.len();
        for _ in 0..50 {
            let mut prio: Vec<usize> = (0..n).collect();
            prio.shuffle(&mut rng);
            let opts = WriteOptions { root: Some(rng.gen_range(0..n)), priorities: Some(prio) };
            let alt = write_smiles(&mol, &opts);
            let back = parse_smiles(&alt).map_err(|e| format!("{s} rewritten as {alt}: {e}"))?;
            ensure(canonical_key(&back) == key, format!("{s} rewritten as {alt} changes the key"))?;
        }
    }
    for (s, want) in &MALFORMED {
        match parse_smiles(s) {
            Err(e) if &e == want => {}
            other => return Err(format!("{s:?}: expected {want:?}, got {:?}", other.err())),
        }
    }
    Ok(format!("{} SMILES × 50 re-rootings stable; {} malformed inputs rejected at the right offset", corpus.len(), MALFORMED.len()))
}

// ---------------------------------------------------------------- driver

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "gradient correctness", budget: Some(Duration::from_secs(60)), run: criterion_1 },
    Criterion { id: 2, name: "split integrity", budget: Some(Duration::from_secs(10)), run: criterion_2 },
    Criterion { id: 3, name: "schedule exactness", budget: None, run: criterion_3 },
    Criterion { id: 4, name: "gradient isolation", budget: None, run: criterion_4 },
    Criterion { id: 5, name: "learnability oracle", budget: Some(Duration::from_secs(600)), run: criterion_5 },
    Criterion { id: 6, name: "safe multitask ordering", budget: None, run: criterion_6 },
    Criterion { id: 7, name: "robust loss ordering", budget: None, run: criterion_7 },
    Criterion { id: 8, name: "physics closed forms", budget: None, run: criterion_8 },
    Criterion { id: 9, name: "metric identities", budget: None, run: criterion_9 },
    Criterion { id: 10, name: "parser corpus", budget: None, run: criterion_10 },
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(detail), Some(b)) if took > b => Err(format!("{detail}; took {:.1}s, budget {}s", took.as_secs_f64(), b.as_secs())),
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} [{}] ({:.1}s) {detail}", c.id, c.name, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
