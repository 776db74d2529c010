//! Train the safe multi-task schedule on a small synthetic corpus and print
//! the learning curves.
//!
//!     cargo run --release --example train_safe_mt -- 150 30

use std::collections::BTreeMap;

use odorgraph::gnn::{Backbone, ModelConfig};
use odorgraph::pipeline::{ingest, prepare, scaffolds, PrepConfig};
use odorgraph::safemt::{train, OptimConfig, ScheduleConfig, TrainConfig, TrainData};
use odorgraph::scaffold::{capacity_split, group_by_scaffold, Fold};
use odorgraph::synthdata::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(150);
    let epochs = args.get(1).copied().unwrap_or(30);

    let corpus = generate(2, n, &SynthConfig::default());
    let (records, _) = ingest(&corpus.records)?;
    let scafs = scaffolds(&records)?;
    let groups = group_by_scaffold(records.iter().zip(&scafs).map(|(r, s)| (r.key.as_str(), s.as_str())));
    let fold = capacity_split(&groups, [0.8, 0.1, 0.1], 0)?;
    let prepared = prepare(&records, &fold, &PrepConfig::default(), BTreeMap::new())?;
    let data = TrainData {
        train: prepared.fold(Fold::Train),
        val: prepared.fold(Fold::Val),
        fingerprints: None,
        delta: prepared.fitted.delta,
    };
    let cfg = TrainConfig {
        model: ModelConfig { backbone: Backbone::Gine, hidden: 32, n_layers: 3, ..ModelConfig::default() },
        schedule: ScheduleConfig { max_epochs: epochs, e0: epochs / 5, e_warm: epochs / 5, ..ScheduleConfig::default() },
        optim: OptimConfig { lr_max: 3e-3, ..OptimConfig::default() },
        ..TrainConfig::default()
    };

    let out = train(&data, &cfg, 0)?;
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("epoch  lambda  train_vp  train_op    val_vp    val_op");
    for e in &out.curves {
        println!("{:>5}  {:>6.3}  {:>8}  {:>8}  {:>8}  {:>8}", e.epoch, e.lambda_eff, f(e.train_vp), f(e.train_op), f(e.val_vp), f(e.val_op));
    }
    if let Some(b) = &out.best_vp {
        println!("best VP checkpoint: epoch {} val MSE {:.4}", b.epoch, b.metric);
    }
    if let Some(b) = &out.best_op {
        println!("best OP checkpoint: epoch {} val MSE {:.4}", b.epoch, b.metric);
    }
    println!("stopped: {:?}", out.stop);
    Ok(())
}
