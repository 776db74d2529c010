//! Train a VP-only model, then report test metrics with a molecule-level
//! bootstrap interval, errors in Pa and MSE by similarity to training.

use std::collections::BTreeMap;

use odorgraph::eval::{back_transform_vp, binned_mse, task_metrics};
use odorgraph::fingerprint::max_similarity_to_train;
use odorgraph::gnn::{Backbone, Heads, ModelConfig};
use odorgraph::pipeline::{fingerprints, fold_ids, ingest, prepare, scaffolds, PrepConfig};
use odorgraph::safemt::{predict_samples, train, OptimConfig, ScheduleConfig, TrainConfig, TrainData};
use odorgraph::scaffold::{capacity_split, group_by_scaffold, Fold};
use odorgraph::synthdata::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate(5, 200, &SynthConfig::default());
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
        model: ModelConfig { backbone: Backbone::Gine, hidden: 32, n_layers: 3, heads: Heads::VP, ..ModelConfig::default() },
        schedule: ScheduleConfig { max_epochs: 40, ..ScheduleConfig::single_task() },
        optim: OptimConfig { lr_max: 3e-3, ..OptimConfig::default() },
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg, 0)?.best_vp.expect("VP head").model;

    let test = prepared.fold(Fold::Test);
    let pred = predict_samples(&model, test, None, 256)?.vp.expect("VP head");
    let (p, y, mol): (Vec<f64>, Vec<f64>, Vec<usize>) = test
        .iter()
        .zip(&pred)
        .filter(|(s, _)| s.m_vp > 0.0)
        .map(|(s, &p)| (p, s.y_vp, s.molecule))
        .fold((vec![], vec![], vec![]), |(mut a, mut b, mut c), (p, y, m)| {
            a.push(p);
            b.push(y);
            c.push(m);
            (a, b, c)
        });
    let m = task_metrics(&p, &y, &mol, 1000, 0)?;
    println!("test VP (standardized): n {} MSE {:.4} MAE {:.4} R2 {:?} 95% CI {:?}", m.n, m.mse, m.mae, m.r2, m.mse_ci);
    let pa = back_transform_vp(&p, &y, &prepared.fitted.targets.vp)?;
    println!("in Pa: RMSE {:.3e} MAE {:.3e}", pa.rmse_pa, pa.mae_pa);

    let fps = fingerprints(&records, 2, 2048)?;
    let train_fps: Vec<_> = fold_ids(&records, &fold)?[0].iter().map(|&i| &fps[i]).collect();
    let sims = mol.iter().map(|&i| max_similarity_to_train(&fps[i], &train_fps)).collect::<Result<Vec<_>, _>>()?;
    let residuals: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a - b).collect();
    for b in binned_mse(&residuals, &sims)? {
        println!("  sim {:<10} n {:>3} MSE {}", b.bin, b.n, b.mse.map_or("-".into(), |v| format!("{v:.4}")));
    }
    Ok(())
}
