//! Regression metrics, physical-unit errors, similarity-binned MSE,
//! molecule-level bootstrap intervals and CSV exports.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{sim_bin, SIM_BIN_LABELS};
use crate::preprocess::{quantile_sorted, Scaler};
use crate::scaffold::Fold;

pub const BOOTSTRAP_REPLICATES: usize = 2000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("targets have zero variance")]
    DegenerateVariance,
    #[error("need at least {need} values, got {n}")]
    TooFew { n: usize, need: usize },
    #[error("length mismatch: {0} predictions for {1} targets")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check(pred: &[f64], y: &[f64], need: usize) -> Result<(), EvalError> {
    if pred.len() != y.len() {
        return Err(EvalError::LengthMismatch(pred.len(), y.len()));
    }
    if y.len() < need {
        return Err(EvalError::TooFew { n: y.len(), need });
    }
    Ok(())
}

pub fn mse(pred: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check(pred, y, 1)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64)
}

pub fn mae(pred: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check(pred, y, 1)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64)
}

/// `1 − Σ(ŷ−y)² / Σ(y−ȳ)²`
pub fn r2(pred: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check(pred, y, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let ss_res: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaErrors {
    pub rmse_pa: f64,
    pub mae_pa: f64,
}

/// De-standardize VP to log10 Pa with the training scaler, exponentiate and
/// report RMSE/MAE in Pa.
pub fn back_transform_vp(pred_std: &[f64], true_std: &[f64], scaler: &Scaler) -> Result<PaErrors, EvalError> {
    check(pred_std, true_std, 1)?;
    let pa = |z: f64| 10f64.powf(scaler.inverse(z));
    let diffs: Vec<f64> = pred_std.iter().zip(true_std).map(|(&p, &t)| pa(p) - pa(t)).collect();
    let n = diffs.len() as f64;
    Ok(PaErrors {
        rmse_pa: (diffs.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
        mae_pa: diffs.iter().map(|d| d.abs()).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub bin: String,
    pub n: usize,
    /// `None` for an empty bin.
    pub mse: Option<f64>,
}

/// MSE of residuals grouped by max-similarity bin.
pub fn binned_mse(residuals: &[f64], max_sims: &[f64]) -> Result<Vec<BinStat>, EvalError> {
    check(residuals, max_sims, 0)?;
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for (r, &s) in residuals.iter().zip(max_sims) {
        let b = sim_bin(s);
        sums[b] += r * r;
        counts[b] += 1;
    }
    Ok((0..4)
        .map(|b| BinStat {
            bin: SIM_BIN_LABELS[b].to_string(),
            n: counts[b],
            mse: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect())
}

/// Percentile interval of the pooled mean of `groups` (one entry per
/// molecule, holding that molecule's per-row errors) over `b` resamples of
/// whole molecules.
pub fn bootstrap_ci(groups: &[Vec<f64>], b: usize, level: f64, seed: u64) -> Result<(f64, f64), EvalError> {
    if groups.len() < 2 {
        return Err(EvalError::TooFew { n: groups.len(), need: 2 });
    }
    let sums: Vec<(f64, usize)> = groups.iter().map(|g| (g.iter().sum(), g.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(b);
    for _ in 0..b {
        let (mut s, mut n) = (0.0, 0usize);
        for _ in 0..groups.len() {
            let (gs, gn) = sums[rng.gen_range(0..groups.len())];
            s += gs;
            n += gn;
        }
        stats.push(if n == 0 { 0.0 } else { s / n as f64 });
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail)))
}

/// Sample mean and standard deviation with the `n − 1` denominator; the
/// deviation is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub molecule_key: String,
    pub temperature: f64,
    pub y_true: f64,
    pub y_pred: f64,
    pub fold: Fold,
    pub max_sim: f64,
}

pub const PARITY_HEADER: &str = "molecule_key,temperature,y_true,y_pred,fold,max_sim";

pub fn export_parity(rows: &[ParityRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_parity(path: &Path) -> Result<Vec<ParityRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    /// 95% bootstrap interval of the MSE over molecules.
    pub mse_ci: Option<(f64, f64)>,
}

/// Metrics of one task from per-row predictions; `molecule` groups rows for
/// the bootstrap.
pub fn task_metrics(pred: &[f64], y: &[f64], molecule: &[usize], b: usize, seed: u64) -> Result<TaskMetrics, EvalError> {
    check(pred, y, 1)?;
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for ((p, t), &m) in pred.iter().zip(y).zip(molecule) {
        groups.entry(m).or_default().push((p - t) * (p - t));
    }
    let groups: Vec<Vec<f64>> = groups.into_values().collect();
    Ok(TaskMetrics {
        n: y.len(),
        mse: mse(pred, y)?,
        mae: mae(pred, y)?,
        r2: r2(pred, y).ok(),
        mse_ci: if b > 0 { bootstrap_ci(&groups, b, 0.95, seed).ok() } else { None },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub split: String,
    pub vp: Option<TaskMetrics>,
    pub oa: Option<TaskMetrics>,
    pub ow: Option<TaskMetrics>,
    /// OA and OW rows pooled.
    pub op: Option<TaskMetrics>,
    pub vp_pa: Option<PaErrors>,
    pub vp_bins: Vec<BinStat>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn r2_examples() {
        assert_eq!(r2(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(r2(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2(&[0.0, 1.0, 3.0], &[0.0, 1.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(r2(&[1.0, 2.0], &[3.0, 3.0]), Err(EvalError::DegenerateVariance)));
        assert!(matches!(r2(&[1.0], &[3.0]), Err(EvalError::TooFew { .. })));
    }

    #[test]
    fn pa_examples() {
        let s = Scaler::identity();
        assert_eq!(back_transform_vp(&[3.0, 1.0], &[3.0, 1.0], &s).unwrap(), PaErrors { rmse_pa: 0.0, mae_pa: 0.0 });
        let e = back_transform_vp(&[3.1], &[3.0], &s).unwrap();
        assert!((e.mae_pa - 1000.0 * (10f64.powf(0.1) - 1.0)).abs() < 1e-9);
        assert!((e.mae_pa - 258.9).abs() < 0.05);
        // a constant log offset gives a constant relative error
        let small = back_transform_vp(&[1.2], &[1.0], &s).unwrap().mae_pa / 10.0;
        let large = back_transform_vp(&[5.2], &[5.0], &s).unwrap().mae_pa / 1e5;
        assert!((small - large).abs() < 1e-12);
        let z = Scaler { kind: crate::preprocess::ScaleKind::MeanStd, center: 3.0, scale: 0.5 };
        let e = back_transform_vp(&[0.2], &[0.0], &z).unwrap();
        assert!((e.mae_pa - 1000.0 * (10f64.powf(0.1) - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn bin_examples() {
        let b = binned_mse(&[1.0, 2.0], &[0.9, 0.9]).unwrap();
        assert_eq!(b.iter().map(|s| s.n).collect::<Vec<_>>(), vec![0, 0, 0, 2]);
        assert_eq!(b[3].mse, Some(2.5));
        assert_eq!(b[0].mse, None);
        let b = binned_mse(&[1.0], &[0.3]).unwrap();
        assert_eq!(b[1].n, 1);
        let b = binned_mse(&[1.0], &[1.0]).unwrap();
        assert_eq!(b[3].n, 1);
    }

    proptest! {
        #[test]
        fn bins_match_group_by(pairs in prop::collection::vec((-3.0f64..3.0, 0.0f64..=1.0), 1..60)) {
            let (res, sims): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let got = binned_mse(&res, &sims).unwrap();
            let edges = [0.0, 0.3, 0.5, 0.7, 1.0];
            for b in 0..4 {
                let members: Vec<f64> = pairs
                    .iter()
                    .filter(|(_, s)| *s >= edges[b] && (*s < edges[b + 1] || (b == 3 && *s <= 1.0)))
                    .map(|(r, _)| r * r)
                    .collect();
                prop_assert_eq!(got[b].n, members.len());
                if let Some(m) = got[b].mse {
                    let expect = members.iter().sum::<f64>() / members.len() as f64;
                    prop_assert!((m - expect).abs() < 1e-12);
                }
            }
            let total = mse(&res, &vec![0.0; res.len()]).unwrap();
            let weighted: f64 = got.iter().filter_map(|b| b.mse.map(|m| m * b.n as f64)).sum::<f64>() / res.len() as f64;
            prop_assert!((total - weighted).abs() < 1e-12);
        }

        #[test]
        fn metrics_match_loops(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..80)) {
            let (p, y): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let mut se = 0.0;
            let mut ae = 0.0;
            for i in 0..p.len() {
                se += (p[i] - y[i]).powi(2);
                ae += (p[i] - y[i]).abs();
            }
            let n = p.len() as f64;
            prop_assert!((mse(&p, &y).unwrap() - se / n).abs() < 1e-12);
            prop_assert!((mae(&p, &y).unwrap() - ae / n).abs() < 1e-12);
            prop_assert!(r2(&p, &y).unwrap() <= 1.0);
        }
    }

    #[test]
    fn bootstrap_constant_and_reproducible() {
        let groups: Vec<Vec<f64>> = (0..10).map(|_| vec![0.7, 0.7]).collect();
        let (lo, hi) = bootstrap_ci(&groups, 500, 0.95, 3).unwrap();
        assert!((lo - 0.7).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
        let g: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin().abs(); 1 + i % 3]).collect();
        let a = bootstrap_ci(&g, BOOTSTRAP_REPLICATES, 0.95, 9).unwrap();
        let b = bootstrap_ci(&g, BOOTSTRAP_REPLICATES, 0.95, 9).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        let rows: Vec<f64> = g.iter().flatten().copied().collect();
        let point = rows.iter().sum::<f64>() / rows.len() as f64;
        assert!(a.0 <= point && point <= a.1);
    }

    #[test]
    fn bootstrap_matches_exhaustive_enumeration() {
        let values = [0.213, 0.331, 0.374, 0.487, 0.612];
        let groups: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let mut all = Vec::with_capacity(3125);
        for code in 0..3125usize {
            let mut c = code;
            let mut s = 0.0;
            for _ in 0..5 {
                s += values[c % 5];
                c /= 5;
            }
            all.push(s / 5.0);
        }
        all.sort_by(f64::total_cmp);
        let (lo, hi) = bootstrap_ci(&groups, 2000, 0.95, 1).unwrap();
        assert!((lo - quantile_sorted(&all, 0.025)).abs() < 0.02, "{lo}");
        assert!((hi - quantile_sorted(&all, 0.975)).abs() < 0.02, "{hi}");
    }

    #[test]
    fn molecule_rows_move_together() {
        // one molecule with many identical rows: the pooled mean weights rows
        let groups = vec![vec![1.0; 9], vec![0.0]];
        let (lo, hi) = bootstrap_ci(&groups, 400, 0.95, 0).unwrap();
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn mean_std_uses_n_minus_one() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
    }

    #[test]
    fn parity_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("parity.csv");
        let rows = vec![
            ParityRow { molecule_key: "CCO".into(), temperature: 298.15, y_true: 0.1, y_pred: -0.30000000000000004, fold: Fold::Test, max_sim: 0.5 },
            ParityRow { molecule_key: "C(C)Cl".into(), temperature: 310.0, y_true: 1e-17, y_pred: 2.0, fold: Fold::Val, max_sim: 1.0 },
        ];
        export_parity(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), PARITY_HEADER);
        assert_eq!(text.lines().count(), rows.len() + 1);
        assert_eq!(read_parity(&path).unwrap(), rows);
    }
}
