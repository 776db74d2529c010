//! Rank a few compounds by near-source air concentration over threshold.

use odorgraph::detect::{rank_detectability, Compound, Partition, Scenario};
use odorgraph::preprocess::Medium;

fn main() -> anyhow::Result<()> {
    let scenario = Scenario { temperature_k: 298.15, p_tot: 101_325.0, partition: Partition::Raoult { x: 0.01 }, gamma: 2.0 };
    let c = |key: &str, vp: f64, c50: f64, mm: f64| Compound {
        molecule_key: key.into(),
        log10_vp_pa: vp,
        log10_c50: c50,
        medium: Medium::Air,
        molar_mass: mm,
    };
    let compounds = [
        c("CCO", 3.9, 2.0, 46.07),
        c("CC(C)CC=O", 3.1, -2.3, 86.13),
        c("COc1ccc(C=O)cc1O", -0.6, -3.5, 152.15),
        c("CCCCCCCCCC", 2.2, 1.0, 142.28),
    ];
    println!("{:<4} {:<20} {:>11} {:>11} {:>11} {:>8}", "rank", "compound", "C_air", "C50", "ratio", "P");
    for r in rank_detectability(&compounds, &scenario)? {
        println!("{:<4} {:<20} {:>11.3e} {:>11.3e} {:>11.3e} {:>8.4}", r.rank, r.molecule_key, r.c_air, r.c50, r.ratio, r.p_detect);
    }
    Ok(())
}
