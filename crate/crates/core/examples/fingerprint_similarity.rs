//! ECFP fingerprints and Tanimoto similarity against a small reference set.

use odorgraph::fingerprint::{ecfp, max_similarity_to_train, sim_bin, tanimoto, DEFAULT_NBITS, SIM_BIN_LABELS};
use odorgraph::smiles::parse_smiles;

fn main() -> anyhow::Result<()> {
    let reference = ["CCCCCCO", "CC(C)CCOC(C)=O", "COc1ccccc1", "CC1=CCC(CC1)C(C)=C"];
    let queries = ["CCCCCCCO", "CCOC(C)=O", "COc1ccc(C=O)cc1", "C1CCNCC1"];
    let fp = |s: &str| -> anyhow::Result<_> { Ok(ecfp(&parse_smiles(s)?, 2, DEFAULT_NBITS)) };
    let train = reference.iter().map(|s| fp(s)).collect::<anyhow::Result<Vec<_>>>()?;
    let refs: Vec<_> = train.iter().collect();

    for q in queries {
        let f = fp(q)?;
        let sims: Vec<String> = train.iter().map(|t| tanimoto(&f, t).map(|s| format!("{s:.2}"))).collect::<Result<_, _>>()?;
        let best = max_similarity_to_train(&f, &refs)?;
        println!("{q:<18} bits {:>3}  sims [{}]  max {best:.2} {}", f.count_ones(), sims.join(" "), SIM_BIN_LABELS[sim_bin(best)]);
    }
    Ok(())
}
