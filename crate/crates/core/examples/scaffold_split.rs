//! Scaffold split of a synthetic corpus with a leakage check and a
//! similarity summary of the held-out folds.

use std::collections::BTreeMap;

use odorgraph::fingerprint::similarity_report;
use odorgraph::pipeline::{fingerprints, ingest, scaffolds};
use odorgraph::scaffold::{capacity_split, group_by_scaffold, verify_no_leakage};
use odorgraph::synthdata::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate(1, 300, &SynthConfig::default());
    let (records, report) = ingest(&corpus.records)?;
    println!("ingest: {report:?}");
    let scafs = scaffolds(&records)?;
    let groups = group_by_scaffold(records.iter().zip(&scafs).map(|(r, s)| (r.key.as_str(), s.as_str())));
    let fold = capacity_split(&groups, [0.8, 0.1, 0.1], 0)?;
    let diag = verify_no_leakage(&fold, &groups)?;
    println!("{} scaffolds, counts {:?}", groups.len(), fold.counts());
    println!("{diag:#?}");

    let fps: BTreeMap<_, _> = records.iter().map(|r| r.key.clone()).zip(fingerprints(&records, 2, 2048)?).collect();
    for (name, f) in similarity_report(&fold, &fps)?.folds {
        println!("{name}: n {} median {:.2} iqr {:.2} p95 {:.2} bins {:?}", f.n, f.median, f.iqr, f.p95, f.bin_counts);
    }
    Ok(())
}
