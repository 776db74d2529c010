//! Generate a synthetic corpus and write it as a dataset CSV.
//!
//!     cargo run --example synth_corpus -- 200 out.csv

use odorgraph::preprocess::write_records;
use odorgraph::synthdata::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let out = args.get(2).cloned().unwrap_or_else(|| "synth.csv".into());

    let corpus = generate(0, n, &SynthConfig::default());
    write_records(out.as_ref(), &corpus.records)?;
    let with_op = corpus.truth.iter().filter(|t| t.oa.is_some() || t.ow.is_some()).count();
    println!("{} molecules, {} rows, {with_op} with an odor threshold -> {out}", corpus.truth.len(), corpus.records.len());
    for t in corpus.truth.iter().take(5) {
        println!("  {:<30} log10 VP(298 K) = {:.2}", t.smiles, t.stats.vp(298.15));
    }
    Ok(())
}
