//! Parse SMILES, print the canonical key, Murcko scaffold and graph encoding.
//!
//!     cargo run --example parse_and_featurize -- "c1ccccc1CC(=O)O" "CC(C)CO"

use odorgraph::features::{encode_graph, NODE_DIM, EDGE_DIM};
use odorgraph::scaffold::murcko_scaffold;
use odorgraph::smiles::{canonical_key, parse_smiles};

fn main() {
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = ["OCC1=CC=CC=C1", "CC(=O)OCC", "C1CC1((C)", "O=C1CCCCC1C"].map(String::from).to_vec();
    }
    for s in &inputs {
        match parse_smiles(s) {
            Ok(mol) => {
                let (nodes, edges, _) = encode_graph(&mol);
                println!("{s}");
                println!("  key       {}", canonical_key(&mol));
                println!("  scaffold  {:?}", murcko_scaffold(&mol));
                println!("  mass      {:.3} g/mol, {} rings", mol.molar_mass(), mol.rings().len());
                println!("  graph     {} nodes x {NODE_DIM}, {} directed edges x {EDGE_DIM}", nodes.len(), edges.len());
            }
            Err(e) => println!("{s}\n  error     {e}"),
        }
    }
}
