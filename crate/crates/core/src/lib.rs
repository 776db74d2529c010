//! Vapor-pressure and odor-threshold modeling on molecular graphs.

pub mod autodiff;
pub mod cli;
pub mod detect;
pub mod eval;
pub mod features;
pub mod fingerprint;
pub mod gnn;
pub mod pipeline;
pub mod preprocess;
pub mod safemt;
pub mod scaffold;
pub mod smiles;
pub mod synthdata;
