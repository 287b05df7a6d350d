pub mod cold_start;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod molgraph;
pub mod pipeline;
pub mod protein;
pub mod smiles;
pub mod split;
pub mod tensor;
