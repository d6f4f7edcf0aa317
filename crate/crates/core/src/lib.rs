//! Conditional variational Transformer for SMILES generation.

pub mod checkpoint;
pub mod chem;
pub mod cli;
pub mod cvae;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
pub mod transformer;
