//! Task-parallelizing compiler for operator dataflow graphs.
//!
//! The pipeline loads a DAG of tensor operations ([`ingest`]), optionally
//! prunes or clones it ([`passes`]), weighs it with a static cost model
//! ([`analysis`]), partitions it into linear clusters along successive
//! critical paths and merges clusters whose distance spans do not overlap
//! ([`clustering`]), predicts the parallel schedule ([`sim`]) and emits one
//! message-passing worker per cluster plus a sequential reference
//! ([`codegen`]). [`pipeline`] wires the stages together.

pub mod analysis;
pub mod clustering;
pub mod codegen;
pub mod fixtures;
pub mod ingest;
pub mod ir;
pub mod passes;
pub mod pipeline;
pub mod ratio;
pub mod sim;

pub use analysis::{CostModel, DistanceMap};
pub use ir::{Graph, Node, NodeId, OpKind};
