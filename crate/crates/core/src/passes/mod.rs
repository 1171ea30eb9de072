//! Graph pruning and restricted cloning.
//!
//! [`constant_fold`] replaces nodes whose inputs are all compile-time
//! constants by initializers, [`dead_code_eliminate`] drops nodes that no
//! declared output depends on, and [`clone_pass`] gives cheap multi-consumer
//! nodes near the top of the graph one private copy per consumer.

use serde::Serialize;
use thiserror::Error;

use crate::ir::NodeId;
use crate::ratio::Factor;

mod clone;
mod dce;
mod fold;

pub use clone::{clone_candidates, clone_pass};
pub use dce::dead_code_eliminate;
pub use fold::constant_fold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PassKind {
    Fold,
    Dce,
    Clone,
}

impl PassKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PassKind::Fold => "fold",
            PassKind::Dce => "dce",
            PassKind::Clone => "clone",
        }
    }

    pub fn parse(s: &str) -> Option<PassKind> {
        match s {
            "fold" => Some(PassKind::Fold),
            "dce" => Some(PassKind::Dce),
            "clone" => Some(PassKind::Clone),
            _ => None,
        }
    }
}

/// Copies made of one cloned node. The original keeps its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CloneRecord {
    pub original: NodeId,
    pub copies: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PassReport {
    pub pass: PassKind,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub folded: Vec<NodeId>,
    pub removed: Vec<NodeId>,
    pub cloned: Vec<CloneRecord>,
    /// `nodes_after / nodes_before`.
    pub growth_ratio: Factor,
    pub aborted: bool,
    pub warnings: Vec<String>,
}

impl PassReport {
    fn new(pass: PassKind, nodes_before: usize) -> Self {
        PassReport {
            pass,
            nodes_before,
            nodes_after: nodes_before,
            folded: Vec::new(),
            removed: Vec::new(),
            cloned: Vec::new(),
            growth_ratio: Factor::new(1, 1),
            aborted: false,
            warnings: Vec::new(),
        }
    }

    fn finish(mut self, nodes_after: usize) -> Self {
        self.nodes_after = nodes_after;
        self.growth_ratio = if self.nodes_before == 0 {
            Factor::new(1, 1)
        } else {
            Factor::new(nodes_after as u64, self.nodes_before as u64)
        };
        self
    }

    pub fn clones_added(&self) -> usize {
        self.cloned.iter().map(|c| c.copies.len()).sum()
    }

    /// `after == before - folded - removed + added`.
    pub fn is_balanced(&self) -> bool {
        self.nodes_before + self.clones_added() == self.nodes_after + self.folded.len() + self.removed.len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("max_clone_cost must be at least 1")]
    ZeroCost,
    #[error("depth_fraction must lie in (0, 1]")]
    DepthFraction,
    #[error("max_growth_ratio must be positive")]
    Growth,
}

/// Which nodes [`clone_pass`] may replicate, and how far the graph may grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClonePolicy {
    pub max_clone_cost: u64,
    /// Candidates need `dist >= (1 - depth_fraction) * max dist`.
    pub depth_fraction: Factor,
    pub max_growth_ratio: Factor,
}

impl Default for ClonePolicy {
    fn default() -> Self {
        ClonePolicy {
            max_clone_cost: 1,
            depth_fraction: Factor::new(1, 2),
            max_growth_ratio: Factor::new(5, 4),
        }
    }
}

impl ClonePolicy {
    pub fn check(&self) -> Result<(), PolicyError> {
        if self.max_clone_cost == 0 {
            return Err(PolicyError::ZeroCost);
        }
        let d = self.depth_fraction;
        if d.numer() == 0 || d.numer() > d.denom() {
            return Err(PolicyError::DepthFraction);
        }
        if self.max_growth_ratio.numer() == 0 {
            return Err(PolicyError::Growth);
        }
        Ok(())
    }
}
