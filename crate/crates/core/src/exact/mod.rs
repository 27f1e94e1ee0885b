//! Ground truth for small instances: an exhaustive optimal search and an
//! exporter of the full integer program in LP text format.
//!
//! Both work in the integer program's solution space: a simple directed graph
//! (at most one edge per ordered pair), at most `|U| - 1` mixers and
//! `2|U| - 1` compressors, every compressor out-edge compressed at the fixed
//! rate `fixed_gamma`, delays by longest path ([`DelayModel::Ilp`]).
//!
//! [`DelayModel::Ilp`]: crate::model::DelayModel::Ilp

mod lp;
mod search;

use thiserror::Error;

use crate::model::ModelError;

pub use lp::{export_lp, LpDocument, LpParseError, LpRow, LpSense};
pub use search::{brute_force_optimal, brute_force_with_stats, SearchStats};

/// Limits beyond which the exhaustive search refuses to run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBounds {
    pub max_participants: usize,
    pub max_servers: usize,
    /// Defaults to `|U| - 1`.
    pub max_mixers: Option<usize>,
    /// Defaults to `2|U| - 1`.
    pub max_compressors: Option<usize>,
    /// Complete stream graphs evaluated before giving up.
    pub node_budget: u64,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            max_participants: 5,
            max_servers: 3,
            max_mixers: None,
            max_compressors: None,
            node_budget: 10_000_000,
        }
    }
}

impl SearchBounds {
    pub fn mixers_for(&self, users: usize) -> usize {
        self.max_mixers.unwrap_or(users - 1).min(users - 1)
    }

    pub fn compressors_for(&self, users: usize) -> usize {
        self.max_compressors
            .unwrap_or(2 * users - 1)
            .min(2 * users - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExactError {
    #[error("{what} = {value} exceeds the search bound {limit}")]
    OutOfBounds {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("search budget exhausted after {evaluated} graphs")]
    BudgetExceeded { evaluated: u64 },
    #[error("no feasible plan: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
