//! Placement of conferencing mixers and compressors on geo-distributed servers.

pub mod exact;
pub mod heuristic;
pub mod model;
pub mod scenarios;
