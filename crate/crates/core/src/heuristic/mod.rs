//! The CRAM placement heuristic.
//!
//! Four phases: pick the smallest mixer count meeting the handling-time bound,
//! place mixers on servers nearest the participants, join mixers (through
//! compressors where the link is too slow), then attach participants to the
//! closest mixer with room, compressing uploads that would miss the bound.
//!
//! Delays follow the fork/join model in [`DelayModel::Algorithm1`].

mod compress;
mod phases;

use std::fmt;

use thiserror::Error;

use crate::model::{
    eval_delays, DelayModel, Endpoint, Instance, ModelError, Plan, ServerId, SiteId, StreamEdge,
    VmId, VmKind,
};

pub use compress::{compress, CompressOutcome, Sender};
pub use phases::{acs, assign_participants, dsort, inter_mixer_compress, min_mixers, place_mixers};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    MinMixers,
    PlaceMixers,
    InterMixerCompress,
    AssignParticipants,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::MinMixers => "min_mixers",
            Phase::PlaceMixers => "place_mixers",
            Phase::InterMixerCompress => "inter_mixer_compress",
            Phase::AssignParticipants => "assign_participants",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeuristicError {
    #[error("infeasible in {phase}: {reason}")]
    Infeasible {
        phase: Phase,
        reason: String,
        /// Handling time (ms) reached when the mixer search gave up.
        last_handling_ms: Option<f64>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl HeuristicError {
    pub(crate) fn infeasible(phase: Phase, reason: impl Into<String>) -> Self {
        HeuristicError::Infeasible {
            phase,
            reason: reason.into(),
            last_handling_ms: None,
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        match self {
            HeuristicError::Infeasible { phase, .. } => Some(*phase),
            HeuristicError::Model(_) => None,
        }
    }
}

/// A stream routed through a compressor.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CompressedStream {
    pub source: SiteId,
    pub dest: SiteId,
    /// Time the sender-to-destination leg may take once compressed.
    pub budget: f64,
    /// Index of the compressor's outgoing edge for this stream.
    pub out_edge: usize,
}

/// Working state of one heuristic run. Vectors are indexed by server.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    pub remaining_capacity: Vec<f64>,
    /// Participants attached to each mixer, per server.
    pub mixers_per_server: Vec<Vec<usize>>,
    /// Streams carried by each compressor, per server.
    pub compressors_per_server: Vec<Vec<usize>>,
    pub mix_time_per_server: Vec<Option<f64>>,
    pub max_user: usize,
    pub min_mixer: usize,
    /// DSort order used for placement and tie-breaking.
    pub order: Vec<ServerId>,
    pub(crate) mixer_ids: Vec<Vec<VmId>>,
    pub(crate) compressor_ids: Vec<Vec<VmId>>,
    /// Compressed streams per VM; empty for mixers.
    pub(crate) streams: Vec<Vec<CompressedStream>>,
    pub(crate) vms: Vec<(VmKind, ServerId)>,
    pub(crate) edges: Vec<StreamEdge>,
}

impl AllocationState {
    pub fn new(instance: &Instance, min_mixer: usize, max_user: usize) -> Self {
        let n = instance.servers().len();
        AllocationState {
            remaining_capacity: instance.servers().iter().map(|s| s.capacity_mb).collect(),
            mixers_per_server: vec![Vec::new(); n],
            compressors_per_server: vec![Vec::new(); n],
            mix_time_per_server: vec![None; n],
            max_user,
            min_mixer,
            order: instance.server_ids().collect(),
            mixer_ids: vec![Vec::new(); n],
            compressor_ids: vec![Vec::new(); n],
            streams: Vec::new(),
            vms: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Servers hosting at least one mixer, in DSort order.
    pub fn used_servers(&self) -> Vec<ServerId> {
        self.order
            .iter()
            .copied()
            .filter(|s| !self.mixer_ids[s.0].is_empty())
            .collect()
    }

    pub fn mixer_count(&self) -> usize {
        self.mixer_ids.iter().map(Vec::len).sum()
    }

    pub fn compressor_count(&self) -> usize {
        self.compressor_ids.iter().map(Vec::len).sum()
    }

    pub(crate) fn first_mixer(&self, s: ServerId) -> Option<VmId> {
        self.mixer_ids[s.0].first().copied()
    }

    pub(crate) fn add_vm(&mut self, kind: VmKind, server: ServerId) -> VmId {
        let id = VmId(self.vms.len());
        self.vms.push((kind, server));
        self.streams.push(Vec::new());
        match kind {
            VmKind::Mixer => {
                self.mixer_ids[server.0].push(id);
                self.mixers_per_server[server.0].push(0);
            }
            VmKind::Compressor => {
                self.compressor_ids[server.0].push(id);
                self.compressors_per_server[server.0].push(0);
            }
        }
        id
    }

    pub(crate) fn push_edge(&mut self, head: Endpoint, tail: Endpoint, rate: f64) -> usize {
        self.edges.push(StreamEdge {
            head,
            tail,
            compression_rate: rate,
        });
        self.edges.len() - 1
    }

    /// Plan built from the VMs and edges recorded so far.
    pub fn to_plan(&self) -> Plan {
        Plan::from_graph(self.vms.clone(), self.edges.clone())
    }
}

/// Runs all four phases and returns a plan whose delays are evaluated with
/// the fork/join model.
pub fn cram_allocate(instance: &Instance) -> Result<Plan, HeuristicError> {
    let (min_mixer, max_user) = min_mixers(instance)?;
    let mut state = AllocationState::new(instance, min_mixer, max_user);
    let order = dsort(
        instance.servers(),
        instance.participants(),
        instance.network(),
    );
    place_mixers(&mut state, instance, &order)?;
    inter_mixer_compress(&mut state, instance)?;
    let mut plan = assign_participants(&mut state, instance)?;
    plan.per_participant_delay = eval_delays(&plan, instance, DelayModel::Algorithm1)?;
    plan.feasible = true;
    Ok(plan)
}

#[cfg(test)]
mod tests;
