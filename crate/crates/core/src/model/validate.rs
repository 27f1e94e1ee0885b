//! Constraint checking of a plan against an instance.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::eval::{eval_delays, memory_per_server, DelayModel};
use super::ilp::reach_counts;
use super::{Endpoint, Instance, Plan, VmKind, TOLERANCE};

/// The constraint families of the placement model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Plan references something that does not exist.
    Structure,
    /// Each participant sends exactly one stream.
    UploadDegree,
    /// Each participant receives exactly one stream.
    DownloadDegree,
    /// No stream goes directly between participants.
    ParticipantLink,
    /// A VM never streams to itself.
    SelfLoop,
    /// Participants receive only from VMs holding every participant's media.
    CompleteSource,
    /// A compressor emits as many streams as it receives.
    CompressorBalance,
    /// No stream goes directly between compressors.
    CompressorChain,
    /// At least one mixer holds every participant's media.
    MixerCoverage,
    /// A placed VM receives and emits at least one stream.
    VmPlacement,
    /// A VM's declared input count equals its in-degree.
    InputCount,
    /// Rates lie in [0, max rate] and only on compressor outputs.
    CompressionRate,
    /// Server memory stays within capacity.
    Capacity,
    /// End-to-end delay stays within the QoS bound.
    Delay,
}

impl Constraint {
    pub fn code(self) -> &'static str {
        match self {
            Constraint::Structure => "structure",
            Constraint::UploadDegree => "upload-degree",
            Constraint::DownloadDegree => "download-degree",
            Constraint::ParticipantLink => "participant-link",
            Constraint::SelfLoop => "self-loop",
            Constraint::CompleteSource => "complete-source",
            Constraint::CompressorBalance => "compressor-balance",
            Constraint::CompressorChain => "compressor-chain",
            Constraint::MixerCoverage => "mixer-coverage",
            Constraint::VmPlacement => "vm-placement",
            Constraint::InputCount => "input-count",
            Constraint::CompressionRate => "compression-rate",
            Constraint::Capacity => "capacity",
            Constraint::Delay => "delay",
        }
    }

    /// Structural constraints are those independent of delay.
    pub fn is_structural(self) -> bool {
        self != Constraint::Delay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub subject: String,
    pub detail: String,
}

impl Violation {
    fn new(constraint: Constraint, subject: impl Into<String>, detail: impl Into<String>) -> Self {
        Violation {
            constraint,
            subject: subject.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {}",
            self.constraint.code(),
            self.subject,
            self.detail
        )
    }
}

/// Every constraint the plan breaks, in a stable order. Empty means feasible.
pub fn validate_plan(plan: &Plan, instance: &Instance, model: DelayModel) -> Vec<Violation> {
    use Constraint::*;
    let mut out = Vec::new();
    if let Err(e) = plan.check_references(instance) {
        out.push(Violation::new(Structure, "plan", e.to_string()));
        return out;
    }
    let n_users = instance.participants().len();
    let n_vms = plan.vms.len();
    let mut up = vec![0usize; n_users];
    let mut down = vec![0usize; n_users];
    let mut vm_in = vec![0usize; n_vms];
    let mut vm_out = vec![0usize; n_vms];
    for e in &plan.edges {
        match e.head {
            Endpoint::Participant(u) => up[u.0] += 1,
            Endpoint::Vm(v) => vm_out[v.0] += 1,
        }
        match e.tail {
            Endpoint::Participant(u) => down[u.0] += 1,
            Endpoint::Vm(v) => vm_in[v.0] += 1,
        }
    }
    for u in 0..n_users {
        if up[u] != 1 {
            out.push(Violation::new(
                UploadDegree,
                format!("participant {u}"),
                format!("sends {} streams", up[u]),
            ));
        }
    }
    for u in 0..n_users {
        if down[u] != 1 {
            out.push(Violation::new(
                DownloadDegree,
                format!("participant {u}"),
                format!("receives {} streams", down[u]),
            ));
        }
    }
    let is_comp =
        |ep: Endpoint| matches!(ep, Endpoint::Vm(v) if plan.vms[v.0].kind == VmKind::Compressor);
    for (i, e) in plan.edges.iter().enumerate() {
        if let (Endpoint::Participant(a), Endpoint::Participant(b)) = (e.head, e.tail) {
            out.push(Violation::new(
                ParticipantLink,
                format!("edge {i}"),
                format!("participant {a} streams directly to participant {b}"),
            ));
        }
    }
    for (i, e) in plan.edges.iter().enumerate() {
        if let (Endpoint::Vm(a), Endpoint::Vm(b)) = (e.head, e.tail) {
            if a == b {
                out.push(Violation::new(
                    SelfLoop,
                    format!("edge {i}"),
                    format!("vm {a} streams to itself"),
                ));
            }
        }
    }

    let reach = reach_counts(plan, n_users);
    for (i, e) in plan.edges.iter().enumerate() {
        if let (Endpoint::Vm(v), Endpoint::Participant(u)) = (e.head, e.tail) {
            if reach[v.0] < n_users {
                out.push(Violation::new(
                    CompleteSource,
                    format!("edge {i}"),
                    format!(
                        "vm {v} serves participant {u} but only {} of {n_users} participants reach it",
                        reach[v.0]
                    ),
                ));
            }
        }
    }
    for (v, vm) in plan.vms.iter().enumerate() {
        if vm.kind == VmKind::Compressor && vm_in[v] != vm_out[v] {
            out.push(Violation::new(
                CompressorBalance,
                format!("vm {v}"),
                format!("{} inputs but {} outputs", vm_in[v], vm_out[v]),
            ));
        }
    }
    for (i, e) in plan.edges.iter().enumerate() {
        if is_comp(e.head) && is_comp(e.tail) {
            out.push(Violation::new(
                CompressorChain,
                format!("edge {i}"),
                format!("{} streams directly to {}", e.head, e.tail),
            ));
        }
    }
    let covered = plan
        .vms
        .iter()
        .enumerate()
        .any(|(v, vm)| vm.kind == VmKind::Mixer && reach[v] == n_users);
    if !covered {
        out.push(Violation::new(
            MixerCoverage,
            "plan",
            "no mixer is reached by every participant",
        ));
    }
    for v in 0..n_vms {
        if vm_in[v] == 0 || vm_out[v] == 0 {
            out.push(Violation::new(
                VmPlacement,
                format!("vm {v}"),
                format!("placed with {} inputs and {} outputs", vm_in[v], vm_out[v]),
            ));
        }
    }
    for (v, vm) in plan.vms.iter().enumerate() {
        if vm.input_count != vm_in[v] {
            out.push(Violation::new(
                InputCount,
                format!("vm {v}"),
                format!("declares {} inputs but has {}", vm.input_count, vm_in[v]),
            ));
        }
    }
    let max_rate = instance.media().max_compression_rate;
    for (i, e) in plan.edges.iter().enumerate() {
        let r = e.compression_rate;
        let bad = if is_comp(e.head) {
            !(r >= 0.0 && r <= max_rate + TOLERANCE)
        } else {
            r != 0.0
        };
        if bad {
            out.push(Violation::new(
                CompressionRate,
                format!("edge {i}"),
                format!("rate {r} from {}", e.head),
            ));
        }
    }
    for (s, mem) in memory_per_server(plan, instance).into_iter().enumerate() {
        let cap = instance.servers()[s].capacity_mb;
        if mem > cap + TOLERANCE {
            out.push(Violation::new(
                Capacity,
                format!("server {s}"),
                format!("allocates {mem} MB of {cap} MB"),
            ));
        }
    }
    match eval_delays(plan, instance, model) {
        Ok(delays) => {
            let bound = instance.qos().max_delay_ms;
            for (u, d) in delays.into_iter().enumerate() {
                if d > bound + TOLERANCE {
                    out.push(Violation::new(
                        Delay,
                        format!("participant {u}"),
                        format!("delay {d:.3} ms exceeds {bound} ms"),
                    ));
                }
            }
        }
        Err(e) => out.push(Violation::new(
            Delay,
            "plan",
            format!("delay undefined: {e}"),
        )),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::{ServerId, StreamEdge};

    fn codes(v: &[Violation]) -> Vec<Constraint> {
        v.iter().map(|x| x.constraint).collect()
    }

    #[test]
    fn minimal_star_is_feasible() {
        let inst = colocated(4);
        assert!(validate_plan(&star(4, 0), &inst, DelayModel::Algorithm1).is_empty());
        assert!(validate_plan(&star(4, 0), &inst, DelayModel::Ilp).is_empty());
    }

    #[test]
    fn participant_link_is_reported() {
        let inst = colocated(3);
        let mut plan = star(3, 0);
        plan.edges.push(StreamEdge::plain(p(0), p(1)));
        let v = validate_plan(&plan, &inst, DelayModel::Ilp);
        assert!(codes(&v).contains(&Constraint::ParticipantLink));
    }

    #[test]
    fn exact_capacity_arithmetic() {
        // One server hosting VMs totalling 10 440 MB: 18 VMs of 400 + 9*20 = 580.
        let inst = instance(vec![vec![0.0]], &[(0, 10240.0)], &[0, 0], 400.0);
        let mut edges = vec![
            StreamEdge::plain(p(0), v(0)),
            StreamEdge::plain(p(1), v(0)),
            StreamEdge::plain(v(0), p(0)),
            StreamEdge::plain(v(0), p(1)),
        ];
        // a chain of compressors-free mixers each fed 9 times by the previous one
        let mut vms = vec![(VmKind::Mixer, ServerId(0))];
        for m in 1..18 {
            vms.push((VmKind::Mixer, ServerId(0)));
            for _ in 0..9 {
                edges.push(StreamEdge::plain(v(m - 1), v(m)));
            }
        }
        let mut plan = Plan::from_graph(vms, edges);
        // the first mixer also needs 9 inputs worth of resources: pad with its 2 participants + 7 loops
        for _ in 0..7 {
            plan.edges.push(StreamEdge::plain(v(17), v(0)));
        }
        plan.refresh_input_counts();
        let mem = memory_per_server(&plan, &inst)[0];
        assert!((mem - 10440.0).abs() < 1e-9);
        let v = validate_plan(&plan, &inst, DelayModel::Algorithm1);
        assert!(codes(&v).contains(&Constraint::Capacity));
    }

    #[test]
    fn compressor_rules() {
        let inst = colocated(2);
        let plan = Plan::from_graph(
            vec![
                (VmKind::Mixer, ServerId(0)),
                (VmKind::Compressor, ServerId(0)),
                (VmKind::Compressor, ServerId(0)),
            ],
            vec![
                StreamEdge::plain(p(0), v(1)),
                StreamEdge::plain(p(1), v(0)),
                StreamEdge::plain(v(1), v(2)),
                StreamEdge::plain(v(2), v(0)),
                StreamEdge::plain(v(2), v(0)),
                StreamEdge::plain(v(0), p(0)),
                StreamEdge::plain(v(0), p(1)),
            ],
        );
        let c = codes(&validate_plan(&plan, &inst, DelayModel::Ilp));
        assert!(c.contains(&Constraint::CompressorChain));
        assert!(c.contains(&Constraint::CompressorBalance));
    }

    #[test]
    fn incomplete_source_and_missing_mixer() {
        let inst = colocated(2);
        // Each participant has its own mixer and nothing joins them.
        let plan = Plan::from_graph(
            vec![(VmKind::Mixer, ServerId(0)), (VmKind::Mixer, ServerId(0))],
            vec![
                StreamEdge::plain(p(0), v(0)),
                StreamEdge::plain(p(1), v(1)),
                StreamEdge::plain(v(0), p(0)),
                StreamEdge::plain(v(1), p(1)),
            ],
        );
        let c = codes(&validate_plan(&plan, &inst, DelayModel::Ilp));
        assert!(c.contains(&Constraint::CompleteSource));
        assert!(c.contains(&Constraint::MixerCoverage));
    }

    #[test]
    fn delay_bound_is_checked() {
        let inst = instance(vec![vec![0.0]], &[(0, 10240.0)], &[0, 0], 11.0);
        let v = validate_plan(&star(2, 0), &inst, DelayModel::Ilp);
        assert_eq!(codes(&v), vec![Constraint::Delay, Constraint::Delay]);
    }

    #[test]
    fn validation_is_deterministic() {
        let inst = colocated(3);
        let mut plan = star(3, 0);
        plan.edges.push(StreamEdge::plain(p(0), p(1)));
        plan.edges.push(StreamEdge::plain(v(0), v(0)));
        let a = validate_plan(&plan, &inst, DelayModel::Ilp);
        let b = validate_plan(&plan, &inst, DelayModel::Ilp);
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }
}
