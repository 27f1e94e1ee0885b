//! Cost, memory and delay evaluation of plans.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    Endpoint, Instance, ModelError, ParticipantId, Plan, PlanMetrics, ServerId, VmId, VmKind,
};

/// Which end-to-end delay semantics to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayModel {
    /// Fork/join model used by the allocation heuristic: upload, then a
    /// per-server mixing time covering partial mixes and the join across
    /// mixer servers, then download.
    #[default]
    Algorithm1,
    /// Longest-path arrival over the stream graph, each VM adding its
    /// handling time at its input load. Requires an acyclic graph.
    Ilp,
}

impl std::str::FromStr for DelayModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "algorithm1" => Ok(DelayModel::Algorithm1),
            "ilp" => Ok(DelayModel::Ilp),
            other => Err(format!("unknown delay model `{other}`")),
        }
    }
}

pub fn eval_server_cost(plan: &Plan, instance: &Instance) -> Result<f64, ModelError> {
    plan.check_references(instance)?;
    Ok(plan
        .vms
        .iter()
        .map(|vm| instance.vm_cost(vm.server, vm.input_count))
        .sum())
}

pub fn eval_network_cost(plan: &Plan, instance: &Instance) -> Result<f64, ModelError> {
    plan.check_references(instance)?;
    let net = instance.network();
    Ok(plan
        .edges
        .iter()
        .map(|e| {
            let a = plan.site_of(e.head, instance);
            let b = plan.site_of(e.tail, instance);
            net.cost(a, b) * (1.0 - e.compression_rate)
        })
        .sum())
}

/// Memory allocated by all VMs of the plan, in MB.
pub fn allocated_memory(plan: &Plan, instance: &Instance) -> f64 {
    plan.vms
        .iter()
        .map(|vm| instance.media().vm_resources(vm.input_count))
        .sum()
}

/// Memory allocated per server, indexed by server.
pub fn memory_per_server(plan: &Plan, instance: &Instance) -> Vec<f64> {
    let mut mem = vec![0.0; instance.servers().len()];
    for vm in &plan.vms {
        if let Some(m) = mem.get_mut(vm.server.0) {
            *m += instance.media().vm_resources(vm.input_count);
        }
    }
    mem
}

/// Per-participant end-to-end delay in ms, indexed by participant.
pub fn eval_delays(
    plan: &Plan,
    instance: &Instance,
    model: DelayModel,
) -> Result<Vec<f64>, ModelError> {
    plan.check_references(instance)?;
    let graph = Graph::build(plan, instance)?;
    match model {
        DelayModel::Ilp => ilp_delays(plan, instance, &graph),
        DelayModel::Algorithm1 => fork_join_delays(plan, instance, &graph),
    }
}

pub fn metrics(
    plan: &Plan,
    instance: &Instance,
    model: DelayModel,
) -> Result<PlanMetrics, ModelError> {
    let server_cost = eval_server_cost(plan, instance)?;
    let network_cost = eval_network_cost(plan, instance)?;
    let max_delay = if plan.vms.is_empty() && plan.edges.is_empty() {
        0.0
    } else {
        eval_delays(plan, instance, model)?
            .into_iter()
            .fold(0.0, f64::max)
    };
    let compression_rates = plan
        .edges
        .iter()
        .filter(|e| matches!(e.head, Endpoint::Vm(v) if plan.vms[v.0].kind == VmKind::Compressor))
        .map(|e| e.compression_rate)
        .collect();
    Ok(PlanMetrics {
        server_cost,
        network_cost,
        total_cost: server_cost + network_cost,
        max_delay,
        compression_rates,
        vm_count: plan.vms.len(),
        mixer_count: plan.mixer_count(),
        compressor_count: plan.compressor_count(),
        allocated_memory: allocated_memory(plan, instance),
    })
}

/// Edge incidence of a plan whose references are known to resolve.
pub(crate) struct Graph {
    pub upload: Vec<usize>,
    pub download: Vec<usize>,
    pub vm_in: Vec<Vec<usize>>,
    pub vm_out: Vec<Vec<usize>>,
}

impl Graph {
    pub(crate) fn build(plan: &Plan, instance: &Instance) -> Result<Graph, ModelError> {
        let n_users = instance.participants().len();
        let mut up: Vec<Option<usize>> = vec![None; n_users];
        let mut down: Vec<Option<usize>> = vec![None; n_users];
        let mut vm_in = vec![Vec::new(); plan.vms.len()];
        let mut vm_out = vec![Vec::new(); plan.vms.len()];
        for (i, e) in plan.edges.iter().enumerate() {
            match e.head {
                Endpoint::Participant(u) => {
                    if up[u.0].replace(i).is_some() {
                        return Err(ModelError::Disconnected(u.0));
                    }
                }
                Endpoint::Vm(v) => vm_out[v.0].push(i),
            }
            match e.tail {
                Endpoint::Participant(u) => {
                    if down[u.0].replace(i).is_some() {
                        return Err(ModelError::Disconnected(u.0));
                    }
                }
                Endpoint::Vm(v) => vm_in[v.0].push(i),
            }
        }
        let mut upload = Vec::with_capacity(n_users);
        let mut download = Vec::with_capacity(n_users);
        for u in 0..n_users {
            match (up[u], down[u]) {
                (Some(a), Some(b)) => {
                    upload.push(a);
                    download.push(b);
                }
                _ => return Err(ModelError::Disconnected(u)),
            }
        }
        Ok(Graph {
            upload,
            download,
            vm_in,
            vm_out,
        })
    }

    /// Position-paired output edge carrying the same stream as input edge `e` of compressor `c`.
    fn paired_out(&self, c: usize, e: usize) -> Result<usize, ModelError> {
        if self.vm_in[c].len() != self.vm_out[c].len() {
            return Err(ModelError::UnbalancedCompressor(c));
        }
        let k = self.vm_in[c]
            .iter()
            .position(|&x| x == e)
            .expect("edge enters vm");
        Ok(self.vm_out[c][k])
    }

    fn paired_in(&self, c: usize, e: usize) -> Result<usize, ModelError> {
        if self.vm_in[c].len() != self.vm_out[c].len() {
            return Err(ModelError::UnbalancedCompressor(c));
        }
        let k = self.vm_out[c]
            .iter()
            .position(|&x| x == e)
            .expect("edge leaves vm");
        Ok(self.vm_in[c][k])
    }
}

fn edge_time(plan: &Plan, instance: &Instance, e: usize) -> f64 {
    let edge = &plan.edges[e];
    let a = plan.site_of(edge.head, instance);
    let b = plan.site_of(edge.tail, instance);
    instance.network().time(a, b) * (1.0 - edge.compression_rate)
}

/// Longest-path arrival time at each VM (participants emit at time 0).
pub(crate) fn ilp_arrivals(
    plan: &Plan,
    instance: &Instance,
    graph: &Graph,
) -> Result<Vec<f64>, ModelError> {
    let n = plan.vms.len();
    let mut pending: Vec<usize> = graph
        .vm_in
        .iter()
        .map(|ins| {
            ins.iter()
                .filter(|&&e| matches!(plan.edges[e].head, Endpoint::Vm(_)))
                .count()
        })
        .collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| pending[v] == 0).collect();
    let mut arrival = vec![f64::NAN; n];
    let mut done = 0;
    while let Some(v) = queue.pop_front() {
        done += 1;
        let latest = graph.vm_in[v]
            .iter()
            .map(|&e| {
                let from = match plan.edges[e].head {
                    Endpoint::Participant(_) => 0.0,
                    Endpoint::Vm(h) => arrival[h.0],
                };
                from + edge_time(plan, instance, e)
            })
            .fold(0.0, f64::max);
        arrival[v] = latest + instance.media().handling_time(plan.vms[v].input_count);
        for &e in &graph.vm_out[v] {
            if let Endpoint::Vm(t) = plan.edges[e].tail {
                pending[t.0] -= 1;
                if pending[t.0] == 0 {
                    queue.push_back(t.0);
                }
            }
        }
    }
    if done < n {
        let v = (0..n).find(|&v| pending[v] > 0).unwrap_or(0);
        return Err(ModelError::Cycle(v));
    }
    Ok(arrival)
}

fn ilp_delays(plan: &Plan, instance: &Instance, graph: &Graph) -> Result<Vec<f64>, ModelError> {
    let arrival = ilp_arrivals(plan, instance, graph)?;
    Ok(graph
        .download
        .iter()
        .map(|&e| {
            let from = match plan.edges[e].head {
                Endpoint::Vm(v) => arrival[v.0],
                Endpoint::Participant(_) => 0.0,
            };
            from + edge_time(plan, instance, e)
        })
        .collect())
}

/// Per-server mixing time of the fork/join model, `None` for servers without mixers.
pub fn mix_times(plan: &Plan, instance: &Instance) -> Result<Vec<Option<f64>>, ModelError> {
    plan.check_references(instance)?;
    let graph = Graph::build(plan, instance)?;
    fork_join_mix_times(plan, instance, &graph)
}

fn fork_join_mix_times(
    plan: &Plan,
    instance: &Instance,
    graph: &Graph,
) -> Result<Vec<Option<f64>>, ModelError> {
    let media = instance.media();
    let mut per_server = vec![0usize; instance.servers().len()];
    for vm in plan.vms.iter().filter(|v| v.kind == VmKind::Mixer) {
        per_server[vm.server.0] += 1;
    }
    let mixers: usize = per_server.iter().sum();
    if mixers == 0 {
        return Ok(vec![None; per_server.len()]);
    }
    let used: Vec<ServerId> = (0..per_server.len())
        .filter(|&s| per_server[s] > 0)
        .map(ServerId)
        .collect();
    let max_user = instance.participants().len().div_ceil(mixers);

    let mut join: HashMap<(ServerId, ServerId), f64> = HashMap::new();
    let mut offer = |from: ServerId, to: ServerId, t: f64| {
        if from != to {
            let slot = join.entry((from, to)).or_insert(f64::INFINITY);
            *slot = slot.min(t);
        }
    };
    for (i, e) in plan.edges.iter().enumerate() {
        let (Endpoint::Vm(h), Endpoint::Vm(t)) = (e.head, e.tail) else {
            continue;
        };
        let (hv, tv) = (&plan.vms[h.0], &plan.vms[t.0]);
        if tv.kind != VmKind::Mixer {
            continue;
        }
        match hv.kind {
            VmKind::Mixer => offer(hv.server, tv.server, edge_time(plan, instance, i)),
            VmKind::Compressor => {
                let inbound = graph.paired_in(h.0, i)?;
                if let Endpoint::Vm(src) = plan.edges[inbound].head {
                    let sv = &plan.vms[src.0];
                    if sv.kind == VmKind::Mixer {
                        let t = edge_time(plan, instance, inbound)
                            + media.handling_time(hv.input_count)
                            + edge_time(plan, instance, i);
                        offer(sv.server, tv.server, t);
                    }
                }
            }
        }
    }

    let mut out = vec![None; per_server.len()];
    for &s in &used {
        let base = media.handling_time(max_user)
            + media.handling_time(per_server[s.0])
            + media.handling_time(used.len());
        let mut worst = 0.0f64;
        for &n in &used {
            if n == s {
                continue;
            }
            match join.get(&(s, n)) {
                Some(&t) => worst = worst.max(t),
                None => return Err(ModelError::MissingJoinRoute { from: s.0, to: n.0 }),
            }
        }
        out[s.0] = Some(base + worst);
    }
    Ok(out)
}

fn fork_join_delays(
    plan: &Plan,
    instance: &Instance,
    graph: &Graph,
) -> Result<Vec<f64>, ModelError> {
    let media = instance.media();
    let mix = fork_join_mix_times(plan, instance, graph)?;
    let mut delays = Vec::with_capacity(graph.upload.len());
    for (u, (&up_e, &down_e)) in graph.upload.iter().zip(&graph.download).enumerate() {
        let malformed = |reason| ModelError::MalformedRoute {
            participant: u,
            reason,
        };
        let Endpoint::Vm(first) = plan.edges[up_e].tail else {
            return Err(malformed("upload does not reach a vm"));
        };
        let up = match plan.vms[first.0].kind {
            VmKind::Mixer => edge_time(plan, instance, up_e),
            VmKind::Compressor => {
                let next = graph.paired_out(first.0, up_e)?;
                match plan.edges[next].tail {
                    Endpoint::Vm(m) if plan.vms[m.0].kind == VmKind::Mixer => {}
                    _ => return Err(malformed("compressed upload does not reach a mixer")),
                }
                edge_time(plan, instance, up_e)
                    + media.handling_time(plan.vms[first.0].input_count)
                    + edge_time(plan, instance, next)
            }
        };
        let Endpoint::Vm(last) = plan.edges[down_e].head else {
            return Err(malformed("download does not come from a vm"));
        };
        let (mixer, down) = match plan.vms[last.0].kind {
            VmKind::Mixer => (last, edge_time(plan, instance, down_e)),
            VmKind::Compressor => {
                let prev = graph.paired_in(last.0, down_e)?;
                match plan.edges[prev].head {
                    Endpoint::Vm(m) if plan.vms[m.0].kind == VmKind::Mixer => (
                        m,
                        edge_time(plan, instance, prev)
                            + media.handling_time(plan.vms[last.0].input_count)
                            + edge_time(plan, instance, down_e),
                    ),
                    _ => return Err(malformed("compressed download does not come from a mixer")),
                }
            }
        };
        let server = plan.vms[mixer.0].server;
        let mix_time = mix[server.0].ok_or(malformed("download mixer has no mixing time"))?;
        delays.push(up + mix_time + down);
    }
    Ok(delays)
}

/// Mixer VM that participant `u` downloads its stream from, following a compressor hop if any.
pub fn serving_mixer(plan: &Plan, instance: &Instance, u: ParticipantId) -> Option<VmId> {
    let graph = Graph::build(plan, instance).ok()?;
    let e = graph.download[u.0];
    let Endpoint::Vm(v) = plan.edges[e].head else {
        return None;
    };
    match plan.vms[v.0].kind {
        VmKind::Mixer => Some(v),
        VmKind::Compressor => match plan.edges[graph.paired_in(v.0, e).ok()?].head {
            Endpoint::Vm(m) => Some(m),
            _ => None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::{StreamEdge, VmKind};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn server_cost_single_mixer() {
        let inst = colocated(8);
        assert!(close(eval_server_cost(&star(8, 0), &inst).unwrap(), 5.60));
    }

    #[test]
    fn server_cost_empty_and_two_mixers() {
        let inst = colocated(8);
        assert_eq!(eval_server_cost(&Plan::default(), &inst).unwrap(), 0.0);
        let mut edges = Vec::new();
        for u in 0..8 {
            let m = if u < 4 { 0 } else { 1 };
            edges.push(StreamEdge::plain(p(u), v(m)));
        }
        let plan = Plan::from_graph(
            vec![(VmKind::Mixer, ServerId(0)), (VmKind::Mixer, ServerId(0))],
            edges,
        );
        assert!(close(eval_server_cost(&plan, &inst).unwrap(), 9.60));
    }

    #[test]
    fn per_vm_mode_charges_flat_price() {
        let inst = colocated(8).with_cost_mode(crate::model::CostMode::PerVm);
        assert!(close(eval_server_cost(&star(8, 0), &inst).unwrap(), 0.01));
    }

    #[test]
    fn dangling_server_is_structural_error() {
        let inst = colocated(2);
        let plan = star(2, 3);
        assert!(matches!(
            eval_server_cost(&plan, &inst),
            Err(ModelError::DanglingServer { .. })
        ));
    }

    #[test]
    fn network_cost_cases() {
        // sites: 0 and 1 at 100 ms => $1.00 per stream with kappa 0.01
        let inst = instance(
            vec![vec![0.0, 100.0], vec![100.0, 0.0]],
            &[(0, 10240.0), (1, 10240.0)],
            &[0, 0],
            400.0,
        );
        let same_site = Plan::from_graph(
            vec![(VmKind::Mixer, ServerId(0))],
            vec![StreamEdge::plain(p(0), v(0))],
        );
        assert_eq!(eval_network_cost(&same_site, &inst).unwrap(), 0.0);

        let compressed = Plan::from_graph(
            vec![
                (VmKind::Compressor, ServerId(0)),
                (VmKind::Mixer, ServerId(1)),
            ],
            vec![StreamEdge {
                head: v(0),
                tail: v(1),
                compression_rate: 0.95,
            }],
        );
        assert!(close(eval_network_cost(&compressed, &inst).unwrap(), 0.05));

        let inst30 = instance(
            vec![vec![0.0, 30.0], vec![30.0, 0.0]],
            &[(1, 10240.0)],
            &[0, 0],
            400.0,
        );
        let two = Plan::from_graph(
            vec![(VmKind::Mixer, ServerId(0))],
            vec![StreamEdge::plain(p(0), v(0)), StreamEdge::plain(p(1), v(0))],
        );
        assert!(close(eval_network_cost(&two, &inst30).unwrap(), 0.60));
    }

    #[test]
    fn fork_join_single_mixer_delay() {
        let inst = colocated(8);
        let d = eval_delays(&star(8, 0), &inst, DelayModel::Algorithm1).unwrap();
        assert_eq!(d.len(), 8);
        assert!(d.iter().all(|&x| close(x, 60.0)));
    }

    #[test]
    fn ilp_delay_two_colocated() {
        let inst = colocated(2);
        let d = eval_delays(&star(2, 0), &inst, DelayModel::Ilp).unwrap();
        assert!(d.iter().all(|&x| close(x, 12.0)));
    }

    #[test]
    fn ilp_delay_rejects_cycles() {
        let inst = colocated(2);
        let plan = Plan::from_graph(
            vec![(VmKind::Mixer, ServerId(0)), (VmKind::Mixer, ServerId(0))],
            vec![
                StreamEdge::plain(p(0), v(0)),
                StreamEdge::plain(p(1), v(1)),
                StreamEdge::plain(v(0), v(1)),
                StreamEdge::plain(v(1), v(0)),
                StreamEdge::plain(v(0), p(0)),
                StreamEdge::plain(v(1), p(1)),
            ],
        );
        assert!(matches!(
            eval_delays(&plan, &inst, DelayModel::Ilp),
            Err(ModelError::Cycle(_))
        ));
        // The fork/join model tolerates the join cycle.
        let d = eval_delays(&plan, &inst, DelayModel::Algorithm1).unwrap();
        // max_user 1, one server with 2 mixers, 1 used server: 6 + 12 + 6
        assert!(d.iter().all(|&x| close(x, 24.0)));
    }

    #[test]
    fn disconnected_participant_is_error() {
        let inst = colocated(3);
        let mut plan = star(3, 0);
        plan.edges.retain(|e| e.tail != p(2));
        assert!(matches!(
            eval_delays(&plan, &inst, DelayModel::Ilp),
            Err(ModelError::Disconnected(2))
        ));
    }

    #[test]
    fn ilp_delay_longest_path_through_compressor() {
        // u0 at site 1 uploads through a compressor at site 1 to the mixer at site 0.
        let inst = instance(
            vec![vec![0.0, 100.0], vec![100.0, 0.0]],
            &[(0, 10240.0), (1, 10240.0)],
            &[0, 1],
            400.0,
        );
        let plan = Plan::from_graph(
            vec![
                (VmKind::Mixer, ServerId(0)),
                (VmKind::Compressor, ServerId(1)),
            ],
            vec![
                StreamEdge::plain(p(0), v(0)),
                StreamEdge::plain(p(1), v(1)),
                StreamEdge {
                    head: v(1),
                    tail: v(0),
                    compression_rate: 0.5,
                },
                StreamEdge::plain(v(0), p(0)),
                StreamEdge::plain(v(0), p(1)),
            ],
        );
        // compressor: 0 + 6; mixer: max(0, 6 + 50) + 12 = 68
        let d = eval_delays(&plan, &inst, DelayModel::Ilp).unwrap();
        assert!(close(d[0], 68.0));
        assert!(close(d[1], 168.0));
        // fork/join: upload 0+6+50 for u1, 0 for u0; mix = 12 + 6 + 6 = 24
        let d = eval_delays(&plan, &inst, DelayModel::Algorithm1).unwrap();
        assert!(close(d[0], 24.0));
        assert!(close(d[1], 56.0 + 24.0 + 100.0));
    }

    #[test]
    fn metrics_compose() {
        let inst = colocated(8);
        let m = metrics(&star(8, 0), &inst, DelayModel::Algorithm1).unwrap();
        assert!(close(m.server_cost, 5.60));
        assert_eq!(m.network_cost, 0.0);
        assert!(close(m.max_delay, 60.0));
        assert_eq!(m.total_cost, m.server_cost + m.network_cost);
        assert_eq!(m.vm_count, 1);
        assert!(close(m.allocated_memory, 560.0));

        let empty = metrics(&Plan::default(), &inst, DelayModel::Algorithm1).unwrap();
        assert_eq!(empty, PlanMetrics::default());
    }
}
