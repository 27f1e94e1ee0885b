use crate::model::{
    Endpoint, Instance, ParticipantId, ServerId, SiteId, StreamEdge, VmId, TOLERANCE,
};

use super::{AllocationState, CompressedStream};

/// Origin of a stream that needs compressing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sender {
    Participant(ParticipantId),
    /// The first mixer on this server.
    Server(ServerId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressOutcome {
    pub chosen_server: ServerId,
    pub compressor: VmId,
    pub new_vm_created: bool,
    pub real_rate: f64,
    pub edges_added: Vec<StreamEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Choice {
    Reuse(usize),
    New,
}

/// Smallest rate making `leg` (compressor to destination) fit in `allowed` ms.
fn required_rate(leg: f64, allowed: f64) -> Option<f64> {
    if leg <= 0.0 {
        return (allowed >= -TOLERANCE).then_some(0.0);
    }
    Some(((leg - allowed) / leg).max(0.0))
}

fn stream_rate(instance: &Instance, at: SiteId, s: &CompressedStream, load: usize) -> Option<f64> {
    let net = instance.network();
    let allowed = s.budget - net.time(s.source, at) - instance.media().handling_time(load);
    required_rate(net.time(at, s.dest), allowed)
}

fn fits(instance: &Instance, rate: Option<f64>) -> bool {
    rate.is_some_and(|r| r <= instance.media().max_compression_rate + TOLERANCE)
}

/// Routes a stream from `sender` to `dest_mixer` through a compressor, saving
/// at least `t` ms on the direct transmission.
///
/// Candidate hosts are servers closer to the sender than `T[a][b] - t - T_m(1)`
/// with spare resources. Each is priced as the network cost to reach it plus
/// the server cost of either one more stream on its least-loaded compressor
/// (when every stream there still meets its deadline at the higher load) or a
/// fresh compressor. The cheapest wins; ties go to the lower server index.
/// Rates of all streams sharing the compressor are recomputed for the new load.
///
/// For a participant sender the mixed stream returns directly from the mixer.
/// Returns `None` when no server can host the compressor within the rate cap.
pub fn compress(
    sender: Sender,
    dest_mixer: VmId,
    t: f64,
    state: &mut AllocationState,
    instance: &Instance,
) -> Option<CompressOutcome> {
    let media = instance.media();
    let net = instance.network();
    let (a, head) = match sender {
        Sender::Participant(u) => (instance.participant_site(u), Endpoint::Participant(u)),
        Sender::Server(s) => (instance.server_site(s), Endpoint::Vm(state.first_mixer(s)?)),
    };
    let dest_server = state.vms[dest_mixer.0].1;
    let b = instance.server_site(dest_server);
    let budget = net.time(a, b) - t;
    let max_distance = budget - media.handling_time(1);

    let mut best: Option<(f64, ServerId, Choice)> = None;
    for s in instance.server_ids() {
        let site = instance.server_site(s);
        let room = state.remaining_capacity[s.0];
        if !(net.time(a, site) < max_distance && room > media.stream_resources(1)) {
            continue;
        }
        let probe = CompressedStream {
            source: a,
            dest: b,
            budget,
            out_edge: usize::MAX,
        };
        let mut choice = None;
        let loads = &state.compressors_per_server[s.0];
        if let Some((idx, &load)) = loads.iter().enumerate().min_by_key(|&(i, &l)| (l, i)) {
            let c = state.compressor_ids[s.0][idx];
            let all_fit = fits(instance, stream_rate(instance, site, &probe, load + 1))
                && state.streams[c.0]
                    .iter()
                    .all(|st| fits(instance, stream_rate(instance, site, st, load + 1)));
            if all_fit {
                let extra = instance.vm_cost(s, load + 1) - instance.vm_cost(s, load);
                choice = Some((net.cost(a, site) + extra, Choice::Reuse(idx)));
            }
        }
        if choice.is_none()
            && room >= media.vm_resources(1)
            && fits(instance, stream_rate(instance, site, &probe, 1))
        {
            choice = Some((net.cost(a, site) + instance.vm_cost(s, 1), Choice::New));
        }
        if let Some((cost, how)) = choice {
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, s, how));
            }
        }
    }
    let (_, chosen, how) = best?;

    let (compressor, new_vm_created) = match how {
        Choice::Reuse(idx) => {
            state.compressors_per_server[chosen.0][idx] += 1;
            state.remaining_capacity[chosen.0] -= media.stream_resources(1);
            (state.compressor_ids[chosen.0][idx], false)
        }
        Choice::New => {
            let c = state.add_vm(crate::model::VmKind::Compressor, chosen);
            *state.compressors_per_server[chosen.0].last_mut().unwrap() = 1;
            state.remaining_capacity[chosen.0] -= media.vm_resources(1);
            (c, true)
        }
    };
    let first = state.edges.len();
    state.push_edge(head, Endpoint::Vm(compressor), 0.0);
    let out_edge = state.push_edge(Endpoint::Vm(compressor), Endpoint::Vm(dest_mixer), 0.0);
    if let Sender::Participant(u) = sender {
        state.push_edge(Endpoint::Vm(dest_mixer), Endpoint::Participant(u), 0.0);
    }
    let slot = compressor.0;
    state.streams[slot].push(CompressedStream {
        source: a,
        dest: b,
        budget,
        out_edge,
    });
    let site = instance.server_site(chosen);
    let load = state.streams[slot].len();
    for st in &state.streams[slot] {
        let rate = stream_rate(instance, site, st, load).expect("checked before assignment");
        state.edges[st.out_edge].compression_rate = rate;
    }
    Some(CompressOutcome {
        chosen_server: chosen,
        compressor,
        new_vm_created,
        real_rate: state.edges[out_edge].compression_rate,
        edges_added: state.edges[first..].to_vec(),
    })
}
