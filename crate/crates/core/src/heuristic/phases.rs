use crate::model::{
    Endpoint, Instance, NetworkMatrix, Participant, ParticipantId, Plan, ServerId, ServerSpec,
    VmId, VmKind,
};

use super::{compress, AllocationState, HeuristicError, Phase, Sender};

/// Smallest mixer count whose handling time beats the delay bound and whose
/// mixers fit the largest server. Returns `(min_mixer, max_user)`.
///
/// Gives up when adding a mixer makes handling slower than before, or when
/// `|U| - 1` mixers still do not meet the bound.
pub fn min_mixers(instance: &Instance) -> Result<(usize, usize), HeuristicError> {
    let media = instance.media();
    let users = instance.participants().len();
    let bound = instance.qos().max_delay_ms;
    let capacity = instance
        .servers()
        .iter()
        .map(|s| s.capacity_mb)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut handling = f64::INFINITY;
    let mut m = 0;
    loop {
        m += 1;
        let max_user = users.div_ceil(m);
        let next = media.handling_time(max_user) + media.handling_time(m);
        if handling < next {
            return Err(HeuristicError::Infeasible {
                phase: Phase::MinMixers,
                reason: format!("handling time rises from {handling} to {next} ms at {m} mixers"),
                last_handling_ms: Some(handling),
            });
        }
        handling = next;
        if handling < bound && media.vm_resources(max_user) <= capacity {
            return Ok((m, max_user));
        }
        if m + 1 >= users {
            return Err(HeuristicError::Infeasible {
                phase: Phase::MinMixers,
                reason: format!("{m} mixers still miss the bound"),
                last_handling_ms: Some(handling),
            });
        }
    }
}

/// Server indices ordered by total transmission time to all participants.
/// Ties keep the input order.
pub fn dsort(
    servers: &[ServerSpec],
    participants: &[Participant],
    network: &NetworkMatrix,
) -> Vec<ServerId> {
    let total: Vec<f64> = servers
        .iter()
        .map(|s| {
            participants
                .iter()
                .map(|u| network.time(s.site, u.site))
                .sum()
        })
        .collect();
    let mut order: Vec<ServerId> = (0..servers.len()).map(ServerId).collect();
    order.sort_by(|a, b| total[a.0].total_cmp(&total[b.0]));
    order
}

/// Packs `min_mixer` mixers onto servers in `order`, reserving room for a
/// full mixer each time.
pub fn place_mixers(
    state: &mut AllocationState,
    instance: &Instance,
    order: &[ServerId],
) -> Result<(), HeuristicError> {
    let need = instance.media().vm_resources(state.max_user);
    state.order = order.to_vec();
    let mut placed = 0;
    for &s in order {
        while placed < state.min_mixer && state.remaining_capacity[s.0] >= need {
            state.add_vm(VmKind::Mixer, s);
            state.remaining_capacity[s.0] -= need;
            placed += 1;
        }
        if placed == state.min_mixer {
            return Ok(());
        }
    }
    Err(HeuristicError::infeasible(
        Phase::PlaceMixers,
        format!("room for {placed} of {} mixers", state.min_mixer),
    ))
}

fn charge_join(
    state: &mut AllocationState,
    instance: &Instance,
    s: ServerId,
) -> Result<(), HeuristicError> {
    let r = instance.media().stream_resources(1);
    if state.remaining_capacity[s.0] < r {
        return Err(HeuristicError::infeasible(
            Phase::InterMixerCompress,
            format!("server {s} has no room for a join stream"),
        ));
    }
    state.remaining_capacity[s.0] -= r;
    Ok(())
}

/// Wires mixers together and fixes each used server's mixing time.
///
/// Co-located mixers exchange streams with the server's first mixer. Between
/// servers, the first mixer of `j` feeds the first mixer of `n`; when that
/// pair's total time reaches the bound a compressor is inserted and the pair
/// is capped at the bound.
pub fn inter_mixer_compress(
    state: &mut AllocationState,
    instance: &Instance,
) -> Result<(), HeuristicError> {
    let media = instance.media();
    let net = instance.network();
    let bound = instance.qos().max_delay_ms;
    let used = state.used_servers();

    for &s in &used {
        let ids = state.mixer_ids[s.0].clone();
        let first = ids[0];
        for &m in &ids[1..] {
            charge_join(state, instance, s)?;
            state.push_edge(Endpoint::Vm(m), Endpoint::Vm(first), 0.0);
            charge_join(state, instance, s)?;
            state.push_edge(Endpoint::Vm(first), Endpoint::Vm(m), 0.0);
        }
    }

    for &j in &used {
        let mut mix_time = 0.0f64;
        let base = media.handling_time(state.max_user)
            + media.handling_time(state.mixer_ids[j.0].len())
            + media.handling_time(used.len());
        for &n in &used {
            let mut total = base + net.time(instance.server_site(j), instance.server_site(n));
            if n != j {
                charge_join(state, instance, n)?;
                let to = state.first_mixer(n).expect("used server has a mixer");
                if total >= bound {
                    if compress(Sender::Server(j), to, total - bound, state, instance).is_none() {
                        return Err(HeuristicError::infeasible(
                            Phase::InterMixerCompress,
                            format!("no compressor can shorten the link from server {j} to {n}"),
                        ));
                    }
                    total = bound;
                } else {
                    let from = state.first_mixer(j).expect("used server has a mixer");
                    state.push_edge(Endpoint::Vm(from), Endpoint::Vm(to), 0.0);
                }
            }
            mix_time = mix_time.max(total);
        }
        state.mix_time_per_server[j.0] = Some(mix_time);
    }
    Ok(())
}

/// Closest server (to `u`) with a mixer below `max_user` participants, and
/// that server's least-loaded mixer, whose count is incremented.
pub fn acs(
    u: ParticipantId,
    state: &mut AllocationState,
    instance: &Instance,
) -> Option<(ServerId, VmId)> {
    let net = instance.network();
    let site = instance.participant_site(u);
    let mut best: Option<(f64, ServerId)> = None;
    for &s in &state.order {
        if !state.mixers_per_server[s.0]
            .iter()
            .any(|&c| c < state.max_user)
        {
            continue;
        }
        let d = net.time(site, instance.server_site(s));
        if best.is_none_or(|(bd, _)| bd > d) {
            best = Some((d, s));
        }
    }
    let (_, s) = best?;
    let loads = &mut state.mixers_per_server[s.0];
    let (idx, _) = loads.iter().enumerate().min_by_key(|&(i, &l)| (l, i))?;
    loads[idx] += 1;
    Some((s, state.mixer_ids[s.0][idx]))
}

/// Attaches every participant, in input order, to its acceptable closest
/// server, compressing the upload when the round trip misses the bound.
pub fn assign_participants(
    state: &mut AllocationState,
    instance: &Instance,
) -> Result<Plan, HeuristicError> {
    let net = instance.network();
    let bound = instance.qos().max_delay_ms;
    for u in instance.participant_ids() {
        let (s, mixer) = acs(u, state, instance).ok_or_else(|| {
            HeuristicError::infeasible(Phase::AssignParticipants, "every mixer is full")
        })?;
        let mix_time = state.mix_time_per_server[s.0].expect("mixer server has a mixing time");
        let hop = net.time(instance.participant_site(u), instance.server_site(s));
        let total = mix_time + 2.0 * hop;
        if total <= bound {
            state.push_edge(Endpoint::Participant(u), Endpoint::Vm(mixer), 0.0);
            state.push_edge(Endpoint::Vm(mixer), Endpoint::Participant(u), 0.0);
        } else if compress(
            Sender::Participant(u),
            mixer,
            total - bound,
            state,
            instance,
        )
        .is_none()
        {
            return Err(HeuristicError::infeasible(
                Phase::AssignParticipants,
                format!("no compressor can bring participant {u} within {bound} ms"),
            ));
        }
    }
    Ok(state.to_plan())
}
