//! Dense ILP variable matrices derived from a plan, and the reachability closure.
//!
//! Node layout shared with the LP exporter: participants occupy `0..U`, mixer
//! slots `U..2U-1`, compressor slots `2U-1..4U-2`. VM slots (columns of E, X,
//! Y, Z) are the same order without the participant prefix.

use super::{Endpoint, Instance, ModelError, Plan, VmKind};

/// Number of mixer slots for `users` participants.
pub fn mixer_slots(users: usize) -> usize {
    users.saturating_sub(1)
}

/// Number of compressor slots for `users` participants.
pub fn compressor_slots(users: usize) -> usize {
    (2 * users).saturating_sub(1)
}

/// Number of VM slots, `3U - 2`.
pub fn vm_slots(users: usize) -> usize {
    mixer_slots(users) + compressor_slots(users)
}

/// Number of rows/columns of the adjacency matrix, `4U - 2`.
pub fn node_count(users: usize) -> usize {
    users + vm_slots(users)
}

/// For every VM, how many participants reach it directly or through other VMs.
pub fn reach_counts(plan: &Plan, n_users: usize) -> Vec<usize> {
    let words = n_users.div_ceil(64).max(1);
    let n = plan.vms.len();
    let mut bits = vec![0u64; n * words];
    let mut vm_edges = Vec::new();
    for e in &plan.edges {
        match (e.head, e.tail) {
            (Endpoint::Participant(u), Endpoint::Vm(v)) if v.0 < n && u.0 < n_users => {
                bits[v.0 * words + u.0 / 64] |= 1 << (u.0 % 64);
            }
            (Endpoint::Vm(a), Endpoint::Vm(b)) if a.0 < n && b.0 < n && a != b => {
                vm_edges.push((a.0, b.0))
            }
            _ => {}
        }
    }
    loop {
        let mut changed = false;
        for &(a, b) in &vm_edges {
            for w in 0..words {
                let src = bits[a * words + w];
                let dst = &mut bits[b * words + w];
                if src & !*dst != 0 {
                    *dst |= src;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..n)
        .map(|v| {
            bits[v * words..(v + 1) * words]
                .iter()
                .map(|w| w.count_ones() as usize)
                .sum()
        })
        .collect()
}

/// Least fixpoint of the reachability inequalities over a dense adjacency
/// matrix: `e[u][v] = 1` iff participant `u` reaches VM slot `v`.
pub fn reachability_fixpoint(d: &[Vec<u8>], users: usize) -> Vec<Vec<u8>> {
    let vms = d.len() - users;
    let mut e: Vec<Vec<u8>> = (0..users)
        .map(|u| (0..vms).map(|v| d[u][users + v]).collect())
        .collect();
    loop {
        let mut changed = false;
        for row in e.iter_mut() {
            for i in 0..vms {
                if row[i] == 0 {
                    continue;
                }
                for v in 0..vms {
                    if row[v] == 0 && d[users + i][users + v] == 1 {
                        row[v] = 1;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return e;
        }
    }
}

/// The ILP's decision variables evaluated at a concrete plan.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpArtifacts {
    pub users: usize,
    /// Adjacency, `(4U-2) x (4U-2)`.
    pub d: Vec<Vec<u8>>,
    /// Reachability, `U x (3U-2)`.
    pub e: Vec<Vec<u8>>,
    /// Indirect reachability through a VM, `U x (3U-2) x (3U-2)` as `f[u][i][v]`.
    pub f: Vec<Vec<Vec<u8>>>,
    /// Hosting, `S x (3U-2)`.
    pub x: Vec<Vec<u8>>,
    /// Arrival times `U x (3U-2)`; `None` when the graph has a cycle.
    pub y: Option<Vec<Vec<f64>>>,
    /// Load, `S x (3U-2)`.
    pub z: Vec<Vec<usize>>,
    /// Inputs per VM slot.
    pub g: Vec<usize>,
    pub beta: usize,
    /// Plan VM index to VM slot.
    pub slot_of: Vec<usize>,
    rate: Vec<Vec<f64>>,
}

impl IlpArtifacts {
    pub fn from_plan(plan: &Plan, instance: &Instance) -> Result<Self, ModelError> {
        plan.check_references(instance)?;
        let users = instance.participants().len();
        let (nm, nc) = (mixer_slots(users), compressor_slots(users));
        if plan.mixer_count() > nm || plan.compressor_count() > nc {
            return Err(ModelError::PlanTooLarge(format!(
                "{} mixers / {} compressors exceed {nm} / {nc} slots",
                plan.mixer_count(),
                plan.compressor_count()
            )));
        }
        let vms = nm + nc;
        let nodes = users + vms;
        let (mut next_m, mut next_c) = (0, nm);
        let slot_of: Vec<usize> = plan
            .vms
            .iter()
            .map(|vm| match vm.kind {
                VmKind::Mixer => {
                    next_m += 1;
                    next_m - 1
                }
                VmKind::Compressor => {
                    next_c += 1;
                    next_c - 1
                }
            })
            .collect();
        let node = |ep: Endpoint| match ep {
            Endpoint::Participant(u) => u.0,
            Endpoint::Vm(v) => users + slot_of[v.0],
        };
        let mut d = vec![vec![0u8; nodes]; nodes];
        let mut rate = vec![vec![0.0; nodes]; nodes];
        for e in &plan.edges {
            let (a, b) = (node(e.head), node(e.tail));
            d[a][b] = 1;
            rate[a][b] = e.compression_rate;
        }
        let e = reachability_fixpoint(&d, users);
        let f = (0..users)
            .map(|u| {
                (0..vms)
                    .map(|i| {
                        (0..vms)
                            .map(|v| d[users + i][users + v] & e[u][i])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let n_servers = instance.servers().len();
        let mut x = vec![vec![0u8; vms]; n_servers];
        let mut g = vec![0usize; vms];
        for (v, vm) in plan.vms.iter().enumerate() {
            x[vm.server.0][slot_of[v]] = 1;
        }
        for (b, slot) in g.iter_mut().enumerate() {
            *slot = (0..nodes).map(|a| d[a][users + b] as usize).sum();
        }
        let z = x
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&g)
                    .map(|(&h, &gv)| h as usize * gv)
                    .collect()
            })
            .collect();
        let mut art = IlpArtifacts {
            users,
            d,
            e,
            f,
            x,
            y: None,
            z,
            g,
            beta: users + vms + 1,
            slot_of,
            rate,
        };
        art.y = art.arrival_times(plan, instance);
        Ok(art)
    }

    fn slot_site(&self, plan: &Plan, instance: &Instance, slot: usize) -> Option<super::SiteId> {
        let v = self.slot_of.iter().position(|&s| s == slot)?;
        Some(instance.server_site(plan.vms[v].server))
    }

    /// Least solution of the gated arrival-time recursion, per source participant.
    fn arrival_times(&self, plan: &Plan, instance: &Instance) -> Option<Vec<Vec<f64>>> {
        let (users, vms) = (self.users, self.g.len());
        let order = topo_order(&self.d, users)?;
        let net = instance.network();
        let media = instance.media();
        let sites: Vec<Option<super::SiteId>> = (0..vms)
            .map(|s| self.slot_site(plan, instance, s))
            .collect();
        let mut y = vec![vec![0.0; vms]; users];
        for (u, row) in y.iter_mut().enumerate() {
            let us = instance.participant_site(super::ParticipantId(u));
            for &v in &order {
                let Some(vs) = sites[v] else { continue };
                let handle = media.handling_time(self.g[v]);
                let mut best = 0.0f64;
                if self.d[u][users + v] == 1 {
                    best = best.max(net.time(us, vs) + handle);
                }
                for i in 0..vms {
                    if self.d[users + i][users + v] == 1 {
                        let is = sites[i].expect("edge endpoint is placed");
                        let t = net.time(is, vs) * (1.0 - self.rate[users + i][users + v]);
                        best = best.max(row[i] + t + handle);
                    }
                }
                row[v] = best;
            }
        }
        Some(y)
    }

    /// End-to-end delay per participant implied by `y`: the latest arrival of
    /// any source at the serving VM plus the return hop.
    pub fn delays(&self, plan: &Plan, instance: &Instance) -> Option<Vec<f64>> {
        let y = self.y.as_ref()?;
        let users = self.users;
        let net = instance.network();
        (0..users)
            .map(|u| {
                let us = instance.participant_site(super::ParticipantId(u));
                let v = (0..self.g.len()).find(|&v| self.d[users + v][u] == 1)?;
                let vs = self.slot_site(plan, instance, v)?;
                let latest = (0..users).map(|p| y[p][v]).fold(0.0, f64::max);
                Some(latest + net.time(vs, us) * (1.0 - self.rate[users + v][u]))
            })
            .collect()
    }

    /// Checks hosting uniqueness and the load linearization identities.
    pub fn check_invariants(&self) -> Result<(), String> {
        let vms = self.g.len();
        for v in 0..vms {
            let hosts: u8 = self.x.iter().map(|r| r[v]).sum();
            if hosts > 1 {
                return Err(format!("vm slot {v} hosted {hosts} times"));
            }
        }
        let users = self.users;
        for v in 0..vms {
            let inputs: usize = (0..self.d.len())
                .map(|a| self.d[a][users + v] as usize)
                .sum();
            if inputs != self.g[v] {
                return Err(format!("g[{v}] != in-degree"));
            }
        }
        for (s, row) in self.z.iter().enumerate() {
            for v in 0..vms {
                let (z, x, g) = (row[v] as f64, self.x[s][v] as f64, self.g[v] as f64);
                let big = self.beta as f64;
                if z > big * x || z > g || z < g - big * (1.0 - x) || z < 0.0 {
                    return Err(format!("z[{s}][{v}] breaks the load linearization"));
                }
            }
        }
        Ok(())
    }
}

fn topo_order(d: &[Vec<u8>], users: usize) -> Option<Vec<usize>> {
    let vms = d.len() - users;
    let mut indeg: Vec<usize> = (0..vms)
        .map(|v| (0..vms).filter(|&i| d[users + i][users + v] == 1).count())
        .collect();
    let mut stack: Vec<usize> = (0..vms).rev().filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(vms);
    while let Some(i) = stack.pop() {
        order.push(i);
        for v in 0..vms {
            if d[users + i][users + v] == 1 {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    stack.push(v);
                }
            }
        }
    }
    (order.len() == vms).then_some(order)
}
