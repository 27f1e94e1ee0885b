//! Branch and bound over VM multisets and stream graphs.
//!
//! Multisets of (kind, server) are visited in order of a cost lower bound.
//! For each, participants pick an (upload, download) VM pair, then every
//! allowed VM-to-VM edge is included or excluded. Partial costs plus a lower
//! bound on what is still missing prune the tree against the best plan so far.
//!
//! Symmetry: participants on the same site take nondecreasing pairs, and
//! interchangeable VMs (same kind and server) are first used in index order.
//! Both are consequences of keeping the lexicographically smallest member of
//! each symmetry orbit, so applying them together keeps an optimum.

use crate::model::{
    eval_delays, DelayModel, Endpoint, Instance, ParticipantId, Plan, ServerId, SiteId, StreamEdge,
    VmId, VmKind, TOLERANCE,
};

use super::{ExactError, SearchBounds};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub multisets: u64,
    pub evaluated: u64,
}

struct Layout {
    vms: Vec<(VmKind, ServerId)>,
    site: Vec<SiteId>,
    is_c: Vec<bool>,
    class_start: Vec<usize>,
    charge: Vec<f64>,
    base: f64,
    pairs: Vec<(usize, usize)>,
    /// `rem_in[i][b]`: cheapest in-edge to `b` among pairs `i..`, and how many there are.
    rem_in: Vec<Vec<(f64, usize)>>,
    rem_out: Vec<Vec<usize>>,
}

#[derive(Clone)]
struct Best {
    cost: f64,
    vms: Vec<(VmKind, ServerId)>,
    edges: Vec<StreamEdge>,
}

struct Dfs {
    up: Vec<usize>,
    down: Vec<usize>,
    links: Vec<(usize, usize)>,
    succ: Vec<u64>,
    ins: Vec<usize>,
    outs: Vec<usize>,
    touched: Vec<bool>,
    cost: f64,
}

struct Search<'a> {
    inst: &'a Instance,
    users: usize,
    user_site: Vec<SiteId>,
    prev_same: Vec<Option<usize>>,
    gamma: f64,
    budget: u64,
    stats: SearchStats,
    best: Option<Best>,
}

/// Minimum-cost feasible plan, or a refusal when the instance is outside
/// `bounds` or the search exceeds its budget.
pub fn brute_force_optimal(instance: &Instance, bounds: &SearchBounds) -> Result<Plan, ExactError> {
    brute_force_with_stats(instance, bounds).map(|(p, _)| p)
}

pub fn brute_force_with_stats(
    instance: &Instance,
    bounds: &SearchBounds,
) -> Result<(Plan, SearchStats), ExactError> {
    let users = instance.participants().len();
    let servers = instance.servers().len();
    if users > bounds.max_participants {
        return Err(ExactError::OutOfBounds {
            what: "participants",
            value: users,
            limit: bounds.max_participants,
        });
    }
    if servers > bounds.max_servers {
        return Err(ExactError::OutOfBounds {
            what: "servers",
            value: servers,
            limit: bounds.max_servers,
        });
    }
    let media = instance.media();
    // Some VM reached by all participants has at least two inputs.
    if instance.qos().max_delay_ms < media.handling_time(2) {
        return Err(ExactError::Infeasible(format!(
            "delay bound {} ms is below the time to mix two streams",
            instance.qos().max_delay_ms
        )));
    }

    let user_site: Vec<SiteId> = instance.participants().iter().map(|p| p.site).collect();
    let prev_same = (0..users)
        .map(|u| (0..u).rev().find(|&p| user_site[p] == user_site[u]))
        .collect();
    let mut search = Search {
        inst: instance,
        users,
        user_site,
        prev_same,
        gamma: media.gamma_fraction(),
        budget: bounds.node_budget,
        stats: SearchStats::default(),
        best: None,
    };

    let mut multisets = Vec::new();
    let (max_m, max_c) = (bounds.mixers_for(users), bounds.compressors_for(users));
    for m in compositions(servers, 1, max_m) {
        for c in compositions(servers, 0, max_c) {
            if let Some(lb) = search.multiset_bound(&m, &c) {
                multisets.push((
                    lb,
                    m.iter().sum::<usize>() + c.iter().sum::<usize>(),
                    m.clone(),
                    c,
                ));
            }
        }
    }
    multisets.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    for (lb, _, m, c) in multisets {
        if search
            .best
            .as_ref()
            .is_some_and(|b| lb > b.cost + TOLERANCE)
        {
            break;
        }
        search.stats.multisets += 1;
        let layout = search.layout(&m, &c);
        let k = layout.vms.len();
        let mut st = Dfs {
            up: vec![0; users],
            down: vec![0; users],
            links: Vec::new(),
            succ: vec![0; k],
            ins: vec![0; k],
            outs: vec![0; k],
            touched: vec![false; k],
            cost: layout.base,
        };
        let rest = search.participant_bounds(&layout);
        search.assign(&layout, &rest, 0, &mut st)?;
    }

    let best = search.best.ok_or_else(|| {
        ExactError::Infeasible("no stream graph meets capacity and delay bounds".into())
    })?;
    let mut plan = Plan::from_graph(best.vms, best.edges);
    plan.per_participant_delay = eval_delays(&plan, instance, DelayModel::Ilp)?;
    plan.feasible = true;
    Ok((plan, search.stats))
}

/// All vectors of length `n` whose sum lies in `lo..=hi`.
fn compositions(n: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, lo: usize) {
        if cur.len() == n {
            if cur.iter().sum::<usize>() >= lo {
                out.push(cur.clone());
            }
            return;
        }
        for x in 0..=left {
            cur.push(x);
            rec(n, left - x, cur, out, lo);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, hi, &mut Vec::new(), &mut out, lo);
    out
}

impl Search<'_> {
    fn charge(&self, s: ServerId) -> f64 {
        self.inst.vm_cost(s, 1) - self.inst.vm_cost(s, 0)
    }

    /// Lower bound on any plan using exactly these VMs, or `None` when they
    /// cannot fit on their servers.
    fn multiset_bound(&self, m: &[usize], c: &[usize]) -> Option<f64> {
        let inst = self.inst;
        let net = inst.network();
        let media = inst.media();
        let mut base = 0.0;
        let mut min_charge = f64::INFINITY;
        let mut count = 0;
        for s in inst.server_ids() {
            let n = m[s.0] + c[s.0];
            if n as f64 * media.vm_resources(1) > inst.server(s).capacity_mb + TOLERANCE {
                return None;
            }
            if n > 0 {
                base += n as f64 * inst.vm_cost(s, 0);
                min_charge = min_charge.min(self.charge(s));
                count += n;
            }
        }
        let inputs = self.users.max(count) as f64;
        let mut lb = base + inputs * min_charge;
        for &us in &self.user_site {
            let mut up = f64::INFINITY;
            let mut down = f64::INFINITY;
            for s in inst.server_ids() {
                let p = net.cost(us, inst.server_site(s));
                if m[s.0] + c[s.0] > 0 {
                    up = up.min(p);
                }
                if m[s.0] > 0 {
                    down = down.min(p);
                }
                if c[s.0] > 0 {
                    down = down.min(p * (1.0 - self.gamma));
                }
            }
            lb += up + down;
        }
        Some(lb)
    }

    fn layout(&self, m: &[usize], c: &[usize]) -> Layout {
        let inst = self.inst;
        let mut vms = Vec::new();
        let mut class_start = Vec::new();
        for (kind, counts) in [(VmKind::Mixer, m), (VmKind::Compressor, c)] {
            for s in inst.server_ids() {
                let start = vms.len();
                for _ in 0..counts[s.0] {
                    vms.push((kind, s));
                    class_start.push(start);
                }
            }
        }
        let k = vms.len();
        let site: Vec<SiteId> = vms.iter().map(|&(_, s)| inst.server_site(s)).collect();
        let is_c: Vec<bool> = vms
            .iter()
            .map(|&(kd, _)| kd == VmKind::Compressor)
            .collect();
        let charge: Vec<f64> = vms.iter().map(|&(_, s)| self.charge(s)).collect();
        let base = vms.iter().map(|&(_, s)| inst.vm_cost(s, 0)).sum();
        let mut pairs = Vec::new();
        for a in 0..k {
            for b in 0..k {
                if a != b && !(is_c[a] && is_c[b]) {
                    pairs.push((a, b));
                }
            }
        }
        let mut layout = Layout {
            vms,
            site,
            is_c,
            class_start,
            charge,
            base,
            pairs,
            rem_in: Vec::new(),
            rem_out: Vec::new(),
        };
        let np = layout.pairs.len();
        let mut rem_in = vec![vec![(f64::INFINITY, 0usize); k]; np + 1];
        let mut rem_out = vec![vec![0usize; k]; np + 1];
        for i in (0..np).rev() {
            rem_in[i] = rem_in[i + 1].clone();
            rem_out[i] = rem_out[i + 1].clone();
            let (a, b) = layout.pairs[i];
            let cost = self.link_cost(&layout, a, b);
            rem_in[i][b] = (rem_in[i][b].0.min(cost), rem_in[i][b].1 + 1);
            rem_out[i][a] += 1;
        }
        layout.rem_in = rem_in;
        layout.rem_out = rem_out;
        layout
    }

    fn rate(&self, lay: &Layout, v: usize) -> f64 {
        if lay.is_c[v] {
            self.gamma
        } else {
            0.0
        }
    }

    fn up_cost(&self, lay: &Layout, u: usize, v: usize) -> f64 {
        self.inst.network().cost(self.user_site[u], lay.site[v]) + lay.charge[v]
    }

    fn down_cost(&self, lay: &Layout, v: usize, u: usize) -> f64 {
        self.inst.network().cost(lay.site[v], self.user_site[u]) * (1.0 - self.rate(lay, v))
    }

    fn link_cost(&self, lay: &Layout, a: usize, b: usize) -> f64 {
        self.inst.network().cost(lay.site[a], lay.site[b]) * (1.0 - self.rate(lay, a))
            + lay.charge[b]
    }

    /// `rest[u]`: cheapest possible pair costs for participants `u..`.
    fn participant_bounds(&self, lay: &Layout) -> Vec<f64> {
        let k = lay.vms.len();
        let mut rest = vec![0.0; self.users + 1];
        for u in (0..self.users).rev() {
            let up = (0..k)
                .map(|v| self.up_cost(lay, u, v))
                .fold(f64::INFINITY, f64::min);
            let down = (0..k)
                .map(|v| self.down_cost(lay, v, u))
                .fold(f64::INFINITY, f64::min);
            rest[u] = rest[u + 1] + up + down;
        }
        rest
    }

    fn over_budget(&self, bound: f64) -> bool {
        self.best
            .as_ref()
            .is_some_and(|b| bound > b.cost + TOLERANCE)
    }

    fn may_touch(lay: &Layout, st: &Dfs, v: usize) -> bool {
        st.touched[v] || lay.class_start[v] == v || st.touched[v - 1]
    }

    fn assign(
        &mut self,
        lay: &Layout,
        rest: &[f64],
        u: usize,
        st: &mut Dfs,
    ) -> Result<(), ExactError> {
        if u == self.users {
            return self.link(lay, 0, st);
        }
        let k = lay.vms.len();
        let first = self.prev_same[u].map_or(0, |p| st.up[p] * k + st.down[p]);
        for pair in first..k * k {
            let (up, down) = (pair / k, pair % k);
            if !Self::may_touch(lay, st, up) {
                continue;
            }
            let up_new = !st.touched[up];
            st.touched[up] = true;
            if !Self::may_touch(lay, st, down) {
                st.touched[up] = !up_new;
                continue;
            }
            let down_new = !st.touched[down];
            st.touched[down] = true;
            let add = self.up_cost(lay, u, up) + self.down_cost(lay, down, u);
            if !self.over_budget(st.cost + add + rest[u + 1]) {
                st.up[u] = up;
                st.down[u] = down;
                st.ins[up] += 1;
                st.outs[down] += 1;
                st.cost += add;
                let r = self.assign(lay, rest, u + 1, st);
                st.cost -= add;
                st.ins[up] -= 1;
                st.outs[down] -= 1;
                r?;
            }
            if down_new {
                st.touched[down] = false;
            }
            if up_new {
                st.touched[up] = false;
            }
        }
        Ok(())
    }

    /// Cost still owed by in-edges that some VM must receive, or `None` when
    /// the remaining pairs cannot satisfy degree requirements.
    fn link_bound(lay: &Layout, i: usize, st: &Dfs) -> Option<f64> {
        let mut lb = 0.0;
        for v in 0..lay.vms.len() {
            let (ins, outs) = (st.ins[v], st.outs[v]);
            let mut need_in = usize::from(ins == 0);
            let mut need_out = usize::from(outs == 0);
            if lay.is_c[v] {
                need_in = need_in.max(outs.saturating_sub(ins));
                need_out = need_out.max(ins.saturating_sub(outs));
            }
            let (cheapest, avail) = lay.rem_in[i][v];
            if need_in > avail || need_out > lay.rem_out[i][v] {
                return None;
            }
            if need_in > 0 {
                lb += need_in as f64 * cheapest;
            }
        }
        Some(lb)
    }

    fn link(&mut self, lay: &Layout, i: usize, st: &mut Dfs) -> Result<(), ExactError> {
        let Some(lb) = Self::link_bound(lay, i, st) else {
            return Ok(());
        };
        if self.over_budget(st.cost + lb) {
            return Ok(());
        }
        if i == lay.pairs.len() {
            return self.evaluate(lay, st);
        }
        self.link(lay, i + 1, st)?;
        let (a, b) = lay.pairs[i];
        if !reaches(&st.succ, b, a) {
            let add = self.link_cost(lay, a, b);
            st.succ[a] |= 1 << b;
            st.ins[b] += 1;
            st.outs[a] += 1;
            st.links.push((a, b));
            st.cost += add;
            let r = self.link(lay, i + 1, st);
            st.cost -= add;
            st.links.pop();
            st.outs[a] -= 1;
            st.ins[b] -= 1;
            st.succ[a] &= !(1 << b);
            r?;
        }
        Ok(())
    }

    fn evaluate(&mut self, lay: &Layout, st: &Dfs) -> Result<(), ExactError> {
        self.stats.evaluated += 1;
        if self.stats.evaluated > self.budget {
            return Err(ExactError::BudgetExceeded {
                evaluated: self.stats.evaluated,
            });
        }
        let k = lay.vms.len();
        let inst = self.inst;
        let net = inst.network();
        let media = inst.media();
        if (0..k)
            .any(|v| st.ins[v] == 0 || st.outs[v] == 0 || (lay.is_c[v] && st.ins[v] != st.outs[v]))
        {
            return Ok(());
        }
        // Topological order; the link stage never closes a cycle.
        let mut indeg = vec![0usize; k];
        for &(_, b) in &st.links {
            indeg[b] += 1;
        }
        let mut order: Vec<usize> = (0..k).filter(|&v| indeg[v] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let a = order[head];
            head += 1;
            for &(x, b) in &st.links {
                if x == a {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        order.push(b);
                    }
                }
            }
        }
        let full: u64 = if self.users == 64 {
            u64::MAX
        } else {
            (1 << self.users) - 1
        };
        let mut reach = vec![0u64; k];
        let mut arrival = vec![0.0f64; k];
        for u in 0..self.users {
            let v = st.up[u];
            reach[v] |= 1 << u;
            arrival[v] = arrival[v].max(net.time(self.user_site[u], lay.site[v]));
        }
        for &v in &order {
            arrival[v] += media.handling_time(st.ins[v]);
            for &(a, b) in &st.links {
                if a == v {
                    reach[b] |= reach[a];
                    let t =
                        arrival[a] + net.time(lay.site[a], lay.site[b]) * (1.0 - self.rate(lay, a));
                    arrival[b] = arrival[b].max(t);
                }
            }
        }
        if !(0..k).any(|v| !lay.is_c[v] && reach[v] == full) {
            return Ok(());
        }
        let bound = inst.qos().max_delay_ms;
        for u in 0..self.users {
            let v = st.down[u];
            if reach[v] != full {
                return Ok(());
            }
            let d =
                arrival[v] + net.time(lay.site[v], self.user_site[u]) * (1.0 - self.rate(lay, v));
            if d > bound + TOLERANCE {
                return Ok(());
            }
        }
        let mut used = vec![0.0f64; inst.servers().len()];
        for v in 0..k {
            used[lay.vms[v].1 .0] += media.vm_resources(st.ins[v]);
        }
        if inst
            .server_ids()
            .any(|s| used[s.0] > inst.server(s).capacity_mb + TOLERANCE)
        {
            return Ok(());
        }

        let better = match &self.best {
            None => true,
            Some(b) if st.cost < b.cost - TOLERANCE => true,
            Some(b) if st.cost <= b.cost + TOLERANCE => {
                let edges = self.edges(lay, st);
                (k, edge_key(&edges)) < (b.vms.len(), edge_key(&b.edges))
            }
            _ => false,
        };
        if better {
            self.best = Some(Best {
                cost: st.cost,
                vms: lay.vms.clone(),
                edges: self.edges(lay, st),
            });
        }
        Ok(())
    }

    fn edges(&self, lay: &Layout, st: &Dfs) -> Vec<StreamEdge> {
        let vm = |v: usize| Endpoint::Vm(VmId(v));
        let mut edges = Vec::with_capacity(2 * self.users + st.links.len());
        for u in 0..self.users {
            let p = Endpoint::Participant(ParticipantId(u));
            edges.push(StreamEdge::plain(p, vm(st.up[u])));
            edges.push(StreamEdge {
                head: vm(st.down[u]),
                tail: p,
                compression_rate: self.rate(lay, st.down[u]),
            });
        }
        for &(a, b) in &st.links {
            edges.push(StreamEdge {
                head: vm(a),
                tail: vm(b),
                compression_rate: self.rate(lay, a),
            });
        }
        edges.sort_by_key(|e| (e.head, e.tail));
        edges
    }
}

fn edge_key(edges: &[StreamEdge]) -> Vec<(Endpoint, Endpoint)> {
    edges.iter().map(|e| (e.head, e.tail)).collect()
}

fn reaches(succ: &[u64], from: usize, to: usize) -> bool {
    if from == to {
        return true;
    }
    let mut seen = 1u64 << from;
    let mut frontier = succ[from];
    while frontier & !seen != 0 {
        let next = frontier & !seen;
        if next & (1 << to) != 0 {
            return true;
        }
        seen |= next;
        let mut f = 0;
        let mut bits = next;
        while bits != 0 {
            let v = bits.trailing_zeros() as usize;
            f |= succ[v];
            bits &= bits - 1;
        }
        frontier = f;
    }
    false
}
