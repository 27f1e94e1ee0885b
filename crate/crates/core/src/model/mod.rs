//! Domain types for conferencing placement problems and their solutions.
//!
//! An [`Instance`] describes servers, participants, the latency/cost matrices
//! between their sites and the media cost model. A [`Plan`] is a set of
//! mixer/compressor VMs plus the directed stream graph wiring participants
//! through them. The submodules evaluate and validate plans.

pub mod eval;
pub mod ilp;
pub mod io;
pub mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{
    allocated_memory, eval_delays, eval_network_cost, eval_server_cost, metrics, mix_times,
    DelayModel,
};
pub use validate::{validate_plan, Constraint, Violation};

/// Slack applied to every delay and cost comparison.
pub const TOLERANCE: f64 = 1e-9;

/// Default network cost per stream per millisecond of latency.
pub const DEFAULT_KAPPA: f64 = 0.01;

/// Default end-to-end delay bound in milliseconds.
pub const DEFAULT_MAX_DELAY_MS: f64 = 400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid network matrix: {0}")]
    InvalidNetwork(String),
    #[error("vm {vm} references unknown server {server}")]
    DanglingServer { vm: usize, server: usize },
    #[error("edge {edge} references unknown {what} {index}")]
    DanglingEndpoint {
        edge: usize,
        what: &'static str,
        index: usize,
    },
    #[error("participant {0} must have exactly one outgoing and one incoming stream")]
    Disconnected(usize),
    #[error("stream graph contains a cycle through vm {0}")]
    Cycle(usize),
    #[error("compressor {0} has unequal input and output stream counts")]
    UnbalancedCompressor(usize),
    #[error("participant {participant} route is malformed: {reason}")]
    MalformedRoute {
        participant: usize,
        reason: &'static str,
    },
    #[error("no stream route joins mixers on server {from} to mixers on server {to}")]
    MissingJoinRoute { from: usize, to: usize },
    #[error("plan exceeds the ILP variable sets: {0}")]
    PlanTooLarge(String),
}

macro_rules! index_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub usize);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_newtype!(
    /// Index into [`Instance::sites`].
    SiteId
);
index_newtype!(
    /// Index into [`Instance::servers`].
    ServerId
);
index_newtype!(
    /// Index into [`Instance::participants`].
    ParticipantId
);
index_newtype!(
    /// Index into [`Plan::vms`].
    VmId
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub name: String,
}

/// Symmetric site-to-site transmission time (ms) and per-stream cost ($).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMatrix {
    n: usize,
    time: Vec<f64>,
    cost: Vec<f64>,
}

impl NetworkMatrix {
    pub fn new(time: Vec<Vec<f64>>, cost: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let n = time.len();
        let flat_time = flatten_square(&time, n, "time")?;
        let flat_cost = flatten_square(&cost, n, "cost")?;
        let m = NetworkMatrix {
            n,
            time: flat_time,
            cost: flat_cost,
        };
        m.check()?;
        Ok(m)
    }

    /// Builds the cost matrix as `kappa * time`.
    pub fn from_time(time: Vec<Vec<f64>>, kappa: f64) -> Result<Self, ModelError> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(ModelError::InvalidNetwork(format!(
                "kappa {kappa} must be >= 0"
            )));
        }
        let cost = time
            .iter()
            .map(|row| row.iter().map(|t| t * kappa).collect())
            .collect();
        Self::new(time, cost)
    }

    fn check(&self) -> Result<(), ModelError> {
        for a in 0..self.n {
            for b in 0..self.n {
                for (what, m) in [("time", &self.time), ("cost", &self.cost)] {
                    let v = m[a * self.n + b];
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(ModelError::InvalidNetwork(format!(
                            "{what}[{a}][{b}] = {v} must be finite and >= 0"
                        )));
                    }
                    if a == b && v != 0.0 {
                        return Err(ModelError::InvalidNetwork(format!(
                            "{what}[{a}][{a}] = {v} must be 0"
                        )));
                    }
                    if v != m[b * self.n + a] {
                        return Err(ModelError::InvalidNetwork(format!(
                            "{what} is not symmetric at ({a}, {b})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn time(&self, a: SiteId, b: SiteId) -> f64 {
        self.time[a.0 * self.n + b.0]
    }

    #[inline]
    pub fn cost(&self, a: SiteId, b: SiteId) -> f64 {
        self.cost[a.0 * self.n + b.0]
    }

    pub fn time_rows(&self) -> Vec<Vec<f64>> {
        self.time
            .chunks(self.n.max(1))
            .map(|r| r.to_vec())
            .collect()
    }

    pub fn cost_rows(&self) -> Vec<Vec<f64>> {
        self.cost
            .chunks(self.n.max(1))
            .map(|r| r.to_vec())
            .collect()
    }

    pub fn max_time(&self) -> f64 {
        self.time.iter().copied().fold(0.0, f64::max)
    }
}

fn flatten_square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Vec<f64>, ModelError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ModelError::InvalidNetwork(format!(
            "{what} matrix must be {n}x{n}"
        )));
    }
    Ok(rows.iter().flatten().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub site: SiteId,
    pub capacity_mb: f64,
    pub cost_per_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub site: SiteId,
}

/// Linear media handling model shared by mixers and compressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaCostModel {
    pub time_per_stream_ms: f64,
    pub resource_per_stream_mb: f64,
    pub vm_overhead_mb: f64,
    pub max_compression_rate: f64,
    /// Fixed compression percentage used by the exact model, in (0, 100).
    pub fixed_gamma: f64,
}

impl Default for MediaCostModel {
    fn default() -> Self {
        MediaCostModel {
            time_per_stream_ms: 6.0,
            resource_per_stream_mb: 20.0,
            vm_overhead_mb: 400.0,
            max_compression_rate: 0.95,
            fixed_gamma: 95.0,
        }
    }
}

impl MediaCostModel {
    /// Time to mix or compress `k` streams.
    #[inline]
    pub fn handling_time(&self, k: usize) -> f64 {
        self.time_per_stream_ms * k as f64
    }

    /// Resources to mix or compress `k` streams, excluding VM overhead.
    #[inline]
    pub fn stream_resources(&self, k: usize) -> f64 {
        self.resource_per_stream_mb * k as f64
    }

    /// Total memory of a VM handling `k` streams.
    #[inline]
    pub fn vm_resources(&self, k: usize) -> f64 {
        self.vm_overhead_mb + self.stream_resources(k)
    }

    /// Compression fraction applied by compressors in the exact model.
    pub fn gamma_fraction(&self) -> f64 {
        self.fixed_gamma / 100.0
    }

    fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidInstance(m.to_string()));
        if !(self.time_per_stream_ms >= 0.0 && self.time_per_stream_ms.is_finite()) {
            return bad("time_per_stream_ms must be finite and >= 0");
        }
        if !(self.resource_per_stream_mb >= 0.0 && self.resource_per_stream_mb.is_finite()) {
            return bad("resource_per_stream_mb must be finite and >= 0");
        }
        if !(self.vm_overhead_mb >= 10.0 * self.resource_per_stream_mb) {
            return bad("vm_overhead_mb must be at least 10x resource_per_stream_mb");
        }
        if !(self.max_compression_rate > 0.0 && self.max_compression_rate < 1.0) {
            return bad("max_compression_rate must lie in (0, 1)");
        }
        if !(self.fixed_gamma > 0.0 && self.fixed_gamma < 100.0) {
            return bad("fixed_gamma must lie in (0, 100)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosSpec {
    pub max_delay_ms: f64,
}

impl Default for QosSpec {
    fn default() -> Self {
        QosSpec {
            max_delay_ms: DEFAULT_MAX_DELAY_MS,
        }
    }
}

/// How server resources are priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// Each VM costs `(overhead + per-stream resources) * cost_per_mb`.
    #[default]
    PerMb,
    /// Each VM costs a flat `cost_per_mb`, whatever its size.
    PerVm,
}

/// A complete placement problem. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    sites: Vec<Site>,
    servers: Vec<ServerSpec>,
    participants: Vec<Participant>,
    network: NetworkMatrix,
    media: MediaCostModel,
    qos: QosSpec,
    cost_mode: CostMode,
}

impl Instance {
    pub fn new(
        sites: Vec<Site>,
        servers: Vec<ServerSpec>,
        participants: Vec<Participant>,
        network: NetworkMatrix,
        media: MediaCostModel,
        qos: QosSpec,
    ) -> Result<Self, ModelError> {
        let inst = Instance {
            sites,
            servers,
            participants,
            network,
            media,
            qos,
            cost_mode: CostMode::default(),
        };
        inst.check()?;
        Ok(inst)
    }

    fn check(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidInstance(m));
        if self.network.len() != self.sites.len() {
            return bad(format!(
                "network covers {} sites but {} are declared",
                self.network.len(),
                self.sites.len()
            ));
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.sites {
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate site id {}", s.id));
            }
        }
        if self.servers.is_empty() {
            return bad("at least one server is required".into());
        }
        if self.participants.len() < 2 {
            return bad("at least two participants are required".into());
        }
        for (i, s) in self.servers.iter().enumerate() {
            if s.site.0 >= self.sites.len() {
                return bad(format!("server {i} references unknown site {}", s.site));
            }
            if !(s.capacity_mb > 0.0 && s.capacity_mb.is_finite()) {
                return bad(format!("server {i} capacity must be > 0"));
            }
            if !(s.cost_per_mb >= 0.0 && s.cost_per_mb.is_finite()) {
                return bad(format!("server {i} cost_per_mb must be >= 0"));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for (i, p) in self.participants.iter().enumerate() {
            if p.site.0 >= self.sites.len() {
                return bad(format!(
                    "participant {i} references unknown site {}",
                    p.site
                ));
            }
            if !ids.insert(p.id.as_str()) {
                return bad(format!("duplicate participant id {}", p.id));
            }
        }
        self.media.check()?;
        if !(self.qos.max_delay_ms > 0.0) {
            return bad("max_delay_ms must be > 0".into());
        }
        Ok(())
    }

    pub fn with_cost_mode(mut self, mode: CostMode) -> Self {
        self.cost_mode = mode;
        self
    }

    pub fn with_max_delay(mut self, max_delay_ms: f64) -> Result<Self, ModelError> {
        self.qos.max_delay_ms = max_delay_ms;
        self.check()?;
        Ok(self)
    }

    /// Replaces the network cost matrix with `kappa * time`.
    pub fn with_kappa(mut self, kappa: f64) -> Result<Self, ModelError> {
        self.network = NetworkMatrix::from_time(self.network.time_rows(), kappa)?;
        Ok(self)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn servers(&self) -> &[ServerSpec] {
        &self.servers
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn network(&self) -> &NetworkMatrix {
        &self.network
    }

    pub fn media(&self) -> &MediaCostModel {
        &self.media
    }

    pub fn qos(&self) -> &QosSpec {
        &self.qos
    }

    pub fn cost_mode(&self) -> CostMode {
        self.cost_mode
    }

    pub fn server(&self, id: ServerId) -> &ServerSpec {
        &self.servers[id.0]
    }

    pub fn server_site(&self, id: ServerId) -> SiteId {
        self.servers[id.0].site
    }

    pub fn participant_site(&self, id: ParticipantId) -> SiteId {
        self.participants[id.0].site
    }

    pub fn server_ids(&self) -> impl Iterator<Item = ServerId> {
        (0..self.servers.len()).map(ServerId)
    }

    pub fn participant_ids(&self) -> impl Iterator<Item = ParticipantId> {
        (0..self.participants.len()).map(ParticipantId)
    }

    /// Server price of a VM handling `inputs` streams under the current cost mode.
    pub fn vm_cost(&self, server: ServerId, inputs: usize) -> f64 {
        let s = &self.servers[server.0];
        match self.cost_mode {
            CostMode::PerMb => self.media.vm_resources(inputs) * s.cost_per_mb,
            CostMode::PerVm => s.cost_per_mb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VmKind {
    Mixer,
    Compressor,
}

impl fmt::Display for VmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VmKind::Mixer => f.write_str("mixer"),
            VmKind::Compressor => f.write_str("compressor"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmInstance {
    pub kind: VmKind,
    pub server: ServerId,
    pub input_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Participant(ParticipantId),
    Vm(VmId),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Participant(p) => write!(f, "participant {p}"),
            Endpoint::Vm(v) => write!(f, "vm {v}"),
        }
    }
}

/// A directed stream from `head` to `tail`. `compression_rate` is non-zero
/// only when `head` is a compressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEdge {
    pub head: Endpoint,
    pub tail: Endpoint,
    #[serde(default)]
    pub compression_rate: f64,
}

impl StreamEdge {
    pub fn plain(head: Endpoint, tail: Endpoint) -> Self {
        StreamEdge {
            head,
            tail,
            compression_rate: 0.0,
        }
    }
}

/// VMs plus the stream graph connecting them to participants.
///
/// A compressor's k-th incoming edge (in edge-list order) carries the same
/// stream as its k-th outgoing edge.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub vms: Vec<VmInstance>,
    pub edges: Vec<StreamEdge>,
    #[serde(default)]
    pub per_participant_delay: Vec<f64>,
    #[serde(default)]
    pub feasible: bool,
}

impl Plan {
    /// Builds a plan from VM kinds/servers and edges; input counts are the
    /// in-degrees of the graph.
    pub fn from_graph(vms: Vec<(VmKind, ServerId)>, edges: Vec<StreamEdge>) -> Self {
        let mut plan = Plan {
            vms: vms
                .into_iter()
                .map(|(kind, server)| VmInstance {
                    kind,
                    server,
                    input_count: 0,
                })
                .collect(),
            edges,
            per_participant_delay: Vec::new(),
            feasible: false,
        };
        plan.refresh_input_counts();
        plan
    }

    pub fn refresh_input_counts(&mut self) {
        for vm in &mut self.vms {
            vm.input_count = 0;
        }
        for e in &self.edges {
            if let Endpoint::Vm(v) = e.tail {
                if let Some(vm) = self.vms.get_mut(v.0) {
                    vm.input_count += 1;
                }
            }
        }
    }

    pub fn mixer_count(&self) -> usize {
        self.vms.iter().filter(|v| v.kind == VmKind::Mixer).count()
    }

    pub fn compressor_count(&self) -> usize {
        self.vms
            .iter()
            .filter(|v| v.kind == VmKind::Compressor)
            .count()
    }

    pub fn max_delay(&self) -> f64 {
        self.per_participant_delay
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Site of an endpoint. Callers must have checked references resolve.
    pub fn site_of(&self, ep: Endpoint, instance: &Instance) -> SiteId {
        match ep {
            Endpoint::Participant(p) => instance.participant_site(p),
            Endpoint::Vm(v) => instance.server_site(self.vms[v.0].server),
        }
    }

    /// Checks that every VM server and edge endpoint resolves.
    pub fn check_references(&self, instance: &Instance) -> Result<(), ModelError> {
        for (i, vm) in self.vms.iter().enumerate() {
            if vm.server.0 >= instance.servers().len() {
                return Err(ModelError::DanglingServer {
                    vm: i,
                    server: vm.server.0,
                });
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            for ep in [e.head, e.tail] {
                match ep {
                    Endpoint::Participant(p) if p.0 >= instance.participants().len() => {
                        return Err(ModelError::DanglingEndpoint {
                            edge: i,
                            what: "participant",
                            index: p.0,
                        })
                    }
                    Endpoint::Vm(v) if v.0 >= self.vms.len() => {
                        return Err(ModelError::DanglingEndpoint {
                            edge: i,
                            what: "vm",
                            index: v.0,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Aggregated cost and quality figures of a plan.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub server_cost: f64,
    pub network_cost: f64,
    pub total_cost: f64,
    pub max_delay: f64,
    pub compression_rates: Vec<f64>,
    pub vm_count: usize,
    pub mixer_count: usize,
    pub compressor_count: usize,
    pub allocated_memory: f64,
}

impl PlanMetrics {
    pub fn mean_compression_rate(&self) -> f64 {
        if self.compression_rates.is_empty() {
            return 0.0;
        }
        self.compression_rates.iter().sum::<f64>() / self.compression_rates.len() as f64
    }

    pub fn median_compression_rate(&self) -> f64 {
        let mut r = self.compression_rates.clone();
        if r.is_empty() {
            return 0.0;
        }
        r.sort_by(f64::total_cmp);
        let n = r.len();
        if n % 2 == 1 {
            r[n / 2]
        } else {
            (r[n / 2 - 1] + r[n / 2]) / 2.0
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// One site per entry of `times`; servers and participants are placed by site index.
    pub fn instance(
        times: Vec<Vec<f64>>,
        servers: &[(usize, f64)],
        participants: &[usize],
        max_delay: f64,
    ) -> Instance {
        let sites = (0..times.len())
            .map(|i| Site {
                id: format!("s{i}"),
                name: format!("site {i}"),
            })
            .collect();
        let network = NetworkMatrix::from_time(times, DEFAULT_KAPPA).unwrap();
        let servers = servers
            .iter()
            .map(|&(site, cap)| ServerSpec {
                site: SiteId(site),
                capacity_mb: cap,
                cost_per_mb: 0.01,
            })
            .collect();
        let participants = participants
            .iter()
            .enumerate()
            .map(|(i, &s)| Participant {
                id: format!("u{i}"),
                site: SiteId(s),
            })
            .collect();
        Instance::new(
            sites,
            servers,
            participants,
            network,
            MediaCostModel::default(),
            QosSpec {
                max_delay_ms: max_delay,
            },
        )
        .unwrap()
    }

    pub fn colocated(n: usize) -> Instance {
        instance(vec![vec![0.0]], &[(0, 10240.0)], &vec![0; n], 400.0)
    }

    pub fn p(i: usize) -> Endpoint {
        Endpoint::Participant(ParticipantId(i))
    }

    pub fn v(i: usize) -> Endpoint {
        Endpoint::Vm(VmId(i))
    }

    /// Every participant uploads to and downloads from vm 0.
    pub fn star(n: usize, server: usize) -> Plan {
        let mut edges = Vec::new();
        for u in 0..n {
            edges.push(StreamEdge::plain(p(u), v(0)));
            edges.push(StreamEdge::plain(v(0), p(u)));
        }
        Plan::from_graph(vec![(VmKind::Mixer, ServerId(server))], edges)
    }
}
