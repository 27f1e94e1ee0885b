//! Evaluation instances built from a ping fixture, and batch sweeps over them.
//!
//! Online distance learning (ODL) places a server in each of nine USA cities;
//! online gaming (MMOG) uses twenty cities around the world. Participants are
//! either spread round-robin over every server site or split between the
//! westernmost and easternmost sites.

mod chart;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heuristic::cram_allocate;
use crate::model::{
    metrics, DelayModel, Instance, MediaCostModel, ModelError, NetworkMatrix, Participant,
    PlanMetrics, QosSpec, ServerSpec, Site, SiteId, DEFAULT_KAPPA,
};

pub use chart::{render_chart, CHART_METRICS};

const SHIPPED: &str = include_str!("../../fixtures/ping.json");

/// Capacity and price of every generated server.
pub const SERVER_CAPACITY_MB: f64 = 10240.0;
pub const SERVER_COST_PER_MB: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSite {
    pub id: String,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// Site metadata and round-trip times, with the server sites of each scenario family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PingFixture {
    pub provenance: serde_json::Value,
    pub sites: Vec<FixtureSite>,
    pub world: Vec<String>,
    pub usa: Vec<String>,
    pub time_ms: Vec<Vec<f64>>,
}

impl PingFixture {
    /// The snapshot committed with the crate.
    pub fn shipped() -> PingFixture {
        PingFixture::parse(SHIPPED).expect("shipped fixture is valid")
    }

    pub fn load(path: &Path) -> Result<PingFixture, ScenarioError> {
        PingFixture::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<PingFixture, ScenarioError> {
        let fx: PingFixture =
            serde_json::from_str(text).map_err(|e| ScenarioError::Fixture(e.to_string()))?;
        let n = fx.sites.len();
        if fx.time_ms.len() != n || fx.time_ms.iter().any(|r| r.len() != n) {
            return Err(ScenarioError::Fixture(format!(
                "time matrix is not {n}x{n}"
            )));
        }
        for i in 0..n {
            if fx.time_ms[i][i] != 0.0 {
                return Err(ScenarioError::Fixture(format!(
                    "nonzero diagonal at {}",
                    fx.sites[i].id
                )));
            }
            for j in 0..i {
                if fx.time_ms[i][j] != fx.time_ms[j][i] {
                    return Err(ScenarioError::Fixture(format!(
                        "asymmetric times between {} and {}",
                        fx.sites[i].id, fx.sites[j].id
                    )));
                }
            }
        }
        for id in fx.world.iter().chain(&fx.usa) {
            fx.index(id)?;
        }
        Ok(fx)
    }

    pub fn index(&self, id: &str) -> Result<usize, ScenarioError> {
        self.sites
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| ScenarioError::Fixture(format!("unknown site `{id}`")))
    }

    /// Server site ids of a scenario family.
    pub fn servers_for(&self, kind: ScenarioKind) -> &[String] {
        match kind {
            ScenarioKind::Odl => &self.usa,
            ScenarioKind::Mmog => &self.world,
        }
    }

    /// Instance with one server per `server_sites` entry and `count` participants
    /// at each `(site, count)`. Sites are the union of both lists, servers first.
    ///
    /// Fixture values are ping round trips; a stream only travels one way, so
    /// the instance's send time is half the round trip.
    pub fn instance(
        &self,
        server_sites: &[&str],
        participants: &[(&str, usize)],
    ) -> Result<Instance, ScenarioError> {
        let mut ids: Vec<&str> = Vec::new();
        for id in server_sites
            .iter()
            .copied()
            .chain(participants.iter().map(|p| p.0))
        {
            self.index(id)?;
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| self.index(id))
            .collect::<Result<_, _>>()?;
        let sites = idx
            .iter()
            .map(|&i| Site {
                id: self.sites[i].id.clone(),
                name: self.sites[i].name.clone(),
            })
            .collect();
        let time = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.time_ms[i][j] / 2.0).collect())
            .collect();
        let site_of =
            |id: &str| SiteId(ids.iter().position(|s| *s == id).expect("collected above"));
        let servers = server_sites
            .iter()
            .map(|id| ServerSpec {
                site: site_of(id),
                capacity_mb: SERVER_CAPACITY_MB,
                cost_per_mb: SERVER_COST_PER_MB,
            })
            .collect();
        let mut people = Vec::new();
        for &(id, count) in participants {
            for _ in 0..count {
                people.push(Participant {
                    id: format!("u{}", people.len()),
                    site: site_of(id),
                });
            }
        }
        Ok(Instance::new(
            sites,
            servers,
            people,
            NetworkMatrix::from_time(time, DEFAULT_KAPPA)?,
            MediaCostModel::default(),
            QosSpec::default(),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Odl,
    Mmog,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Odl => "odl",
            ScenarioKind::Mmog => "mmog",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Homogeneous,
    Heterogeneous,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Homogeneous => "homogeneous",
            Distribution::Heterogeneous => "heterogeneous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub distribution: Distribution,
    pub participant_count: usize,
    /// Carried through to the output; generation itself is deterministic.
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, distribution: Distribution, participant_count: usize) -> Self {
        ScenarioSpec {
            kind,
            distribution,
            participant_count,
            seed: 0,
        }
    }
}

/// Standard evaluation grids: ODL at 100/200/500 and MMOG at 100/2000/3000
/// participants, each under both distributions.
pub fn standard_grid(kind: ScenarioKind) -> Vec<ScenarioSpec> {
    let sizes: &[usize] = match kind {
        ScenarioKind::Odl => &[100, 200, 500],
        ScenarioKind::Mmog => &[100, 2000, 3000],
    };
    let mut specs = Vec::new();
    for dist in [Distribution::Homogeneous, Distribution::Heterogeneous] {
        for &n in sizes {
            specs.push(ScenarioSpec::new(kind, dist, n));
        }
    }
    specs
}

/// Westernmost and easternmost server sites by longitude; ties go to the
/// earlier site.
pub fn west_east(
    fixture: &PingFixture,
    kind: ScenarioKind,
) -> Result<(String, String), ScenarioError> {
    let ids = fixture.servers_for(kind);
    let lon = |id: &String| fixture.index(id).map(|i| fixture.sites[i].longitude);
    let mut west = &ids[0];
    let mut east = &ids[0];
    for id in ids {
        if lon(id)? < lon(west)? {
            west = id;
        }
        if lon(id)? > lon(east)? {
            east = id;
        }
    }
    Ok((west.clone(), east.clone()))
}

pub fn generate(spec: &ScenarioSpec, fixture: &PingFixture) -> Result<Instance, ScenarioError> {
    let n = spec.participant_count;
    if n < 2 {
        return Err(ScenarioError::Model(ModelError::InvalidInstance(
            "a conference needs at least two participants".into(),
        )));
    }
    let servers: Vec<&str> = fixture
        .servers_for(spec.kind)
        .iter()
        .map(String::as_str)
        .collect();
    match spec.distribution {
        Distribution::Homogeneous => {
            let k = servers.len();
            let people: Vec<(&str, usize)> = (0..n).map(|i| (servers[i % k], 1)).collect();
            fixture.instance(&servers, &people)
        }
        Distribution::Heterogeneous => {
            let (west, east) = west_east(fixture, spec.kind)?;
            fixture.instance(
                &servers,
                &[(west.as_str(), n.div_ceil(2)), (east.as_str(), n / 2)],
            )
        }
    }
}

/// One sweep run: the scenario spec echoed back with its metrics or the reason it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub spec: ScenarioSpec,
    pub outcome: Result<PlanMetrics, String>,
}

pub fn run_one(spec: &ScenarioSpec, fixture: &PingFixture) -> SweepRow {
    let outcome = generate(spec, fixture)
        .map_err(|e| e.to_string())
        .and_then(|inst| {
            let plan = cram_allocate(&inst).map_err(|e| e.to_string())?;
            metrics(&plan, &inst, DelayModel::Algorithm1).map_err(|e| e.to_string())
        });
    SweepRow {
        spec: spec.clone(),
        outcome,
    }
}

/// Runs every spec, in parallel, keeping input order.
pub fn sweep(specs: &[ScenarioSpec], fixture: &PingFixture) -> Vec<SweepRow> {
    specs.par_iter().map(|s| run_one(s, fixture)).collect()
}

pub const CSV_HEADER: [&str; 12] = [
    "scenario",
    "distribution",
    "n",
    "server_cost",
    "network_cost",
    "total_cost",
    "max_delay_ms",
    "vm_count",
    "allocated_mb",
    "mean_compression_rate",
    "median_compression_rate",
    "status",
];

/// CSV with costs to 4 decimals and times to 3. Failed runs leave metric
/// columns empty and carry the reason in `status`.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        let mut rec = vec![
            row.spec.kind.name().to_string(),
            row.spec.distribution.name().to_string(),
            row.spec.participant_count.to_string(),
        ];
        match &row.outcome {
            Ok(m) => {
                rec.extend([
                    format!("{:.4}", m.server_cost),
                    format!("{:.4}", m.network_cost),
                    format!("{:.4}", m.total_cost),
                    format!("{:.3}", m.max_delay),
                    m.vm_count.to_string(),
                    format!("{:.1}", m.allocated_memory),
                    format!("{:.4}", m.mean_compression_rate()),
                    format!("{:.4}", m.median_compression_rate()),
                    "ok".to_string(),
                ]);
            }
            Err(reason) => {
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.push(format!("infeasible: {reason}"));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
