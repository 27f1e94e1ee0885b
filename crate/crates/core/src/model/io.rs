//! JSON documents for instances and plans.
//!
//! Instances name sites by string; servers and participants refer to those
//! names. The latency matrix may be nested rows or a flat row-major array.

use serde::{Deserialize, Serialize};

use super::{
    CostMode, Instance, MediaCostModel, ModelError, NetworkMatrix, Participant, Plan, PlanMetrics,
    QosSpec, ServerSpec, Site, SiteId, DEFAULT_KAPPA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixDoc {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixDoc {
    fn rows(&self, n: usize, what: &str) -> Result<Vec<Vec<f64>>, ModelError> {
        match self {
            MatrixDoc::Nested(rows) => Ok(rows.clone()),
            MatrixDoc::Flat(flat) => {
                if flat.len() != n * n {
                    return Err(ModelError::InvalidNetwork(format!(
                        "{what}: flat matrix has {} entries, expected {}",
                        flat.len(),
                        n * n
                    )));
                }
                Ok(flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub sites: Vec<String>,
    pub time_ms: MatrixDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerDoc {
    pub site: String,
    pub capacity_mb: f64,
    pub cost_per_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantDoc {
    pub id: String,
    pub site: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub network: NetworkDoc,
    pub servers: Vec<ServerDoc>,
    pub participants: Vec<ParticipantDoc>,
    #[serde(default)]
    pub media: MediaCostModel,
    #[serde(default)]
    pub qos: QosSpec,
    #[serde(default)]
    pub cost_mode: CostMode,
}

impl InstanceDoc {
    pub fn into_instance(self) -> Result<Instance, ModelError> {
        let names = &self.network.sites;
        let n = names.len();
        let lookup = |name: &str| -> Result<SiteId, ModelError> {
            names
                .iter()
                .position(|s| s == name)
                .map(SiteId)
                .ok_or_else(|| ModelError::InvalidInstance(format!("unknown site {name:?}")))
        };
        let time = self.network.time_ms.rows(n, "time_ms")?;
        let network = match (&self.network.cost, self.network.kappa) {
            (Some(_), Some(_)) => {
                return Err(ModelError::InvalidNetwork(
                    "give either cost or kappa, not both".into(),
                ))
            }
            (Some(cost), None) => NetworkMatrix::new(time, cost.rows(n, "cost")?)?,
            (None, k) => NetworkMatrix::from_time(time, k.unwrap_or(DEFAULT_KAPPA))?,
        };
        let servers = self
            .servers
            .iter()
            .map(|s| {
                Ok(ServerSpec {
                    site: lookup(&s.site)?,
                    capacity_mb: s.capacity_mb,
                    cost_per_mb: s.cost_per_mb,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        let participants = self
            .participants
            .iter()
            .map(|p| {
                Ok(Participant {
                    id: p.id.clone(),
                    site: lookup(&p.site)?,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        let sites = names
            .iter()
            .map(|s| Site {
                id: s.clone(),
                name: s.clone(),
            })
            .collect();
        Ok(
            Instance::new(sites, servers, participants, network, self.media, self.qos)?
                .with_cost_mode(self.cost_mode),
        )
    }

    pub fn from_instance(inst: &Instance) -> Self {
        let name = |s: SiteId| inst.sites()[s.0].id.clone();
        InstanceDoc {
            network: NetworkDoc {
                sites: inst.sites().iter().map(|s| s.id.clone()).collect(),
                time_ms: MatrixDoc::Nested(inst.network().time_rows()),
                cost: Some(MatrixDoc::Nested(inst.network().cost_rows())),
                kappa: None,
            },
            servers: inst
                .servers()
                .iter()
                .map(|s| ServerDoc {
                    site: name(s.site),
                    capacity_mb: s.capacity_mb,
                    cost_per_mb: s.cost_per_mb,
                })
                .collect(),
            participants: inst
                .participants()
                .iter()
                .map(|p| ParticipantDoc {
                    id: p.id.clone(),
                    site: name(p.site),
                })
                .collect(),
            media: inst.media().clone(),
            qos: inst.qos().clone(),
            cost_mode: inst.cost_mode(),
        }
    }
}

pub fn parse_instance(json: &str) -> Result<Instance, ModelError> {
    let doc: InstanceDoc = serde_json::from_str(json)
        .map_err(|e| ModelError::InvalidInstance(format!("instance json: {e}")))?;
    doc.into_instance()
}

pub fn instance_to_json(inst: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceDoc::from_instance(inst)).expect("instance serializes")
}

/// A plan as written by the solvers, optionally with its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDoc {
    #[serde(flatten)]
    pub plan: Plan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PlanMetrics>,
}

pub fn parse_plan(json: &str) -> Result<Plan, ModelError> {
    let doc: PlanDoc = serde_json::from_str(json)
        .map_err(|e| ModelError::InvalidInstance(format!("plan json: {e}")))?;
    Ok(doc.plan)
}

pub fn plan_to_json(plan: &Plan, metrics: Option<PlanMetrics>) -> String {
    serde_json::to_string_pretty(&PlanDoc {
        plan: plan.clone(),
        metrics,
    })
    .expect("plan serializes")
}
