//! `cram`: solve, check and sweep conferencing placement problems from files.
//!
//! Exit codes: 0 success, 1 input error, 2 infeasible (or a plan with
//! violations), 3 refused by the exact search's size bounds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cram_core::exact::{brute_force_optimal, export_lp, ExactError, LpDocument, SearchBounds};
use cram_core::heuristic::{cram_allocate, HeuristicError};
use cram_core::model::io::{parse_instance, parse_plan, plan_to_json};
use cram_core::model::{metrics, validate_plan, CostMode, DelayModel, Instance, Plan, PlanMetrics};
use cram_core::scenarios::{
    render_chart, sweep, write_csv, PingFixture, ScenarioSpec, CHART_METRICS,
};

#[derive(Parser)]
#[command(
    name = "cram",
    version,
    about = "Place video mixers and compressors on geo-distributed servers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DelayArg {
    Algorithm1,
    Ilp,
}

impl From<DelayArg> for DelayModel {
    fn from(d: DelayArg) -> Self {
        match d {
            DelayArg::Algorithm1 => DelayModel::Algorithm1,
            DelayArg::Ilp => DelayModel::Ilp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    PerMb,
    PerVm,
}

impl From<CostArg> for CostMode {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::PerMb => CostMode::PerMb,
            CostArg::PerVm => CostMode::PerVm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the heuristic on an instance and write the plan.
    Solve {
        instance: PathBuf,
        plan_out: PathBuf,
        /// Delay model used to report and check the plan.
        #[arg(long, value_enum, default_value = "algorithm1")]
        delay_model: DelayArg,
        /// Overrides the instance's server pricing.
        #[arg(long, value_enum)]
        cost_mode: Option<CostArg>,
    },
    /// Find a minimum-cost plan by exhaustive search (small instances only).
    Exact {
        instance: PathBuf,
        plan_out: PathBuf,
        #[arg(long, value_enum)]
        cost_mode: Option<CostArg>,
        #[arg(long, default_value_t = SearchBounds::default().max_participants)]
        max_participants: usize,
        #[arg(long, default_value_t = SearchBounds::default().max_servers)]
        max_servers: usize,
        #[arg(long, default_value_t = SearchBounds::default().node_budget)]
        node_budget: u64,
    },
    /// List constraint violations of a plan.
    Validate {
        instance: PathBuf,
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "algorithm1")]
        delay_model: DelayArg,
        #[arg(long, value_enum)]
        cost_mode: Option<CostArg>,
    },
    /// Run the heuristic over a list of scenario specs.
    Sweep {
        /// JSON array of scenario specs.
        specs: PathBuf,
        csv_out: PathBuf,
        /// Directory for one SVG chart per metric.
        #[arg(long)]
        charts: Option<PathBuf>,
        /// Ping fixture to use instead of the built-in one.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Write the integer program in LP format.
    ExportLp {
        instance: PathBuf,
        lp_out: PathBuf,
        #[arg(long, value_enum)]
        cost_mode: Option<CostArg>,
    },
}

/// Metrics rounded for reporting: times to 3 decimals, costs to 4.
#[derive(Serialize)]
struct ReportMetrics {
    server_cost: f64,
    network_cost: f64,
    total_cost: f64,
    max_delay_ms: f64,
    vm_count: usize,
    mixer_count: usize,
    compressor_count: usize,
    allocated_mb: f64,
    mean_compression_rate: f64,
    median_compression_rate: f64,
}

fn round(v: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (v * k).round() / k
}

impl From<&PlanMetrics> for ReportMetrics {
    fn from(m: &PlanMetrics) -> Self {
        ReportMetrics {
            server_cost: round(m.server_cost, 4),
            network_cost: round(m.network_cost, 4),
            total_cost: round(m.total_cost, 4),
            max_delay_ms: round(m.max_delay, 3),
            vm_count: m.vm_count,
            mixer_count: m.mixer_count,
            compressor_count: m.compressor_count,
            allocated_mb: m.allocated_memory,
            mean_compression_rate: round(m.mean_compression_rate(), 4),
            median_compression_rate: round(m.median_compression_rate(), 4),
        }
    }
}

#[derive(Serialize, Default)]
struct RunReport {
    command: Vec<String>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    instance_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<ReportMetrics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    wall_clock_ms: f64,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    status: &'static str,
    error: anyhow::Error,
}

impl Failure {
    fn input(error: anyhow::Error) -> Self {
        Failure {
            code: 1,
            status: "input-error",
            error,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::input(error)
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str, report: &mut RunReport) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    report.output_path = Some(path.display().to_string());
    report.output_digest = Some(digest(text.as_bytes()));
    Ok(())
}

fn load_instance(
    path: &Path,
    cost: Option<CostArg>,
    report: &mut RunReport,
) -> anyhow::Result<Instance> {
    let text = read(path)?;
    report.instance_digest = Some(digest(text.as_bytes()));
    let inst = parse_instance(&text).with_context(|| format!("{}", path.display()))?;
    Ok(match cost {
        Some(c) => inst.with_cost_mode(c.into()),
        None => inst,
    })
}

fn save_plan(
    path: &Path,
    plan: &Plan,
    inst: &Instance,
    model: DelayModel,
    report: &mut RunReport,
) -> anyhow::Result<()> {
    let m = metrics(plan, inst, model)?;
    write(path, &plan_to_json(plan, Some(m.clone())), report)?;
    report.metrics = Some((&m).into());
    Ok(())
}

fn run(command: Command, report: &mut RunReport) -> Result<(), Failure> {
    match command {
        Command::Solve {
            instance,
            plan_out,
            delay_model,
            cost_mode,
        } => {
            let inst = load_instance(&instance, cost_mode, report)?;
            let plan = cram_allocate(&inst).map_err(|e| match e {
                HeuristicError::Infeasible { .. } => Failure {
                    code: 2,
                    status: "infeasible",
                    error: anyhow!(e),
                },
                HeuristicError::Model(_) => Failure::input(anyhow!(e)),
            })?;
            save_plan(&plan_out, &plan, &inst, delay_model.into(), report)?;
        }
        Command::Exact {
            instance,
            plan_out,
            cost_mode,
            max_participants,
            max_servers,
            node_budget,
        } => {
            let inst = load_instance(&instance, cost_mode, report)?;
            let bounds = SearchBounds {
                max_participants,
                max_servers,
                node_budget,
                ..SearchBounds::default()
            };
            let plan = brute_force_optimal(&inst, &bounds).map_err(|e| {
                let (code, status) = match e {
                    ExactError::OutOfBounds { .. } | ExactError::BudgetExceeded { .. } => {
                        (3, "refused")
                    }
                    ExactError::Infeasible(_) => (2, "infeasible"),
                    ExactError::Model(_) => (1, "input-error"),
                };
                Failure {
                    code,
                    status,
                    error: anyhow!(e),
                }
            })?;
            save_plan(&plan_out, &plan, &inst, DelayModel::Ilp, report)?;
        }
        Command::Validate {
            instance,
            plan,
            delay_model,
            cost_mode,
        } => {
            let inst = load_instance(&instance, cost_mode, report)?;
            let plan = parse_plan(&read(&plan)?).with_context(|| format!("{}", plan.display()))?;
            let violations = validate_plan(&plan, &inst, delay_model.into());
            report.violations = violations.iter().map(ToString::to_string).collect();
            if let Ok(m) = metrics(&plan, &inst, delay_model.into()) {
                report.metrics = Some((&m).into());
            }
            if !violations.is_empty() {
                return Err(Failure {
                    code: 2,
                    status: "violations",
                    error: anyhow!("{} constraint violation(s)", violations.len()),
                });
            }
        }
        Command::Sweep {
            specs,
            csv_out,
            charts,
            fixture,
        } => {
            let text = read(&specs)?;
            report.instance_digest = Some(digest(text.as_bytes()));
            let specs: Vec<ScenarioSpec> =
                serde_json::from_str(&text).with_context(|| format!("{}", specs.display()))?;
            let fx = match fixture {
                Some(p) => PingFixture::load(&p).map_err(|e| anyhow!(e))?,
                None => PingFixture::shipped(),
            };
            let rows = sweep(&specs, &fx);
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).map_err(|e| anyhow!(e))?;
            write(
                &csv_out,
                &String::from_utf8(buf).expect("csv is utf-8"),
                report,
            )?;
            if let Some(dir) = charts {
                fs::create_dir_all(&dir)
                    .with_context(|| format!("cannot create {}", dir.display()))?;
                for (name, _, _) in CHART_METRICS {
                    let svg = render_chart(&rows, name).expect("known metric");
                    let path = dir.join(format!("{name}.svg"));
                    fs::write(&path, svg)
                        .with_context(|| format!("cannot write {}", path.display()))?;
                }
            }
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            report.message = Some(format!("{} rows, {failed} infeasible", rows.len()));
        }
        Command::ExportLp {
            instance,
            lp_out,
            cost_mode,
        } => {
            let inst = load_instance(&instance, cost_mode, report)?;
            let text = export_lp(&inst).to_string();
            LpDocument::parse(&text)
                .map_err(|e| anyhow!("exported LP does not parse back: {e}"))?;
            write(&lp_out, &text, report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let mut report = RunReport {
        command: std::env::args().collect(),
        status: "ok",
        ..RunReport::default()
    };
    let code = match run(cli.command, &mut report) {
        Ok(()) => 0,
        Err(f) => {
            report.status = f.status;
            report.message = Some(format!("{:#}", f.error));
            eprintln!("error: {:#}", f.error);
            f.code
        }
    };
    report.wall_clock_ms = round(start.elapsed().as_secs_f64() * 1000.0, 3);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialises")
    );
    ExitCode::from(code)
}
