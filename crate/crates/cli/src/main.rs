//! `ldesc-sim`: run, compare and sweep locality-descriptor simulations.
//!
//! Exit codes: 0 success, 2 configuration / usage error, 3 simulation error.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldesc_core::engine::trace::{read_jsonl, streams_from_trace, write_jsonl};
use ldesc_core::engine::{
    prepare, simulate_streams, CtaStreams, SimMetrics, SimOptions, Strategy, SystemConfig,
};
use ldesc_core::numa::PlacementOptions;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation error: {0}")]
    Sim(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Sim(_) | CliError::Output(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ldesc-sim", version, about = "Locality descriptor GPU memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the configured system with a named preset.
    #[arg(long)]
    preset: Option<String>,
    /// Replay a JSONL access trace instead of the generated streams.
    #[arg(long)]
    trace_in: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured policy and print metrics as JSON.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the demand-access trace as JSONL.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Write the CTA schedule and placement plan as JSON.
        #[arg(long)]
        schedule_out: Option<PathBuf>,
    },
    /// Simulate several policies and print one CSV row each.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
    },
    /// Vary one parameter and print one CSV row per value.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

const METRIC_COLUMNS: &str =
    "l1_hit_rate,inflight_hit_rate,avg_working_set,access_efficiency,total_cycles,prefetch_accuracy";

const SWEEP_AXES: [&str; 5] = ["sm_count", "zone_count", "l1_capacity", "pin_reset_period", "seed"];

fn metric_fields(m: &SimMetrics) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{},{:.6}",
        m.l1_hit_rate,
        m.inflight_hit_rate,
        m.avg_working_set,
        m.access_efficiency,
        m.total_cycles,
        m.prefetch_accuracy
    )
}

/// One fully resolved simulation.
#[derive(Debug, Clone)]
struct Job {
    system: SystemConfig,
    strategy: Strategy,
    seed: u64,
}

struct Loaded {
    cfg: ExperimentConfig,
    system: SystemConfig,
    trace: Option<Vec<ldesc_core::engine::AccessEvent>>,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let system = match &common.preset {
        Some(p) => SystemConfig::preset(p).ok_or_else(|| {
            CliError::Config(format!(
                "--preset: unknown preset {p:?} (expected one of {})",
                SystemConfig::PRESETS.join(", ")
            ))
        })?,
        None => cfg.system.resolve()?,
    };
    let trace = match &common.trace_in {
        Some(path) => {
            let f = File::open(path)
                .map_err(|e| CliError::Config(format!("--trace-in {}: {e}", path.display())))?;
            Some(read_jsonl(BufReader::new(f)).map_err(|e| CliError::Config(format!("--trace-in: {e}")))?)
        }
        None => None,
    };
    Ok(Loaded { cfg, system, trace })
}

fn check_system(system: &SystemConfig, what: &str) -> Result<(), CliError> {
    system
        .validate()
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

#[derive(Serialize)]
struct ScheduleExport<'a> {
    sm_count: u32,
    /// CTA id → SM id.
    assignment: &'a [u32],
    clusters: Option<ldesc_core::Dim3>,
    numa_plan: Option<serde_json::Value>,
}

struct RunResult {
    metrics: SimMetrics,
    trace: Option<Vec<ldesc_core::engine::AccessEvent>>,
    schedule: Option<String>,
}

fn execute(loaded: &Loaded, job: &Job, record_trace: bool, export_schedule: bool) -> Result<RunResult, CliError> {
    let workload = loaded.cfg.workload(job.seed)?;
    let streams: CtaStreams = match &loaded.trace {
        Some(t) => streams_from_trace(t, &workload.grid).map_err(|e| CliError::Config(format!("--trace-in: {e}")))?,
        None => workload.streams(),
    };
    let sim_err = |e: ldesc_core::engine::EngineError| CliError::Sim(e.to_string());
    let setup = prepare(
        &workload,
        &job.system,
        job.strategy,
        loaded.cfg.placement,
        PlacementOptions::default(),
    )
    .map_err(sim_err)?;
    let out = simulate_streams(
        &workload,
        &streams,
        &job.system,
        &setup.schedule,
        &setup.placement,
        &setup.policies,
        SimOptions { record_trace },
    )
    .map_err(sim_err)?;
    let schedule = export_schedule.then(|| {
        let export = ScheduleExport {
            sm_count: setup.schedule.sm_count,
            assignment: &setup.schedule.assignment,
            clusters: setup.clusters.map(|c| c.0),
            numa_plan: setup.plan.as_ref().map(|p| p.to_json()),
        };
        serde_json::to_string_pretty(&export).expect("schedule serializes")
    });
    Ok(RunResult {
        metrics: out.metrics,
        trace: out.trace,
        schedule,
    })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Output(e.to_string());
    match path {
        Some(p) => std::fs::write(p, text).map_err(io),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(io)?;
            out.flush().map_err(io)
        }
    }
}

fn run(common: &Common, trace_out: Option<&Path>, schedule_out: Option<&Path>) -> Result<(), CliError> {
    let loaded = load(common)?;
    check_system(&loaded.system, "system")?;
    let job = Job {
        system: loaded.system.clone(),
        strategy: Strategy::named(&loaded.cfg.policy).expect("policy checked at load"),
        seed: loaded.cfg.seed,
    };
    let res = execute(&loaded, &job, trace_out.is_some(), schedule_out.is_some())?;
    if let (Some(path), Some(events)) = (trace_out, &res.trace) {
        let f = File::create(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        write_jsonl(events, &mut w).map_err(|e| CliError::Output(e.to_string()))?;
        w.flush().map_err(|e| CliError::Output(e.to_string()))?;
    }
    if let (Some(path), Some(text)) = (schedule_out, &res.schedule) {
        write_output(Some(path), &(text.clone() + "\n"))?;
    }
    write_output(common.out.as_deref(), &(res.metrics.to_json_pretty() + "\n"))
}

fn run_all(loaded: &Loaded, jobs: &[Job]) -> Result<Vec<SimMetrics>, CliError> {
    jobs.par_iter()
        .map(|j| execute(loaded, j, false, false).map(|r| r.metrics))
        .collect()
}

fn compare(common: &Common, policies: &[String]) -> Result<(), CliError> {
    if policies.len() < 2 {
        return Err(CliError::Config(format!(
            "--policies: compare needs at least two policies, got {}",
            policies.len()
        )));
    }
    let strategies = policies
        .iter()
        .map(|p| {
            Strategy::named(p).ok_or_else(|| {
                CliError::Config(format!(
                    "--policies: unknown policy {p:?} (expected one of {})",
                    Strategy::NAMES.join(", ")
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let loaded = load(common)?;
    check_system(&loaded.system, "system")?;
    let jobs: Vec<Job> = strategies
        .into_iter()
        .map(|strategy| Job {
            system: loaded.system.clone(),
            strategy,
            seed: loaded.cfg.seed,
        })
        .collect();
    let metrics = run_all(&loaded, &jobs)?;
    let mut csv = format!("policy,{METRIC_COLUMNS}\n");
    for (p, m) in policies.iter().zip(&metrics) {
        csv += &format!("{p},{}\n", metric_fields(m));
    }
    write_output(common.out.as_deref(), &csv)
}

fn sweep(common: &Common, axis: &str, values: &[String]) -> Result<(), CliError> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(CliError::Config(format!(
            "--axis: unknown axis {axis:?} (expected one of {})",
            SWEEP_AXES.join(", ")
        )));
    }
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config("--values: empty value list".into()));
    }
    let loaded = load(common)?;
    let strategy = Strategy::named(&loaded.cfg.policy).expect("policy checked at load");
    let mut jobs = Vec::with_capacity(values.len());
    for v in &values {
        let n: u64 = v
            .parse()
            .map_err(|_| CliError::Config(format!("--values: {v:?} is not a non-negative integer")))?;
        let narrow = || {
            u32::try_from(n).map_err(|_| CliError::Config(format!("--values: {n} out of range for {axis}")))
        };
        let mut job = Job {
            system: loaded.system.clone(),
            strategy,
            seed: loaded.cfg.seed,
        };
        match axis {
            "sm_count" => job.system.sm_count = narrow()?,
            "zone_count" => job.system.zone_count = narrow()?,
            "l1_capacity" => job.system.l1.capacity = n,
            "pin_reset_period" => {
                job.system.l1.pin_reset_period = n;
                job.system.l2.pin_reset_period = n;
            }
            "seed" => job.seed = n,
            _ => unreachable!("axis checked above"),
        }
        check_system(&job.system, &format!("{axis}={n}"))?;
        jobs.push(job);
    }
    let metrics = run_all(&loaded, &jobs)?;
    let mut csv = format!("{axis},{METRIC_COLUMNS},demand_accesses\n");
    for (v, m) in values.iter().zip(&metrics) {
        csv += &format!("{v},{},{}\n", metric_fields(m), m.demand_accesses);
    }
    write_output(common.out.as_deref(), &csv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Run {
            common,
            trace_out,
            schedule_out,
        } => run(common, trace_out.as_deref(), schedule_out.as_deref()),
        Command::Compare { common, policies } => compare(common, policies),
        Command::Sweep { common, axis, values } => sweep(common, axis, values),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ldesc-sim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
