//! Scenario runs, workloads, metrics and mode comparison.

mod metrics;
mod queue;
mod scenario;
mod workload;

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::EngineState;
use crate::error::{Error, Result};
use crate::firm::{self, Controller, EventLog, ExecuteSummary, ManageConfig, PolicyRegistry, RuntimeOptions, Workload};
use crate::time::SimTime;
use crate::topology::Topology;

pub use metrics::{deviation, mean_completion, total_hops, MetricsRecord};
pub use queue::EventQueue;
pub use scenario::{ArrivalKind, EnginePatch, Scenario};
pub use workload::{ClosedWorkload, PoissonWorkload};

/// Modes in comparison order.
pub const MODES: [&str; 3] = ["base", "affinity", "firm"];

const ARRIVAL_STREAM: u64 = 0;
const CLIENT_STREAM: u64 = 1;
const FAILURE_STREAM: u64 = 2;
const PROMOTER_STREAM: u64 = 3;

/// Seed for one independent random stream of a run.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.gen()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub k: usize,
    pub requests: usize,
    pub seed: u64,
    pub mean_completion: Option<f64>,
    pub deviation: Option<f64>,
    pub inter_rack_hops: u64,
    #[serde(flatten)]
    pub counts: ExecuteSummary,
}

pub struct RunOutput {
    pub log: EventLog,
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    run_with(scenario, &PolicyRegistry::builtin())
}

/// Runs `scenario` with the policy named by its mode, looked up in `policies`.
pub fn run_with(scenario: &Scenario, policies: &PolicyRegistry) -> Result<RunOutput> {
    scenario.validate_with(policies)?;
    let policy = policies.create(&scenario.mode)?;
    let topology = Topology::fat_tree(scenario.k)?;
    let placement = scenario.placement(&topology);
    let engines: Vec<EngineState> = placement
        .iter()
        .map(|(id, host)| EngineState::new(id.clone(), *host, scenario.engine_for(id).0))
        .collect();
    let controller = Controller::manage(
        ManageConfig {
            frequency: scenario.frequency,
            promoter_seed: stream_seed(scenario.seed, PROMOTER_STREAM),
        },
        scenario.registry.clone(),
        topology,
        placement,
        policy,
    )?;
    let mut workload: Box<dyn Workload> = match scenario.arrival {
        ArrivalKind::Poisson => {
            let mut arrivals = ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, ARRIVAL_STREAM));
            let mut clients = ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, CLIENT_STREAM));
            Box::new(PoissonWorkload::new(
                scenario.requests,
                scenario.effective_rate(),
                scenario.clients,
                &scenario.request_mix,
                &mut arrivals,
                &mut clients,
            ))
        }
        ArrivalKind::Closed => Box::new(ClosedWorkload::new(
            scenario.requests,
            scenario.clients,
            scenario.request_mix.clone(),
            stream_seed(scenario.seed, CLIENT_STREAM),
        )),
    };
    let options = RuntimeOptions {
        window: scenario.window,
        threshold: scenario.threshold,
        memoize: scenario.memoize,
        abort_at: scenario.abort_at.map(SimTime),
        check_invariants: scenario.check_invariants,
        failure_seed: stream_seed(scenario.seed, FAILURE_STREAM),
        report_on_admission: scenario.report_on_admission,
    };
    let out = firm::execute(controller, engines, workload.as_mut(), options)?;
    let summary = RunSummary {
        mode: scenario.mode.clone(),
        k: scenario.k,
        requests: scenario.requests,
        seed: scenario.seed,
        mean_completion: mean_completion(&out.records),
        deviation: deviation(&out.records).ok(),
        inter_rack_hops: total_hops(&out.records),
        counts: out.summary,
    };
    Ok(RunOutput {
        log: out.log,
        records: out.records,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub mode: String,
    pub requests: usize,
    pub completed: u64,
    pub mean_completion: f64,
    pub deviation: f64,
    pub inter_rack_hops: u64,
}

/// Runs every mode at every request count with the template's seed.
pub fn compare_modes(template: &Scenario, counts: &[usize]) -> Result<Vec<ComparisonRow>> {
    template.validate()?;
    let jobs: Vec<(usize, &str)> = counts
        .iter()
        .flat_map(|&c| MODES.iter().map(move |&m| (c, m)))
        .collect();
    jobs.par_iter()
        .map(|&(count, mode)| {
            let mut s = template.clone();
            s.requests = count;
            s.mode = mode.to_string();
            let out = run(&s)?;
            Ok(ComparisonRow {
                mode: mode.to_string(),
                requests: count,
                completed: out.summary.counts.completed,
                mean_completion: out.summary.mean_completion.unwrap_or(f64::NAN),
                deviation: out.summary.deviation.unwrap_or(f64::NAN),
                inter_rack_hops: out.summary.inter_rack_hops,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct RecordRow<'a> {
    composition: u64,
    client: u32,
    mode: &'a str,
    arrival: f64,
    completion_time: f64,
    per_node: String,
    inter_rack_hops: u64,
    result: String,
}

/// One CSV row per record; per-node times are `;`-separated.
pub fn write_records_csv<W: io::Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let per_node: Vec<String> = r.per_node.iter().map(|t| format!("{t:.6}")).collect();
        w.serialize(RecordRow {
            composition: r.composition,
            client: r.client,
            mode: &r.mode,
            arrival: r.arrival.as_f64(),
            completion_time: r.completion_time,
            per_node: per_node.join(";"),
            inter_rack_hops: r.inter_rack_hops,
            result: format!("{:016x}", r.result),
        })
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Scenario(e.to_string()))
}

pub fn write_comparison_csv<W: io::Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Scenario(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Scenario(format!("csv output: {e}"))
}
