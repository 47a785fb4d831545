//! Event-driven execution of composition requests against simulated engines.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::composition::{
    fingerprint_params, result_value, Claim, CompositionDag, CompositionRequest, MemberProps,
    MemoTable, NodeId, NodeKind, Param, ResultToken,
};
use crate::engine::{EngineState, Outcome};
use crate::error::{Error, Result};
use crate::registry::{DeploymentId, Registry};
use crate::sim::{EventQueue, MetricsRecord};
use crate::time::SimTime;
use crate::topology::{FlowTable, HostId};

use super::affinity::ClientId;
use super::controller::Controller;
use super::log::{EventKind, EventLog, LogRecord};

/// One request entering the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub time: SimTime,
    pub client: ClientId,
    pub request: CompositionRequest,
}

/// Source of arrivals. Closed-loop workloads answer finished requests with
/// the client's next one.
pub trait Workload {
    fn initial(&mut self) -> Vec<Arrival>;

    fn on_finished(&mut self, client: ClientId, now: SimTime) -> Option<Arrival>;
}

/// A fixed list of arrivals.
impl Workload for Vec<Arrival> {
    fn initial(&mut self) -> Vec<Arrival> {
        std::mem::take(self)
    }

    fn on_finished(&mut self, _client: ClientId, _now: SimTime) -> Option<Arrival> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeOptions {
    /// Width of the engine health window.
    pub window: f64,
    /// Delay threshold; `None` means twice each engine's unloaded time.
    pub threshold: Option<f64>,
    pub memoize: bool,
    /// Stop accepting requests from this time on.
    pub abort_at: Option<SimTime>,
    pub check_invariants: bool,
    pub failure_seed: u64,
    /// Engines also report when admitting, not only when completing.
    pub report_on_admission: bool,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            window: 50.0,
            threshold: None,
            memoize: true,
            abort_at: None,
            check_invariants: true,
            failure_seed: 0,
            report_on_admission: true,
        }
    }
}

/// A node's deployment binding, in dependency order.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointBinding {
    pub node: NodeId,
    pub service: String,
    /// Filled in when the node is invoked.
    pub chosen_deployment: Option<DeploymentId>,
    pub properties: Option<MemberProps>,
    pub depends_on: Vec<NodeId>,
}

/// Bindings for every invocation node of `dag`, dependency-ordered.
pub fn find(registry: &Registry, flow_table: &FlowTable, dag: &CompositionDag) -> Result<Vec<EndpointBinding>> {
    let mut out = Vec::new();
    for id in dag.topological_order()? {
        let node = dag.node(id);
        if node.kind != NodeKind::Invoke {
            continue;
        }
        registry
            .service(&node.service)
            .ok_or_else(|| crate::registry::RegistryError::UnknownService(node.service.clone()))?;
        if flow_table.active(&node.service)?.is_empty() {
            return Err(Error::Invariant(format!("`{}` has no active deployment", node.service)));
        }
        out.push(EndpointBinding {
            node: id,
            service: node.service.clone(),
            chosen_deployment: None,
            properties: node.member,
            depends_on: node.dependencies().collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecuteSummary {
    pub arrivals: u64,
    pub rejected: u64,
    pub completed: u64,
    pub failed: u64,
    pub in_flight_at_end: u64,
    pub admissions: u64,
    pub memo_hits: u64,
    pub triggers: u64,
    pub demotions: u64,
    pub promotions: u64,
    pub ticks: u64,
}

pub struct ExecuteOutput {
    pub log: EventLog,
    pub records: Vec<MetricsRecord>,
    pub summary: ExecuteSummary,
    pub controller: Controller,
    pub engines: Vec<EngineState>,
}

enum Event {
    Arrival(Arrival),
    Completion {
        exec: u64,
        node: NodeId,
        engine: usize,
        service_time: f64,
        outcome: Outcome,
    },
    Tick,
    Abort,
}

struct Execution {
    client: ClientId,
    arrival: SimTime,
    dag: CompositionDag,
    memo: MemoTable,
    fingerprints: Vec<u64>,
    hosts: Vec<Option<HostId>>,
    durations: Vec<f64>,
    anchors: Vec<HostId>,
    outstanding: usize,
    failed: bool,
}

/// Runs every arrival of `workload` to completion (or abort) and returns
/// the event log and per-composition metrics.
pub fn execute(
    controller: Controller,
    engines: Vec<EngineState>,
    workload: &mut dyn Workload,
    options: RuntimeOptions,
) -> Result<ExecuteOutput> {
    let mut engine_index = BTreeMap::new();
    for (i, e) in engines.iter().enumerate() {
        if controller.registry().deployment(&e.deployment).is_none() {
            return Err(crate::registry::RegistryError::UnknownDeployment(e.deployment.clone()).into());
        }
        engine_index.insert(e.deployment.clone(), i);
    }
    for s in controller.registry().services() {
        if let Some(id) = s.deployment_ids().find(|id| !engine_index.contains_key(id)) {
            return Err(Error::Scenario(format!("deployment `{id}` has no engine")));
        }
    }
    let mut rt = Runtime {
        controller,
        engines,
        engine_index,
        options,
        queue: EventQueue::new(),
        log: EventLog::new(),
        executions: BTreeMap::new(),
        records: Vec::new(),
        summary: ExecuteSummary::default(),
        failure_rng: ChaCha8Rng::seed_from_u64(options.failure_seed),
        next_exec: 0,
        pending_arrivals: 0,
        aborted: false,
    };
    for a in workload.initial() {
        rt.schedule_arrival(a);
    }
    if let Some(t) = options.abort_at {
        rt.queue.push(t, Event::Abort);
    }
    if rt.pending_arrivals > 0 {
        let f = rt.controller.frequency();
        rt.queue.push(SimTime(f), Event::Tick);
    }
    while let Some((now, event)) = rt.queue.pop() {
        match event {
            Event::Arrival(a) => rt.on_arrival(now, a)?,
            Event::Completion {
                exec,
                node,
                engine,
                service_time,
                outcome,
            } => rt.on_completion(now, exec, node, engine, service_time, outcome, workload)?,
            Event::Tick => rt.on_tick(now)?,
            Event::Abort => {
                rt.aborted = true;
                rt.controller.abort();
            }
        }
        if rt.queue.peek_time() != Some(now) {
            rt.flush_trigger(now)?;
        }
    }
    rt.summary.in_flight_at_end = rt.executions.len() as u64;
    Ok(ExecuteOutput {
        log: rt.log,
        records: rt.records,
        summary: rt.summary,
        controller: rt.controller,
        engines: rt.engines,
    })
}

struct Runtime {
    controller: Controller,
    engines: Vec<EngineState>,
    engine_index: BTreeMap<DeploymentId, usize>,
    options: RuntimeOptions,
    queue: EventQueue<Event>,
    log: EventLog,
    executions: BTreeMap<u64, Execution>,
    records: Vec<MetricsRecord>,
    summary: ExecuteSummary,
    failure_rng: ChaCha8Rng,
    next_exec: u64,
    pending_arrivals: usize,
    aborted: bool,
}

impl Runtime {
    fn schedule_arrival(&mut self, a: Arrival) {
        self.pending_arrivals += 1;
        self.queue.push(a.time, Event::Arrival(a));
    }

    fn on_arrival(&mut self, now: SimTime, a: Arrival) -> Result<()> {
        self.pending_arrivals -= 1;
        let id = self.next_exec;
        self.next_exec += 1;
        self.summary.arrivals += 1;
        if self.aborted {
            self.summary.rejected += 1;
            self.log.push(
                LogRecord::new(now, EventKind::Rejected)
                    .composition(id, a.client)
                    .detail(a.request.to_string()),
            );
            return Ok(());
        }
        self.log.push(
            LogRecord::new(now, EventKind::RequestArrival)
                .composition(id, a.client)
                .detail(a.request.to_string()),
        );
        let dag = CompositionDag::link(&a.request, self.controller.registry())?;
        find(self.controller.registry(), self.controller.flow_table(), &dag)?;
        let n = dag.len();
        let mut hosts = vec![None; n];
        let mut anchors = Vec::new();
        for node in dag.nodes() {
            if let NodeKind::Group { entry_point, .. } = &node.kind {
                let h = self.controller.topology().host_for_address(*entry_point);
                hosts[node.id.0] = Some(h);
                if !anchors.contains(&h) {
                    anchors.push(h);
                }
            }
        }
        self.executions.insert(
            id,
            Execution {
                client: a.client,
                arrival: now,
                dag,
                memo: MemoTable::new(),
                fingerprints: vec![0; n],
                hosts,
                durations: vec![0.0; n],
                anchors,
                outstanding: 0,
                failed: false,
            },
        );
        self.pump(now, id)
    }

    /// Starts every ready node of execution `id`, repeating while nodes
    /// finish without engine work.
    fn pump(&mut self, now: SimTime, id: u64) -> Result<()> {
        loop {
            let exec = self.executions.get_mut(&id).expect("live execution");
            if exec.failed {
                return Ok(());
            }
            let ready = exec.dag.ready_set();
            if ready.is_empty() {
                break;
            }
            for node in ready {
                self.start_node(now, id, node)?;
            }
        }
        let exec = &self.executions[&id];
        if exec.dag.is_complete() {
            self.return_(now, id)?;
        }
        Ok(())
    }

    fn start_node(&mut self, now: SimTime, id: u64, node: NodeId) -> Result<()> {
        let memoize = self.options.memoize;
        let exec = self.executions.get_mut(&id).expect("live execution");
        let client = exec.client;
        let params = exec.dag.param_values(node)?;
        let fp = fingerprint_params(&params);
        exec.fingerprints[node.0] = fp;
        exec.dag.mark_started(node)?;
        let service = exec.dag.node(node).service.clone();
        if let NodeKind::Group { .. } = exec.dag.node(node).kind {
            let token = ResultToken {
                value: result_value(&service, fp),
                fingerprint: fp,
                deployment: None,
                produced_at: now,
            };
            exec.dag.complete(node, token)?;
            self.log.push(
                LogRecord::new(now, EventKind::Completion)
                    .composition(id, client)
                    .node(node.0, &service)
                    .detail("group"),
            );
            return Ok(());
        }
        if memoize {
            match exec.memo.claim(&service, fp, node) {
                Claim::Hit(token) => {
                    exec.hosts[node.0] = token.deployment.as_ref().and_then(|d| self.controller.host_of(d));
                    exec.dag.complete(node, token)?;
                    self.summary.memo_hits += 1;
                    self.log.push(
                        LogRecord::new(now, EventKind::MemoHit)
                            .composition(id, client)
                            .node(node.0, &service),
                    );
                    return Ok(());
                }
                Claim::Joined => return Ok(()),
                Claim::Owner => {}
            }
        }
        let anchors = exec.anchors.clone();
        let deployment = self.controller.resolve_deployment(&service, client, &anchors)?;
        if self.controller.flow_table().is_blacklisted(&deployment) {
            return Err(Error::Invariant(format!("admission to blacklisted `{deployment}`")));
        }
        let engine = *self
            .engine_index
            .get(&deployment)
            .ok_or_else(|| Error::Invariant(format!("no engine for `{deployment}`")))?;
        let e = &mut self.engines[engine];
        let service_time = e.admit();
        let failure_p = e.params.failure_probability;
        let host = e.host;
        let outcome = if failure_p > 0.0 && self.failure_rng.gen_bool(failure_p.min(1.0)) {
            Outcome::Failed
        } else {
            Outcome::Ok
        };
        let exec = self.executions.get_mut(&id).expect("live execution");
        exec.hosts[node.0] = Some(host);
        exec.durations[node.0] = service_time;
        if !exec.anchors.contains(&host) {
            exec.anchors.push(host);
        }
        exec.outstanding += 1;
        self.summary.admissions += 1;
        self.log.push(
            LogRecord::new(now, EventKind::Admission)
                .composition(id, client)
                .node(node.0, &service)
                .deployment(&deployment)
                .detail(format!("{service_time:.6}")),
        );
        self.queue.push(
            now + service_time,
            Event::Completion {
                exec: id,
                node,
                engine,
                service_time,
                outcome,
            },
        );
        if self.options.report_on_admission {
            self.report(now, engine, Some(id))?;
        }
        Ok(())
    }

    fn report(&mut self, now: SimTime, engine: usize, sc: Option<u64>) -> Result<()> {
        let e = &mut self.engines[engine];
        let threshold = self.options.threshold.unwrap_or(2.0 * e.params.effective_base());
        let report = e.health_report(now, self.options.window, threshold);
        self.controller.on_engine_report(report, sc)
    }

    #[allow(clippy::too_many_arguments)]
    fn on_completion(
        &mut self,
        now: SimTime,
        id: u64,
        node: NodeId,
        engine: usize,
        service_time: f64,
        outcome: Outcome,
        workload: &mut dyn Workload,
    ) -> Result<()> {
        self.engines[engine].complete(outcome, now, service_time)?;
        if self.options.check_invariants {
            self.engines[engine].check_conservation()?;
        }
        let deployment = self.engines[engine].deployment.clone();
        self.report(now, engine, Some(id))?;
        let exec = self.executions.get_mut(&id).expect("live execution");
        exec.outstanding -= 1;
        let client = exec.client;
        let service = exec.dag.node(node).service.clone();
        let fp = exec.fingerprints[node.0];
        match outcome {
            Outcome::Ok => {
                let token = ResultToken {
                    value: result_value(&service, fp),
                    fingerprint: fp,
                    deployment: Some(deployment.clone()),
                    produced_at: now,
                };
                exec.dag.complete(node, token.clone())?;
                self.log.push(
                    LogRecord::new(now, EventKind::Completion)
                        .composition(id, client)
                        .node(node.0, &service)
                        .deployment(&deployment),
                );
                if self.options.memoize {
                    let host = self.engines[engine].host;
                    let exec = self.executions.get_mut(&id).expect("live execution");
                    for w in exec.memo.store(&service, fp, token.clone()) {
                        exec.dag.complete(w, token.clone())?;
                        exec.hosts[w.0] = Some(host);
                        self.summary.memo_hits += 1;
                        self.log.push(
                            LogRecord::new(now, EventKind::MemoHit)
                                .composition(id, client)
                                .node(w.0, &service),
                        );
                    }
                }
            }
            Outcome::Failed => {
                exec.dag.fail(node)?;
                let waiters = if self.options.memoize {
                    exec.memo.abandon(&service, fp)
                } else {
                    Vec::new()
                };
                for w in waiters {
                    exec.dag.fail(w)?;
                }
                exec.failed = true;
                self.log.push(
                    LogRecord::new(now, EventKind::Failure)
                        .composition(id, client)
                        .node(node.0, &service)
                        .deployment(&deployment),
                );
            }
        }
        let exec = &self.executions[&id];
        if exec.failed {
            if exec.outstanding == 0 {
                self.executions.remove(&id);
                self.summary.failed += 1;
                self.finished(now, client, workload);
            }
            return Ok(());
        }
        self.pump(now, id)?;
        if !self.executions.contains_key(&id) {
            self.finished(now, client, workload);
        }
        Ok(())
    }

    fn finished(&mut self, now: SimTime, client: ClientId, workload: &mut dyn Workload) {
        if self.aborted {
            return;
        }
        if let Some(a) = workload.on_finished(client, now) {
            self.schedule_arrival(a);
        }
    }

    /// Consolidates a finished execution into its metrics record.
    fn return_(&mut self, now: SimTime, id: u64) -> Result<()> {
        let exec = self.executions.remove(&id).expect("live execution");
        let consolidated = exec.dag.consolidate()?;
        let topology = self.controller.topology();
        let mut hops = 0u64;
        for node in exec.dag.nodes() {
            let Some(to) = exec.hosts[node.id.0] else { continue };
            for p in &node.params {
                let Param::Output(d) = p else { continue };
                let Some(from) = exec.hosts[d.0] else { continue };
                let path = topology.shortest_path(from, to)?;
                if path.inter_rack {
                    hops += u64::from(path.hop_count);
                }
            }
        }
        self.summary.completed += 1;
        self.log.push(
            LogRecord::new(now, EventKind::Return)
                .composition(id, exec.client)
                .detail(format!("{:016x}", consolidated.result.value)),
        );
        self.records.push(MetricsRecord {
            composition: id,
            client: exec.client,
            mode: self.controller.policy_name().to_string(),
            arrival: exec.arrival,
            completion_time: now - exec.arrival,
            per_node: exec.durations,
            inter_rack_hops: hops,
            result: consolidated.result.value,
        });
        Ok(())
    }

    fn on_tick(&mut self, now: SimTime) -> Result<()> {
        self.summary.ticks += 1;
        let promoted = self.controller.promoter_tick()?;
        self.log.push(
            LogRecord::new(now, EventKind::Tick).detail(if self.controller.promoter().flag { "heads" } else { "tails" }),
        );
        if let Some(d) = promoted {
            self.summary.promotions += 1;
            self.log.push(LogRecord::new(now, EventKind::Promotion).deployment(&d));
        }
        let live = !self.executions.is_empty() || self.pending_arrivals > 0;
        if live {
            self.queue.push(now + self.controller.frequency(), Event::Tick);
        }
        Ok(())
    }

    fn flush_trigger(&mut self, now: SimTime) -> Result<()> {
        let Some(trigger) = self.controller.take_trigger() else {
            return Ok(());
        };
        self.summary.triggers += 1;
        let offenders: usize = trigger.service_properties.iter().map(|p| p.offenders.len()).sum();
        let mut record = LogRecord::new(now, EventKind::Trigger).detail(format!("{offenders} offenders"));
        if let Some(sc) = trigger.sc {
            record.composition = Some(sc);
        }
        self.log.push(record);
        let outcome = match self.controller.handle_trigger(&trigger, now) {
            Ok(o) => o,
            Err(e @ Error::Invariant(_)) => return Err(e),
            Err(e) => {
                log::warn!("trigger rejected: {e}");
                return Ok(());
            }
        };
        for d in &outcome.blacklisted {
            self.summary.demotions += 1;
            self.log.push(LogRecord::new(now, EventKind::Demotion).deployment(d));
        }
        for d in &outcome.moved_back {
            self.log.push(LogRecord::new(now, EventKind::Reorder).deployment(d));
        }
        Ok(())
    }
}
