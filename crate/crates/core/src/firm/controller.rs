use std::collections::BTreeMap;

use log::debug;

use crate::engine::EngineReport;
use crate::error::{Error, Result};
use crate::registry::{DeploymentId, DeploymentStatus, Registry};
use crate::time::SimTime;
use crate::topology::{FlowTable, HostId, Topology};

use super::affinity::{AffinityTable, ClientId};
use super::policy::{DeploymentPolicy, ReportAction, SelectionContext, SelectionRequest};
use super::promoter::PromoterState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManageConfig {
    /// Spacing of promoter ticks.
    pub frequency: f64,
    pub promoter_seed: u64,
}

/// Offending deployments of one service within a trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceProperties {
    pub service: String,
    pub offenders: Vec<DeploymentId>,
    pub reports: Vec<EngineReport>,
}

/// Batched over-threshold reports delivered to the manage loop.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTrigger {
    /// Composition whose invocation surfaced the first report, if any.
    pub sc: Option<u64>,
    pub service_properties: Vec<ServiceProperties>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriggerOutcome {
    pub blacklisted: Vec<DeploymentId>,
    pub moved_back: Vec<DeploymentId>,
    pub affinity_evictions: usize,
}

/// The control store (registry, flow tables, affinity table) plus the
/// selection policy and promoter. Every method applies as one atomic step.
pub struct Controller {
    registry: Registry,
    flow_table: FlowTable,
    affinity: AffinityTable,
    topology: Topology,
    placement: BTreeMap<DeploymentId, HostId>,
    policy: Box<dyn DeploymentPolicy>,
    promoter: PromoterState,
    pending: Vec<(Option<u64>, EngineReport)>,
    aborted: bool,
}

impl Controller {
    /// Initializes flow tables from the registry, registers each engine's
    /// deployment and host, and arms the promoter.
    pub fn manage(
        config: ManageConfig,
        registry: Registry,
        topology: Topology,
        placement: BTreeMap<DeploymentId, HostId>,
        policy: Box<dyn DeploymentPolicy>,
    ) -> Result<Self> {
        let flow_table = FlowTable::from_registry(&registry);
        for s in registry.services() {
            for id in s.deployment_ids() {
                let host = placement
                    .get(&id)
                    .ok_or_else(|| Error::Scenario(format!("deployment `{id}` has no engine")))?;
                topology.location(*host)?;
            }
        }
        if let Some(extra) = placement.keys().find(|id| registry.deployment(id).is_none()) {
            return Err(crate::registry::RegistryError::UnknownDeployment(extra.clone()).into());
        }
        if config.frequency.is_nan() || config.frequency <= 0.0 {
            return Err(Error::Scenario("promoter frequency must be positive".into()));
        }
        Ok(Self {
            registry,
            flow_table,
            affinity: AffinityTable::new(),
            topology,
            placement,
            policy,
            promoter: PromoterState::new(config.frequency, config.promoter_seed),
            pending: Vec::new(),
            aborted: false,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn flow_table(&self) -> &FlowTable {
        &self.flow_table
    }

    pub fn affinity(&self) -> &AffinityTable {
        &self.affinity
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn placement(&self) -> &BTreeMap<DeploymentId, HostId> {
        &self.placement
    }

    pub fn host_of(&self, id: &DeploymentId) -> Option<HostId> {
        self.placement.get(id).copied()
    }

    pub fn policy_name(&self) -> &'static str {
        self.policy.name()
    }

    pub fn frequency(&self) -> f64 {
        self.promoter.frequency
    }

    pub fn abort(&mut self) {
        self.aborted = true;
    }

    pub fn is_aborted(&self) -> bool {
        self.aborted
    }

    /// Affinity entry first, then the policy; the choice is recorded for
    /// affinity-using policies.
    pub fn resolve_deployment(
        &mut self,
        service: &str,
        client: ClientId,
        anchors: &[HostId],
    ) -> Result<DeploymentId> {
        if self.policy.uses_affinity() {
            if let Some(d) = self.affinity.get(client, service) {
                return Ok(d.clone());
            }
        }
        let ctx = SelectionContext {
            registry: &self.registry,
            flow_table: &self.flow_table,
            topology: &self.topology,
            placement: &self.placement,
        };
        let req = SelectionRequest {
            service,
            client,
            anchors,
        };
        let chosen = self.policy.select(&ctx, &req)?;
        if self.policy.uses_affinity() {
            self.affinity.record(client, chosen.clone());
        }
        Ok(chosen)
    }

    /// Routes one engine report per the policy. Over-threshold reports wait
    /// in a batch until [`Controller::take_trigger`].
    pub fn on_engine_report(&mut self, report: EngineReport, sc: Option<u64>) -> Result<()> {
        match self.policy.report_action(&report) {
            ReportAction::Ignore => {}
            ReportAction::UpdateRegistry => self.registry.update_registry(&[report])?,
            ReportAction::Trigger => self.pending.push((sc, report)),
        }
        Ok(())
    }

    /// Drains the batch into one trigger, grouping offenders by service.
    pub fn take_trigger(&mut self) -> Option<UpdateTrigger> {
        if self.pending.is_empty() {
            return None;
        }
        let pending = std::mem::take(&mut self.pending);
        let sc = pending.iter().find_map(|(sc, _)| *sc);
        let mut props: Vec<ServiceProperties> = Vec::new();
        for (_, report) in pending {
            let service = report.deployment.service.clone();
            let idx = match props.iter().position(|p| p.service == service) {
                Some(i) => i,
                None => {
                    props.push(ServiceProperties {
                        service,
                        offenders: Vec::new(),
                        reports: Vec::new(),
                    });
                    props.len() - 1
                }
            };
            let p = &mut props[idx];
            if let Some(i) = p.offenders.iter().position(|o| *o == report.deployment) {
                p.reports[i] = report;
            } else {
                p.offenders.push(report.deployment.clone());
                p.reports.push(report);
            }
        }
        Some(UpdateTrigger {
            sc,
            service_properties: props,
        })
    }

    /// Applies a trigger: demotes offenders in the flow table, mirrors the
    /// blacklist into the registry, evicts affected affinity entries, and
    /// re-sorts the registry from the carried reports. A trigger naming an
    /// unknown service or deployment is rejected without changes.
    pub fn handle_trigger(&mut self, trigger: &UpdateTrigger, now: SimTime) -> Result<TriggerOutcome> {
        for p in &trigger.service_properties {
            self.flow_table.active(&p.service)?;
            if let Some(bad) = p
                .offenders
                .iter()
                .find(|o| o.service != p.service || self.registry.deployment(o).is_none())
            {
                return Err(crate::topology::FlowTableError::UnknownDeployment(bad.clone()).into());
            }
        }
        let mut outcome = TriggerOutcome::default();
        for p in &trigger.service_properties {
            let update = self.flow_table.update_flow_table(&p.service, &p.offenders, now)?;
            for d in &update.blacklisted {
                self.registry.set_status(d, DeploymentStatus::Blacklisted)?;
                outcome.affinity_evictions += self.affinity.evict(d);
            }
            self.registry.update_registry(&p.reports)?;
            outcome.blacklisted.extend(update.blacklisted);
            outcome.moved_back.extend(update.moved_back);
        }
        self.flow_table.check_invariants().map_err(Error::Invariant)?;
        debug!(
            "trigger at {now}: blacklisted {} moved back {}",
            outcome.blacklisted.len(),
            outcome.moved_back.len()
        );
        Ok(outcome)
    }

    /// One promoter tick; returns the promoted deployment, if any.
    pub fn promoter_tick(&mut self) -> Result<Option<DeploymentId>> {
        let Some(d) = self.promoter.promoter_tick(self.flow_table.blacklist()) else {
            return Ok(None);
        };
        self.flow_table.promote(&d)?;
        self.registry.set_status(&d, DeploymentStatus::Active)?;
        self.flow_table.check_invariants().map_err(Error::Invariant)?;
        Ok(Some(d))
    }

    pub fn promoter(&self) -> &PromoterState {
        &self.promoter
    }
}
