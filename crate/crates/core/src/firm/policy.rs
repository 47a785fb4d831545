//! Deployment selection policies and the name-keyed registry that builds
//! them.
//!
//! A policy decides two things: which deployment a fresh `(client, service)`
//! pair is routed to, and what an engine health report should cause.
//! Affinity lookups happen in the controller before a policy is consulted.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;

use crate::engine::EngineReport;
use crate::error::{Error, Result};
use crate::registry::{DeploymentId, Registry};
use crate::topology::{FlowTable, HostId, Topology};

use super::affinity::ClientId;

/// What the controller does with one engine report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportAction {
    Ignore,
    /// Re-sort the registry preference order only.
    UpdateRegistry,
    /// Batch into an update trigger for the manage loop.
    Trigger,
}

/// Read-only view of the control store handed to a policy.
pub struct SelectionContext<'a> {
    pub registry: &'a Registry,
    pub flow_table: &'a FlowTable,
    pub topology: &'a Topology,
    pub placement: &'a BTreeMap<DeploymentId, HostId>,
}

impl SelectionContext<'_> {
    fn host(&self, id: &DeploymentId) -> Result<HostId> {
        self.placement
            .get(id)
            .copied()
            .ok_or_else(|| Error::Invariant(format!("deployment `{id}` has no host")))
    }

    /// Registry-ordered deployments of `service` that the flow table routes to.
    fn routable(&self, service: &str) -> Result<Vec<DeploymentId>> {
        let endpoints = self.registry.lookup_endpoints(service)?;
        Ok(endpoints
            .into_iter()
            .map(|(imp, d)| DeploymentId::new(service, &imp.name, &d.alias))
            .filter(|id| self.flow_table.is_active(id))
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionRequest<'a> {
    pub service: &'a str,
    pub client: ClientId,
    /// Hosts already chosen for the same composition instance.
    pub anchors: &'a [HostId],
}

pub trait DeploymentPolicy: Send {
    fn name(&self) -> &'static str;

    /// Whether repeat requests stick to the client's previous deployment.
    fn uses_affinity(&self) -> bool;

    fn report_action(&self, report: &EngineReport) -> ReportAction;

    /// Chooses a deployment for a request with no usable affinity entry.
    fn select(
        &mut self,
        ctx: &SelectionContext<'_>,
        req: &SelectionRequest<'_>,
    ) -> Result<DeploymentId>;
}

fn no_route(service: &str) -> Error {
    Error::Invariant(format!("service `{service}` has no active deployment"))
}

/// Engine-side load balancing: rotates through every deployment of a
/// service, ignoring health and topology.
#[derive(Debug, Default)]
pub struct RoundRobinPolicy {
    cursor: HashMap<String, usize>,
}

impl DeploymentPolicy for RoundRobinPolicy {
    fn name(&self) -> &'static str {
        "base"
    }

    fn uses_affinity(&self) -> bool {
        false
    }

    fn report_action(&self, _: &EngineReport) -> ReportAction {
        ReportAction::Ignore
    }

    fn select(
        &mut self,
        ctx: &SelectionContext<'_>,
        req: &SelectionRequest<'_>,
    ) -> Result<DeploymentId> {
        let candidates = ctx.routable(req.service)?;
        if candidates.is_empty() {
            return Err(no_route(req.service));
        }
        let cursor = self.cursor.entry(req.service.to_string()).or_default();
        let pick = candidates[*cursor % candidates.len()].clone();
        *cursor += 1;
        Ok(pick)
    }
}

/// Sticky routing with health-ordered registry preference and no network
/// view: fresh clients take the first deployment in registry order.
#[derive(Debug, Default)]
pub struct AffinityPolicy;

impl DeploymentPolicy for AffinityPolicy {
    fn name(&self) -> &'static str {
        "affinity"
    }

    fn uses_affinity(&self) -> bool {
        true
    }

    fn report_action(&self, _: &EngineReport) -> ReportAction {
        ReportAction::UpdateRegistry
    }

    fn select(
        &mut self,
        ctx: &SelectionContext<'_>,
        req: &SelectionRequest<'_>,
    ) -> Result<DeploymentId> {
        ctx.routable(req.service)?
            .into_iter()
            .next()
            .ok_or_else(|| no_route(req.service))
    }
}

/// Sticky, topology-aware and congestion-aware routing. Fresh clients take
/// the first implementation (registry order) with a routable deployment.
/// Within it, deployments in the best status whose reported in-flight count
/// is within `load_slack` of the least loaded form one preference tier, and
/// proximity to the composition's anchors picks inside the tier.
/// Over-threshold reports become flow-table demotions.
#[derive(Debug, Clone, Copy)]
pub struct FirmPolicy {
    pub load_slack: u64,
}

impl Default for FirmPolicy {
    fn default() -> Self {
        Self { load_slack: 1 }
    }
}

impl FirmPolicy {
    fn preference(ctx: &SelectionContext<'_>, id: &DeploymentId) -> (u8, u64) {
        ctx.registry.deployment(id).map_or((0, 0), |d| {
            (d.status.rank(), d.health.map_or(0, |h| h.in_flight))
        })
    }
}

impl DeploymentPolicy for FirmPolicy {
    fn name(&self) -> &'static str {
        "firm"
    }

    fn uses_affinity(&self) -> bool {
        true
    }

    fn report_action(&self, report: &EngineReport) -> ReportAction {
        if report.over_threshold {
            ReportAction::Trigger
        } else {
            ReportAction::UpdateRegistry
        }
    }

    fn select(
        &mut self,
        ctx: &SelectionContext<'_>,
        req: &SelectionRequest<'_>,
    ) -> Result<DeploymentId> {
        let routable = ctx.routable(req.service)?;
        let Some(first) = routable.first() else {
            return Err(no_route(req.service));
        };
        let same_impl: Vec<&DeploymentId> = routable
            .iter()
            .filter(|d| d.implementation == first.implementation)
            .collect();
        let best_pref = same_impl
            .iter()
            .map(|d| Self::preference(ctx, d))
            .min()
            .expect("non-empty");
        let tier: Vec<&DeploymentId> = same_impl
            .into_iter()
            .filter(|d| {
                let p = Self::preference(ctx, d);
                p.0 == best_pref.0 && p.1 <= best_pref.1 + self.load_slack
            })
            .collect();
        let mut hosts = Vec::with_capacity(tier.len());
        for d in &tier {
            let h = ctx.host(d)?;
            if !hosts.contains(&h) {
                hosts.push(h);
            }
        }
        let best = ctx.topology.proximity_rank(req.anchors, &hosts)?[0];
        for d in tier {
            if ctx.host(d)? == best {
                return Ok(d.clone());
            }
        }
        unreachable!("best host came from the candidate list")
    }
}

pub type PolicyFactory = fn() -> Box<dyn DeploymentPolicy>;

/// Selection policies by name, in registration order.
#[derive(Clone, Default)]
pub struct PolicyRegistry {
    factories: IndexMap<&'static str, PolicyFactory>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `base`, `affinity` and `firm`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("base", || Box::new(RoundRobinPolicy::default()));
        r.register("affinity", || Box::new(AffinityPolicy));
        r.register("firm", || Box::new(FirmPolicy::default()));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: PolicyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn DeploymentPolicy>> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownPolicy(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }
}

impl std::fmt::Debug for PolicyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
