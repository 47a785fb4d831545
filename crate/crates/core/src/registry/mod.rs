//! Service catalog: services, their implementations and deployments, and
//! composition definitions, parsed from an nginx-style configuration dialect.
//!
//! A simple service owns an ordered list of implementations, each with an
//! ordered list of deployments. List order is the current preference order;
//! [`Registry::update_registry`] re-sorts it from engine health reports.

mod parse;
mod write;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::net::Ipv4Addr;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::engine::EngineReport;

pub use parse::parse_registry;

/// Free-form `key value;` statements kept verbatim.
pub type Properties = IndexMap<String, String>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate service name `{0}`")]
    DuplicateService(String),
    #[error("composition `{composition}` references unknown service `{service}`")]
    UnresolvedMember { composition: String, service: String },
    #[error("composition `{0}` has no entry_point")]
    MissingEntryPoint(String),
    #[error("composition definitions form a cycle through `{0}`")]
    CompositionCycle(String),
    #[error("service `{0}` has no implementations")]
    NoImplementations(String),
    #[error("implementation `{implementation}` of service `{service}` has no deployments")]
    NoDeployments {
        service: String,
        implementation: String,
    },
    #[error("duplicate deployment alias `{alias}` in `{service}/{implementation}`")]
    DuplicateAlias {
        service: String,
        implementation: String,
        alias: String,
    },
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("unknown composition `{0}`")]
    UnknownComposition(String),
    #[error("member service `{0}` has zero deployments")]
    ZeroDeployments(String),
    #[error("unknown deployment `{0}`")]
    UnknownDeployment(DeploymentId),
}

/// Fully qualified name of one deployment: `service/implementation/alias`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DeploymentId {
    pub service: String,
    pub implementation: String,
    pub alias: String,
}

impl DeploymentId {
    pub fn new(
        service: impl Into<String>,
        implementation: impl Into<String>,
        alias: impl Into<String>,
    ) -> Self {
        Self {
            service: service.into(),
            implementation: implementation.into(),
            alias: alias.into(),
        }
    }
}

impl fmt::Display for DeploymentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.service, self.implementation, self.alias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentStatus {
    Active,
    Demoted,
    Blacklisted,
}

impl DeploymentStatus {
    pub fn rank(self) -> u8 {
        match self {
            DeploymentStatus::Active => 0,
            DeploymentStatus::Demoted => 1,
            DeploymentStatus::Blacklisted => 2,
        }
    }
}

impl fmt::Display for DeploymentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeploymentStatus::Active => "active",
            DeploymentStatus::Demoted => "demoted",
            DeploymentStatus::Blacklisted => "blacklisted",
        })
    }
}

/// Last health figures reported by the deployment's engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Health {
    pub mean_service_time: f64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub alias: String,
    pub address: Ipv4Addr,
    pub status: DeploymentStatus,
    /// Name of the enclosing `type <variant> { ... }` block, if any.
    pub variant: Option<String>,
    pub health: Option<Health>,
}

impl Deployment {
    pub fn new(alias: impl Into<String>, address: Ipv4Addr) -> Self {
        Self {
            alias: alias.into(),
            address,
            status: DeploymentStatus::Active,
            variant: None,
            health: None,
        }
    }

    fn sort_key(&self) -> (u8, f64, u64) {
        let (mean, in_flight) = self
            .health
            .map(|h| (h.mean_service_time, h.in_flight))
            .unwrap_or((0.0, 0));
        (self.status.rank(), mean, in_flight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Implementation {
    pub name: String,
    pub properties: Properties,
    /// Variant blocks and their own properties, e.g. `jaxws_ver_2 -> {update: true}`.
    pub variants: BTreeMap<String, Properties>,
    pub deployments: Vec<Deployment>,
}

impl Implementation {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            properties: Properties::new(),
            variants: BTreeMap::new(),
            deployments: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceEntry {
    pub name: String,
    pub description: Option<String>,
    pub properties: Properties,
    pub implementations: Vec<Implementation>,
}

impl ServiceEntry {
    pub fn total_deployments(&self) -> usize {
        self.implementations.iter().map(|i| i.deployments.len()).sum()
    }

    pub fn deployment_ids(&self) -> impl Iterator<Item = DeploymentId> + '_ {
        self.implementations.iter().flat_map(move |imp| {
            imp.deployments
                .iter()
                .map(move |d| DeploymentId::new(&self.name, &imp.name, &d.alias))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub service: String,
    pub order: u32,
    pub serialized: bool,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionDef {
    pub name: String,
    pub entry_point: Ipv4Addr,
    pub description: Option<String>,
    pub properties: Properties,
    pub members: Vec<Member>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Service(ServiceEntry),
    Composition(CompositionDef),
}

impl Entry {
    pub fn name(&self) -> &str {
        match self {
            Entry::Service(s) => &s.name,
            Entry::Composition(c) => &c.name,
        }
    }
}

/// One row of the machine-readable catalog dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogRecord {
    pub service: String,
    pub implementation: String,
    pub variant: String,
    pub alias: String,
    pub address: String,
    pub status: DeploymentStatus,
    pub preference: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: IndexMap<String, Entry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a top-level entry. Names share one namespace across services and
    /// compositions.
    pub fn insert(&mut self, entry: Entry) -> Result<(), RegistryError> {
        let name = entry.name().to_string();
        if self.entries.contains_key(&name) {
            return Err(RegistryError::DuplicateService(name));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &Entry> {
        self.entries.values()
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceEntry> {
        self.entries.values().filter_map(|e| match e {
            Entry::Service(s) => Some(s),
            Entry::Composition(_) => None,
        })
    }

    pub fn compositions(&self) -> impl Iterator<Item = &CompositionDef> {
        self.entries.values().filter_map(|e| match e {
            Entry::Composition(c) => Some(c),
            Entry::Service(_) => None,
        })
    }

    pub fn service(&self, name: &str) -> Option<&ServiceEntry> {
        match self.entries.get(name) {
            Some(Entry::Service(s)) => Some(s),
            _ => None,
        }
    }

    fn service_mut(&mut self, name: &str) -> Option<&mut ServiceEntry> {
        match self.entries.get_mut(name) {
            Some(Entry::Service(s)) => Some(s),
            _ => None,
        }
    }

    pub fn composition(&self, name: &str) -> Option<&CompositionDef> {
        match self.entries.get(name) {
            Some(Entry::Composition(c)) => Some(c),
            _ => None,
        }
    }

    pub fn deployment(&self, id: &DeploymentId) -> Option<&Deployment> {
        self.service(&id.service)?
            .implementations
            .iter()
            .find(|i| i.name == id.implementation)?
            .deployments
            .iter()
            .find(|d| d.alias == id.alias)
    }

    fn deployment_mut(&mut self, id: &DeploymentId) -> Option<&mut Deployment> {
        self.service_mut(&id.service)?
            .implementations
            .iter_mut()
            .find(|i| i.name == id.implementation)?
            .deployments
            .iter_mut()
            .find(|d| d.alias == id.alias)
    }

    /// Every member of every composition must name a service or composition
    /// defined in this registry.
    pub fn check_references(&self) -> Result<(), RegistryError> {
        for comp in self.compositions() {
            for m in &comp.members {
                if !self.entries.contains_key(&m.service) {
                    return Err(RegistryError::UnresolvedMember {
                        composition: comp.name.clone(),
                        service: m.service.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// All non-blacklisted `(implementation, deployment)` pairs of `service`,
    /// in preference order.
    pub fn lookup_endpoints(
        &self,
        service: &str,
    ) -> Result<Vec<(&Implementation, &Deployment)>, RegistryError> {
        let entry = self
            .service(service)
            .ok_or_else(|| RegistryError::UnknownService(service.to_string()))?;
        Ok(entry
            .implementations
            .iter()
            .flat_map(|imp| imp.deployments.iter().map(move |d| (imp, d)))
            .filter(|(_, d)| d.status != DeploymentStatus::Blacklisted)
            .collect())
    }

    /// Lower bound on the number of distinct execution paths of a
    /// composition: the smallest total deployment count among its members.
    /// A nested composition member contributes its own bound.
    pub fn alternative_path_bound(&self, composition: &str) -> Result<usize, RegistryError> {
        let mut visiting = HashSet::new();
        self.bound_inner(composition, &mut visiting)
    }

    fn bound_inner<'a>(
        &'a self,
        composition: &'a str,
        visiting: &mut HashSet<&'a str>,
    ) -> Result<usize, RegistryError> {
        let comp = self
            .composition(composition)
            .ok_or_else(|| RegistryError::UnknownComposition(composition.to_string()))?;
        if !visiting.insert(composition) {
            return Err(RegistryError::CompositionCycle(composition.to_string()));
        }
        let mut bound: Option<usize> = None;
        for m in &comp.members {
            let total = match self.entries.get(&m.service) {
                Some(Entry::Service(s)) => s.total_deployments(),
                Some(Entry::Composition(_)) => self.bound_inner(&m.service, visiting)?,
                None => return Err(RegistryError::UnknownService(m.service.clone())),
            };
            if total == 0 {
                return Err(RegistryError::ZeroDeployments(m.service.clone()));
            }
            bound = Some(bound.map_or(total, |b| b.min(total)));
        }
        visiting.remove(composition);
        bound.ok_or_else(|| RegistryError::ZeroDeployments(composition.to_string()))
    }

    /// Applies a batch of engine health reports: records the figures, flips
    /// `active <-> demoted` by each report's threshold flag, then re-sorts each
    /// touched implementation by `(status, mean service time, in-flight)`.
    ///
    /// Blacklisted status is owned by the flow table and never changed here.
    /// The batch is validated first; on error the registry is untouched.
    pub fn update_registry(&mut self, reports: &[EngineReport]) -> Result<(), RegistryError> {
        if let Some(bad) = reports.iter().find(|r| self.deployment(&r.deployment).is_none()) {
            return Err(RegistryError::UnknownDeployment(bad.deployment.clone()));
        }
        let mut touched: Vec<(String, String)> = Vec::new();
        for report in reports {
            let d = self.deployment_mut(&report.deployment).expect("validated above");
            d.health = Some(Health {
                mean_service_time: report.mean_service_time,
                in_flight: report.in_flight,
            });
            d.status = match (d.status, report.over_threshold) {
                (DeploymentStatus::Blacklisted, _) => DeploymentStatus::Blacklisted,
                (_, true) => DeploymentStatus::Demoted,
                (_, false) => DeploymentStatus::Active,
            };
            let key = (
                report.deployment.service.clone(),
                report.deployment.implementation.clone(),
            );
            if !touched.contains(&key) {
                touched.push(key);
            }
        }
        for (service, implementation) in touched {
            if let Some(imp) = self
                .service_mut(&service)
                .and_then(|s| s.implementations.iter_mut().find(|i| i.name == implementation))
            {
                imp.deployments.sort_by(|a, b| {
                    let (sa, ma, fa) = a.sort_key();
                    let (sb, mb, fb) = b.sort_key();
                    sa.cmp(&sb).then(ma.total_cmp(&mb)).then(fa.cmp(&fb))
                });
            }
        }
        Ok(())
    }

    /// Sets a deployment's status directly; used by the controller to mirror
    /// flow-table demotions and promotions into the catalog.
    pub fn set_status(
        &mut self,
        id: &DeploymentId,
        status: DeploymentStatus,
    ) -> Result<(), RegistryError> {
        let d = self
            .deployment_mut(id)
            .ok_or_else(|| RegistryError::UnknownDeployment(id.clone()))?;
        d.status = status;
        Ok(())
    }

    pub fn catalog(&self) -> Vec<CatalogRecord> {
        let mut out = Vec::new();
        for s in self.services() {
            let mut preference = 0;
            for imp in &s.implementations {
                for d in &imp.deployments {
                    out.push(CatalogRecord {
                        service: s.name.clone(),
                        implementation: imp.name.clone(),
                        variant: d.variant.clone().unwrap_or_default(),
                        alias: d.alias.clone(),
                        address: d.address.to_string(),
                        status: d.status,
                        preference,
                    });
                    preference += 1;
                }
            }
        }
        out
    }

    /// Canonical text form in the same dialect.
    pub fn to_canonical_string(&self) -> String {
        write::write_registry(self)
    }
}

impl std::str::FromStr for Registry {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_registry(s)
    }
}
