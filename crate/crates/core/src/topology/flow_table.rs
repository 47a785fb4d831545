use indexmap::IndexMap;
use thiserror::Error;

use crate::registry::{DeploymentId, Registry};
use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowTableError {
    #[error("flow table has no service `{0}`")]
    UnknownService(String),
    #[error("deployment `{0}` is not an entry of its service")]
    UnknownDeployment(DeploymentId),
    #[error("deployment `{0}` is not blacklisted")]
    NotBlacklisted(DeploymentId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlacklistEntry {
    pub deployment: DeploymentId,
    pub since: SimTime,
}

/// What one [`FlowTable::update_flow_table`] call changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowUpdate {
    pub blacklisted: Vec<DeploymentId>,
    /// Offenders kept because they were the service's last active entry.
    pub moved_back: Vec<DeploymentId>,
}

#[derive(Debug, Clone, Default)]
struct ServiceFlows {
    all: Vec<DeploymentId>,
    active: Vec<DeploymentId>,
}

/// Controller view of where each service's traffic may be routed.
///
/// Each deployment of a service is either in the service's ordered active
/// list or on the blacklist, never both. The active list of a service with
/// at least one deployment never becomes empty.
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    services: IndexMap<String, ServiceFlows>,
    blacklist: Vec<BlacklistEntry>,
}

impl FlowTable {
    /// All deployments active, in registry preference order.
    pub fn from_registry(registry: &Registry) -> Self {
        let mut services = IndexMap::new();
        for s in registry.services() {
            let ids: Vec<_> = s.deployment_ids().collect();
            services.insert(
                s.name.clone(),
                ServiceFlows {
                    all: ids.clone(),
                    active: ids,
                },
            );
        }
        Self {
            services,
            blacklist: Vec::new(),
        }
    }

    pub fn services(&self) -> impl Iterator<Item = &str> {
        self.services.keys().map(String::as_str)
    }

    pub fn active(&self, service: &str) -> Result<&[DeploymentId], FlowTableError> {
        self.services
            .get(service)
            .map(|f| f.active.as_slice())
            .ok_or_else(|| FlowTableError::UnknownService(service.to_string()))
    }

    pub fn is_active(&self, id: &DeploymentId) -> bool {
        self.services
            .get(&id.service)
            .is_some_and(|f| f.active.contains(id))
    }

    pub fn is_blacklisted(&self, id: &DeploymentId) -> bool {
        self.blacklist.iter().any(|e| &e.deployment == id)
    }

    /// Blacklisted entries in demotion order.
    pub fn blacklist(&self) -> &[BlacklistEntry] {
        &self.blacklist
    }

    /// Demotes `offenders` of `service`: each is blacklisted at `now`, unless
    /// it is the service's last active deployment, in which case it only moves
    /// to the back of the active list. Offenders already blacklisted are
    /// skipped. All offenders are validated before anything changes.
    pub fn update_flow_table(
        &mut self,
        service: &str,
        offenders: &[DeploymentId],
        now: SimTime,
    ) -> Result<FlowUpdate, FlowTableError> {
        let flows = self
            .services
            .get_mut(service)
            .ok_or_else(|| FlowTableError::UnknownService(service.to_string()))?;
        if let Some(bad) = offenders.iter().find(|o| !flows.all.contains(o)) {
            return Err(FlowTableError::UnknownDeployment(bad.clone()));
        }
        let mut update = FlowUpdate::default();
        for offender in offenders {
            let Some(pos) = flows.active.iter().position(|d| d == offender) else {
                continue;
            };
            let d = flows.active.remove(pos);
            if flows.active.is_empty() {
                flows.active.push(d.clone());
                update.moved_back.push(d);
            } else {
                self.blacklist.push(BlacklistEntry {
                    deployment: d.clone(),
                    since: now,
                });
                update.blacklisted.push(d);
            }
        }
        Ok(update)
    }

    /// Returns a blacklisted deployment to the end of its service's active list.
    pub fn promote(&mut self, id: &DeploymentId) -> Result<(), FlowTableError> {
        let pos = self
            .blacklist
            .iter()
            .position(|e| &e.deployment == id)
            .ok_or_else(|| FlowTableError::NotBlacklisted(id.clone()))?;
        let flows = self
            .services
            .get_mut(&id.service)
            .ok_or_else(|| FlowTableError::UnknownService(id.service.clone()))?;
        self.blacklist.remove(pos);
        flows.active.push(id.clone());
        Ok(())
    }

    /// Checks the partition and liveness-floor invariants, returning a
    /// description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (name, flows) in &self.services {
            if !flows.all.is_empty() && flows.active.is_empty() {
                return Err(format!("service `{name}` has no active deployment"));
            }
            for d in &flows.all {
                let active = flows.active.iter().filter(|a| *a == d).count();
                let black = self.blacklist.iter().filter(|e| &e.deployment == d).count();
                if active + black != 1 {
                    return Err(format!(
                        "deployment `{d}` is active {active} times and blacklisted {black} times"
                    ));
                }
            }
            if flows.active.iter().any(|a| !flows.all.contains(a)) {
                return Err(format!("service `{name}` has a foreign active entry"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::registry::parse_registry;

    fn table(n: usize) -> (FlowTable, Vec<DeploymentId>) {
        let deps: String = (1..=n)
            .map(|i| format!("d{i} 10.0.0.{i};"))
            .collect::<Vec<_>>()
            .join(" ");
        let text = format!("services {{ service s {{ impl i {{ {deps} }} }} }}");
        let reg = parse_registry(&text).unwrap();
        let ids = reg.service("s").unwrap().deployment_ids().collect();
        (FlowTable::from_registry(&reg), ids)
    }

    #[test]
    fn demotes_offender_to_blacklist() {
        let (mut ft, d) = table(3);
        let up = ft.update_flow_table("s", &[d[1].clone()], SimTime(5.0)).unwrap();
        assert_eq!(up.blacklisted, vec![d[1].clone()]);
        assert_eq!(ft.active("s").unwrap(), &[d[0].clone(), d[2].clone()]);
        assert_eq!(ft.blacklist()[0].deployment, d[1]);
        assert_eq!(ft.blacklist()[0].since, SimTime(5.0));
    }

    #[test]
    fn last_active_is_kept() {
        let (mut ft, d) = table(1);
        let up = ft.update_flow_table("s", &[d[0].clone()], SimTime(1.0)).unwrap();
        assert_eq!(up.moved_back, vec![d[0].clone()]);
        assert_eq!(ft.active("s").unwrap(), &[d[0].clone()]);
        assert!(ft.blacklist().is_empty());
    }

    #[test]
    fn last_active_moves_to_back() {
        let (mut ft, d) = table(3);
        ft.update_flow_table("s", &[d[0].clone(), d[1].clone(), d[2].clone()], SimTime(1.0))
            .unwrap();
        assert_eq!(ft.active("s").unwrap(), &[d[2].clone()]);
        assert_eq!(ft.blacklist().len(), 2);
    }

    #[test]
    fn empty_offenders_is_identity() {
        let (mut ft, d) = table(3);
        assert_eq!(
            ft.update_flow_table("s", &[], SimTime(1.0)).unwrap(),
            FlowUpdate::default()
        );
        assert_eq!(ft.active("s").unwrap(), d.as_slice());
    }

    #[test]
    fn unknown_service_and_foreign_deployment() {
        let (mut ft, _) = table(2);
        assert_eq!(
            ft.update_flow_table("nope", &[], SimTime::ZERO),
            Err(FlowTableError::UnknownService("nope".into()))
        );
        let foreign = DeploymentId::new("s", "i", "zzz");
        assert_eq!(
            ft.update_flow_table("s", std::slice::from_ref(&foreign), SimTime::ZERO),
            Err(FlowTableError::UnknownDeployment(foreign))
        );
    }

    #[test]
    fn promote_appends_to_end() {
        let (mut ft, d) = table(3);
        ft.update_flow_table("s", &[d[1].clone()], SimTime(1.0)).unwrap();
        ft.promote(&d[1]).unwrap();
        assert_eq!(
            ft.active("s").unwrap(),
            &[d[0].clone(), d[2].clone(), d[1].clone()]
        );
        assert!(ft.blacklist().is_empty());
    }

    #[test]
    fn promote_requires_blacklisted() {
        let (mut ft, d) = table(3);
        assert_eq!(ft.promote(&d[0]), Err(FlowTableError::NotBlacklisted(d[0].clone())));
        assert_eq!(ft.active("s").unwrap(), d.as_slice());
    }

    proptest! {
        #[test]
        fn partition_and_liveness_hold(
            n in 1usize..6,
            ops in proptest::collection::vec((any::<bool>(), 0usize..6, 0usize..6), 0..60),
        ) {
            let (mut ft, d) = table(n);
            for (demote, a, b) in ops {
                if demote {
                    let offenders = vec![d[a % n].clone(), d[b % n].clone()];
                    ft.update_flow_table("s", &offenders, SimTime::ZERO).unwrap();
                } else if !ft.blacklist().is_empty() {
                    let pick = ft.blacklist()[a % ft.blacklist().len()].deployment.clone();
                    ft.promote(&pick).unwrap();
                }
                prop_assert!(ft.check_invariants().is_ok(), "{:?}", ft.check_invariants());
                prop_assert!(!ft.active("s").unwrap().is_empty());
            }
        }
    }
}
