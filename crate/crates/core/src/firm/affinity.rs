use std::collections::HashMap;

use crate::registry::DeploymentId;

pub type ClientId = u32;

/// Sticky `(client, service) -> deployment` choices.
#[derive(Debug, Clone, Default)]
pub struct AffinityTable {
    entries: HashMap<(ClientId, String), DeploymentId>,
}

impl AffinityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, client: ClientId, service: &str) -> Option<&DeploymentId> {
        self.entries.get(&(client, service.to_string()))
    }

    pub fn record(&mut self, client: ClientId, deployment: DeploymentId) {
        self.entries
            .insert((client, deployment.service.clone()), deployment);
    }

    /// Drops every entry pointing at `deployment`; returns how many.
    pub fn evict(&mut self, deployment: &DeploymentId) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, d| d != deployment);
        before - self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
