use std::collections::HashMap;

use super::{NodeId, ResultToken};

/// How a node obtains its result from the memo.
#[derive(Debug, Clone, PartialEq)]
pub enum Claim {
    /// A stored result for the same service and inputs.
    Hit(ResultToken),
    /// An identical invocation is already running; the node was queued behind it.
    Joined,
    /// No match: the caller must invoke and later [`MemoTable::store`].
    Owner,
}

/// Results keyed by `(service, input fingerprint)`, scoped to one
/// composition execution.
#[derive(Debug, Clone, Default)]
pub struct MemoTable {
    done: HashMap<(String, u64), ResultToken>,
    pending: HashMap<(String, u64), Vec<NodeId>>,
}

impl MemoTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn memo_lookup(&self, service: &str, fingerprint: u64) -> Option<&ResultToken> {
        self.done.get(&(service.to_string(), fingerprint))
    }

    pub fn claim(&mut self, service: &str, fingerprint: u64, node: NodeId) -> Claim {
        let key = (service.to_string(), fingerprint);
        if let Some(t) = self.done.get(&key) {
            return Claim::Hit(t.clone());
        }
        match self.pending.get_mut(&key) {
            Some(waiters) => {
                waiters.push(node);
                Claim::Joined
            }
            None => {
                self.pending.insert(key, Vec::new());
                Claim::Owner
            }
        }
    }

    /// Records the owner's result and returns the nodes waiting on it.
    pub fn store(&mut self, service: &str, fingerprint: u64, token: ResultToken) -> Vec<NodeId> {
        let key = (service.to_string(), fingerprint);
        let waiters = self.pending.remove(&key).unwrap_or_default();
        self.done.insert(key, token);
        waiters
    }

    /// Drops a failed owner's claim and returns the nodes waiting on it.
    pub fn abandon(&mut self, service: &str, fingerprint: u64) -> Vec<NodeId> {
        self.pending
            .remove(&(service.to_string(), fingerprint))
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimTime;

    fn token(v: u64) -> ResultToken {
        ResultToken {
            value: v,
            fingerprint: 1,
            deployment: None,
            produced_at: SimTime::ZERO,
        }
    }

    #[test]
    fn empty_table_misses() {
        assert!(MemoTable::new().memo_lookup("A", 1).is_none());
    }

    #[test]
    fn store_then_lookup() {
        let mut m = MemoTable::new();
        assert_eq!(m.claim("A", 1, NodeId(0)), Claim::Owner);
        assert!(m.store("A", 1, token(9)).is_empty());
        assert_eq!(m.memo_lookup("A", 1), Some(&token(9)));
        assert!(m.memo_lookup("A", 2).is_none());
        assert!(m.memo_lookup("B", 1).is_none());
        assert_eq!(m.claim("A", 1, NodeId(3)), Claim::Hit(token(9)));
    }

    #[test]
    fn concurrent_identical_claims_coalesce() {
        let mut m = MemoTable::new();
        assert_eq!(m.claim("A", 1, NodeId(1)), Claim::Owner);
        assert_eq!(m.claim("A", 1, NodeId(2)), Claim::Joined);
        assert_eq!(m.store("A", 1, token(4)), vec![NodeId(2)]);
    }

    #[test]
    fn abandon_releases_waiters() {
        let mut m = MemoTable::new();
        m.claim("A", 1, NodeId(1));
        m.claim("A", 1, NodeId(2));
        assert_eq!(m.abandon("A", 1), vec![NodeId(2)]);
        assert_eq!(m.claim("A", 1, NodeId(5)), Claim::Owner);
    }
}
