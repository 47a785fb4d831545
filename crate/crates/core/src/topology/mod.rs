//! Fat-tree data-center topology and the controller's per-service flow tables.

mod flow_table;

use std::fmt;
use std::net::Ipv4Addr;

use serde::Serialize;
use thiserror::Error;

pub use flow_table::{BlacklistEntry, FlowTable, FlowTableError, FlowUpdate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("fat-tree arity must be even and at least 2, got {0}")]
    InvalidArity(usize),
    #[error("unknown host {0}")]
    UnknownHost(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Core,
    Aggregation,
    Edge,
    Host,
}

/// Index into [`Topology::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// Host index in `0..k³/4`, numbered pod-major, then edge switch, then port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct HostId(pub usize);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub tier: Tier,
    pub pod: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostLocation {
    pub pod: usize,
    /// Edge switch index within the pod.
    pub edge: usize,
    /// Port index under the edge switch.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathMetric {
    pub hop_count: u32,
    pub inter_rack: bool,
    pub inter_pod: bool,
}

/// Machine-readable dump for external visualization.
#[derive(Debug, Clone, Serialize)]
pub struct TopologyExport<'a> {
    pub k: usize,
    pub nodes: &'a [Node],
    pub links: &'a [(NodeId, NodeId)],
}

#[derive(Debug, Clone)]
pub struct Topology {
    k: usize,
    nodes: Vec<Node>,
    links: Vec<(NodeId, NodeId)>,
    adjacency: Vec<Vec<NodeId>>,
    first_host: usize,
}

impl Topology {
    /// Standard three-tier fat tree of arity `k`: `(k/2)²` core switches and
    /// `k` pods of `k/2` aggregation and `k/2` edge switches, each edge switch
    /// serving `k/2` hosts.
    pub fn fat_tree(k: usize) -> Result<Self, TopologyError> {
        if k < 2 || !k.is_multiple_of(2) {
            return Err(TopologyError::InvalidArity(k));
        }
        let half = k / 2;
        let cores = half * half;
        let per_pod = 2 * half;
        let first_host = cores + k * per_pod;
        let hosts = k * half * half;

        let mut nodes = Vec::with_capacity(first_host + hosts);
        for i in 0..cores {
            nodes.push(Node {
                id: NodeId(i),
                tier: Tier::Core,
                pod: None,
            });
        }
        for pod in 0..k {
            for j in 0..per_pod {
                nodes.push(Node {
                    id: NodeId(cores + pod * per_pod + j),
                    tier: if j < half { Tier::Aggregation } else { Tier::Edge },
                    pod: Some(pod),
                });
            }
        }
        for h in 0..hosts {
            nodes.push(Node {
                id: NodeId(first_host + h),
                tier: Tier::Host,
                pod: Some(h / (half * half)),
            });
        }

        let agg = |pod: usize, a: usize| NodeId(cores + pod * per_pod + a);
        let edge = |pod: usize, e: usize| NodeId(cores + pod * per_pod + half + e);
        let mut links = Vec::new();
        for c in 0..cores {
            for pod in 0..k {
                links.push((NodeId(c), agg(pod, c / half)));
            }
        }
        for pod in 0..k {
            for a in 0..half {
                for e in 0..half {
                    links.push((agg(pod, a), edge(pod, e)));
                }
            }
            for e in 0..half {
                for i in 0..half {
                    let h = (pod * half + e) * half + i;
                    links.push((edge(pod, e), NodeId(first_host + h)));
                }
            }
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b) in &links {
            adjacency[a.0].push(b);
            adjacency[b.0].push(a);
        }
        Ok(Self {
            k,
            nodes,
            links,
            adjacency,
            first_host,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn host_count(&self) -> usize {
        self.nodes.len() - self.first_host
    }

    pub fn switch_count(&self) -> usize {
        self.first_host
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[(NodeId, NodeId)] {
        &self.links
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node.0]
    }

    pub fn hosts(&self) -> impl Iterator<Item = HostId> {
        (0..self.host_count()).map(HostId)
    }

    pub fn host_node(&self, host: HostId) -> Result<NodeId, TopologyError> {
        self.check(host)?;
        Ok(NodeId(self.first_host + host.0))
    }

    pub fn location(&self, host: HostId) -> Result<HostLocation, TopologyError> {
        self.check(host)?;
        let half = self.k / 2;
        Ok(HostLocation {
            pod: host.0 / (half * half),
            edge: (host.0 / half) % half,
            index: host.0 % half,
        })
    }

    fn check(&self, host: HostId) -> Result<(), TopologyError> {
        if host.0 < self.host_count() {
            Ok(())
        } else {
            Err(TopologyError::UnknownHost(host.0))
        }
    }

    /// Host an IPv4 endpoint maps to: the address modulo the host count.
    pub fn host_for_address(&self, addr: Ipv4Addr) -> HostId {
        HostId(u32::from(addr) as usize % self.host_count())
    }

    /// Hop distance between two hosts. In a fat tree this is 0 (same host),
    /// 2 (same edge switch), 4 (same pod) or 6 (across pods).
    pub fn shortest_path(&self, a: HostId, b: HostId) -> Result<PathMetric, TopologyError> {
        let la = self.location(a)?;
        let lb = self.location(b)?;
        let inter_pod = la.pod != lb.pod;
        let inter_rack = inter_pod || la.edge != lb.edge;
        let hop_count = if a == b {
            0
        } else if !inter_rack {
            2
        } else if !inter_pod {
            4
        } else {
            6
        };
        Ok(PathMetric {
            hop_count,
            inter_rack,
            inter_pod,
        })
    }

    /// Orders `candidates` by total hop count to `anchors`, ties broken by
    /// pod and then host index.
    pub fn proximity_rank(
        &self,
        anchors: &[HostId],
        candidates: &[HostId],
    ) -> Result<Vec<HostId>, TopologyError> {
        let mut keyed = Vec::with_capacity(candidates.len());
        for &c in candidates {
            let mut total = 0u64;
            for &a in anchors {
                total += u64::from(self.shortest_path(a, c)?.hop_count);
            }
            keyed.push((total, self.location(c)?.pod, c));
        }
        keyed.sort();
        Ok(keyed.into_iter().map(|(_, _, h)| h).collect())
    }

    pub fn export(&self) -> TopologyExport<'_> {
        TopologyExport {
            k: self.k,
            nodes: &self.nodes,
            links: &self.links,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;

    fn bfs_hops(t: &Topology, a: HostId, b: HostId) -> u32 {
        let src = t.host_node(a).unwrap();
        let dst = t.host_node(b).unwrap();
        let mut dist = vec![u32::MAX; t.nodes().len()];
        dist[src.0] = 0;
        let mut q = VecDeque::from([src]);
        while let Some(n) = q.pop_front() {
            if n == dst {
                return dist[n.0];
            }
            for &m in t.neighbors(n) {
                if dist[m.0] == u32::MAX {
                    dist[m.0] = dist[n.0] + 1;
                    q.push_back(m);
                }
            }
        }
        panic!("disconnected");
    }

    #[test]
    fn node_counts_match_enumeration() {
        for (k, hosts, switches) in [(2, 2, 5), (4, 16, 20), (6, 54, 45), (16, 1024, 320)] {
            let t = Topology::fat_tree(k).unwrap();
            let counted_hosts = t.nodes().iter().filter(|n| n.tier == Tier::Host).count();
            assert_eq!(counted_hosts, hosts, "k={k}");
            assert_eq!(t.nodes().len() - counted_hosts, switches, "k={k}");
            assert_eq!(t.host_count(), k * k * k / 4);
            assert_eq!(t.switch_count(), 5 * k * k / 4);
        }
    }

    #[test]
    fn every_host_has_one_edge_uplink() {
        let t = Topology::fat_tree(4).unwrap();
        for h in t.hosts() {
            let n = t.host_node(h).unwrap();
            let ups = t.neighbors(n);
            assert_eq!(ups.len(), 1);
            assert_eq!(t.nodes()[ups[0].0].tier, Tier::Edge);
        }
    }

    #[test]
    fn rejects_bad_arity() {
        assert_eq!(Topology::fat_tree(0).unwrap_err(), TopologyError::InvalidArity(0));
        assert_eq!(Topology::fat_tree(3).unwrap_err(), TopologyError::InvalidArity(3));
    }

    #[test]
    fn closed_form_matches_bfs_exhaustively() {
        for k in [2, 4] {
            let t = Topology::fat_tree(k).unwrap();
            for a in t.hosts() {
                for b in t.hosts() {
                    let m = t.shortest_path(a, b).unwrap();
                    assert_eq!(m.hop_count, bfs_hops(&t, a, b), "k={k} {a}->{b}");
                    assert!([0, 2, 4, 6].contains(&m.hop_count));
                    assert_eq!(m.hop_count == 0, a == b);
                    assert!(!m.inter_pod || m.inter_rack);
                }
            }
        }
    }

    #[test]
    fn path_examples() {
        let t = Topology::fat_tree(4).unwrap();
        let same = t.shortest_path(HostId(3), HostId(3)).unwrap();
        assert_eq!((same.hop_count, same.inter_rack), (0, false));
        let rack = t.shortest_path(HostId(0), HostId(1)).unwrap();
        assert_eq!((rack.hop_count, rack.inter_rack), (2, false));
        let far = t.shortest_path(HostId(0), HostId(15)).unwrap();
        assert_eq!((far.hop_count, far.inter_pod), (6, true));
        assert_eq!(
            t.shortest_path(HostId(0), HostId(16)).unwrap_err(),
            TopologyError::UnknownHost(16)
        );
    }

    #[test]
    fn symmetric_and_triangle_inequality() {
        let t = Topology::fat_tree(4).unwrap();
        let d = |a: usize, b: usize| t.shortest_path(HostId(a), HostId(b)).unwrap().hop_count;
        for a in 0..16 {
            for b in 0..16 {
                assert_eq!(d(a, b), d(b, a));
                for c in 0..16 {
                    assert!(d(a, c) <= d(a, b) + d(b, c));
                }
            }
        }
    }

    #[test]
    fn proximity_prefers_rack_mate() {
        let t = Topology::fat_tree(4).unwrap();
        let ranked = t
            .proximity_rank(&[HostId(0)], &[HostId(15), HostId(1)])
            .unwrap();
        assert_eq!(ranked, vec![HostId(1), HostId(15)]);
    }

    #[test]
    fn proximity_two_anchors_in_pod_zero() {
        let t = Topology::fat_tree(4).unwrap();
        // anchors share edge 0; h2 sits under edge 1 of the same pod
        let anchors = [HostId(0), HostId(1)];
        let pod0 = HostId(2);
        let pod3 = HostId(12);
        let oracle = |c: HostId| -> u32 {
            anchors
                .iter()
                .map(|&a| bfs_hops(&t, a, c))
                .sum()
        };
        assert_eq!((oracle(pod0), oracle(pod3)), (8, 12));
        let ranked = t.proximity_rank(&anchors, &[pod3, pod0]).unwrap();
        assert_eq!(ranked, vec![pod0, pod3]);
    }

    #[test]
    fn proximity_without_anchors_uses_structural_order() {
        let t = Topology::fat_tree(4).unwrap();
        let ranked = t
            .proximity_rank(&[], &[HostId(9), HostId(2), HostId(14), HostId(0)])
            .unwrap();
        assert_eq!(ranked, vec![HostId(0), HostId(2), HostId(9), HostId(14)]);
    }

    #[test]
    fn export_lists_every_node_and_link() {
        let t = Topology::fat_tree(4).unwrap();
        let json = serde_json::to_value(t.export()).unwrap();
        assert_eq!(json["nodes"].as_array().unwrap().len(), 36);
        // core-agg 4*4, agg-edge 4*2*2, edge-host 16
        assert_eq!(json["links"].as_array().unwrap().len(), 16 + 16 + 16);
    }
}
