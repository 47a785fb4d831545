use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use super::{CompositionError, CompositionRequest, InputItem, InvocationNode};
use crate::registry::{DeploymentId, Entry, Registry};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Literal(String),
    Output(NodeId),
}

/// A parameter with its dependency resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Literal(String),
    Result(ResultToken),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Executed on a service engine.
    Invoke,
    /// Expansion of a registry composition definition. Completes without an
    /// engine call once all of its members have.
    Group {
        composition: String,
        entry_point: Ipv4Addr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemberProps {
    pub order: u32,
    pub serialized: bool,
}

/// Opaque simulated result. Equality of results is equality of `value`,
/// which depends only on the service and its input fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultToken {
    pub value: u64,
    pub fingerprint: u64,
    pub deployment: Option<DeploymentId>,
    pub produced_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeState {
    Waiting,
    Started,
    Done(ResultToken),
    Failed,
}

impl NodeState {
    fn name(&self) -> &'static str {
        match self {
            NodeState::Waiting => "waiting",
            NodeState::Started => "started",
            NodeState::Done(_) => "done",
            NodeState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DagNode {
    pub id: NodeId,
    pub service: String,
    pub kind: NodeKind,
    /// Literal inputs and data dependencies, in declaration order.
    pub params: Vec<Param>,
    /// Ordering constraints from composition member `order`/`serialized`.
    pub control_deps: Vec<NodeId>,
    pub member: Option<MemberProps>,
    pub state: NodeState,
}

impl DagNode {
    pub fn dependencies(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.params
            .iter()
            .filter_map(|p| match p {
                Param::Output(id) => Some(*id),
                Param::Literal(_) => None,
            })
            .chain(self.control_deps.iter().copied())
    }

    pub fn out(&self) -> Option<&ResultToken> {
        match &self.state {
            NodeState::Done(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeProvenance {
    pub node: NodeId,
    pub service: String,
    pub deployment: Option<DeploymentId>,
    pub produced_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidated {
    pub result: ResultToken,
    pub provenance: Vec<NodeProvenance>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Structural hash of resolved parameters: literals by content, results by
/// value.
pub fn fingerprint_params(params: &[ParamValue]) -> u64 {
    let mut h = FNV_OFFSET;
    for p in params {
        match p {
            ParamValue::Literal(s) => {
                h = fnv(h, &[0]);
                h = fnv(h, &(s.len() as u64).to_le_bytes());
                h = fnv(h, s.as_bytes());
            }
            ParamValue::Result(t) => {
                h = fnv(h, &[1]);
                h = fnv(h, &t.value.to_le_bytes());
            }
        }
    }
    h
}

/// The simulated output of `service` on inputs with `fingerprint`.
pub fn result_value(service: &str, fingerprint: u64) -> u64 {
    let h = fnv(FNV_OFFSET, service.as_bytes());
    fnv(fnv(h, &[0xff]), &fingerprint.to_le_bytes())
}

/// Executable dependency graph of one composition request.
#[derive(Debug, Clone)]
pub struct CompositionDag {
    nodes: Vec<DagNode>,
    root: NodeId,
}

impl CompositionDag {
    /// Tuple nesting only; every node is an engine invocation.
    pub fn from_request(req: &CompositionRequest) -> Self {
        let mut b = Builder {
            nodes: Vec::new(),
            registry: None,
        };
        let root = b.node(&req.root, &mut Vec::new()).expect("no registry lookups");
        Self {
            nodes: b.nodes,
            root,
        }
    }

    /// Resolves services against `registry`. A node naming a composition
    /// definition expands into a group node over one node per member; every
    /// member receives the group's inputs, and a serialized member waits for
    /// all members of strictly lower order.
    pub fn link(req: &CompositionRequest, registry: &Registry) -> Result<Self, CompositionError> {
        let mut b = Builder {
            nodes: Vec::new(),
            registry: Some(registry),
        };
        let root = b.node(&req.root, &mut Vec::new())?;
        let dag = Self {
            nodes: b.nodes,
            root,
        };
        dag.check_acyclic()?;
        Ok(dag)
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[DagNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &DagNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an ordering constraint `node` after `dep`, rejecting cycles.
    pub fn add_control_dependency(
        &mut self,
        node: NodeId,
        dep: NodeId,
    ) -> Result<(), CompositionError> {
        self.nodes[node.0].control_deps.push(dep);
        if let Err(e) = self.check_acyclic() {
            self.nodes[node.0].control_deps.pop();
            return Err(e);
        }
        Ok(())
    }

    /// Kahn's algorithm; returns nodes in dependency order, lowest id first
    /// among those available.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, CompositionError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut dependents = vec![Vec::new(); n];
        for node in &self.nodes {
            for d in node.dependencies() {
                indegree[node.id.0] += 1;
                dependents[d.0].push(node.id);
            }
        }
        let mut ready: BTreeSet<NodeId> =
            (0..n).filter(|&i| indegree[i] == 0).map(NodeId).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for &m in &dependents[id.0] {
                indegree[m.0] -= 1;
                if indegree[m.0] == 0 {
                    ready.insert(m);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(CompositionError::Cycle(stuck));
        }
        Ok(order)
    }

    pub fn check_acyclic(&self) -> Result<(), CompositionError> {
        self.topological_order().map(|_| ())
    }

    /// Nodes not yet started whose dependencies have all produced results.
    pub fn ready_set(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.state == NodeState::Waiting)
            .filter(|n| n.dependencies().all(|d| self.nodes[d.0].out().is_some()))
            .map(|n| n.id)
            .collect()
    }

    fn expect_state(
        &self,
        id: NodeId,
        ok: bool,
        expected: &'static str,
    ) -> Result<(), CompositionError> {
        if ok {
            Ok(())
        } else {
            Err(CompositionError::BadState {
                node: id.0,
                state: self.nodes[id.0].state.name(),
                expected,
            })
        }
    }

    pub fn mark_started(&mut self, id: NodeId) -> Result<(), CompositionError> {
        let node = &self.nodes[id.0];
        let ready = node.state == NodeState::Waiting
            && node.dependencies().all(|d| self.nodes[d.0].out().is_some());
        self.expect_state(id, ready, "ready")?;
        self.nodes[id.0].state = NodeState::Started;
        Ok(())
    }

    pub fn complete(&mut self, id: NodeId, token: ResultToken) -> Result<(), CompositionError> {
        self.expect_state(id, self.nodes[id.0].state == NodeState::Started, "started")?;
        self.nodes[id.0].state = NodeState::Done(token);
        Ok(())
    }

    pub fn fail(&mut self, id: NodeId) -> Result<(), CompositionError> {
        self.expect_state(id, self.nodes[id.0].state == NodeState::Started, "started")?;
        self.nodes[id.0].state = NodeState::Failed;
        Ok(())
    }

    pub fn has_failed(&self) -> bool {
        self.nodes.iter().any(|n| n.state == NodeState::Failed)
    }

    pub fn is_complete(&self) -> bool {
        self.nodes.iter().all(|n| n.out().is_some())
    }

    /// Resolved parameter list of `id`; every data dependency must be done.
    pub fn param_values(&self, id: NodeId) -> Result<Vec<ParamValue>, CompositionError> {
        self.nodes[id.0]
            .params
            .iter()
            .map(|p| match p {
                Param::Literal(s) => Ok(ParamValue::Literal(s.clone())),
                Param::Output(d) => self.nodes[d.0]
                    .out()
                    .cloned()
                    .map(ParamValue::Result)
                    .ok_or(CompositionError::Incomplete(d.0)),
            })
            .collect()
    }

    /// The root's result, with per-node provenance.
    pub fn consolidate(&self) -> Result<Consolidated, CompositionError> {
        let mut provenance = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let out = n.out().ok_or(CompositionError::Incomplete(n.id.0))?;
            provenance.push(NodeProvenance {
                node: n.id,
                service: n.service.clone(),
                deployment: out.deployment.clone(),
                produced_at: out.produced_at,
            });
        }
        let result = self.nodes[self.root.0]
            .out()
            .cloned()
            .ok_or(CompositionError::Incomplete(self.root.0))?;
        Ok(Consolidated { result, provenance })
    }
}

struct Builder<'r> {
    nodes: Vec<DagNode>,
    registry: Option<&'r Registry>,
}

impl Builder<'_> {
    fn push(&mut self, service: &str, kind: NodeKind, member: Option<MemberProps>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(DagNode {
            id,
            service: service.to_string(),
            kind,
            params: Vec::new(),
            control_deps: Vec::new(),
            member,
            state: NodeState::Waiting,
        });
        id
    }

    fn inputs(
        &mut self,
        inputs: &[InputItem],
        expanding: &mut Vec<String>,
    ) -> Result<Vec<Param>, CompositionError> {
        inputs
            .iter()
            .map(|i| match i {
                InputItem::Literal(s) => Ok(Param::Literal(s.clone())),
                InputItem::Call(c) => Ok(Param::Output(self.node(c, expanding)?)),
            })
            .collect()
    }

    fn node(
        &mut self,
        inv: &InvocationNode,
        expanding: &mut Vec<String>,
    ) -> Result<NodeId, CompositionError> {
        match self.registry.map(|r| r.get(&inv.service)) {
            None | Some(Some(Entry::Service(_))) => {
                let id = self.push(&inv.service, NodeKind::Invoke, None);
                let params = self.inputs(&inv.inputs, expanding)?;
                self.nodes[id.0].params = params;
                Ok(id)
            }
            Some(None) => Err(CompositionError::UnknownService(inv.service.clone())),
            Some(Some(Entry::Composition(_))) => {
                let params = self.inputs(&inv.inputs, expanding)?;
                self.group(&inv.service, params, None, expanding)
            }
        }
    }

    fn group(
        &mut self,
        name: &str,
        inputs: Vec<Param>,
        member: Option<MemberProps>,
        expanding: &mut Vec<String>,
    ) -> Result<NodeId, CompositionError> {
        let registry = self.registry.expect("groups only exist when linking");
        let def = registry
            .composition(name)
            .ok_or_else(|| CompositionError::UnknownService(name.to_string()))?;
        if expanding.iter().any(|e| e == name) {
            return Err(CompositionError::Cycle(self.nodes.len()));
        }
        expanding.push(name.to_string());
        let group = self.push(
            name,
            NodeKind::Group {
                composition: name.to_string(),
                entry_point: def.entry_point,
            },
            member,
        );
        let mut members: Vec<(MemberProps, NodeId)> = Vec::new();
        for m in &def.members {
            let props = MemberProps {
                order: m.order,
                serialized: m.serialized,
            };
            let id = match registry.get(&m.service) {
                Some(Entry::Service(_)) => {
                    let id = self.push(&m.service, NodeKind::Invoke, Some(props));
                    self.nodes[id.0].params = inputs.clone();
                    id
                }
                Some(Entry::Composition(_)) => {
                    self.group(&m.service, inputs.clone(), Some(props), expanding)?
                }
                None => return Err(CompositionError::UnknownService(m.service.clone())),
            };
            members.push((props, id));
        }
        for &(props, id) in &members {
            if props.serialized {
                let deps: Vec<NodeId> = members
                    .iter()
                    .filter(|(p, _)| p.order < props.order)
                    .map(|&(_, d)| d)
                    .collect();
                self.nodes[id.0].control_deps.extend(deps);
            }
        }
        self.nodes[group.0].params = members.iter().map(|&(_, id)| Param::Output(id)).collect();
        expanding.pop();
        Ok(group)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::parse_request;
    use crate::registry::parse_registry;

    fn token(v: u64) -> ResultToken {
        ResultToken {
            value: v,
            fingerprint: 0,
            deployment: None,
            produced_at: SimTime::ZERO,
        }
    }

    fn services(dag: &CompositionDag, ids: &[NodeId]) -> Vec<String> {
        ids.iter().map(|&i| dag.node(i).service.clone()).collect()
    }

    fn run(dag: &mut CompositionDag, id: NodeId) {
        dag.mark_started(id).unwrap();
        dag.complete(id, token(id.0 as u64)).unwrap();
    }

    #[test]
    fn leaves_ready_first_then_parent() {
        let req = parse_request("<Service3,(<Service1, Input1>,<Service2, Input2>)>").unwrap();
        let mut dag = CompositionDag::from_request(&req);
        let ready = dag.ready_set();
        assert_eq!(services(&dag, &ready), ["Service1", "Service2"]);
        for id in ready {
            run(&mut dag, id);
        }
        assert_eq!(services(&dag, &dag.ready_set()), ["Service3"]);
    }

    #[test]
    fn parent_blocked_by_pending_child() {
        let req = parse_request("<Service3,(<Service1, Input1>,<Service2, Input2>)>").unwrap();
        let mut dag = CompositionDag::from_request(&req);
        run(&mut dag, NodeId(1));
        dag.mark_started(NodeId(2)).unwrap();
        assert!(dag.ready_set().is_empty());
        assert!(dag.mark_started(NodeId(0)).is_err());
    }

    fn weather_registry() -> Registry {
        parse_registry(
            "services {
                service instance_count { impl a { x 10.0.0.1; } }
                service adder { impl a { y 10.0.0.2; } }
                service mean { impl a { z 10.0.0.3; } }
                service weather {
                    type composition;
                    entry_point 10.0.0.9;
                    services {
                        instance_count { order 1; }
                        adder { order 2; serialized false; }
                        mean { order 3; serialized true; }
                    }
                }
            }",
        )
        .unwrap()
    }

    #[test]
    fn serialized_member_waits_for_lower_orders() {
        let reg = weather_registry();
        let mut dag = CompositionDag::link(&parse_request("<weather, x>").unwrap(), &reg).unwrap();
        assert_eq!(services(&dag, &dag.ready_set()), ["instance_count", "adder"]);
        let ic = dag.ready_set()[0];
        run(&mut dag, ic);
        assert_eq!(services(&dag, &dag.ready_set()), ["adder"]);
        let adder = dag.ready_set()[0];
        run(&mut dag, adder);
        assert_eq!(services(&dag, &dag.ready_set()), ["mean"]);
        let mean = dag.ready_set()[0];
        run(&mut dag, mean);
        assert_eq!(services(&dag, &dag.ready_set()), ["weather"]);
    }

    #[test]
    fn link_rejects_unknown_service() {
        let reg = weather_registry();
        let err = CompositionDag::link(&parse_request("<frob, x>").unwrap(), &reg).unwrap_err();
        assert_eq!(err, CompositionError::UnknownService("frob".into()));
    }

    #[test]
    fn control_dependency_cycle_is_rejected() {
        let req = parse_request("<A,(<B, x>)>").unwrap();
        let mut dag = CompositionDag::from_request(&req);
        // A(0) already depends on B(1)
        assert_eq!(
            dag.add_control_dependency(NodeId(1), NodeId(0)),
            Err(CompositionError::Cycle(0))
        );
        assert!(dag.check_acyclic().is_ok());
    }

    #[test]
    fn consolidate_requires_every_node() {
        let req = parse_request("<A,(<B, x>,<C, y>)>").unwrap();
        let mut dag = CompositionDag::from_request(&req);
        run(&mut dag, NodeId(1));
        assert_eq!(dag.consolidate().unwrap_err(), CompositionError::Incomplete(0));
        run(&mut dag, NodeId(2));
        run(&mut dag, NodeId(0));
        let c = dag.consolidate().unwrap();
        assert_eq!(c.result.value, 0);
        assert_eq!(c.provenance.len(), 3);
    }

    #[test]
    fn single_leaf_consolidates_to_its_output() {
        let mut dag = CompositionDag::from_request(&parse_request("<S, x>").unwrap());
        run(&mut dag, NodeId(0));
        assert_eq!(dag.consolidate().unwrap().result, token(0));
    }

    #[test]
    fn fingerprint_distinguishes_literal_from_result() {
        let lit = fingerprint_params(&[ParamValue::Literal("x".into())]);
        let res = fingerprint_params(&[ParamValue::Result(token(7))]);
        assert_ne!(lit, res);
        assert_eq!(lit, fingerprint_params(&[ParamValue::Literal("x".into())]));
        assert_ne!(result_value("A", lit), result_value("B", lit));
    }
}
